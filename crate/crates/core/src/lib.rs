//! Variance-aware pessimistic value iteration for offline reinforcement
//! learning in linear MDPs, together with the instances, data generation
//! and experiment harness used to evaluate it.

pub mod data;
pub mod error;
pub mod experiment;
pub mod instances;
pub mod mdp;
pub mod pvi;
pub mod ridge;
pub mod rng;
pub mod variance;

pub use data::{Dataset, SplitMode, Transition};
pub use error::{Error, Result};
pub use mdp::{FeatureMap, LinearMdp, PolicyTable};
pub use pvi::{solve, Algorithm, BonusKind, BonusSpec, PolicySolution, SolverParams, Weighting};
