//! Finite episodic linear MDPs.
//!
//! A model is described by a feature table `phi(s, a)`, per-step next-state
//! measures `nu_h(s')`, and per-step reward coefficients `theta_h`. The
//! transition kernel `<phi(s,a), nu_h(s')>` and mean reward `<phi(s,a), theta_h>`
//! are validated and cached when the model is built.
//!
//! Steps are 1-based throughout the public API (`h` in `1..=H`); states and
//! actions are dense 0-based indices into the model's ordered lists.

mod dp;
mod json;
mod policy;

pub use dp::{
    conditional_variance, exact_value_iteration, min_coverage, occupancy, policy_value,
    population_covariance, ExactValues, PolicyValues,
};
pub use json::{fmt_f64, InstanceFile};
pub(crate) use dp::{argmax_lowest, min_eigenvalue};
pub use policy::{sample_index, PolicyTable, StepRule};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, check_index, Error, Result};

/// Clamp tolerance applied to probabilities, rewards, and feature norms.
pub const MODEL_TOL: f64 = 1e-10;

/// Read access to a finite feature table. Implemented by [`LinearMdp`]; the
/// solvers only need this view of a model.
pub trait FeatureMap: Sync {
    fn feature_dim(&self) -> usize;
    fn num_states(&self) -> usize;
    fn num_actions(&self) -> usize;
    fn phi(&self, s: usize, a: usize) -> &DVector<f64>;
    /// Instances whose rewards and values are allowed outside `[0, 1]` and `[0, H]`.
    fn range_exempt(&self) -> bool {
        false
    }
}

/// Validation checks an instance opts out of.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exemptions {
    /// Rewards may leave `[0, 1]` and values `[0, H - h + 1]`.
    pub reward_range: bool,
    /// Features may have Euclidean norm above 1.
    pub feature_norm: bool,
}

/// Raw ingredients of a [`LinearMdp`], prior to validation.
#[derive(Clone, Debug)]
pub struct LinearMdpParts {
    pub horizon: usize,
    pub feature_dim: usize,
    pub states: Vec<String>,
    pub actions: Vec<String>,
    /// Indexed `s * A + a`.
    pub phi: Vec<DVector<f64>>,
    /// `nu[h - 1][s']`.
    pub nu: Vec<Vec<DVector<f64>>>,
    /// `theta[h - 1]`.
    pub theta: Vec<DVector<f64>>,
    pub initial_dist: Vec<f64>,
    pub reward_noise_std: f64,
    pub exemptions: Exemptions,
}

#[derive(Clone, Debug)]
pub struct LinearMdp {
    parts: LinearMdpParts,
    // kernel[((h-1) * S + s) * A + a][s']
    kernel: Vec<Vec<f64>>,
    // rewards[((h-1) * S + s) * A + a]
    rewards: Vec<f64>,
}

impl LinearMdp {
    pub fn new(parts: LinearMdpParts) -> Result<Self> {
        let h_len = parts.horizon;
        let d = parts.feature_dim;
        let s_len = parts.states.len();
        let a_len = parts.actions.len();
        if h_len == 0 || d == 0 || s_len == 0 || a_len == 0 {
            return Err(Error::InvalidModel(
                "horizon, feature_dim, states, and actions must be nonempty".into(),
            ));
        }
        check_dim(s_len * a_len, parts.phi.len(), "phi table rows")?;
        check_dim(h_len, parts.nu.len(), "nu steps")?;
        check_dim(h_len, parts.theta.len(), "theta steps")?;
        check_dim(s_len, parts.initial_dist.len(), "initial distribution")?;
        for f in &parts.phi {
            check_dim(d, f.len(), "phi entry")?;
        }
        for (h, step) in parts.nu.iter().enumerate() {
            check_dim(s_len, step.len(), "nu next states")?;
            for v in step {
                check_dim(d, v.len(), "nu entry")?;
            }
            check_dim(d, parts.theta[h].len(), "theta entry")?;
        }
        if !(parts.reward_noise_std >= 0.0 && parts.reward_noise_std.is_finite()) {
            return Err(Error::InvalidModel(format!(
                "reward_noise_std must be a finite nonnegative number, got {}",
                parts.reward_noise_std
            )));
        }
        validate_distribution(&parts.initial_dist, MODEL_TOL)
            .map_err(|m| Error::InvalidModel(format!("initial distribution: {m}")))?;

        if !parts.exemptions.feature_norm {
            for (idx, f) in parts.phi.iter().enumerate() {
                if f.norm() > 1.0 + MODEL_TOL {
                    return Err(Error::InvalidModel(format!(
                        "feature norm {} > 1 at (s, a) = ({}, {})",
                        f.norm(),
                        idx / a_len,
                        idx % a_len
                    )));
                }
            }
        }

        let mut kernel = Vec::with_capacity(h_len * s_len * a_len);
        let mut rewards = Vec::with_capacity(h_len * s_len * a_len);
        for h in 0..h_len {
            for s in 0..s_len {
                for a in 0..a_len {
                    let f = &parts.phi[s * a_len + a];
                    let mut row = Vec::with_capacity(s_len);
                    let mut total = 0.0;
                    for (sn, nu) in parts.nu[h].iter().enumerate() {
                        let p = f.dot(nu);
                        if !(-MODEL_TOL..=1.0 + MODEL_TOL).contains(&p) {
                            return Err(Error::InvalidModel(format!(
                                "P_{}({sn} | {s}, {a}) = {p} outside [0, 1]",
                                h + 1
                            )));
                        }
                        total += p;
                        row.push(p.clamp(0.0, 1.0));
                    }
                    if (total - 1.0).abs() > MODEL_TOL {
                        return Err(Error::InvalidModel(format!(
                            "transition row (h, s, a) = ({}, {s}, {a}) sums to {total}",
                            h + 1
                        )));
                    }
                    kernel.push(row);

                    let r = f.dot(&parts.theta[h]);
                    let r = if parts.exemptions.reward_range {
                        r
                    } else if (-MODEL_TOL..=1.0 + MODEL_TOL).contains(&r) {
                        r.clamp(0.0, 1.0)
                    } else {
                        return Err(Error::InvalidModel(format!(
                            "mean reward r_{}({s}, {a}) = {r} outside [0, 1]",
                            h + 1
                        )));
                    };
                    rewards.push(r);
                }
            }
        }
        Ok(Self {
            parts,
            kernel,
            rewards,
        })
    }

    pub fn horizon(&self) -> usize {
        self.parts.horizon
    }

    pub fn states(&self) -> &[String] {
        &self.parts.states
    }

    pub fn actions(&self) -> &[String] {
        &self.parts.actions
    }

    pub fn initial_dist(&self) -> &[f64] {
        &self.parts.initial_dist
    }

    pub fn reward_noise_std(&self) -> f64 {
        self.parts.reward_noise_std
    }

    pub fn exemptions(&self) -> Exemptions {
        self.parts.exemptions
    }

    pub fn parts(&self) -> &LinearMdpParts {
        &self.parts
    }

    pub fn nu(&self, h: usize, s_next: usize) -> &DVector<f64> {
        &self.parts.nu[h - 1][s_next]
    }

    pub fn theta(&self, h: usize) -> &DVector<f64> {
        &self.parts.theta[h - 1]
    }

    /// Same model with a different reward observation noise level.
    pub fn with_reward_noise(mut self, std: f64) -> Result<Self> {
        if !(std >= 0.0 && std.is_finite()) {
            return Err(Error::InvalidModel(format!("reward_noise_std = {std}")));
        }
        self.parts.reward_noise_std = std;
        Ok(self)
    }

    fn flat(&self, h: usize, s: usize, a: usize) -> usize {
        ((h - 1) * self.num_states() + s) * self.num_actions() + a
    }

    fn check_step(&self, h: usize) -> Result<()> {
        if h == 0 || h > self.horizon() {
            return Err(Error::IndexOutOfRange {
                what: "step",
                index: h,
                limit: self.horizon() + 1,
            });
        }
        Ok(())
    }

    /// `P_h(s' | s, a)`, validated and clamped to `[0, 1]` at construction.
    pub fn transition_prob(&self, h: usize, s: usize, a: usize, s_next: usize) -> Result<f64> {
        self.check_step(h)?;
        check_index("state", s, self.num_states())?;
        check_index("action", a, self.num_actions())?;
        check_index("next state", s_next, self.num_states())?;
        Ok(self.kernel[self.flat(h, s, a)][s_next])
    }

    /// Next-state distribution `P_h(. | s, a)`. Indices are not checked.
    pub fn next_state_dist(&self, h: usize, s: usize, a: usize) -> &[f64] {
        &self.kernel[self.flat(h, s, a)]
    }

    /// Mean reward `<phi(s, a), theta_h>`. Indices are not checked.
    pub fn mean_reward(&self, h: usize, s: usize, a: usize) -> f64 {
        self.rewards[self.flat(h, s, a)]
    }

    /// `sum_{s'} P_h(s' | s, a) f(s')`.
    pub fn expect_next(&self, h: usize, s: usize, a: usize, values: &[f64]) -> f64 {
        self.next_state_dist(h, s, a)
            .iter()
            .zip(values)
            .map(|(p, v)| p * v)
            .sum()
    }

    /// Exact Bellman image `r_h + P_h V` over all `(s, a)`, as `[s][a]`.
    pub fn bellman_image(&self, h: usize, v_next: &[f64]) -> Vec<Vec<f64>> {
        (0..self.num_states())
            .map(|s| {
                (0..self.num_actions())
                    .map(|a| self.mean_reward(h, s, a) + self.expect_next(h, s, a, v_next))
                    .collect()
            })
            .collect()
    }

    /// True when every feature coordinate is nonnegative.
    pub fn features_nonnegative(&self) -> bool {
        self.parts.phi.iter().all(|f| f.iter().all(|&x| x >= 0.0))
    }
}

impl FeatureMap for LinearMdp {
    fn feature_dim(&self) -> usize {
        self.parts.feature_dim
    }

    fn num_states(&self) -> usize {
        self.parts.states.len()
    }

    fn num_actions(&self) -> usize {
        self.parts.actions.len()
    }

    fn phi(&self, s: usize, a: usize) -> &DVector<f64> {
        &self.parts.phi[s * self.parts.actions.len() + a]
    }

    fn range_exempt(&self) -> bool {
        self.parts.exemptions.reward_range
    }
}

pub(crate) fn validate_distribution(p: &[f64], tol: f64) -> std::result::Result<(), String> {
    if p.is_empty() {
        return Err("empty distribution".into());
    }
    if let Some(x) = p.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
        return Err(format!("entry {x} is not a probability"));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > tol {
        return Err(format!("entries sum to {total}"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn coin_mdp() -> LinearMdpParts {
        // Two states, one action, one-hot features; fair coin transitions.
        let half = DVector::from_vec(vec![0.5, 0.5]);
        LinearMdpParts {
            horizon: 2,
            feature_dim: 2,
            states: vec!["a".into(), "b".into()],
            actions: vec!["x".into()],
            phi: vec![
                DVector::from_vec(vec![1.0, 0.0]),
                DVector::from_vec(vec![0.0, 1.0]),
            ],
            nu: vec![vec![half.clone(), half.clone()], vec![half.clone(), half]],
            theta: vec![DVector::from_vec(vec![0.2, 0.7]); 2],
            initial_dist: vec![1.0, 0.0],
            reward_noise_std: 0.0,
            exemptions: Exemptions::default(),
        }
    }

    #[test]
    fn builds_and_reads_back() {
        let mdp = LinearMdp::new(coin_mdp()).unwrap();
        assert_eq!(mdp.transition_prob(1, 0, 0, 1).unwrap(), 0.5);
        assert_eq!(mdp.mean_reward(2, 1, 0), 0.7);
        assert!(mdp.transition_prob(3, 0, 0, 0).is_err());
        assert!(mdp.transition_prob(1, 0, 1, 0).is_err());
    }

    #[test]
    fn rejects_bad_row_sum() {
        let mut parts = coin_mdp();
        parts.nu[1][0] = DVector::from_vec(vec![0.6, 0.5]);
        assert!(matches!(LinearMdp::new(parts), Err(Error::InvalidModel(_))));
    }

    #[test]
    fn rejects_negative_probability() {
        let mut parts = coin_mdp();
        parts.nu[0][0] = DVector::from_vec(vec![-0.1, 0.5]);
        parts.nu[0][1] = DVector::from_vec(vec![1.1, 0.5]);
        assert!(LinearMdp::new(parts).is_err());
    }

    #[test]
    fn reward_range_and_exemption() {
        let mut parts = coin_mdp();
        parts.theta[0] = DVector::from_vec(vec![-0.5, 0.5]);
        assert!(LinearMdp::new(parts.clone()).is_err());
        parts.exemptions.reward_range = true;
        let mdp = LinearMdp::new(parts).unwrap();
        assert_eq!(mdp.mean_reward(1, 0, 0), -0.5);
    }

    #[test]
    fn feature_norm_checked_unless_exempt() {
        let mut parts = coin_mdp();
        parts.phi[0] = DVector::from_vec(vec![1.0, 0.5]);
        parts.nu = vec![vec![DVector::from_vec(vec![1.0, 0.0]), DVector::from_vec(vec![0.0, 1.0])]; 2];
        assert!(LinearMdp::new(parts.clone()).is_err());
        parts.exemptions.feature_norm = true;
        // Row (s=0) now has total mass 1.5: still rejected on the kernel.
        assert!(LinearMdp::new(parts).is_err());
    }

    #[test]
    fn tolerance_clamps_tiny_excursions() {
        let mut parts = coin_mdp();
        parts.nu[0][0] = DVector::from_vec(vec![1.0 + 5e-11, 0.5]);
        parts.nu[0][1] = DVector::from_vec(vec![-5e-11, 0.5]);
        let mdp = LinearMdp::new(parts).unwrap();
        assert_eq!(mdp.transition_prob(1, 0, 0, 0).unwrap(), 1.0);
        assert_eq!(mdp.transition_prob(1, 0, 0, 1).unwrap(), 0.0);
    }
}
