use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const ROW_TOL: f64 = 1e-12;

/// The decision rule at one step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    /// `actions[s]`
    Deterministic(Vec<usize>),
    /// `probs[s][a]`
    Stochastic(Vec<Vec<f64>>),
}

/// A Markov policy `pi = (pi_1, ..., pi_H)`, one rule per step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyTable {
    num_states: usize,
    num_actions: usize,
    steps: Vec<StepRule>,
}

impl PolicyTable {
    pub fn new(num_states: usize, num_actions: usize, steps: Vec<StepRule>) -> Result<Self> {
        let table = Self {
            num_states,
            num_actions,
            steps,
        };
        table.validate()?;
        Ok(table)
    }

    pub fn deterministic(num_actions: usize, actions: Vec<Vec<usize>>) -> Result<Self> {
        let num_states = actions.first().map_or(0, Vec::len);
        Self::new(
            num_states,
            num_actions,
            actions.into_iter().map(StepRule::Deterministic).collect(),
        )
    }

    /// Same per-state action distribution at every step.
    pub fn stationary(horizon: usize, rows: Vec<Vec<f64>>) -> Result<Self> {
        let num_states = rows.len();
        let num_actions = rows.first().map_or(0, Vec::len);
        Self::new(
            num_states,
            num_actions,
            vec![StepRule::Stochastic(rows); horizon],
        )
    }

    pub fn uniform(horizon: usize, num_states: usize, num_actions: usize) -> Self {
        let row = vec![1.0 / num_actions as f64; num_actions];
        Self {
            num_states,
            num_actions,
            steps: vec![StepRule::Stochastic(vec![row; num_states]); horizon],
        }
    }

    /// Check structural invariants (used after deserialization too).
    pub fn validate(&self) -> Result<()> {
        if self.steps.is_empty() || self.num_states == 0 || self.num_actions == 0 {
            return Err(Error::InvalidPolicy("empty policy table".into()));
        }
        for (h, rule) in self.steps.iter().enumerate() {
            match rule {
                StepRule::Deterministic(actions) => {
                    if actions.len() != self.num_states {
                        return Err(Error::InvalidPolicy(format!(
                            "step {} has {} entries, expected {}",
                            h + 1,
                            actions.len(),
                            self.num_states
                        )));
                    }
                    if let Some(&a) = actions.iter().find(|&&a| a >= self.num_actions) {
                        return Err(Error::InvalidPolicy(format!(
                            "step {} references action {a} of {}",
                            h + 1,
                            self.num_actions
                        )));
                    }
                }
                StepRule::Stochastic(rows) => {
                    if rows.len() != self.num_states {
                        return Err(Error::InvalidPolicy(format!(
                            "step {} has {} rows, expected {}",
                            h + 1,
                            rows.len(),
                            self.num_states
                        )));
                    }
                    for (s, row) in rows.iter().enumerate() {
                        if row.len() != self.num_actions {
                            return Err(Error::InvalidPolicy(format!(
                                "step {} state {s}: row length {} != {}",
                                h + 1,
                                row.len(),
                                self.num_actions
                            )));
                        }
                        super::validate_distribution(row, ROW_TOL).map_err(|m| {
                            Error::InvalidPolicy(format!("step {} state {s}: {m}", h + 1))
                        })?;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn rule(&self, h: usize) -> &StepRule {
        &self.steps[h - 1]
    }

    /// `pi_h(a | s)`.
    pub fn prob(&self, h: usize, s: usize, a: usize) -> f64 {
        match &self.steps[h - 1] {
            StepRule::Deterministic(actions) => f64::from(u8::from(actions[s] == a)),
            StepRule::Stochastic(rows) => rows[s][a],
        }
    }

    /// Nonzero `(a, pi_h(a | s))` pairs in action order.
    pub fn support(&self, h: usize, s: usize) -> Vec<(usize, f64)> {
        match &self.steps[h - 1] {
            StepRule::Deterministic(actions) => vec![(actions[s], 1.0)],
            StepRule::Stochastic(rows) => rows[s]
                .iter()
                .copied()
                .enumerate()
                .filter(|&(_, p)| p > 0.0)
                .collect(),
        }
    }

    /// Deterministic action at `(h, s)`, if the rule is deterministic there.
    pub fn action(&self, h: usize, s: usize) -> Option<usize> {
        match &self.steps[h - 1] {
            StepRule::Deterministic(actions) => Some(actions[s]),
            StepRule::Stochastic(rows) => {
                let mut it = rows[s].iter().enumerate().filter(|(_, &p)| p > 0.0);
                match (it.next(), it.next()) {
                    (Some((a, _)), None) => Some(a),
                    _ => None,
                }
            }
        }
    }

    /// Draw an action by inverse CDF from a uniform `u` in `[0, 1)`.
    pub fn sample(&self, h: usize, s: usize, u: f64) -> usize {
        match &self.steps[h - 1] {
            StepRule::Deterministic(actions) => actions[s],
            StepRule::Stochastic(rows) => sample_index(&rows[s], u),
        }
    }

    /// Check the table matches a model's shape.
    pub fn check_shape(&self, horizon: usize, num_states: usize, num_actions: usize) -> Result<()> {
        if self.horizon() != horizon
            || self.num_states != num_states
            || self.num_actions != num_actions
        {
            return Err(Error::InvalidPolicy(format!(
                "policy shape (H={}, S={}, A={}) does not match model (H={horizon}, S={num_states}, A={num_actions})",
                self.horizon(),
                self.num_states,
                self.num_actions
            )));
        }
        Ok(())
    }
}

/// Inverse-CDF draw over an ordered probability vector. Returns the first
/// index whose cumulative mass exceeds `u`; falls back to the last index with
/// positive mass when rounding leaves the total just below `u`.
pub fn sample_index(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}
