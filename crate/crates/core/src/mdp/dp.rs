//! Exact dynamic programming against a known model.

use nalgebra::{DMatrix, SymmetricEigen};

use super::{FeatureMap, LinearMdp, PolicyTable};
use crate::error::{check_dim, Error, Result};

/// Optimal action values, state values, and the optimal initial value.
#[derive(Clone, Debug)]
pub struct ExactValues {
    /// `q[h - 1][s][a]`
    pub q: Vec<Vec<Vec<f64>>>,
    /// `v[h - 1][s]` for `h` in `1..=H+1`; the last row is zero.
    pub v: Vec<Vec<f64>>,
    pub v_star: f64,
}

impl ExactValues {
    pub fn horizon(&self) -> usize {
        self.q.len()
    }

    /// `V*_h` for `h` in `1..=H+1`.
    pub fn v_at(&self, h: usize) -> &[f64] {
        &self.v[h - 1]
    }

    /// Greedy policy with respect to `Q*`, ties to the lowest action index.
    pub fn greedy_policy(&self) -> PolicyTable {
        let num_actions = self.q[0][0].len();
        let actions = self
            .q
            .iter()
            .map(|qh| qh.iter().map(|row| argmax_lowest(row).0).collect())
            .collect();
        PolicyTable::deterministic(num_actions, actions)
            .expect("greedy policy indexes are in range")
    }
}

/// Value of a fixed policy.
#[derive(Clone, Debug)]
pub struct PolicyValues {
    /// `v[h - 1][s]` for `h` in `1..=H+1`.
    pub v: Vec<Vec<f64>>,
    pub value: f64,
}

/// `(argmax, max)` with ties broken toward the lowest index.
pub(crate) fn argmax_lowest(row: &[f64]) -> (usize, f64) {
    let mut best = (0, row[0]);
    for (a, &x) in row.iter().enumerate().skip(1) {
        if x > best.1 {
            best = (a, x);
        }
    }
    best
}

/// Backward induction `Q_h = r_h + P_h V_{h+1}`, `V_h = max_a Q_h`.
pub fn exact_value_iteration(mdp: &LinearMdp) -> ExactValues {
    let h_len = mdp.horizon();
    let s_len = mdp.num_states();
    let mut v = vec![vec![0.0; s_len]; h_len + 1];
    let mut q = vec![Vec::new(); h_len];
    for h in (1..=h_len).rev() {
        let qh = mdp.bellman_image(h, &v[h]);
        v[h - 1] = qh.iter().map(|row| argmax_lowest(row).1).collect();
        q[h - 1] = qh;
    }
    let v_star = dot(mdp.initial_dist(), &v[0]);
    ExactValues { q, v, v_star }
}

/// Exact value of `policy` by backward recursion.
pub fn policy_value(mdp: &LinearMdp, policy: &PolicyTable) -> Result<PolicyValues> {
    policy.check_shape(mdp.horizon(), mdp.num_states(), mdp.num_actions())?;
    let h_len = mdp.horizon();
    let mut v = vec![vec![0.0; mdp.num_states()]; h_len + 1];
    for h in (1..=h_len).rev() {
        let next = std::mem::take(&mut v[h]);
        v[h - 1] = (0..mdp.num_states())
            .map(|s| {
                policy
                    .support(h, s)
                    .into_iter()
                    .map(|(a, p)| p * (mdp.mean_reward(h, s, a) + mdp.expect_next(h, s, a, &next)))
                    .sum()
            })
            .collect();
        v[h] = next;
    }
    let value = dot(mdp.initial_dist(), &v[0]);
    Ok(PolicyValues { v, value })
}

/// State-action occupancy `d^pi_h(s, a)` as `[h - 1][s][a]`, by forward recursion
/// from the initial distribution.
pub fn occupancy(mdp: &LinearMdp, policy: &PolicyTable) -> Result<Vec<Vec<Vec<f64>>>> {
    policy.check_shape(mdp.horizon(), mdp.num_states(), mdp.num_actions())?;
    let s_len = mdp.num_states();
    let a_len = mdp.num_actions();
    let mut state_dist = mdp.initial_dist().to_vec();
    let mut out = Vec::with_capacity(mdp.horizon());
    for h in 1..=mdp.horizon() {
        let mut dh = vec![vec![0.0; a_len]; s_len];
        let mut next = vec![0.0; s_len];
        for s in 0..s_len {
            if state_dist[s] == 0.0 {
                continue;
            }
            for (a, p) in policy.support(h, s) {
                let mass = state_dist[s] * p;
                dh[s][a] = mass;
                for (sn, pn) in mdp.next_state_dist(h, s, a).iter().enumerate() {
                    next[sn] += mass * pn;
                }
            }
        }
        out.push(dh);
        state_dist = next;
    }
    Ok(out)
}

/// Population feature covariance `E_{mu,h}[phi phi^T]` under `behavior` at step
/// `h`, with its minimum eigenvalue.
pub fn population_covariance(
    mdp: &LinearMdp,
    behavior: &PolicyTable,
    h: usize,
) -> Result<(DMatrix<f64>, f64)> {
    if h == 0 || h > mdp.horizon() {
        return Err(Error::IndexOutOfRange {
            what: "step",
            index: h,
            limit: mdp.horizon() + 1,
        });
    }
    let occ = occupancy(mdp, behavior)?;
    let d = mdp.feature_dim();
    let mut cov = DMatrix::zeros(d, d);
    for (s, row) in occ[h - 1].iter().enumerate() {
        for (a, &mass) in row.iter().enumerate() {
            if mass > 0.0 {
                let f = mdp.phi(s, a);
                cov.ger(mass, f, f, 1.0);
            }
        }
    }
    let kappa = min_eigenvalue(&cov);
    Ok((cov, kappa))
}

/// Coverage constant `min_h lambda_min(Sigma^p_h)`.
pub fn min_coverage(mdp: &LinearMdp, behavior: &PolicyTable) -> Result<f64> {
    (1..=mdp.horizon())
        .map(|h| population_covariance(mdp, behavior, h).map(|(_, k)| k))
        .try_fold(f64::INFINITY, |acc, k| k.map(|k| acc.min(k)))
}

pub(crate) fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    SymmetricEigen::new(sym)
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// `Var_{P_h}(V)(s, a) = [P_h V^2](s, a) - ([P_h V](s, a))^2`, as `[s][a]`.
pub fn conditional_variance(mdp: &LinearMdp, h: usize, values: &[f64]) -> Result<Vec<Vec<f64>>> {
    check_dim(mdp.num_states(), values.len(), "value vector")?;
    if h == 0 || h > mdp.horizon() {
        return Err(Error::IndexOutOfRange {
            what: "step",
            index: h,
            limit: mdp.horizon() + 1,
        });
    }
    let squares: Vec<f64> = values.iter().map(|v| v * v).collect();
    Ok((0..mdp.num_states())
        .map(|s| {
            (0..mdp.num_actions())
                .map(|a| {
                    let m1 = mdp.expect_next(h, s, a, values);
                    let m2 = mdp.expect_next(h, s, a, &squares);
                    (m2 - m1 * m1).max(0.0)
                })
                .collect()
        })
        .collect())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
