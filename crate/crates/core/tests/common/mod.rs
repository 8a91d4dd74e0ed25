//! Independent reference computations for integration tests. Nothing here
//! calls the library's solvers or dynamic programming.

#![allow(dead_code, clippy::needless_range_loop)]

use nalgebra::DVector;
use vapvi_core::mdp::{FeatureMap, LinearMdp, PolicyTable};

/// Solve `a x = b` by Gaussian elimination with partial pivoting.
pub fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let tail: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - tail) / a[row][row];
    }
    x
}

/// Dense `sum_i w_i x_i x_i^T + lambda I` and `sum_i w_i y_i x_i`.
pub fn normal_equations(xs: &[DVector<f64>], ys: &[f64], ws: &[f64], lambda: f64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let d = xs[0].len();
    let mut g = vec![vec![0.0; d]; d];
    let mut b = vec![0.0; d];
    for ((x, &y), &w) in xs.iter().zip(ys).zip(ws) {
        for i in 0..d {
            b[i] += w * y * x[i];
            for j in 0..d {
                g[i][j] += w * x[i] * x[j];
            }
        }
    }
    for (i, row) in g.iter_mut().enumerate() {
        row[i] += lambda;
    }
    (g, b)
}

/// Expected total reward of a (possibly stochastic) policy by pushing the
/// state distribution forward one step at a time.
pub fn forward_value(mdp: &LinearMdp, policy: &PolicyTable) -> f64 {
    let s_len = mdp.num_states();
    let a_len = mdp.num_actions();
    let mut dist = mdp.initial_dist().to_vec();
    let mut total = 0.0;
    for h in 1..=mdp.horizon() {
        let mut next = vec![0.0; s_len];
        for s in 0..s_len {
            if dist[s] == 0.0 {
                continue;
            }
            for a in 0..a_len {
                let p = policy.prob(h, s, a);
                if p == 0.0 {
                    continue;
                }
                let mass = dist[s] * p;
                let phi = mdp.phi(s, a);
                total += mass * phi.dot(mdp.theta(h));
                for (sn, slot) in next.iter_mut().enumerate() {
                    *slot += mass * phi.dot(mdp.nu(h, sn));
                }
            }
        }
        dist = next;
    }
    total
}

/// Best value over every deterministic Markov policy.
pub fn brute_force_optimum(mdp: &LinearMdp) -> f64 {
    let (h_len, s_len, a_len) = (mdp.horizon(), mdp.num_states(), mdp.num_actions());
    let slots = h_len * s_len;
    let mut digits = vec![0usize; slots];
    let mut best = f64::NEG_INFINITY;
    loop {
        let actions: Vec<Vec<usize>> = digits.chunks(s_len).map(|c| c.to_vec()).collect();
        let pi = PolicyTable::deterministic(a_len, actions).unwrap();
        best = best.max(forward_value(mdp, &pi));
        let mut i = 0;
        while i < slots {
            digits[i] += 1;
            if digits[i] < a_len {
                break;
            }
            digits[i] = 0;
            i += 1;
        }
        if i == slots {
            return best;
        }
    }
}

/// `E[V(s')]` and `E[V(s')^2]` from the model's parameters.
pub fn next_moments(mdp: &LinearMdp, h: usize, s: usize, a: usize, v: &[f64]) -> (f64, f64) {
    let phi = mdp.phi(s, a);
    let mut m1 = 0.0;
    let mut m2 = 0.0;
    for (sn, &x) in v.iter().enumerate() {
        let p = phi.dot(mdp.nu(h, sn));
        m1 += p * x;
        m2 += p * x * x;
    }
    (m1, m2)
}
