//! Acceptance gate. Runs each criterion, prints one PASS/FAIL line apiece,
//! and exits nonzero if any fails.

#![allow(clippy::needless_range_loop)]

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use common::{brute_force_optimum, forward_value, gauss_solve, next_moments, normal_equations};
use vapvi_core::data::generate;
use vapvi_core::experiment::{default_k_grid, run, summarize, AlgorithmEntry, ExperimentConfig, InstanceSpec};
use vapvi_core::instances::{
    build_hard, build_synthetic, hard_suboptimality_closed_form, random_tabular, HardInstanceConfig,
    SyntheticConfig, TabularSpec,
};
use vapvi_core::mdp::{conditional_variance, exact_value_iteration, policy_value, FeatureMap, PolicyTable, StepRule};
use vapvi_core::pvi::{solve, Algorithm, BonusSpec, SolverParams, Weighting};
use vapvi_core::ridge::{ridge, WeightedGram};
use vapvi_core::variance::fit_variance;

type Check = fn() -> Outcome;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn oracle_exactness() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let horizon = rng.gen_range(1..=3);
        let actions = rng.gen_range(1..=3);
        let mdp = random_tabular(&TabularSpec::new(horizon, 2, actions), &mut rng).unwrap();
        let dp = exact_value_iteration(&mdp).v_star;
        worst = worst.max((dp - brute_force_optimum(&mdp)).abs());
    }
    let elapsed = start.elapsed();
    outcome(
        worst <= 1e-12 && elapsed < Duration::from_secs(1),
        format!("max |v* - brute force| = {worst:.2e} over 20 instances in {elapsed:.2?}"),
    )
}

fn ridge_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let (mut worst_res, mut worst_err) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let d = rng.gen_range(1..=20);
        let n = rng.gen_range(1..=200);
        let scales: Vec<f64> = (0..d).map(|_| 10f64.powf(rng.gen_range(-1.0..1.0))).collect();
        let xs: Vec<DVector<f64>> = (0..n)
            .map(|_| DVector::from_fn(d, |i, _| scales[i] * rng.sample::<f64, _>(StandardNormal)))
            .collect();
        let ys: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let ws: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..2.0)).collect();
        let lambda = 10f64.powf(rng.gen_range(-3.0..0.0));
        let fit = ridge(&xs, &ys, &ws, lambda).unwrap();

        let (g, b) = normal_equations(&xs, &ys, &ws, lambda);
        let bnorm = b.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        let resid = (0..d)
            .map(|i| {
                let gi: f64 = (0..d).map(|j| g[i][j] * fit.coef[j]).sum();
                (gi - b[i]).powi(2)
            })
            .sum::<f64>()
            .sqrt()
            / bnorm;
        let oracle = DVector::from_vec(gauss_solve(g, b));
        let err = (&fit.coef - &oracle).norm() / oracle.norm().max(f64::MIN_POSITIVE);
        worst_res = worst_res.max(resid);
        worst_err = worst_err.max(err);
    }
    outcome(
        worst_res <= 1e-8 && worst_err <= 1e-8,
        format!("max relative residual {worst_res:.2e}, max relative gap to elimination {worst_err:.2e}"),
    )
}

fn variance_consistency() -> Outcome {
    let start = Instant::now();
    let horizon = 5;
    let (mdp, mu) = build_synthetic(&SyntheticConfig::new(horizon)).unwrap();
    let exact = exact_value_iteration(&mdp);
    let mut errors = Vec::new();
    for k in [100, 1000, 10000] {
        let data = generate(&mdp, &mu, k, 303).unwrap();
        let mut sup = 0.0f64;
        for h in 1..=horizon {
            let v_next = exact.v_at(h + 1);
            let model = fit_variance(&data, &mdp, h, v_next, 0.01).unwrap();
            let oracle = conditional_variance(&mdp, h, v_next).unwrap();
            for s in 0..mdp.num_states() {
                for a in 0..mdp.num_actions() {
                    if mu.prob(h, s, a) == 0.0 {
                        continue;
                    }
                    let (m1, m2) = next_moments(&mdp, h, s, a, v_next);
                    assert!((oracle[s][a] - (m2 - m1 * m1).max(0.0)).abs() < 1e-9);
                    sup = sup.max((model.variance(mdp.phi(s, a)).unwrap() - oracle[s][a]).abs());
                }
            }
        }
        errors.push(sup);
    }
    let elapsed = start.elapsed();
    let decreasing = errors.windows(2).all(|w| w[1] < w[0]);
    outcome(
        decreasing && errors[2] < 0.05 && elapsed < Duration::from_secs(30),
        format!(
            "sup error at K = 100/1000/10000: {:.3e} / {:.3e} / {:.3e} in {elapsed:.2?}",
            errors[0], errors[1], errors[2]
        ),
    )
}

fn synthetic_comparison() -> Outcome {
    let start = Instant::now();
    let mut k_grid = default_k_grid();
    if !k_grid.contains(&50) {
        k_grid.push(50);
        k_grid.sort_unstable();
    }
    let config = ExperimentConfig {
        instance: InstanceSpec::default(),
        algorithms: vec![AlgorithmEntry::Preset("VAPVI".into()), AlgorithmEntry::Preset("PEVI".into())],
        k_grid,
        trials: 50,
        h_list: vec![20, 50],
        lambda: 0.01,
        c: 1.0,
        higher_order: false,
        ..Default::default()
    };
    let rows = run(&config, 0).unwrap().rows;
    let summary = summarize(&rows);
    let mean = |alg: &str, h: usize, k: usize| {
        summary
            .iter()
            .find(|r| r.algorithm == alg && r.horizon == h && r.episodes == k)
            .map(|r| r.mean)
            .unwrap()
    };
    let gap20 = mean("PEVI", 20, 1000) - mean("VAPVI", 20, 1000);
    let gap50 = mean("PEVI", 50, 1000) - mean("VAPVI", 50, 1000);
    let a = gap20 >= 0.0 && gap50 >= 0.0;
    let b = gap50 > gap20;
    let c20 = mean("VAPVI", 20, 1000) <= 0.5 * mean("VAPVI", 20, 50);
    let c50 = mean("VAPVI", 50, 1000) <= 0.5 * mean("VAPVI", 50, 50);
    let elapsed = start.elapsed();
    outcome(
        a && b && c20 && c50 && elapsed < Duration::from_secs(600),
        format!(
            "K=1000 means VAPVI/PEVI: H=20 {:.4}/{:.4}, H=50 {:.4}/{:.4}; VAPVI K=50: {:.4}, {:.4}; \
             (a) {a} (b) {b} (c) {} in {elapsed:.1?}",
            mean("VAPVI", 20, 1000),
            mean("PEVI", 20, 1000),
            mean("VAPVI", 50, 1000),
            mean("PEVI", 50, 1000),
            mean("VAPVI", 20, 50),
            mean("VAPVI", 50, 50),
            c20 && c50
        ),
    )
}

fn pessimism_sandwich() -> Outcome {
    let horizon = 8;
    let mut synth = SyntheticConfig::new(horizon);
    synth.reward_noise_std = 1.0;
    let (mdp, mu) = build_synthetic(&synth).unwrap();
    let alg = Algorithm::preset("VAPVI", 1.0, false).unwrap();
    let params = SolverParams::new(0.01, alg.bonus, alg.weighting);
    let (mut premise_steps, mut total_steps, mut violations) = (0usize, 0usize, 0usize);
    let mut worst = f64::NEG_INFINITY;
    for run_idx in 0..20u64 {
        let k = [60, 150, 400, 1000][run_idx as usize % 4];
        let data = generate(&mdp, &mu, k, 500 + run_idx).unwrap();
        let sol = solve(&data, &data, &mdp, &params).unwrap();
        for h in 1..=horizon {
            let step = sol.step(h);
            let v_next = sol.v_at(h + 1);
            let mut t = vec![vec![0.0; mdp.num_actions()]; mdp.num_states()];
            let mut premise = true;
            for s in 0..mdp.num_states() {
                for a in 0..mdp.num_actions() {
                    let reward = mdp.phi(s, a).dot(mdp.theta(h));
                    t[s][a] = reward + next_moments(&mdp, h, s, a, v_next).0;
                    premise &= (t[s][a] - step.t_hat[s][a]).abs() <= step.bonus[s][a];
                }
            }
            total_steps += 1;
            if !premise {
                continue;
            }
            premise_steps += 1;
            for s in 0..mdp.num_states() {
                for a in 0..mdp.num_actions() {
                    let zeta = t[s][a] - step.q_hat[s][a];
                    let g = step.bonus[s][a];
                    let excess = (-zeta).max(zeta - 2.0 * g);
                    worst = worst.max(excess);
                    if excess > 1e-10 {
                        violations += 1;
                    }
                }
            }
        }
    }
    let rate = premise_steps as f64 / total_steps as f64;
    outcome(
        violations == 0,
        format!(
            "premise held at {premise_steps}/{total_steps} steps (rate {rate:.3}); {violations} violations, worst excess {worst:.2e}"
        ),
    )
}

fn tabular_reduction() -> Outcome {
    let lambda = 1e-8;
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let (mut off_diag, mut w_gap) = (0.0f64, 0.0f64);
    for inst in 0..5u64 {
        let (horizon, s_len, a_len) = (4, 4, 3);
        let mut spec = TabularSpec::new(horizon, s_len, a_len);
        spec.reward_noise_std = 0.3;
        let mdp = random_tabular(&spec, &mut rng).unwrap();
        let mu = PolicyTable::uniform(horizon, s_len, a_len);
        let data = generate(&mdp, &mu, 300, 700 + inst).unwrap();
        let params = SolverParams::new(lambda, BonusSpec::none(), Weighting::Variance);
        let sol = solve(&data, &data, &mdp, &params).unwrap();

        let mut v = vec![0.0; s_len];
        for h in (1..=horizon).rev() {
            let step = sol.step(h);
            let g = step.gram.gram();
            for i in 0..g.nrows() {
                for j in 0..g.ncols() {
                    if i != j {
                        off_diag = off_diag.max(g[(i, j)].abs());
                    }
                }
            }
            let cap = (horizon - h + 1) as f64;
            let mut next_v = vec![0.0f64; s_len];
            for s in 0..s_len {
                for a in 0..a_len {
                    let recs: Vec<_> = data.step(h).iter().filter(|t| t.s == s && t.a == a).collect();
                    let n = recs.len() as f64;
                    let m1 = recs.iter().map(|t| v[t.s_next]).sum::<f64>() / (n + lambda);
                    let m2 = recs.iter().map(|t| v[t.s_next].powi(2)).sum::<f64>() / (n + lambda);
                    let var = m2.clamp(0.0, cap * cap) - m1.clamp(0.0, cap).powi(2);
                    let sigma_sq = var.max(1.0);
                    let y: f64 = recs.iter().map(|t| (t.r + v[t.s_next]) / sigma_sq).sum();
                    let w = y / (n / sigma_sq + lambda);
                    w_gap = w_gap.max((w - step.w_hat[s * a_len + a]).abs());
                    next_v[s] = next_v[s].max(w.clamp(0.0, cap));
                }
            }
            v = next_v;
        }
    }
    outcome(
        off_diag <= 1e-10 && w_gap <= 1e-6,
        format!("max off-diagonal {off_diag:.2e}, max |w - tabular backup| {w_gap:.2e}"),
    )
}

fn random_policy(rng: &mut ChaCha8Rng, horizon: usize, s_len: usize, a_len: usize) -> PolicyTable {
    let steps = (0..horizon)
        .map(|_| {
            if rng.gen_bool(0.3) {
                StepRule::Deterministic((0..s_len).map(|_| rng.gen_range(0..a_len)).collect())
            } else {
                StepRule::Stochastic(
                    (0..s_len)
                        .map(|_| {
                            let raw: Vec<f64> = (0..a_len).map(|_| rng.gen::<f64>().powi(3)).collect();
                            let total: f64 = raw.iter().sum();
                            raw.iter().map(|x| x / total).collect()
                        })
                        .collect(),
                )
            }
        })
        .collect();
    PolicyTable::new(s_len, a_len, steps).unwrap()
}

fn hard_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let (mut cf_gap, mut var_gap) = (0.0f64, 0.0f64);
    let mut greedy_ok = true;
    for d in [5, 8] {
        for horizon in [3, 5] {
            let delta = 0.8 * HardInstanceConfig::max_delta(d);
            let inst = build_hard(&HardInstanceConfig::random(d, horizon, delta, &mut rng)).unwrap();
            let mdp = &inst.mdp;
            let exact = exact_value_iteration(mdp);
            for _ in 0..10 {
                let pi = random_policy(&mut rng, horizon, mdp.num_states(), mdp.num_actions());
                let cf = hard_suboptimality_closed_form(&inst, &pi).unwrap();
                let dp = exact.v_star - policy_value(mdp, &pi).unwrap().value;
                let fwd = forward_value(mdp, &inst.optimal) - forward_value(mdp, &pi);
                cf_gap = cf_gap.max((cf - dp).abs()).max((cf - fwd).abs());
            }
            for h in 1..horizon {
                let v_next = exact.v_at(h + 1);
                let cv = conditional_variance(mdp, h, v_next).unwrap();
                for s in 0..mdp.num_states() {
                    for a in 0..mdp.num_actions() {
                        let (m1, m2) = next_moments(mdp, h, s, a, v_next);
                        var_gap = var_gap.max((cv[s][a] - 1.0 / 6.0).abs()).max((m2 - m1 * m1 - 1.0 / 6.0).abs());
                    }
                }
            }
            let greedy = exact.greedy_policy();
            for h in 1..=horizon {
                for s in 0..mdp.num_states() {
                    let a = greedy.action(h, s).unwrap();
                    greedy_ok &= inst.action_vectors[a] == inst.config.u[h - 1];
                }
            }
        }
    }
    outcome(
        cf_gap <= 1e-10 && var_gap <= 1e-12 && greedy_ok,
        format!("max closed-form gap {cf_gap:.2e}, max |Var - 1/6| {var_gap:.2e} (steps h < H), greedy = u_h: {greedy_ok}"),
    )
}

fn jensen_ordering() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..50 {
        let d = rng.gen_range(2..=15);
        let m_samples: Vec<DVector<f64>> = (0..rng.gen_range(1..40))
            .map(|_| DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal)))
            .collect();
        let m = WeightedGram::new(&m_samples, &vec![1.0; m_samples.len()], rng.gen_range(0.01..2.0)).unwrap();
        let n = rng.gen_range(2..30);
        let family: Vec<DVector<f64>> = (0..n)
            .map(|_| DVector::from_fn(d, |_, _| rng.gen_range(-2.0..2.0)))
            .collect();
        let raw: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        let total: f64 = raw.iter().sum();
        let p: Vec<f64> = raw.iter().map(|x| x / total).collect();
        let mean = family.iter().zip(&p).fold(DVector::zeros(d), |acc, (f, w)| acc + f * *w);
        let lhs = m.quadratic_form(&mean).unwrap().sqrt();
        let rhs: f64 = family
            .iter()
            .zip(&p)
            .map(|(f, w)| w * m.quadratic_form(f).unwrap().sqrt())
            .sum();
        worst = worst.max(lhs - rhs);
    }
    outcome(worst <= 1e-12, format!("max ||E phi|| - E||phi|| = {worst:.3e} over 50 cases"))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let config = ExperimentConfig {
        algorithms: Algorithm::PRESETS.iter().map(|s| AlgorithmEntry::Preset((*s).into())).collect(),
        k_grid: vec![5, 20, 60],
        trials: 4,
        h_list: vec![4, 8],
        master_seed: 909,
        ..Default::default()
    };
    let mut bytes = Vec::new();
    for (i, jobs) in [1, 1, 8].into_iter().enumerate() {
        let path = dir.path().join(format!("run{i}.csv"));
        run(&config, jobs).unwrap().save(&path).unwrap();
        bytes.push(std::fs::read(&path).unwrap());
    }
    let rows = bytes[0].iter().filter(|&&b| b == b'\n').count() - 1;
    let same = bytes[0] == bytes[1] && bytes[0] == bytes[2];
    outcome(
        same && rows == 5 * 3 * 4 * 2,
        format!("{rows} rows; rerun identical: {}, jobs 1 vs 8 identical: {}", bytes[0] == bytes[1], bytes[0] == bytes[2]),
    )
}

fn main() {
    let criteria: [(&str, Check); 9] = [
        ("oracle exactness", oracle_exactness),
        ("ridge correctness", ridge_correctness),
        ("variance-estimator consistency", variance_consistency),
        ("synthetic comparison (VAPVI vs PEVI)", synthetic_comparison),
        ("pessimism sandwich", pessimism_sandwich),
        ("tabular reduction", tabular_reduction),
        ("hard-instance identities", hard_identities),
        ("Jensen ordering", jensen_ordering),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        let tag = if result.pass { "PASS" } else { "FAIL" };
        if !result.pass {
            failed += 1;
        }
        println!("[{tag}] {} {name}: {}", i + 1, result.detail);
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
