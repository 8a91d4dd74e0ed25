mod common;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::next_moments;
use vapvi_core::data::generate;
use vapvi_core::instances::{build_hard, random_tabular, HardInstanceConfig, TabularSpec};
use vapvi_core::mdp::{exact_value_iteration, FeatureMap, PolicyTable};
use vapvi_core::variance::fit_variance;

// Transitions of the lower-bound instance are fair coin flips, so the
// conditional variance of the optimal values is 1/6 everywhere before the
// last step.
#[test]
fn hard_instance_variance_converges_to_one_sixth() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let inst = build_hard(&HardInstanceConfig::random(5, 3, 0.2, &mut rng)).unwrap();
    let exact = exact_value_iteration(&inst.mdp);
    let mut errs = Vec::new();
    for k in [200, 2000, 20000] {
        let data = generate(&inst.mdp, &inst.behavior, k, 17).unwrap();
        let mut sup = 0.0f64;
        for h in 1..3 {
            let v_next = exact.v_at(h + 1);
            let model = fit_variance(&data, &inst.mdp, h, v_next, 0.01).unwrap();
            for s in 0..2 {
                for a in 0..inst.mdp.num_actions() {
                    if inst.behavior.prob(h, s, a) == 0.0 {
                        continue;
                    }
                    let (m1, m2) = next_moments(&inst.mdp, h, s, a, v_next);
                    assert!((m2 - m1 * m1 - 1.0 / 6.0).abs() < 1e-12);
                    sup = sup.max((model.variance(inst.mdp.phi(s, a)).unwrap() - 1.0 / 6.0).abs());
                }
            }
        }
        errs.push(sup);
    }
    assert!(errs[2] < errs[0], "{errs:?}");
    assert!(errs[2] < 0.05, "{errs:?}");
}

#[test]
fn tabular_variance_is_empirical_variance() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mdp = random_tabular(&TabularSpec::new(3, 3, 2), &mut rng).unwrap();
    let mu = PolicyTable::uniform(3, 3, 2);
    let data = generate(&mdp, &mu, 400, 9).unwrap();
    let v_next = [0.3, 1.7, 0.9];
    let lambda = 1e-9;
    let model = fit_variance(&data, &mdp, 1, &v_next, lambda).unwrap();
    for s in 0..3 {
        for a in 0..2 {
            let xs: Vec<f64> = data.step(1).iter().filter(|t| t.s == s && t.a == a).map(|t| v_next[t.s_next]).collect();
            if xs.is_empty() {
                continue;
            }
            let n = xs.len() as f64;
            let mean = xs.iter().sum::<f64>() / n;
            let var = xs.iter().map(|x| x * x).sum::<f64>() / n - mean * mean;
            assert!((model.variance(mdp.phi(s, a)).unwrap() - var).abs() < 1e-6);
        }
    }
}
