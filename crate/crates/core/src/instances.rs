//! Instance families: the binary-encoded synthetic simulation MDP, the
//! minimax lower-bound family, and one-hot tabular models.

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{occupancy, Exemptions, LinearMdp, LinearMdpParts, PolicyTable};

pub const SYNTHETIC_ACTIONS: usize = 100;
const SYNTHETIC_BITS: usize = 8;
pub const SYNTHETIC_DIM: usize = SYNTHETIC_BITS + 2;

/// Parameters of the two-state, 100-action synthetic MDP.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub horizon: usize,
    /// Mean reward when the state/action indicator matches.
    pub r: f64,
    /// Behavior mass on action 0.
    pub p: f64,
    /// Per-step bit `alpha_h`, length `horizon`.
    pub alpha: Vec<u8>,
    pub reward_noise_std: f64,
}

impl SyntheticConfig {
    /// `r = 0.9`, `p = 0.6`, `alpha_h = h mod 2`, noiseless rewards.
    pub fn new(horizon: usize) -> Self {
        Self {
            horizon,
            r: 0.9,
            p: 0.6,
            alpha: default_alpha(horizon),
            reward_noise_std: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::InvalidConfig("synthetic horizon must be positive".into()));
        }
        if !(self.r > 0.0 && self.r < 1.0) {
            return Err(Error::InvalidConfig(format!("r = {} not in (0, 1)", self.r)));
        }
        if !(self.p > 0.0 && self.p < 1.0) {
            return Err(Error::InvalidConfig(format!("p = {} not in (0, 1)", self.p)));
        }
        if self.alpha.len() != self.horizon {
            return Err(Error::InvalidConfig(format!(
                "alpha has {} bits for horizon {}",
                self.alpha.len(),
                self.horizon
            )));
        }
        if self.alpha.iter().any(|&b| b > 1) {
            return Err(Error::InvalidConfig("alpha bits must be 0 or 1".into()));
        }
        if !(self.reward_noise_std >= 0.0 && self.reward_noise_std.is_finite()) {
            return Err(Error::InvalidConfig("reward_noise_std must be >= 0".into()));
        }
        Ok(())
    }
}

/// `alpha_h = h mod 2` for `h = 1..=H`.
pub fn default_alpha(horizon: usize) -> Vec<u8> {
    (1..=horizon).map(|h| (h % 2) as u8).collect()
}

/// Least-significant-bit-first 8-bit encoding.
pub fn action_bits(a: usize) -> [f64; SYNTHETIC_BITS] {
    std::array::from_fn(|j| ((a >> j) & 1) as f64)
}

/// `1{s = 0} == 1{a = 0}`.
pub fn synthetic_indicator(s: usize, a: usize) -> bool {
    (s == 0) == (a == 0)
}

pub fn synthetic_feature(s: usize, a: usize) -> DVector<f64> {
    let delta = f64::from(u8::from(synthetic_indicator(s, a)));
    let mut v = action_bits(a).to_vec();
    v.push(delta);
    v.push(1.0 - delta);
    DVector::from_vec(v)
}

/// Build the synthetic MDP and its behavior policy.
///
/// Features have norm up to `sqrt(8)`, so the instance carries the
/// `feature_norm` exemption.
pub fn build_synthetic(config: &SyntheticConfig) -> Result<(LinearMdp, PolicyTable)> {
    config.validate()?;
    let d = SYNTHETIC_DIM;
    let phi = (0..2)
        .flat_map(|s| (0..SYNTHETIC_ACTIONS).map(move |a| synthetic_feature(s, a)))
        .collect();
    let nu = config
        .alpha
        .iter()
        .map(|&alpha| {
            (0..2u8)
                .map(|s_next| {
                    let mut v = DVector::zeros(d);
                    v[d - 2] = f64::from((1 - s_next) ^ alpha);
                    v[d - 1] = f64::from(s_next ^ alpha);
                    v
                })
                .collect()
        })
        .collect();
    let mut theta = DVector::zeros(d);
    theta[d - 2] = config.r;
    theta[d - 1] = 1.0 - config.r;
    let mdp = LinearMdp::new(LinearMdpParts {
        horizon: config.horizon,
        feature_dim: d,
        states: vec!["0".into(), "1".into()],
        actions: (0..SYNTHETIC_ACTIONS).map(|a| a.to_string()).collect(),
        phi,
        nu,
        theta: vec![theta; config.horizon],
        initial_dist: vec![0.5, 0.5],
        reward_noise_std: config.reward_noise_std,
        exemptions: Exemptions {
            reward_range: false,
            feature_norm: true,
        },
    })?;
    let mut row = vec![(1.0 - config.p) / (SYNTHETIC_ACTIONS - 1) as f64; SYNTHETIC_ACTIONS];
    row[0] = config.p;
    let behavior = PolicyTable::stationary(config.horizon, vec![row.clone(), row])?;
    Ok((mdp, behavior))
}

/// Parameters of the lower-bound family member `M_u`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HardInstanceConfig {
    pub d: usize,
    pub horizon: usize,
    /// Gap parameter in `[0, 1/sqrt(3d)]`.
    pub delta: f64,
    /// `u[h - 1]` in `{-1, +1}^{d-2}`.
    pub u: Vec<Vec<i8>>,
    #[serde(default = "unit")]
    pub reward_noise_std: f64,
    /// Materialize all of `{-1, 0, +1}^{d-2}` rather than the behavior
    /// support plus the pure sign actions.
    #[serde(default)]
    pub full_action_set: bool,
}

fn unit() -> f64 {
    1.0
}

pub const MAX_SIGN_COORDS: usize = 12;
pub const MAX_FULL_COORDS: usize = 8;

impl HardInstanceConfig {
    pub fn random<R: Rng + ?Sized>(d: usize, horizon: usize, delta: f64, rng: &mut R) -> Self {
        let u = (0..horizon)
            .map(|_| {
                (0..d.saturating_sub(2))
                    .map(|_| if rng.gen::<bool>() { 1 } else { -1 })
                    .collect()
            })
            .collect();
        Self {
            d,
            horizon,
            delta,
            u,
            reward_noise_std: 1.0,
            full_action_set: false,
        }
    }

    pub fn max_delta(d: usize) -> f64 {
        1.0 / (3.0 * d as f64).sqrt()
    }

    pub fn validate(&self) -> Result<()> {
        if self.d < 3 {
            return Err(Error::InvalidConfig(format!("d = {} must be >= 3", self.d)));
        }
        if self.horizon == 0 {
            return Err(Error::InvalidConfig("horizon must be positive".into()));
        }
        let max = Self::max_delta(self.d);
        if !(0.0..=max).contains(&self.delta) {
            return Err(Error::InvalidConfig(format!(
                "delta = {} outside [0, {max}]",
                self.delta
            )));
        }
        if self.u.len() != self.horizon || self.u.iter().any(|row| row.len() != self.d - 2) {
            return Err(Error::InvalidConfig(format!(
                "u must be {} x {}",
                self.horizon,
                self.d - 2
            )));
        }
        if self.u.iter().flatten().any(|&x| x != 1 && x != -1) {
            return Err(Error::InvalidConfig("u entries must be +1 or -1".into()));
        }
        if !(self.reward_noise_std >= 0.0 && self.reward_noise_std.is_finite()) {
            return Err(Error::InvalidConfig("reward_noise_std must be >= 0".into()));
        }
        let coords = self.d - 2;
        if self.full_action_set && coords > MAX_FULL_COORDS {
            return Err(Error::InvalidConfig(format!(
                "full action set needs d - 2 <= {MAX_FULL_COORDS}, got {coords}"
            )));
        }
        if coords > MAX_SIGN_COORDS {
            return Err(Error::InvalidConfig(format!(
                "sign actions need d - 2 <= {MAX_SIGN_COORDS}, got {coords}"
            )));
        }
        Ok(())
    }
}

/// A materialized lower-bound instance.
#[derive(Clone, Debug)]
pub struct HardInstance {
    pub config: HardInstanceConfig,
    pub mdp: LinearMdp,
    pub behavior: PolicyTable,
    /// `pi*_h = u_h` in both states.
    pub optimal: PolicyTable,
    /// Action vectors in `{-1, 0, +1}^{d-2}`, indexed like the model's actions.
    pub action_vectors: Vec<Vec<i8>>,
}

/// State index 0 is `+1`, index 1 is `-1`.
pub const HARD_STATES: [i8; 2] = [1, -1];

fn action_name(a: &[i8]) -> String {
    a.iter()
        .map(|&x| match x {
            1 => '+',
            -1 => '-',
            _ => '0',
        })
        .collect()
}

fn hard_actions(coords: usize, full: bool) -> Vec<Vec<i8>> {
    if full {
        let total = 3usize.pow(coords as u32);
        return (0..total)
            .map(|mut idx| {
                (0..coords)
                    .map(|_| {
                        let digit = (idx % 3) as i8 - 1;
                        idx /= 3;
                        digit
                    })
                    .collect()
            })
            .collect();
    }
    let mut out: Vec<Vec<i8>> = (0..coords)
        .map(|j| (0..coords).map(|i| i8::from(i == j)).collect())
        .collect();
    out.push(vec![0; coords]);
    out.extend((0..1usize << coords).map(|mask| {
        (0..coords)
            .map(|j| if mask >> j & 1 == 1 { 1 } else { -1 })
            .collect()
    }));
    out
}

pub fn build_hard(config: &HardInstanceConfig) -> Result<HardInstance> {
    config.validate()?;
    let d = config.d;
    let coords = d - 2;
    let df = d as f64;
    let actions = hard_actions(coords, config.full_action_set);
    let scale = 1.0 / (2.0 * df).sqrt();
    let root_half = 0.5f64.sqrt();
    let phi = HARD_STATES
        .iter()
        .flat_map(|&s| {
            actions.iter().map(move |a| {
                let mut v = DVector::zeros(d);
                for (j, &x) in a.iter().enumerate() {
                    v[j] = f64::from(x) * scale;
                }
                v[if s == 1 { d - 2 } else { d - 1 }] = root_half;
                v
            })
        })
        .collect();
    let mut nu_vec = DVector::zeros(d);
    nu_vec[d - 2] = root_half;
    nu_vec[d - 1] = root_half;
    let theta = config
        .u
        .iter()
        .map(|u| {
            let mut v = DVector::zeros(d);
            for (j, &x) in u.iter().enumerate() {
                v[j] = config.delta * f64::from(x);
            }
            v[d - 2] = 1.0 / 3f64.sqrt();
            v[d - 1] = -1.0 / 3f64.sqrt();
            v
        })
        .collect();
    let mdp = LinearMdp::new(LinearMdpParts {
        horizon: config.horizon,
        feature_dim: d,
        states: vec!["+1".into(), "-1".into()],
        actions: actions.iter().map(|a| action_name(a)).collect(),
        phi,
        nu: vec![vec![nu_vec.clone(), nu_vec]; config.horizon],
        theta,
        initial_dist: vec![0.5, 0.5],
        reward_noise_std: config.reward_noise_std,
        exemptions: Exemptions {
            reward_range: true,
            feature_norm: false,
        },
    })?;

    let index_of = |target: &[i8]| {
        actions
            .iter()
            .position(|a| a.as_slice() == target)
            .expect("behavior and sign actions are materialized")
    };
    let mut row = vec![0.0; actions.len()];
    for j in 0..coords {
        let mut e = vec![0i8; coords];
        e[j] = 1;
        row[index_of(&e)] = 1.0 / df;
    }
    row[index_of(&vec![0; coords])] = 2.0 / df;
    let behavior = PolicyTable::stationary(config.horizon, vec![row.clone(), row])?;
    let optimal = PolicyTable::deterministic(
        actions.len(),
        config
            .u
            .iter()
            .map(|u| vec![index_of(u); HARD_STATES.len()])
            .collect(),
    )?;
    Ok(HardInstance {
        config: config.clone(),
        mdp,
        behavior,
        optimal,
        action_vectors: actions,
    })
}

/// `(delta / sqrt(2d)) * sum_h ||u_h - E_pi[a_h]||_1`, with `E_pi[a_h]`
/// taken under the exact occupancy of `policy`.
pub fn hard_suboptimality_closed_form(instance: &HardInstance, policy: &PolicyTable) -> Result<f64> {
    let cfg = &instance.config;
    let occ = occupancy(&instance.mdp, policy)?;
    let coords = cfg.d - 2;
    let mut total = 0.0;
    for (h, dh) in occ.iter().enumerate() {
        let mut mean_action = vec![0.0; coords];
        for row in dh {
            for (a, &mass) in row.iter().enumerate() {
                if mass == 0.0 {
                    continue;
                }
                for (m, &x) in mean_action.iter_mut().zip(&instance.action_vectors[a]) {
                    *m += mass * f64::from(x);
                }
            }
        }
        total += cfg.u[h]
            .iter()
            .zip(&mean_action)
            .map(|(&u, m)| (f64::from(u) - m).abs())
            .sum::<f64>();
    }
    Ok(cfg.delta / (2.0 * cfg.d as f64).sqrt() * total)
}

/// Shape of a random tabular instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TabularSpec {
    pub horizon: usize,
    pub states: usize,
    pub actions: usize,
    #[serde(default)]
    pub reward_noise_std: f64,
}

impl TabularSpec {
    pub fn new(horizon: usize, states: usize, actions: usize) -> Self {
        Self {
            horizon,
            states,
            actions,
            reward_noise_std: 0.0,
        }
    }
}

/// One-hot linear MDP from explicit tables `kernel[h][s][a][s']` and
/// `rewards[h][s][a]`; feature index of `(s, a)` is `s * A + a`.
pub fn build_tabular(
    kernel: &[Vec<Vec<Vec<f64>>>],
    rewards: &[Vec<Vec<f64>>],
    initial_dist: Vec<f64>,
    reward_noise_std: f64,
) -> Result<LinearMdp> {
    let horizon = kernel.len();
    let s_len = initial_dist.len();
    let a_len = kernel.first().and_then(|k| k.first()).map_or(0, Vec::len);
    let d = s_len * a_len;
    if rewards.len() != horizon {
        return Err(Error::InvalidModel("reward table horizon mismatch".into()));
    }
    let phi = (0..d)
        .map(|i| {
            let mut v = DVector::zeros(d);
            v[i] = 1.0;
            v
        })
        .collect();
    let mut nu = Vec::with_capacity(horizon);
    let mut theta = Vec::with_capacity(horizon);
    for h in 0..horizon {
        if kernel[h].len() != s_len || rewards[h].len() != s_len {
            return Err(Error::InvalidModel(format!("step {} table shape", h + 1)));
        }
        let mut step = vec![DVector::zeros(d); s_len];
        let mut th = DVector::zeros(d);
        for s in 0..s_len {
            if kernel[h][s].len() != a_len || rewards[h][s].len() != a_len {
                return Err(Error::InvalidModel(format!("step {} table shape", h + 1)));
            }
            for a in 0..a_len {
                if kernel[h][s][a].len() != s_len {
                    return Err(Error::InvalidModel(format!("step {} kernel row length", h + 1)));
                }
                for (sn, &p) in kernel[h][s][a].iter().enumerate() {
                    step[sn][s * a_len + a] = p;
                }
                th[s * a_len + a] = rewards[h][s][a];
            }
        }
        nu.push(step);
        theta.push(th);
    }
    LinearMdp::new(LinearMdpParts {
        horizon,
        feature_dim: d,
        states: (0..s_len).map(|s| format!("s{s}")).collect(),
        actions: (0..a_len).map(|a| format!("a{a}")).collect(),
        phi,
        nu,
        theta,
        initial_dist,
        reward_noise_std,
        exemptions: Exemptions::default(),
    })
}

fn random_simplex<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    // Exponential spacings give a uniform draw on the simplex.
    let raw: Vec<f64> = (0..n).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / total).collect()
}

/// Tabular instance with uniform-simplex transition rows and initial
/// distribution, and `U[0, 1]` mean rewards.
pub fn random_tabular<R: Rng + ?Sized>(spec: &TabularSpec, rng: &mut R) -> Result<LinearMdp> {
    if spec.horizon == 0 || spec.states == 0 || spec.actions == 0 {
        return Err(Error::InvalidConfig("tabular dimensions must be positive".into()));
    }
    let kernel: Vec<Vec<Vec<Vec<f64>>>> = (0..spec.horizon)
        .map(|_| {
            (0..spec.states)
                .map(|_| (0..spec.actions).map(|_| random_simplex(spec.states, rng)).collect())
                .collect()
        })
        .collect();
    let rewards: Vec<Vec<Vec<f64>>> = (0..spec.horizon)
        .map(|_| {
            (0..spec.states)
                .map(|_| (0..spec.actions).map(|_| rng.gen::<f64>()).collect())
                .collect()
        })
        .collect();
    let initial = random_simplex(spec.states, rng);
    build_tabular(&kernel, &rewards, initial, spec.reward_noise_std)
}
