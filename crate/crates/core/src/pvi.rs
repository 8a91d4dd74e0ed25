//! Pessimistic value iteration over offline data.
//!
//! One backward-induction engine covers five algorithms:
//!
//! | name    | weighting | penalty                                          |
//! |---------|-----------|--------------------------------------------------|
//! | VAPVI   | variance  | `C sqrt(d) ||phi||_{Lambda^-1} + 2 H^3 sqrt(d)/K` |
//! | VAPVI-I | variance  | `phi^T |rho| + C_ho H^3 d / (kappa K)`           |
//! | PEVI    | unit      | `beta ||phi||_{Sigma^-1}`, `beta = C d H`        |
//! | LSVI    | unit      | none                                             |
//! | VAVI    | variance  | none                                             |
//!
//! At each step `h = H, ..., 1` the engine fits `w_h` by (weighted) ridge
//! regression of `r + V_{h+1}(s')` on `phi(s, a)`, subtracts the penalty,
//! truncates to `[0, H - h + 1]`, and acts greedily (ties to the lowest
//! action index).

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{check_dim, Error, Result};
use crate::mdp::{argmax_lowest, exact_value_iteration, policy_value, FeatureMap, LinearMdp, PolicyTable};
use crate::ridge::WeightedGram;
use crate::variance::{fit_variance, VarianceModel};

/// Floor on the empirical coverage estimate used by the VAPVI-I penalty.
pub const KAPPA_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BonusKind {
    None,
    Vapvi,
    VapviImproved,
    Pevi,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BonusSpec {
    pub kind: BonusKind,
    /// Multiplier `C` on the main term.
    pub c: f64,
    pub higher_order_enabled: bool,
    /// PEVI multiplier; `C d H` when absent.
    #[serde(default)]
    pub beta: Option<f64>,
    /// Constant in the VAPVI-I higher-order term.
    #[serde(default = "default_higher_order_constant")]
    pub higher_order_constant: f64,
}

fn default_higher_order_constant() -> f64 {
    2.0
}

impl BonusSpec {
    pub fn new(kind: BonusKind, c: f64, higher_order_enabled: bool) -> Self {
        Self {
            kind,
            c,
            higher_order_enabled,
            beta: None,
            higher_order_constant: default_higher_order_constant(),
        }
    }

    pub fn none() -> Self {
        Self::new(BonusKind::None, 0.0, false)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c >= 0.0 && self.c.is_finite()) {
            return Err(Error::InvalidConfig(format!("bonus C = {} must be >= 0", self.c)));
        }
        if let Some(beta) = self.beta {
            if !(beta >= 0.0 && beta.is_finite()) {
                return Err(Error::InvalidConfig(format!("PEVI beta = {beta} must be >= 0")));
            }
        }
        if !(self.higher_order_constant >= 0.0 && self.higher_order_constant.is_finite()) {
            return Err(Error::InvalidConfig("higher-order constant must be >= 0".into()));
        }
        Ok(())
    }

    /// PEVI multiplier for feature dimension `d` and horizon `H`.
    pub fn pevi_beta(&self, d: usize, horizon: usize) -> f64 {
        self.beta.unwrap_or(self.c * (d * horizon) as f64)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    #[default]
    Unit,
    Variance,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverParams {
    pub lambda: f64,
    pub bonus: BonusSpec,
    pub weighting: Weighting,
    /// Added to the variance floor `max(1, Var)`; 0 or 1.
    pub variance_offset: f64,
}

impl SolverParams {
    pub fn new(lambda: f64, bonus: BonusSpec, weighting: Weighting) -> Self {
        Self {
            lambda,
            bonus,
            weighting,
            variance_offset: 0.0,
        }
    }
}

/// A named (penalty, weighting) pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Algorithm {
    pub name: String,
    pub bonus: BonusSpec,
    pub weighting: Weighting,
}

impl Algorithm {
    pub const PRESETS: [&'static str; 5] = ["VAPVI", "VAPVI-I", "PEVI", "LSVI", "VAVI"];

    /// Preset by (case-insensitive) name.
    pub fn preset(name: &str, c: f64, higher_order: bool) -> Option<Self> {
        let (canonical, kind, weighting) = match name.to_ascii_uppercase().as_str() {
            "VAPVI" => ("VAPVI", BonusKind::Vapvi, Weighting::Variance),
            "VAPVI-I" => ("VAPVI-I", BonusKind::VapviImproved, Weighting::Variance),
            "PEVI" => ("PEVI", BonusKind::Pevi, Weighting::Unit),
            "LSVI" => ("LSVI", BonusKind::None, Weighting::Unit),
            "VAVI" => ("VAVI", BonusKind::None, Weighting::Variance),
            _ => return None,
        };
        let bonus = if kind == BonusKind::None {
            BonusSpec::none()
        } else {
            BonusSpec::new(kind, c, higher_order)
        };
        Some(Self {
            name: canonical.into(),
            bonus,
            weighting,
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepDiagnostics {
    pub gram_condition: f64,
    /// Data-Gram eigenvalues below the rank tolerance.
    pub uncovered_directions: usize,
    /// `(s, a)` entries truncated from above / below.
    pub clipped_high: usize,
    pub clipped_low: usize,
    /// Samples whose variance weight sits at the floor of 1.
    pub sigma_at_floor: usize,
}

#[derive(Clone, Debug)]
pub struct StepSolution {
    pub w_hat: DVector<f64>,
    /// `<phi(s, a), w_hat>`, the estimated Bellman image, as `[s][a]`.
    pub t_hat: Vec<Vec<f64>>,
    pub bonus: Vec<Vec<f64>>,
    pub q_bar: Vec<Vec<f64>>,
    pub q_hat: Vec<Vec<f64>>,
    pub variance: Option<VarianceModel>,
    /// The weighted Gram `Lambda_h` of the value regression.
    pub gram: WeightedGram,
    /// Variance weights `sigma^2` of the step's D records.
    pub sigma_sq: Vec<f64>,
    pub diagnostics: StepDiagnostics,
}

#[derive(Clone, Debug)]
pub struct PolicySolution {
    /// `steps[h - 1]`.
    pub steps: Vec<StepSolution>,
    /// `v_hat[h - 1]` for `h` in `1..=H+1`; the last row is zero.
    pub v_hat: Vec<Vec<f64>>,
    pub policy: PolicyTable,
    /// Empirical coverage estimate (only computed for VAPVI-I).
    pub kappa_hat: Option<f64>,
}

impl PolicySolution {
    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    pub fn step(&self, h: usize) -> &StepSolution {
        &self.steps[h - 1]
    }

    pub fn v_at(&self, h: usize) -> &[f64] {
        &self.v_hat[h - 1]
    }
}

/// `C sqrt(d) sqrt(phi^T Lambda^-1 phi) + [2 H^3 sqrt(d) / K]`.
pub fn bonus_vapvi(
    gram: &WeightedGram,
    phi: &DVector<f64>,
    c: f64,
    horizon: usize,
    episodes: usize,
    higher_order_enabled: bool,
) -> Result<f64> {
    let d = gram.dim() as f64;
    let main = c * d.sqrt() * gram.quadratic_form(phi)?.sqrt();
    Ok(main + if higher_order_enabled { vapvi_higher_order(gram.dim(), horizon, episodes) } else { 0.0 })
}

/// `2 H^3 sqrt(d) / K`.
pub fn vapvi_higher_order(d: usize, horizon: usize, episodes: usize) -> f64 {
    2.0 * (horizon as f64).powi(3) * (d as f64).sqrt() / episodes as f64
}

/// `beta sqrt(phi^T Sigma^-1 phi)`.
pub fn bonus_pevi(gram: &WeightedGram, phi: &DVector<f64>, beta: f64) -> Result<f64> {
    Ok(beta * gram.quadratic_form(phi)?.sqrt())
}

/// The data-driven part of the VAPVI-I penalty for one step:
/// `|Lambda^-1 sum_tau phi_tau (y_tau - <phi_tau, w>) / sigma_tau^2|`,
/// coordinate-wise.
#[derive(Clone, Debug, PartialEq)]
pub struct ImprovedPenalty {
    pub rho: DVector<f64>,
    pub rho_abs: DVector<f64>,
    /// `C_ho H^3 d / (kappa K)` or zero when disabled.
    pub higher_order: f64,
}

impl ImprovedPenalty {
    /// `gram` must carry the `1 / sigma^2` sample weights of `phis`.
    #[allow(clippy::too_many_arguments)]
    pub fn new<F: std::borrow::Borrow<DVector<f64>>>(
        gram: &WeightedGram,
        phis: &[F],
        targets: &[f64],
        w_hat: &DVector<f64>,
        horizon: usize,
        kappa_hat: f64,
        episodes: usize,
        bonus: &BonusSpec,
    ) -> Result<Self> {
        check_dim(phis.len(), targets.len(), "targets")?;
        let residuals: Vec<f64> = phis
            .iter()
            .zip(targets)
            .map(|(f, y)| y - f.borrow().dot(w_hat))
            .collect();
        let moment = gram.moment(phis, &residuals)?;
        let (rho, _) = gram.solve(&moment)?;
        let rho_abs = rho.abs();
        let higher_order = if bonus.higher_order_enabled {
            bonus.higher_order_constant * (horizon as f64).powi(3) * gram.dim() as f64
                / (kappa_hat * episodes as f64)
        } else {
            0.0
        };
        Ok(Self {
            rho,
            rho_abs,
            higher_order,
        })
    }

    /// `phi^T |rho| + higher-order term`; requires `phi >= 0`.
    pub fn evaluate(&self, phi: &DVector<f64>) -> Result<f64> {
        check_dim(self.rho_abs.len(), phi.len(), "penalty query")?;
        if phi.iter().any(|&x| x < 0.0) {
            return Err(Error::InvalidArgument(
                "VAPVI-I penalty requires nonnegative features".into(),
            ));
        }
        Ok(phi.dot(&self.rho_abs) + self.higher_order)
    }
}

/// `max(min_h lambda_min((1/K) sum_tau phi phi^T), KAPPA_FLOOR)` over D.
pub fn empirical_kappa<M: FeatureMap + ?Sized>(data: &Dataset, features: &M) -> f64 {
    let d = features.feature_dim();
    let k = data.num_episodes() as f64;
    let mut kappa = f64::INFINITY;
    for h in 1..=data.horizon() {
        let mut cov = nalgebra::DMatrix::zeros(d, d);
        for t in data.step(h) {
            let f = features.phi(t.s, t.a);
            cov.ger(1.0 / k, f, f, 1.0);
        }
        kappa = kappa.min(crate::mdp::min_eigenvalue(&cov));
    }
    kappa.max(KAPPA_FLOOR)
}

/// Run the backward induction. `data` feeds the value regression, `dprime`
/// the variance regression; the two may be the same dataset.
pub fn solve<M: FeatureMap + ?Sized>(
    data: &Dataset,
    dprime: &Dataset,
    features: &M,
    params: &SolverParams,
) -> Result<PolicySolution> {
    params.bonus.validate()?;
    if !(params.lambda > 0.0 && params.lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "lambda must be positive, got {}",
            params.lambda
        )));
    }
    if params.variance_offset != 0.0 && params.variance_offset != 1.0 {
        return Err(Error::InvalidArgument("variance offset must be 0 or 1".into()));
    }
    let horizon = data.horizon();
    check_dim(horizon, dprime.horizon(), "D' horizon")?;
    data.check_against(features)?;
    dprime.check_against(features)?;
    let s_len = features.num_states();
    let a_len = features.num_actions();
    let episodes = data.num_episodes();

    let kappa_hat = if params.bonus.kind == BonusKind::VapviImproved {
        let nonneg = (0..s_len).all(|s| (0..a_len).all(|a| features.phi(s, a).iter().all(|&x| x >= 0.0)));
        if !nonneg {
            return Err(Error::InvalidArgument(
                "VAPVI-I penalty requires nonnegative features".into(),
            ));
        }
        Some(empirical_kappa(data, features))
    } else {
        None
    };

    let mut v_hat = vec![vec![0.0; s_len]; horizon + 1];
    let mut steps = Vec::with_capacity(horizon);
    let mut greedy = vec![Vec::new(); horizon];

    for h in (1..=horizon).rev() {
        let v_next = &v_hat[h];
        let records = data.step(h);
        let phis: Vec<&DVector<f64>> = records.iter().map(|t| features.phi(t.s, t.a)).collect();

        let variance = match params.weighting {
            Weighting::Unit => None,
            Weighting::Variance => Some(
                fit_variance(dprime, features, h, v_next, params.lambda)?
                    .with_offset(params.variance_offset),
            ),
        };
        let sigma_sq: Vec<f64> = match &variance {
            None => vec![1.0; records.len()],
            Some(vm) => phis.iter().map(|f| vm.sigma_sq(f)).collect::<Result<_>>()?,
        };
        let weights: Vec<f64> = sigma_sq.iter().map(|s| 1.0 / s).collect();
        let targets: Vec<f64> = records.iter().map(|t| t.r + v_next[t.s_next]).collect();

        let gram = WeightedGram::new(&phis, &weights, params.lambda)?;
        let w_hat = gram.fit(&phis, &targets)?.coef;

        let improved = match kappa_hat {
            Some(kappa) => Some(ImprovedPenalty::new(
                &gram,
                &phis,
                &targets,
                &w_hat,
                horizon,
                kappa,
                episodes,
                &params.bonus,
            )?),
            None => None,
        };
        let beta = params.bonus.pevi_beta(features.feature_dim(), horizon);
        let cap = (horizon - h + 1) as f64;

        let mut diagnostics = StepDiagnostics {
            gram_condition: gram.condition_number(),
            uncovered_directions: gram.uncovered_directions(),
            sigma_at_floor: sigma_sq.iter().filter(|&&s| s == 1.0 + params.variance_offset).count(),
            ..Default::default()
        };
        let mut t_hat = vec![vec![0.0; a_len]; s_len];
        let mut bonus = vec![vec![0.0; a_len]; s_len];
        let mut q_bar = vec![vec![0.0; a_len]; s_len];
        let mut q_hat = vec![vec![0.0; a_len]; s_len];
        for s in 0..s_len {
            for a in 0..a_len {
                let phi = features.phi(s, a);
                let t = phi.dot(&w_hat);
                let g = match params.bonus.kind {
                    BonusKind::None => 0.0,
                    BonusKind::Vapvi => bonus_vapvi(
                        &gram,
                        phi,
                        params.bonus.c,
                        horizon,
                        episodes,
                        params.bonus.higher_order_enabled,
                    )?,
                    BonusKind::VapviImproved => improved.as_ref().expect("built above").evaluate(phi)?,
                    BonusKind::Pevi => bonus_pevi(&gram, phi, beta)?,
                };
                let qb = t - g;
                if qb > cap {
                    diagnostics.clipped_high += 1;
                } else if qb < 0.0 {
                    diagnostics.clipped_low += 1;
                }
                t_hat[s][a] = t;
                bonus[s][a] = g;
                q_bar[s][a] = qb;
                q_hat[s][a] = qb.min(cap).max(0.0);
            }
        }
        let (actions, values): (Vec<usize>, Vec<f64>) =
            q_hat.iter().map(|row| argmax_lowest(row)).unzip();
        greedy[h - 1] = actions;
        v_hat[h - 1] = values;
        steps.push(StepSolution {
            w_hat,
            t_hat,
            bonus,
            q_bar,
            q_hat,
            variance,
            gram,
            sigma_sq,
            diagnostics,
        });
    }
    steps.reverse();
    let policy = PolicyTable::deterministic(a_len, greedy)?;
    Ok(PolicySolution {
        steps,
        v_hat,
        policy,
        kappa_hat,
    })
}

/// `v* - v^pi` for a learned policy.
pub fn suboptimality(mdp: &LinearMdp, solution: &PolicySolution) -> Result<f64> {
    let v_star = exact_value_iteration(mdp).v_star;
    suboptimality_against(mdp, v_star, &solution.policy)
}

/// `v_star - v^pi` with a precomputed optimal value.
pub fn suboptimality_against(mdp: &LinearMdp, v_star: f64, policy: &PolicyTable) -> Result<f64> {
    Ok(v_star - policy_value(mdp, policy)?.value)
}
