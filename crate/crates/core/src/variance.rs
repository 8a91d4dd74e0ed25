//! Conditional-variance estimation from data.
//!
//! The second and first moments of `V_{h+1}(s')` are each regressed on
//! `phi(s, a)` with one shared Gram matrix; the estimate is
//! `clip(<phi, beta>, 0, R^2) - clip(<phi, theta>, 0, R)^2` with
//! `R = H - h + 1`, and the regression weight is `max(1, estimate)`.

use nalgebra::DVector;

use crate::data::Dataset;
use crate::error::{check_dim, Error, Result};
use crate::mdp::{FeatureMap, MODEL_TOL};
use crate::ridge::WeightedGram;

#[derive(Clone, Debug, PartialEq)]
pub struct VarianceModel {
    /// Second-moment coefficients.
    pub beta_bar: DVector<f64>,
    /// First-moment coefficients.
    pub theta_bar: DVector<f64>,
    pub horizon: usize,
    /// 1-based step.
    pub step: usize,
    /// Added to `max(1, Var)`; 0 or 1.
    pub offset: f64,
}

impl VarianceModel {
    /// `H - h + 1`.
    pub fn remaining(&self) -> f64 {
        (self.horizon - self.step + 1) as f64
    }

    /// Clipped `(second moment, first moment)` reads at `phi`.
    pub fn moments(&self, phi: &DVector<f64>) -> Result<(f64, f64)> {
        check_dim(self.beta_bar.len(), phi.len(), "variance query")?;
        let r = self.remaining();
        let second = phi.dot(&self.beta_bar).clamp(0.0, r * r);
        let first = phi.dot(&self.theta_bar).clamp(0.0, r);
        Ok((second, first))
    }

    /// Estimated `Var_{P_h} V_{h+1}` at `phi`, before the floor at 1.
    pub fn variance(&self, phi: &DVector<f64>) -> Result<f64> {
        let (second, first) = self.moments(phi)?;
        Ok(second - first * first)
    }

    /// Regression weight denominator `max(1, Var) + offset`.
    pub fn sigma_sq(&self, phi: &DVector<f64>) -> Result<f64> {
        Ok(self.variance(phi)?.max(1.0) + self.offset)
    }

    pub fn with_offset(mut self, offset: f64) -> Self {
        self.offset = offset;
        self
    }
}

/// Fit the moment regressions on `data`'s step-`h` records with targets
/// `v_next(s')^2` and `v_next(s')`.
pub fn fit_variance<M: FeatureMap + ?Sized>(
    data: &Dataset,
    features: &M,
    h: usize,
    v_next: &[f64],
    lambda: f64,
) -> Result<VarianceModel> {
    let horizon = data.horizon();
    if h == 0 || h > horizon {
        return Err(Error::IndexOutOfRange {
            what: "step",
            index: h,
            limit: horizon + 1,
        });
    }
    check_dim(features.num_states(), v_next.len(), "next-step values")?;
    if !features.range_exempt() {
        let cap = (horizon - h) as f64;
        if let Some(v) = v_next
            .iter()
            .find(|&&v| !(v >= -MODEL_TOL && v <= cap + MODEL_TOL))
        {
            return Err(Error::InvalidArgument(format!(
                "next-step value {v} outside [0, {cap}] at step {h}"
            )));
        }
    }
    let records = data.step(h);
    if records.is_empty() {
        return Err(Error::EmptyData(format!("no records at step {h}")));
    }
    let phis: Vec<&DVector<f64>> = records.iter().map(|t| features.phi(t.s, t.a)).collect();
    let firsts: Vec<f64> = records.iter().map(|t| v_next[t.s_next]).collect();
    let seconds: Vec<f64> = firsts.iter().map(|v| v * v).collect();
    let gram = WeightedGram::new(&phis, &vec![1.0; phis.len()], lambda)?;
    let beta_bar = gram.fit(&phis, &seconds)?.coef;
    let theta_bar = gram.fit(&phis, &firsts)?.coef;
    Ok(VarianceModel {
        beta_bar,
        theta_bar,
        horizon,
        step: h,
        offset: 0.0,
    })
}
