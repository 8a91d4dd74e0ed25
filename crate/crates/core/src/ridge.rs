//! Closed-form (weighted) ridge regression.
//!
//! `coef = (sum_k w_k x_k x_k^T + lambda I)^{-1} sum_k w_k x_k y_k`, solved
//! through a Cholesky factorization. Sums run in sample order with Neumaier
//! compensation so a fit is bit-reproducible for a given input order.

use std::borrow::Borrow;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{check_dim, Error, Result};

/// Bound on `||G w - b|| / max(1, ||b||)` accepted from a solve.
pub const RESIDUAL_TOL: f64 = 1e-8;
/// Data-Gram eigenvalues below this count as uncovered directions.
pub const RANK_TOL: f64 = 1e-8;

#[derive(Clone, Copy, Debug, Default)]
struct Neumaier {
    sum: f64,
    comp: f64,
}

impl Neumaier {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(self) -> f64 {
        self.sum + self.comp
    }
}

/// A factorized regularized Gram matrix `G = sum_k w_k x_k x_k^T + lambda I`.
///
/// Several targets can be regressed against the same `G` without refactoring.
#[derive(Clone, Debug)]
pub struct WeightedGram {
    gram: DMatrix<f64>,
    gram_inverse: DMatrix<f64>,
    cholesky: Cholesky<f64, Dyn>,
    sample_weights: Vec<f64>,
    lambda: f64,
}

impl WeightedGram {
    pub fn new<F: Borrow<DVector<f64>>>(
        features: &[F],
        sample_weights: &[f64],
        lambda: f64,
    ) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "ridge lambda must be positive, got {lambda}"
            )));
        }
        check_dim(features.len(), sample_weights.len(), "sample weights")?;
        let Some(first) = features.first() else {
            return Err(Error::EmptyData("ridge regression with no samples".into()));
        };
        let d = first.borrow().len();
        if d == 0 {
            return Err(Error::InvalidArgument("zero-dimensional features".into()));
        }
        if let Some(w) = sample_weights.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
            return Err(Error::InvalidArgument(format!(
                "sample weights must be positive, got {w}"
            )));
        }

        let mut acc = vec![Neumaier::default(); d * (d + 1) / 2];
        for (x, &w) in features.iter().zip(sample_weights) {
            let x = x.borrow();
            check_dim(d, x.len(), "feature vector")?;
            let mut idx = 0;
            for i in 0..d {
                let wxi = w * x[i];
                if wxi == 0.0 {
                    idx += d - i;
                    continue;
                }
                for j in i..d {
                    acc[idx].add(wxi * x[j]);
                    idx += 1;
                }
            }
        }
        let mut gram = DMatrix::zeros(d, d);
        let mut idx = 0;
        for i in 0..d {
            for j in i..d {
                let v = acc[idx].value();
                gram[(i, j)] = v;
                gram[(j, i)] = v;
                idx += 1;
            }
            gram[(i, i)] += lambda;
        }

        let cholesky = Cholesky::new(gram.clone()).ok_or_else(|| {
            Error::Numerical("Gram matrix is not numerically positive definite".into())
        })?;
        let inv = cholesky.inverse();
        let gram_inverse = (&inv + inv.transpose()) * 0.5;
        Ok(Self {
            gram,
            gram_inverse,
            cholesky,
            sample_weights: sample_weights.to_vec(),
            lambda,
        })
    }

    pub fn dim(&self) -> usize {
        self.gram.nrows()
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn gram_inverse(&self) -> &DMatrix<f64> {
        &self.gram_inverse
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn sample_count(&self) -> usize {
        self.sample_weights.len()
    }

    pub fn sample_weights(&self) -> &[f64] {
        &self.sample_weights
    }

    /// `sum_k w_k x_k y_k`, compensated, in sample order.
    pub fn moment<F: Borrow<DVector<f64>>>(&self, features: &[F], targets: &[f64]) -> Result<DVector<f64>> {
        check_dim(self.sample_count(), features.len(), "feature rows")?;
        check_dim(self.sample_count(), targets.len(), "targets")?;
        let d = self.dim();
        let mut acc = vec![Neumaier::default(); d];
        for ((x, &y), &w) in features.iter().zip(targets).zip(&self.sample_weights) {
            let x = x.borrow();
            check_dim(d, x.len(), "feature vector")?;
            let wy = w * y;
            if wy == 0.0 {
                continue;
            }
            for (slot, xi) in acc.iter_mut().zip(x.iter()) {
                slot.add(wy * xi);
            }
        }
        Ok(DVector::from_iterator(d, acc.into_iter().map(Neumaier::value)))
    }

    /// `G^{-1} b` with one step of iterative refinement when needed.
    pub fn solve(&self, rhs: &DVector<f64>) -> Result<(DVector<f64>, f64)> {
        check_dim(self.dim(), rhs.len(), "right-hand side")?;
        let mut x = self.cholesky.solve(rhs);
        let scale = rhs.norm().max(1.0);
        let mut residual = (&self.gram * &x - rhs).norm() / scale;
        if residual > RESIDUAL_TOL {
            let r = rhs - &self.gram * &x;
            x += self.cholesky.solve(&r);
            residual = (&self.gram * &x - rhs).norm() / scale;
        }
        if residual.is_nan() || residual > RESIDUAL_TOL {
            return Err(Error::Numerical(format!(
                "ridge normal-equations residual {residual:e} exceeds {RESIDUAL_TOL:e}"
            )));
        }
        Ok((x, residual))
    }

    /// Regress `targets` on the features this Gram was built from.
    pub fn fit<F: Borrow<DVector<f64>>>(&self, features: &[F], targets: &[f64]) -> Result<RidgeFit> {
        let rhs = self.moment(features, targets)?;
        let (coef, residual) = self.solve(&rhs)?;
        Ok(RidgeFit {
            coef,
            residual,
            system: self.clone(),
        })
    }

    /// `x^T G^{-1} x`, floored at zero.
    pub fn quadratic_form(&self, x: &DVector<f64>) -> Result<f64> {
        check_dim(self.dim(), x.len(), "query vector")?;
        Ok(quad(&self.gram_inverse, x))
    }

    /// Eigenvalues of `G` in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = SymmetricEigen::new(self.gram.clone())
            .eigenvalues
            .iter()
            .copied()
            .collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    /// Number of data-Gram (`G - lambda I`) eigenvalues below [`RANK_TOL`].
    pub fn uncovered_directions(&self) -> usize {
        self.eigenvalues()
            .into_iter()
            .filter(|ev| ev - self.lambda < RANK_TOL)
            .count()
    }

    pub fn condition_number(&self) -> f64 {
        let ev = self.eigenvalues();
        ev[ev.len() - 1] / ev[0]
    }
}

fn quad(m: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    x.dot(&(m * x)).max(0.0)
}

/// A ridge solution together with the Gram system that produced it.
#[derive(Clone, Debug)]
pub struct RidgeFit {
    pub coef: DVector<f64>,
    /// Relative normal-equations residual of the solve.
    pub residual: f64,
    system: WeightedGram,
}

impl RidgeFit {
    pub fn system(&self) -> &WeightedGram {
        &self.system
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        self.system.gram()
    }

    pub fn gram_inverse(&self) -> &DMatrix<f64> {
        self.system.gram_inverse()
    }

    pub fn lambda(&self) -> f64 {
        self.system.lambda()
    }

    pub fn sample_count(&self) -> usize {
        self.system.sample_count()
    }

    pub fn quadratic_form(&self, x: &DVector<f64>) -> Result<f64> {
        self.system.quadratic_form(x)
    }

    pub fn predict(&self, x: &DVector<f64>) -> f64 {
        self.coef.dot(x)
    }
}

/// Weighted ridge regression.
pub fn ridge<F: Borrow<DVector<f64>>>(
    features: &[F],
    targets: &[f64],
    weights: &[f64],
    lambda: f64,
) -> Result<RidgeFit> {
    check_dim(features.len(), targets.len(), "targets")?;
    WeightedGram::new(features, weights, lambda)?.fit(features, targets)
}

/// Ridge regression with unit sample weights.
pub fn ridge_unit<F: Borrow<DVector<f64>>>(features: &[F], targets: &[f64], lambda: f64) -> Result<RidgeFit> {
    ridge(features, targets, &vec![1.0; features.len()], lambda)
}
