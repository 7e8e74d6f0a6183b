//! Recursive least squares with subspace-of-information forgetting.
//!
//! Each step runs three stages:
//!
//! 1. Information filtering: regressors shorter than `sqrt(epsilon)` are
//!    replaced by zero together with their measurement.
//! 2. Forgetting restricted to the direction of the regressor. With
//!    `s = phi' R phi`,
//!    `R_bar = R - (1 - lambda) R phi phi' R / s` and
//!    `P_bar = P + (1 - lambda) / lambda * phi phi' / s`, which keeps
//!    `P_bar = R_bar^-1` and leaves every `R`-orthogonal direction untouched.
//! 3. Rank-one update `R+ = R_bar + phi phi'`, the matching Sherman-Morrison
//!    downdate of `P`, and `theta+ = theta + (y - theta phi) (P+ phi)'`.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::model::CoefficientVector;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SiftRls {
    theta: CoefficientVector,
    info: DMatrix<f64>,
    cov: DMatrix<f64>,
    lambda: f64,
    epsilon: f64,
}

/// Outcome of one [`SiftRls::step`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RlsUpdate {
    /// `y_k - theta_k phi_k` with the pre-update coefficients and the
    /// unfiltered regressor.
    pub prediction_error: f64,
    /// True when the regressor fell below the filter threshold.
    pub filtered: bool,
}

impl SiftRls {
    /// `info0` must be symmetric positive definite; the covariance starts at
    /// its inverse.
    pub fn new(theta0: Vec<f64>, info0: DMatrix<f64>, lambda: f64, epsilon: f64) -> Result<Self> {
        let n = theta0.len();
        if info0.nrows() != n || info0.ncols() != n {
            return Err(Error::DimensionMismatch {
                what: "initial information matrix",
                expected: n,
                found: info0.nrows(),
            });
        }
        if theta0.iter().chain(info0.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("RLS initial state"));
        }
        if !(lambda > 0.0 && lambda <= 1.0) {
            return Err(Error::ForgettingFactor(lambda));
        }
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::FilterThreshold(epsilon));
        }
        let scale = info0.amax().max(1.0);
        if (&info0 - info0.transpose()).amax() > 1e-12 * scale {
            return Err(Error::NotPositiveDefinite);
        }
        let cov = info0
            .clone()
            .cholesky()
            .ok_or(Error::NotPositiveDefinite)?
            .inverse();
        Ok(Self {
            theta: CoefficientVector::new(theta0),
            info: info0,
            cov: symmetrized(cov),
            lambda,
            epsilon,
        })
    }

    /// Initial information `scale * I`.
    pub fn with_scaled_identity(theta0: Vec<f64>, scale: f64, lambda: f64, epsilon: f64) -> Result<Self> {
        let n = theta0.len();
        Self::new(theta0, DMatrix::identity(n, n) * scale, lambda, epsilon)
    }

    pub fn theta(&self) -> &CoefficientVector {
        &self.theta
    }

    pub fn information(&self) -> &DMatrix<f64> {
        &self.info
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    /// Processes the measurement `y` with regressor `phi`. On error the state
    /// is left untouched.
    pub fn step(&mut self, y: f64, phi: &[f64]) -> Result<RlsUpdate> {
        if phi.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                what: "regressor",
                expected: self.dim(),
                found: phi.len(),
            });
        }
        if !y.is_finite() || phi.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("RLS measurement"));
        }
        let prediction_error = self.theta.prediction_error(phi, y)?;
        let phi = DVector::from_column_slice(phi);
        if phi.norm() < libm::sqrt(self.epsilon) {
            // Filtered sample: y_bar = 0 and phi_bar = 0 make every stage an identity.
            return Ok(RlsUpdate {
                prediction_error,
                filtered: true,
            });
        }

        let (info_bar, cov_bar) = forget(&self.info, &self.cov, &phi, self.lambda);
        let info = &info_bar + &phi * phi.transpose();
        let cov_phi = &cov_bar * &phi;
        let denom = 1.0 + phi.dot(&cov_phi);
        let cov = &cov_bar - (&cov_phi * cov_phi.transpose()) / denom;
        let cov = symmetrized(cov);

        let residual = y - self.theta.predict(phi.as_slice())?;
        let gain = &cov * &phi;
        let theta: Vec<f64> = self
            .theta
            .as_slice()
            .iter()
            .zip(gain.iter())
            .map(|(t, k)| t + residual * k)
            .collect();

        self.info = symmetrized(info);
        self.cov = cov;
        self.theta = CoefficientVector::new(theta);
        Ok(RlsUpdate {
            prediction_error,
            filtered: false,
        })
    }
}

/// Forgetting stage along `phi` (which must be nonzero). Returns
/// `(R_bar, P_bar)`.
pub fn forget(
    info: &DMatrix<f64>,
    cov: &DMatrix<f64>,
    phi: &DVector<f64>,
    lambda: f64,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let r_phi = info * phi;
    let s = phi.dot(&r_phi);
    let info_bar = info - (&r_phi * r_phi.transpose()) * ((1.0 - lambda) / s);
    let cov_bar = cov + (phi * phi.transpose()) * ((1.0 - lambda) / (lambda * s));
    (info_bar, cov_bar)
}

fn symmetrized(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}
