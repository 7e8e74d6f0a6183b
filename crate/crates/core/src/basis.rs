//! Scalar-argument basis dictionaries.
//!
//! Every family maps a real scalar to a fixed-length vector. The spline family
//! is a set of cubic Hermite shape functions on `n + 1` equal intervals of
//! `[lo, hi]`; the `n` interior nodes each carry a value function `p_i` and a
//! slope function `m_i` (scaled by the node spacing). The two end nodes carry
//! no basis functions, so every spline combination vanishes with zero slope at
//! both ends of the domain.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::{Error, Result};

/// One basis family and its parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(tag = "family", rename_all = "snake_case")
)]
pub enum BasisSpec {
    /// `[1, x, x^2, ..., x^degree]`.
    Polynomial { degree: usize },
    /// `[1, cos(pi x / L), sin(pi x / L), ..., cos(n pi x / L), sin(n pi x / L)]`.
    Fourier { harmonics: usize, half_period: f64 },
    /// Cubic Hermite spline with `interior_nodes` nodes strictly inside `[lo, hi]`.
    Spline { interior_nodes: usize, lo: f64, hi: f64 },
    /// `[1, atan x]`.
    AffineAtan,
    /// `[1, sin x]`.
    AffineSin,
    /// `[1]`.
    Constant,
    /// `[0]`.
    Zero,
}

impl BasisSpec {
    pub fn output_dim(&self) -> usize {
        match *self {
            BasisSpec::Polynomial { degree } => degree + 1,
            BasisSpec::Fourier { harmonics, .. } => 2 * harmonics + 1,
            BasisSpec::Spline { interior_nodes, .. } => 2 * interior_nodes,
            BasisSpec::AffineAtan | BasisSpec::AffineSin => 2,
            BasisSpec::Constant | BasisSpec::Zero => 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            BasisSpec::Fourier {
                harmonics,
                half_period,
            } => {
                if harmonics == 0 {
                    return Err(Error::InvalidBasis("Fourier basis needs at least one harmonic"));
                }
                if !(half_period.is_finite() && half_period > 0.0) {
                    return Err(Error::InvalidBasis("Fourier half period must be positive"));
                }
            }
            BasisSpec::Spline {
                interior_nodes,
                lo,
                hi,
            } => {
                if interior_nodes < 2 {
                    return Err(Error::InvalidBasis("spline needs at least two interior nodes"));
                }
                if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                    return Err(Error::InvalidBasis("spline domain must satisfy lo < hi"));
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Evaluates the basis at `x`.
    pub fn eval(&self, x: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.output_dim()];
        self.eval_into(x, &mut out)?;
        Ok(out)
    }

    /// Writes the basis vector at `x` into `out`, which must have length
    /// [`output_dim`](Self::output_dim).
    pub fn eval_into(&self, x: f64, out: &mut [f64]) -> Result<()> {
        if !x.is_finite() {
            return Err(Error::NonFinite("basis argument"));
        }
        if out.len() != self.output_dim() {
            return Err(Error::DimensionMismatch {
                what: "basis output",
                expected: self.output_dim(),
                found: out.len(),
            });
        }
        match *self {
            BasisSpec::Polynomial { .. } => {
                let mut power = 1.0;
                for slot in out.iter_mut() {
                    *slot = power;
                    power *= x;
                }
            }
            BasisSpec::Fourier {
                harmonics,
                half_period,
            } => {
                out[0] = 1.0;
                for j in 1..=harmonics {
                    let arg = j as f64 * PI * x / half_period;
                    out[2 * j - 1] = libm::cos(arg);
                    out[2 * j] = libm::sin(arg);
                }
            }
            BasisSpec::Spline {
                interior_nodes,
                lo,
                hi,
            } => spline_into(interior_nodes, lo, hi, x, out),
            BasisSpec::AffineAtan => {
                out[0] = 1.0;
                out[1] = libm::atan(x);
            }
            BasisSpec::AffineSin => {
                out[0] = 1.0;
                out[1] = libm::sin(x);
            }
            BasisSpec::Constant => out[0] = 1.0,
            BasisSpec::Zero => out[0] = 0.0,
        }
        Ok(())
    }

    /// `coeffs . basis(x)`, the scalar function represented by `coeffs`.
    pub fn combine(&self, coeffs: &[f64], x: f64) -> Result<f64> {
        let basis = self.eval(x)?;
        if coeffs.len() != basis.len() {
            return Err(Error::DimensionMismatch {
                what: "basis coefficients",
                expected: basis.len(),
                found: coeffs.len(),
            });
        }
        Ok(coeffs.iter().zip(&basis).map(|(c, b)| c * b).sum())
    }
}

fn spline_into(n: usize, lo: f64, hi: f64, x: f64, out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    let spacing = (hi - lo) / (n + 1) as f64;
    let node = |j: usize| lo + j as f64 * spacing;
    if x < lo || x >= node(n + 1) {
        return;
    }
    // Interval index m with node(m) <= x < node(m + 1).
    let mut m = libm::floor((x - lo) / spacing) as usize;
    m = m.min(n);
    while m > 0 && x < node(m) {
        m -= 1;
    }
    while m < n && x >= node(m + 1) {
        m += 1;
    }
    let t = (x - node(m)) / spacing;
    let t2 = t * t;
    let t3 = t2 * t;
    // Right neighbour (node m + 1) sees x on its rising piece.
    if (1..=n).contains(&(m + 1)) {
        let i = m;
        out[2 * i] = 3.0 * t2 - 2.0 * t3;
        out[2 * i + 1] = spacing * (t3 - t2);
    }
    // Left neighbour (node m) sees x on its falling piece.
    if (1..=n).contains(&m) {
        let i = m - 1;
        out[2 * i] = 1.0 - 3.0 * t2 + 2.0 * t3;
        out[2 * i + 1] = spacing * (t - 2.0 * t2 + t3);
    }
}
