//! The identified pseudo-linear input-output model.
//!
//! The estimate of `y_k` is `theta . phi_k` with
//!
//! ```text
//! phi_k = [ -f_1 y_{k-1}, ..., -f_n y_{k-n}, g_1 u_{k-1}, ..., g_n u_{k-n}, h ]
//! theta = [  F_1,         ...,  F_n,         G_1,         ...,  G_n,         H ]
//! ```
//!
//! where `f_i`, `g_i` are basis vectors evaluated at the leading entry `y_{k-i}`
//! of lag `i`'s output window and `h` is evaluated at `y_{k-1}`.

use alloc::collections::VecDeque;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::basis::BasisSpec;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ModelStructure {
    order: usize,
    f: Vec<BasisSpec>,
    g: Vec<BasisSpec>,
    h: Option<BasisSpec>,
}

impl ModelStructure {
    pub fn new(
        order: usize,
        f: Vec<BasisSpec>,
        g: Vec<BasisSpec>,
        h: Option<BasisSpec>,
    ) -> Result<Self> {
        if order == 0 {
            return Err(Error::InvalidStructure("model order must be at least 1".into()));
        }
        if f.len() != order || g.len() != order {
            return Err(Error::InvalidStructure(format!(
                "expected {order} f and g bases, got {} and {}",
                f.len(),
                g.len()
            )));
        }
        for spec in f.iter().chain(&g).chain(h.iter()) {
            spec.validate()?;
        }
        let dims_agree = |specs: &[BasisSpec]| specs.windows(2).all(|w| w[0].output_dim() == w[1].output_dim());
        if !dims_agree(&f) || !dims_agree(&g) {
            return Err(Error::InvalidStructure(
                "all lags must share the same basis dimension".into(),
            ));
        }
        Ok(Self { order, f, g, h })
    }

    /// Constant `f` and `g` on every lag, optional constant offset.
    pub fn linear(order: usize, offset: bool) -> Result<Self> {
        Self::new(
            order,
            vec![BasisSpec::Constant; order],
            vec![BasisSpec::Constant; order],
            offset.then_some(BasisSpec::Constant),
        )
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn f_basis(&self, lag: usize) -> &BasisSpec {
        &self.f[lag - 1]
    }

    pub fn g_basis(&self, lag: usize) -> &BasisSpec {
        &self.g[lag - 1]
    }

    pub fn h_basis(&self) -> Option<&BasisSpec> {
        self.h.as_ref()
    }

    pub fn f_dim(&self) -> usize {
        self.f[0].output_dim()
    }

    pub fn g_dim(&self) -> usize {
        self.g[0].output_dim()
    }

    pub fn h_dim(&self) -> usize {
        self.h.map_or(0, |h| h.output_dim())
    }

    pub fn regressor_dim(&self) -> usize {
        self.order * (self.f_dim() + self.g_dim()) + self.h_dim()
    }

    fn check_lag(&self, lag: usize) -> Result<()> {
        if lag == 0 || lag > self.order {
            return Err(Error::LagOutOfRange {
                lag,
                order: self.order,
            });
        }
        Ok(())
    }

    /// Regressor `phi_k` from the history (needs steps `k - order ..= k - 1`).
    pub fn regressor(&self, hist: &History, k: i64) -> Result<Vec<f64>> {
        let mut y_lags = Vec::with_capacity(self.order);
        let mut u_lags = Vec::with_capacity(self.order);
        for i in 1..=self.order as i64 {
            y_lags.push(hist.y(k - i)?);
            u_lags.push(hist.u(k - i)?);
        }
        self.regressor_from_lags(&y_lags, &u_lags)
    }

    /// Regressor from explicit lags: `y_lags[i - 1] = y_{k-i}`, likewise `u_lags`.
    pub fn regressor_from_lags(&self, y_lags: &[f64], u_lags: &[f64]) -> Result<Vec<f64>> {
        if y_lags.len() != self.order || u_lags.len() != self.order {
            return Err(Error::DimensionMismatch {
                what: "regressor lags",
                expected: self.order,
                found: y_lags.len().min(u_lags.len()),
            });
        }
        let (lf, lg) = (self.f_dim(), self.g_dim());
        let mut phi = vec![0.0; self.regressor_dim()];
        let (f_part, rest) = phi.split_at_mut(self.order * lf);
        let (g_part, h_part) = rest.split_at_mut(self.order * lg);
        for i in 0..self.order {
            let block = &mut f_part[i * lf..(i + 1) * lf];
            self.f[i].eval_into(y_lags[i], block)?;
            block.iter_mut().for_each(|v| *v *= -y_lags[i]);

            let block = &mut g_part[i * lg..(i + 1) * lg];
            self.g[i].eval_into(y_lags[i], block)?;
            block.iter_mut().for_each(|v| *v *= u_lags[i]);
        }
        if let Some(h) = &self.h {
            h.eval_into(y_lags[0], h_part)?;
        }
        Ok(phi)
    }

    fn leading(window: &[f64]) -> Result<f64> {
        window.first().copied().ok_or(Error::DimensionMismatch {
            what: "output window",
            expected: 1,
            found: 0,
        })
    }

    /// `F_hat_i(window) = F_i . f_i(window)`.
    pub fn f_hat(&self, theta: &CoefficientVector, lag: usize, window: &[f64]) -> Result<f64> {
        self.check_lag(lag)?;
        self.f[lag - 1].combine(theta.f_block(self, lag), Self::leading(window)?)
    }

    /// `G_hat_i(window) = G_i . g_i(window)`.
    pub fn g_hat(&self, theta: &CoefficientVector, lag: usize, window: &[f64]) -> Result<f64> {
        self.check_lag(lag)?;
        self.g[lag - 1].combine(theta.g_block(self, lag), Self::leading(window)?)
    }

    /// `H . h(window)`, zero when the model has no offset basis.
    pub fn h_term(&self, theta: &CoefficientVector, window: &[f64]) -> Result<f64> {
        match &self.h {
            Some(h) => h.combine(theta.h_block(self), Self::leading(window)?),
            None => Ok(0.0),
        }
    }
}

/// The coefficient row `theta`, ordered `[F_1 .. F_n, G_1 .. G_n, H]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientVector(Vec<f64>);

impl CoefficientVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    /// Builds `theta` from its blocks, checking every block against `structure`.
    pub fn from_blocks(
        structure: &ModelStructure,
        f: &[&[f64]],
        g: &[&[f64]],
        h: &[f64],
    ) -> Result<Self> {
        let n = structure.order();
        if f.len() != n || g.len() != n {
            return Err(Error::DimensionMismatch {
                what: "coefficient blocks",
                expected: n,
                found: f.len().min(g.len()),
            });
        }
        let mut values = Vec::with_capacity(structure.regressor_dim());
        for (blocks, dim) in [(f, structure.f_dim()), (g, structure.g_dim())] {
            for block in blocks {
                if block.len() != dim {
                    return Err(Error::DimensionMismatch {
                        what: "coefficient block",
                        expected: dim,
                        found: block.len(),
                    });
                }
                values.extend_from_slice(block);
            }
        }
        if h.len() != structure.h_dim() {
            return Err(Error::DimensionMismatch {
                what: "offset coefficients",
                expected: structure.h_dim(),
                found: h.len(),
            });
        }
        values.extend_from_slice(h);
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn f_block(&self, structure: &ModelStructure, lag: usize) -> &[f64] {
        let lf = structure.f_dim();
        &self.0[(lag - 1) * lf..lag * lf]
    }

    pub fn g_block(&self, structure: &ModelStructure, lag: usize) -> &[f64] {
        let start = structure.order() * structure.f_dim() + (lag - 1) * structure.g_dim();
        &self.0[start..start + structure.g_dim()]
    }

    pub fn h_block(&self, structure: &ModelStructure) -> &[f64] {
        let start = structure.order() * (structure.f_dim() + structure.g_dim());
        &self.0[start..start + structure.h_dim()]
    }

    /// `theta . phi`.
    pub fn predict(&self, phi: &[f64]) -> Result<f64> {
        if phi.len() != self.0.len() {
            return Err(Error::DimensionMismatch {
                what: "regressor",
                expected: self.0.len(),
                found: phi.len(),
            });
        }
        Ok(self.0.iter().zip(phi).map(|(a, b)| a * b).sum())
    }

    /// `y - theta . phi`.
    pub fn prediction_error(&self, phi: &[f64], y: f64) -> Result<f64> {
        Ok(y - self.predict(phi)?)
    }
}

impl From<Vec<f64>> for CoefficientVector {
    fn from(values: Vec<f64>) -> Self {
        Self(values)
    }
}

/// Bounded record of past outputs and inputs addressed by absolute step.
#[derive(Debug, Clone)]
pub struct History {
    depth: usize,
    oldest: i64,
    y: VecDeque<f64>,
    u: VecDeque<f64>,
}

impl History {
    /// A history holding `depth` steps, seeded with `(y, u)` at step `k0`.
    pub fn new(depth: usize, k0: i64, y: f64, u: f64) -> Self {
        let depth = depth.max(1);
        let mut hist = Self {
            depth,
            oldest: k0,
            y: VecDeque::with_capacity(depth),
            u: VecDeque::with_capacity(depth),
        };
        hist.y.push_back(y);
        hist.u.push_back(u);
        hist
    }

    /// Appends the next step and returns its index.
    pub fn push(&mut self, y: f64, u: f64) -> i64 {
        if self.y.len() == self.depth {
            self.y.pop_front();
            self.u.pop_front();
            self.oldest += 1;
        }
        self.y.push_back(y);
        self.u.push_back(u);
        self.latest()
    }

    pub fn latest(&self) -> i64 {
        self.oldest + self.y.len() as i64 - 1
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    fn slot(&self, k: i64) -> Result<usize> {
        if k < self.oldest || k > self.latest() {
            return Err(Error::InsufficientHistory(k));
        }
        Ok((k - self.oldest) as usize)
    }

    pub fn y(&self, k: i64) -> Result<f64> {
        Ok(self.y[self.slot(k)?])
    }

    pub fn u(&self, k: i64) -> Result<f64> {
        Ok(self.u[self.slot(k)?])
    }
}
