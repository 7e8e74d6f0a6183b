//! Dense QP for the horizon subproblem.
//!
//! ```text
//! minimize    z' H z + F' z
//! subject to  A_eq z = b_eq,   u_min <= z[l..2l] <= u_max   (optional)
//! ```
//!
//! with `z = [Y; U]` and `A_eq = [M | -N]`, `M` unit lower triangular. The
//! output block is eliminated by forward substitution, `Y = M^-1 (b_eq + N U)`,
//! which leaves a QP in `U` alone. A diagonal cost turns that reduced problem
//! into weighted least squares, solved by QR; any other cost goes through a
//! Cholesky factorization of the reduced Hessian. Bounds add a primal
//! active-set loop.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Ridge added to the reduced Hessian when it is not positive definite.
pub const RIDGE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ControlBounds {
    pub min: f64,
    pub max: f64,
}

impl ControlBounds {
    pub fn validate(&self) -> Result<()> {
        if !(self.min.is_finite() && self.max.is_finite()) || self.min > self.max {
            return Err(Error::InfeasibleBounds {
                min: self.min,
                max: self.max,
            });
        }
        Ok(())
    }

    pub fn clamp(&self, u: f64) -> f64 {
        u.clamp(self.min, self.max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    /// `2l x 2l` cost matrix.
    pub hessian: DMatrix<f64>,
    /// Linear cost term of length `2l`.
    pub linear: DVector<f64>,
    /// `l x 2l` equality constraint matrix.
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    /// Box applied to the control block `z[l..2l]`.
    pub bounds: Option<ControlBounds>,
    /// Warm-start point. The reduced problem is strictly convex, so the
    /// solution does not depend on it; it is carried for callers that inspect
    /// the subproblem.
    pub initial_guess: DVector<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct QpDiagnostics {
    /// Equality-constrained subproblems solved by the active-set loop (0 when
    /// unbounded).
    pub active_set_iterations: usize,
    /// Number of controls held at a bound in the solution.
    pub active_bounds: usize,
    pub ridge_applied: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub z: DVector<f64>,
    pub diagnostics: QpDiagnostics,
}

impl QpSolution {
    pub fn horizon(&self) -> usize {
        self.z.len() / 2
    }

    pub fn outputs(&self) -> &[f64] {
        &self.z.as_slice()[..self.horizon()]
    }

    pub fn controls(&self) -> &[f64] {
        &self.z.as_slice()[self.horizon()..]
    }
}

impl QpProblem {
    pub fn horizon(&self) -> usize {
        self.a_eq.nrows()
    }

    /// `z' H z + F' z`.
    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        z.dot(&(&self.hessian * z)) + self.linear.dot(z)
    }

    fn validate(&self) -> Result<()> {
        let l = self.horizon();
        let dims = [
            ("Hessian rows", 2 * l, self.hessian.nrows()),
            ("Hessian columns", 2 * l, self.hessian.ncols()),
            ("linear cost", 2 * l, self.linear.len()),
            ("constraint columns", 2 * l, self.a_eq.ncols()),
            ("constraint rhs", l, self.b_eq.len()),
        ];
        for (what, expected, found) in dims {
            if expected != found {
                return Err(Error::DimensionMismatch {
                    what,
                    expected,
                    found,
                });
            }
        }
        if l == 0 {
            return Err(Error::DimensionMismatch {
                what: "horizon",
                expected: 1,
                found: 0,
            });
        }
        if self
            .hessian
            .iter()
            .chain(self.linear.iter())
            .chain(self.a_eq.iter())
            .chain(self.b_eq.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::NonFinite("QP data"));
        }
        for i in 0..l {
            if self.a_eq[(i, i)] != 1.0 || (i + 1..l).any(|j| self.a_eq[(i, j)] != 0.0) {
                return Err(Error::ConstraintStructure);
            }
        }
        if let Some(bounds) = &self.bounds {
            bounds.validate()?;
        }
        Ok(())
    }

    /// Outputs implied by the equality constraint for the given controls.
    pub fn outputs_for(&self, controls: &DVector<f64>) -> DVector<f64> {
        let l = self.horizon();
        let m = self.a_eq.columns(0, l);
        let rhs = &self.b_eq - self.a_eq.columns(l, l) * controls;
        let mut y = rhs;
        // Unit lower triangular forward substitution.
        for i in 0..l {
            let mut acc = y[i];
            for j in 0..i {
                acc -= m[(i, j)] * y[j];
            }
            y[i] = acc;
        }
        y
    }

    /// With `H = diag(w)`, `w >= 0`, and `F` vanishing wherever `w` does, the
    /// objective equals `|B U - d|^2` up to a constant, with `B = W S`,
    /// `d = -W (z0 + F / 2w)` and `W = diag(sqrt w)`. Rows with `w = 0` are dropped.
    fn square_root_form(&self, s: &DMatrix<f64>, z0: &DVector<f64>) -> Option<(DMatrix<f64>, DVector<f64>)> {
        let n = self.hessian.nrows();
        let off_diagonal = (0..n).any(|i| (0..n).any(|j| i != j && self.hessian[(i, j)] != 0.0));
        if off_diagonal {
            return None;
        }
        let mut rows = Vec::with_capacity(n);
        for i in 0..n {
            let w = self.hessian[(i, i)];
            if w < 0.0 || (w == 0.0 && self.linear[i] != 0.0) {
                return None;
            }
            if w > 0.0 {
                rows.push(i);
            }
        }
        let l = s.ncols();
        let mut b = DMatrix::zeros(rows.len(), l);
        let mut d = DVector::zeros(rows.len());
        for (r, &i) in rows.iter().enumerate() {
            let w = self.hessian[(i, i)];
            let root = libm::sqrt(w);
            b.row_mut(r).copy_from(&(s.row(i) * root));
            d[r] = -root * (z0[i] + self.linear[i] / (2.0 * w));
        }
        Some((b, d))
    }

    pub fn solve(&self) -> Result<QpSolution> {
        self.validate()?;
        let l = self.horizon();

        // z = S U + z0 with S = [T; I], T = M^-1 N, z0 = [M^-1 b; 0].
        let zero = DVector::zeros(l);
        let offset = self.outputs_for(&zero);
        let mut sens = DMatrix::zeros(l, l);
        for c in 0..l {
            let mut e = DVector::zeros(l);
            e[c] = 1.0;
            let col = self.outputs_for(&e) - &offset;
            sens.set_column(c, &col);
        }
        let mut s = DMatrix::zeros(2 * l, l);
        s.view_mut((0, 0), (l, l)).copy_from(&sens);
        s.view_mut((l, 0), (l, l)).fill_with_identity();
        let mut z0 = DVector::zeros(2 * l);
        z0.rows_mut(0, l).copy_from(&offset);

        let h_sym = (&self.hessian + self.hessian.transpose()) * 0.5;
        // Objective in U: U' A U / 2 + g' U with A = 2 S' H S.
        let st = s.transpose();
        let mut a = (&st * &h_sym * &s) * 2.0;
        a = (&a + a.transpose()) * 0.5;
        let g = &st * (&h_sym * &z0 * 2.0 + &self.linear);

        let mut diagnostics = QpDiagnostics::default();
        let mut square_root = self.square_root_form(&s, &z0);
        let positive_definite = |a: &DMatrix<f64>, sr: &Option<(DMatrix<f64>, DVector<f64>)>| match sr {
            Some((b, _)) => full_column_rank(b),
            None => a.clone().cholesky().is_some(),
        };
        if !positive_definite(&a, &square_root) {
            for i in 0..l {
                a[(i, i)] += 2.0 * RIDGE;
            }
            if let Some((b, d)) = &mut square_root {
                let m = b.nrows();
                let mut grown = DMatrix::zeros(m + l, l);
                grown.view_mut((0, 0), (m, l)).copy_from(b);
                grown.view_mut((m, 0), (l, l)).fill_diagonal(libm::sqrt(RIDGE));
                *b = grown;
                *d = d.clone().resize_vertically(m + l, 0.0);
            }
            diagnostics.ridge_applied = true;
            if !positive_definite(&a, &square_root) {
                return Err(Error::SingularHessian);
            }
        }
        let reduced = Reduced { a, g, square_root };

        let controls = match &self.bounds {
            None => reduced.solve_free(&vec![Fixed::Free; l], &zero)?,
            Some(bounds) => {
                let (u, iterations, active) = active_set(&reduced, bounds)?;
                diagnostics.active_set_iterations = iterations;
                diagnostics.active_bounds = active;
                u
            }
        };
        let outputs = self.outputs_for(&controls);
        let mut z = DVector::zeros(2 * l);
        z.rows_mut(0, l).copy_from(&outputs);
        z.rows_mut(l, l).copy_from(&controls);
        Ok(QpSolution { z, diagnostics })
    }
}

/// Scales every column of `b` to unit norm. Returns `None` for a zero or
/// non-finite column.
fn equilibrated(b: &DMatrix<f64>) -> Option<(DMatrix<f64>, DVector<f64>)> {
    let mut scaled = b.clone();
    let mut norms = DVector::zeros(b.ncols());
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        let n = col.norm();
        if !(n > 0.0 && n.is_finite()) {
            return None;
        }
        col /= n;
        norms[j] = n;
    }
    Some((scaled, norms))
}

/// Rank test on the column-equilibrated matrix, matching the QR solve below.
fn full_column_rank(b: &DMatrix<f64>) -> bool {
    if b.nrows() < b.ncols() {
        return false;
    }
    let Some((scaled, _)) = equilibrated(b) else {
        return false;
    };
    let r = scaled.qr().r();
    r.diagonal().iter().all(|v| v.abs() > f64::EPSILON * b.nrows() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Fixed {
    Free,
    Lower,
    Upper,
}

/// Reduced problem `u' A u / 2 + g' u`, optionally with the equivalent
/// least-squares form `|B u - d|^2`.
struct Reduced {
    a: DMatrix<f64>,
    g: DVector<f64>,
    square_root: Option<(DMatrix<f64>, DVector<f64>)>,
}

impl Reduced {
    /// Minimizes over the free components with the others held at their
    /// values in `x`. The least-squares form is solved by QR, which avoids
    /// squaring the conditioning of `B`; the normal equations are the fallback.
    fn solve_free(&self, fixed: &[Fixed], x: &DVector<f64>) -> Result<DVector<f64>> {
        let free: Vec<usize> = (0..fixed.len()).filter(|&i| fixed[i] == Fixed::Free).collect();
        let mut out = x.clone();
        if free.is_empty() {
            return Ok(out);
        }
        let sol = match self.least_squares(fixed, &free, x) {
            Some(sol) => sol,
            None => self.normal_equations(fixed, &free, x)?,
        };
        for (r, &i) in free.iter().enumerate() {
            out[i] = sol[r];
        }
        Ok(out)
    }

    fn least_squares(&self, fixed: &[Fixed], free: &[usize], x: &DVector<f64>) -> Option<DVector<f64>> {
        let (b, d) = self.square_root.as_ref()?;
        let nf = free.len();
        if b.nrows() < nf {
            return None;
        }
        let mut rhs = d.clone();
        for j in 0..fixed.len() {
            if fixed[j] != Fixed::Free {
                rhs -= b.column(j) * x[j];
            }
        }
        let mut bf = DMatrix::zeros(b.nrows(), nf);
        for (c, &j) in free.iter().enumerate() {
            bf.set_column(c, &b.column(j));
        }
        // Columns of a full-rank `B` stay independent, so no rank test here.
        let (scaled, norms) = equilibrated(&bf)?;
        let qr = scaled.qr();
        let r = qr.r();
        let qt_rhs = qr.q().transpose() * rhs;
        let v = r.solve_upper_triangular(&qt_rhs)?;
        let sol = v.component_div(&norms);
        sol.iter().all(|x| x.is_finite()).then_some(sol)
    }

    fn normal_equations(&self, fixed: &[Fixed], free: &[usize], x: &DVector<f64>) -> Result<DVector<f64>> {
        let nf = free.len();
        let mut aff = DMatrix::zeros(nf, nf);
        let mut rhs = DVector::zeros(nf);
        for (r, &i) in free.iter().enumerate() {
            let mut acc = -self.g[i];
            for j in 0..fixed.len() {
                if fixed[j] != Fixed::Free {
                    acc -= self.a[(i, j)] * x[j];
                }
            }
            rhs[r] = acc;
            for (c, &j) in free.iter().enumerate() {
                aff[(r, c)] = self.a[(i, j)];
            }
        }
        Ok(aff.cholesky().ok_or(Error::SingularHessian)?.solve(&rhs))
    }
}

/// Primal active-set method for the box-constrained reduced problem.
fn active_set(reduced: &Reduced, bounds: &ControlBounds) -> Result<(DVector<f64>, usize, usize)> {
    let (a, g) = (&reduced.a, &reduced.g);
    let l = g.len();
    let limit = 2 * l + 1;
    let (lo, hi) = (bounds.min, bounds.max);

    // Start from the projection of the unconstrained minimizer.
    let unconstrained = reduced.solve_free(&vec![Fixed::Free; l], &DVector::zeros(l))?;
    let mut fixed = vec![Fixed::Free; l];
    let mut x = unconstrained;
    for i in 0..l {
        if x[i] <= lo {
            x[i] = lo;
            fixed[i] = Fixed::Lower;
        } else if x[i] >= hi {
            x[i] = hi;
            fixed[i] = Fixed::Upper;
        }
    }
    if fixed.iter().all(|f| *f == Fixed::Free) {
        return Ok((x, 0, 0));
    }

    for iteration in 1..=limit {
        let target = reduced.solve_free(&fixed, &x)?;
        let step = &target - &x;

        // Ratio test over free components; the first blocking bound wins ties.
        let mut alpha = 1.0;
        let mut blocking = None;
        for i in 0..l {
            if fixed[i] != Fixed::Free {
                continue;
            }
            let (ratio, side) = if step[i] > 0.0 && target[i] > hi {
                ((hi - x[i]) / step[i], Fixed::Upper)
            } else if step[i] < 0.0 && target[i] < lo {
                ((lo - x[i]) / step[i], Fixed::Lower)
            } else {
                continue;
            };
            if ratio < alpha {
                alpha = ratio.max(0.0);
                blocking = Some((i, side));
            }
        }

        if let Some((i, side)) = blocking {
            x += step * alpha;
            x[i] = if side == Fixed::Upper { hi } else { lo };
            fixed[i] = side;
            clamp_free(&mut x, &fixed, lo, hi);
            continue;
        }

        x = target;
        clamp_free(&mut x, &fixed, lo, hi);
        // Multipliers of the active bounds; release the most negative one.
        let grad = a * &x + g;
        let mut release: Option<(usize, f64)> = None;
        for i in 0..l {
            let mu = match fixed[i] {
                Fixed::Free => continue,
                Fixed::Lower => grad[i],
                Fixed::Upper => -grad[i],
            };
            let tol = 1e-12 * (1.0 + g.amax() + a.amax() * x.amax());
            if mu < -tol && release.map_or(true, |(_, best)| mu < best) {
                release = Some((i, mu));
            }
        }
        match release {
            Some((i, _)) => fixed[i] = Fixed::Free,
            None => {
                let active = fixed.iter().filter(|f| **f != Fixed::Free).count();
                return Ok((x, iteration, active));
            }
        }
    }
    Err(Error::ActiveSetLimit(limit))
}

fn clamp_free(x: &mut DVector<f64>, fixed: &[Fixed], lo: f64, hi: f64) {
    for (i, f) in fixed.iter().enumerate() {
        if *f == Fixed::Free {
            x[i] = x[i].clamp(lo, hi);
        }
    }
}
