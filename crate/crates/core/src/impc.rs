//! Iterative receding-horizon optimization over state-dependent coefficients.
//!
//! Prediction grid at step `k` (index `i` stands for step `k + i`):
//!
//! * `i <= 0`: measured outputs `y_{k+i}` and applied controls `u_{k+i}`.
//! * `i = 1`: the anchor `y_hat_{k+1} = theta_{k+1} phi_{k+1}`, which needs
//!   nothing beyond step `k`.
//! * `i = 2 ..= l + 1`: predicted outputs `Y`, driven by the decision
//!   controls `U = [u_{k|1} .. u_{k|l}]`.
//!
//! Each predicted output follows the identified model with coefficients
//! evaluated on the predicted trajectory:
//!
//! ```text
//! y_{k|i} = sum_j [ Ft_{j,i} y_{k|i-j} + Gt_{j,i} u_{k|i-j} ] + Ht_i
//! Ft_{j,i} = -F_hat_j(y_{k|i-j}),  Gt_{j,i} = G_hat_j(y_{k|i-j}),  Ht_i = H h(y_{k|i-1})
//! ```
//!
//! Freezing the coefficients makes this recursion linear in `[Y; U]`, which is
//! exactly the equality constraint of the QP built by [`assemble`]. The map
//! `U -> argmin QP(coefficients along rollout(U))` is iterated to a fixed point
//! by [`subiterate`].

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::ident::{RlsUpdate, SiftRls};
use crate::model::{CoefficientVector, History, ModelStructure};
use crate::qp::{ControlBounds, QpProblem, QpSolution};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct HorizonConfig {
    /// Prediction horizon `l`.
    pub horizon: usize,
    /// Maximum number of QP solves per control step.
    pub subiterations: usize,
    /// Output tracking weight `Q`.
    pub output_weight: f64,
    /// Control weight `R`.
    pub control_weight: f64,
    pub bounds: Option<ControlBounds>,
    /// Subiteration stops once `|Phi(U) - U| < tol * (1 + |U|)`.
    pub broyden_tol: f64,
}

impl HorizonConfig {
    pub const DEFAULT_BROYDEN_TOL: f64 = 1e-9;

    pub fn new(horizon: usize, subiterations: usize, output_weight: f64, control_weight: f64) -> Self {
        Self {
            horizon,
            subiterations,
            output_weight,
            control_weight,
            bounds: None,
            broyden_tol: Self::DEFAULT_BROYDEN_TOL,
        }
    }

    pub fn with_bounds(mut self, bounds: ControlBounds) -> Self {
        self.bounds = Some(bounds);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::InvalidHorizon("horizon must be at least 1"));
        }
        if self.subiterations == 0 {
            return Err(Error::InvalidHorizon("at least one subiteration is required"));
        }
        if !(self.output_weight >= 0.0 && self.output_weight.is_finite()) {
            return Err(Error::InvalidHorizon("output weight must be nonnegative"));
        }
        if !(self.control_weight >= 0.0 && self.control_weight.is_finite()) {
            return Err(Error::InvalidHorizon("control weight must be nonnegative"));
        }
        if !(self.broyden_tol > 0.0) {
            return Err(Error::InvalidHorizon("Broyden tolerance must be positive"));
        }
        if let Some(b) = &self.bounds {
            b.validate()?;
        }
        Ok(())
    }
}

/// Frozen coefficients of one predicted output `y_{k|i}`.
#[derive(Debug, Clone, PartialEq)]
pub struct SdcRow {
    /// `Ft_{j,i}` for lags `j = 1..=n`.
    pub f: Vec<f64>,
    /// `Gt_{j,i}` for lags `j = 1..=n`.
    pub g: Vec<f64>,
    pub h: f64,
}

/// Data available at step `k` for the horizon problem.
#[derive(Debug, Clone, PartialEq)]
pub struct HorizonState {
    /// `y_{k-n+1} ..= y_k`.
    pub past_outputs: Vec<f64>,
    /// `u_{k-n+1} ..= u_k`.
    pub past_controls: Vec<f64>,
    /// `y_hat_{k+1}`.
    pub anchor: f64,
    /// `r_{k+2} ..= r_{k+l+1}`.
    pub commands: Vec<f64>,
}

impl HorizonState {
    pub fn order(&self) -> usize {
        self.past_outputs.len()
    }

    pub fn horizon(&self) -> usize {
        self.commands.len()
    }

    /// Output at grid index `i`; `outputs[0]` is index 2.
    pub fn output_at(&self, outputs: &[f64], i: isize) -> f64 {
        match i {
            i if i <= 0 => self.past_outputs[(self.order() as isize - 1 + i) as usize],
            1 => self.anchor,
            i => outputs[(i - 2) as usize],
        }
    }

    /// Control at grid index `i`; `controls[0]` is index 1.
    pub fn control_at(&self, controls: &[f64], i: isize) -> f64 {
        if i <= 0 {
            self.past_controls[(self.order() as isize - 1 + i) as usize]
        } else {
            controls[(i - 1) as usize]
        }
    }

    fn check(&self, structure: &ModelStructure) -> Result<()> {
        let n = structure.order();
        if self.past_outputs.len() != n || self.past_controls.len() != n {
            return Err(Error::DimensionMismatch {
                what: "horizon past data",
                expected: n,
                found: self.past_outputs.len().min(self.past_controls.len()),
            });
        }
        if self.commands.is_empty() {
            return Err(Error::InvalidHorizon("horizon must be at least 1"));
        }
        Ok(())
    }
}

/// `y_hat_{k+1} = theta_{k+1} phi_{k+1}`, where `k` is the latest step in `hist`.
pub fn anchor_prediction(structure: &ModelStructure, theta: &CoefficientVector, hist: &History) -> Result<f64> {
    let phi = structure.regressor(hist, hist.latest() + 1)?;
    theta.predict(&phi)
}

fn sdc_row(
    structure: &ModelStructure,
    theta: &CoefficientVector,
    state: &HorizonState,
    outputs: &[f64],
    i: isize,
) -> Result<SdcRow> {
    let n = structure.order();
    let mut row = SdcRow {
        f: Vec::with_capacity(n),
        g: Vec::with_capacity(n),
        h: 0.0,
    };
    for lag in 1..=n {
        let lead = [state.output_at(outputs, i - lag as isize)];
        row.f.push(-structure.f_hat(theta, lag, &lead)?);
        row.g.push(structure.g_hat(theta, lag, &lead)?);
    }
    row.h = structure.h_term(theta, &[state.output_at(outputs, i - 1)])?;
    Ok(row)
}

fn recursion_step(row: &SdcRow, state: &HorizonState, outputs: &[f64], controls: &[f64], i: isize) -> f64 {
    let mut y = row.h;
    for (j, (f, g)) in row.f.iter().zip(&row.g).enumerate() {
        let lag = j as isize + 1;
        y += f * state.output_at(outputs, i - lag) + g * state.control_at(controls, i - lag);
    }
    y
}

/// Coefficients frozen along `outputs` (predictions for indices `2..=l+1`).
pub fn build_sdc(
    structure: &ModelStructure,
    theta: &CoefficientVector,
    state: &HorizonState,
    outputs: &[f64],
) -> Result<Vec<SdcRow>> {
    state.check(structure)?;
    let l = state.horizon();
    if outputs.len() != l {
        return Err(Error::DimensionMismatch {
            what: "predicted outputs",
            expected: l,
            found: outputs.len(),
        });
    }
    (2..=l as isize + 1)
        .map(|i| sdc_row(structure, theta, state, outputs, i))
        .collect()
}

/// Nonlinear prediction under `controls`, re-evaluating the coefficients on
/// the rollout's own outputs.
pub fn rollout(
    structure: &ModelStructure,
    theta: &CoefficientVector,
    state: &HorizonState,
    controls: &[f64],
) -> Result<Vec<f64>> {
    state.check(structure)?;
    let l = state.horizon();
    if controls.len() != l {
        return Err(Error::DimensionMismatch {
            what: "horizon controls",
            expected: l,
            found: controls.len(),
        });
    }
    let mut outputs = Vec::with_capacity(l);
    for i in 2..=l as isize + 1 {
        if !state.output_at(&outputs, i - 1).is_finite() {
            return Err(Error::NonFinite("rollout"));
        }
        let row = sdc_row(structure, theta, state, &outputs, i)?;
        let y = recursion_step(&row, state, &outputs, controls, i);
        if !y.is_finite() {
            return Err(Error::NonFinite("rollout"));
        }
        outputs.push(y);
    }
    Ok(outputs)
}

/// Linear recursion with frozen coefficients.
pub fn frozen_rollout(rows: &[SdcRow], state: &HorizonState, controls: &[f64]) -> Vec<f64> {
    let mut outputs = Vec::with_capacity(rows.len());
    for (r, row) in rows.iter().enumerate() {
        let y = recursion_step(row, state, &outputs, controls, r as isize + 2);
        outputs.push(y);
    }
    outputs
}

/// Cost and equality constraints of the frozen-coefficient horizon problem.
///
/// Row `r` of `A_eq [Y; U] = b_eq` is the recursion for `y_{k|r+2}` with every
/// decision variable moved to the left and every known quantity (past data,
/// anchor, offset) collected in `b_eq`.
pub fn assemble(rows: &[SdcRow], state: &HorizonState, config: &HorizonConfig, initial_guess: DVector<f64>) -> QpProblem {
    let l = rows.len();
    let mut a_eq = DMatrix::zeros(l, 2 * l);
    let mut b_eq = DVector::zeros(l);
    for (r, row) in rows.iter().enumerate() {
        let i = r as isize + 2;
        a_eq[(r, r)] = 1.0;
        let mut rhs = row.h;
        for (j, (f, g)) in row.f.iter().zip(&row.g).enumerate() {
            let p = i - (j as isize + 1);
            if p >= 2 {
                a_eq[(r, (p - 2) as usize)] -= f;
            } else {
                rhs += f * state.output_at(&[], p);
            }
            if p >= 1 {
                a_eq[(r, l + (p - 1) as usize)] -= g;
            } else {
                rhs += g * state.control_at(&[], p);
            }
        }
        b_eq[r] = rhs;
    }

    let mut diag = DVector::zeros(2 * l);
    let mut linear = DVector::zeros(2 * l);
    for r in 0..l {
        diag[r] = config.output_weight;
        diag[l + r] = config.control_weight;
        linear[r] = -2.0 * config.output_weight * state.commands[r];
    }
    QpProblem {
        hessian: DMatrix::from_diagonal(&diag),
        linear,
        a_eq,
        b_eq,
        bounds: config.bounds,
        initial_guess,
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SubiterationDiagnostics {
    /// QP solves performed.
    pub evaluations: usize,
    /// `|Phi(U) - U|_inf` at the accepted iterate.
    pub residual: f64,
    /// Euclidean residual norms of the accepted iterates, in order.
    pub accepted_residuals: Vec<f64>,
    pub converged: bool,
    /// A rollout produced non-finite outputs at some trial point.
    pub diverged: bool,
    pub ridge_applied: bool,
    pub qp_active_set_iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Subiteration {
    /// QP-optimal controls `Phi(U)` at the accepted iterate.
    pub controls: Vec<f64>,
    /// QP-optimal outputs paired with `controls`.
    pub outputs: Vec<f64>,
    pub diagnostics: SubiterationDiagnostics,
}

/// One evaluation of the fixed-point map. `Ok(None)` when the rollout diverges.
fn fixed_point_map(
    structure: &ModelStructure,
    theta: &CoefficientVector,
    state: &HorizonState,
    config: &HorizonConfig,
    controls: &[f64],
) -> Result<Option<QpSolution>> {
    let outputs = match rollout(structure, theta, state, controls) {
        Ok(y) => y,
        Err(Error::NonFinite(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    let rows = build_sdc(structure, theta, state, &outputs)?;
    let guess = DVector::from_iterator(
        2 * controls.len(),
        outputs.iter().chain(controls.iter()).copied(),
    );
    let problem = assemble(&rows, state, config, guess);
    problem.solve().map(Some)
}

/// Drives `g(U) = Phi(U) - U` to zero with Broyden's method on the inverse
/// Jacobian, starting from `B = -I` so the first step is the plain
/// subiteration `U <- Phi(U)`. A trial whose residual grows is rejected; the
/// next trial restarts from `B = -I`, and repeated rejections halve the step.
pub fn subiterate(
    structure: &ModelStructure,
    theta: &CoefficientVector,
    state: &HorizonState,
    config: &HorizonConfig,
    initial: &[f64],
) -> Result<Subiteration> {
    config.validate()?;
    state.check(structure)?;
    let l = state.horizon();
    if initial.len() != l || config.horizon != l {
        return Err(Error::DimensionMismatch {
            what: "initial controls",
            expected: l,
            found: initial.len(),
        });
    }
    let mut diag = SubiterationDiagnostics::default();
    let record = |sol: &QpSolution, diag: &mut SubiterationDiagnostics| {
        diag.evaluations += 1;
        diag.ridge_applied |= sol.diagnostics.ridge_applied;
        diag.qp_active_set_iterations += sol.diagnostics.active_set_iterations;
    };

    let mut u = DVector::from_column_slice(initial);
    let Some(mut sol) = fixed_point_map(structure, theta, state, config, initial)? else {
        diag.evaluations = 1;
        diag.diverged = true;
        diag.residual = f64::INFINITY;
        return Ok(Subiteration {
            controls: initial.to_vec(),
            outputs: vec![f64::NAN; l],
            diagnostics: diag,
        });
    };
    record(&sol, &mut diag);
    let mut g = DVector::from_column_slice(sol.controls()) - &u;
    diag.accepted_residuals.push(g.norm());

    let identity = DMatrix::<f64>::identity(l, l);
    let mut inv_jac = -&identity;
    let mut fresh = true;
    let mut damping = 1.0;
    loop {
        if g.norm() <= config.broyden_tol * (1.0 + u.norm()) {
            diag.converged = true;
            break;
        }
        if diag.evaluations >= config.subiterations {
            break;
        }
        let step = -(&inv_jac * &g) * damping;
        let trial = &u + &step;
        let trial_sol = fixed_point_map(structure, theta, state, config, trial.as_slice())?;
        let accepted = match trial_sol {
            Some(trial_sol) => {
                record(&trial_sol, &mut diag);
                let trial_g = DVector::from_column_slice(trial_sol.controls()) - &trial;
                if trial_g.norm() <= g.norm() {
                    let dg = &trial_g - &g;
                    let b_dg = &inv_jac * &dg;
                    let denom = step.dot(&b_dg);
                    if denom.abs() > f64::EPSILON * step.norm() * b_dg.norm() {
                        let st_b = step.transpose() * &inv_jac;
                        inv_jac += (&step - &b_dg) * st_b / denom;
                        fresh = false;
                    }
                    u = trial;
                    g = trial_g;
                    sol = trial_sol;
                    diag.accepted_residuals.push(g.norm());
                    true
                } else {
                    false
                }
            }
            None => {
                diag.evaluations += 1;
                diag.diverged = true;
                false
            }
        };
        if accepted {
            damping = 1.0;
        } else if fresh {
            damping *= 0.5;
        } else {
            inv_jac = -&identity;
            fresh = true;
        }
    }
    diag.residual = g.amax();
    Ok(Subiteration {
        controls: sol.controls().to_vec(),
        outputs: sol.outputs().to_vec(),
        diagnostics: diag,
    })
}

/// Observation bookkeeping returned by [`AdaptiveController::observe`].
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub step: i64,
    /// Coefficients used to predict this step.
    pub theta: CoefficientVector,
    /// `None` while the history is too short to form a regressor.
    pub update: Option<RlsUpdate>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlDecision {
    /// `u_{k+1}`.
    pub control: f64,
    pub anchor: f64,
    /// Optimized control sequence `U`.
    pub plan: Vec<f64>,
    pub diagnostics: SubiterationDiagnostics,
}

/// Identification plus horizon optimization for one loop.
#[derive(Debug, Clone)]
pub struct AdaptiveController {
    structure: ModelStructure,
    rls: SiftRls,
    config: HorizonConfig,
    history: History,
    plan: Option<Vec<f64>>,
}

impl AdaptiveController {
    /// `(y0, u0)` is recorded as step 0.
    pub fn new(structure: ModelStructure, rls: SiftRls, config: HorizonConfig, y0: f64, u0: f64) -> Result<Self> {
        config.validate()?;
        if rls.dim() != structure.regressor_dim() {
            return Err(Error::DimensionMismatch {
                what: "coefficient vector",
                expected: structure.regressor_dim(),
                found: rls.dim(),
            });
        }
        let history = History::new(structure.order() + 1, 0, y0, u0);
        Ok(Self {
            structure,
            rls,
            config,
            history,
            plan: None,
        })
    }

    pub fn structure(&self) -> &ModelStructure {
        &self.structure
    }

    pub fn rls(&self) -> &SiftRls {
        &self.rls
    }

    pub fn config(&self) -> &HorizonConfig {
        &self.config
    }

    pub fn history(&self) -> &History {
        &self.history
    }

    pub fn theta(&self) -> &CoefficientVector {
        self.rls.theta()
    }

    /// Records `(y_k, u_k)` and, once the regressor is available, updates the
    /// coefficients to `theta_{k+1}`.
    pub fn observe(&mut self, y: f64, u: f64) -> Result<Observation> {
        if !(y.is_finite() && u.is_finite()) {
            return Err(Error::NonFinite("measurement"));
        }
        let mut scratch = self.history.clone();
        let k = scratch.push(y, u);
        let theta = self.rls.theta().clone();
        let update = if k >= self.structure.order() as i64 {
            let phi = self.structure.regressor(&scratch, k)?;
            Some(self.rls.step(y, &phi)?)
        } else {
            None
        };
        self.history = scratch;
        Ok(Observation {
            step: k,
            theta,
            update,
        })
    }

    /// Computes `u_{k+1}` for the latest observed step `k`. `command` maps an
    /// absolute step to its reference value.
    pub fn compute_control(&mut self, command: impl Fn(i64) -> f64) -> Result<ControlDecision> {
        let n = self.structure.order() as i64;
        let l = self.config.horizon;
        let k = self.history.latest();
        let anchor = anchor_prediction(&self.structure, self.rls.theta(), &self.history)?;
        let past = |f: fn(&History, i64) -> Result<f64>| -> Result<Vec<f64>> {
            (k - n + 1..=k).map(|j| f(&self.history, j)).collect()
        };
        let state = HorizonState {
            past_outputs: past(History::y)?,
            past_controls: past(History::u)?,
            anchor,
            commands: (0..l as i64).map(|i| command(k + 2 + i)).collect(),
        };
        let initial = match &self.plan {
            Some(prev) => {
                let mut shifted: Vec<f64> = prev[1..].to_vec();
                shifted.push(prev[l - 1]);
                shifted
            }
            None => vec![self.history.u(k)?; l],
        };
        let result = subiterate(&self.structure, self.rls.theta(), &state, &self.config, &initial)?;
        let mut control = result.controls[0];
        if let Some(b) = &self.config.bounds {
            control = b.clamp(control);
        }
        self.plan = Some(result.controls.clone());
        Ok(ControlDecision {
            control,
            anchor,
            plan: result.controls,
            diagnostics: result.diagnostics,
        })
    }
}
