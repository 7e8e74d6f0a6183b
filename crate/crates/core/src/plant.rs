//! Benchmark plants, command signals and the closed-loop driver.
//!
//! Loop timing: at step `k` the plant produces `y_k` from data up to `k - 1`,
//! the controller ingests `(y_k, u_k)`, and the control it computes, `u_{k+1}`,
//! is applied over the next interval. `u_1 = u_0`; for `1 <= k < n` the next
//! input is a zero-mean Gaussian sample instead of a controller output.

use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::basis::BasisSpec;
use crate::ident::SiftRls;
use crate::impc::{AdaptiveController, HorizonConfig};
use crate::model::{CoefficientVector, ModelStructure};
use crate::{Error, Result};

mod presets;

pub use presets::{preset, PRESET_NAMES};

/// Coefficient function of a benchmark plant, applied to the leading entry of
/// its output window.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(tag = "kind", rename_all = "snake_case")
)]
pub enum CoefficientFn {
    /// Constant `c`.
    Linear { c: f64 },
    /// `c0 + c1 atan(y)`.
    AtanAffine { c0: f64, c1: f64 },
    /// `c0 + c1 sin(y)`.
    SinAffine { c0: f64, c1: f64 },
}

impl CoefficientFn {
    pub fn eval(&self, y: f64) -> f64 {
        match *self {
            CoefficientFn::Linear { c } => c,
            CoefficientFn::AtanAffine { c0, c1 } => c0 + c1 * libm::atan(y),
            CoefficientFn::SinAffine { c0, c1 } => c0 + c1 * libm::sin(y),
        }
    }
}

/// `y_k = sum_i [ -F_i(y_{k-i}) y_{k-i} + G_i(y_{k-i}) u_{k-i} ]`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PlantSpec {
    pub f: Vec<CoefficientFn>,
    pub g: Vec<CoefficientFn>,
}

impl PlantSpec {
    pub fn order(&self) -> usize {
        self.f.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.f.is_empty() || self.f.len() != self.g.len() {
            return Err(Error::InvalidSimulation(alloc::format!(
                "plant needs matching nonempty F and G lists, got {} and {}",
                self.f.len(),
                self.g.len()
            )));
        }
        Ok(())
    }

    /// Next output from lags `y_lags[i - 1] = y_{k-i}` and likewise `u_lags`.
    pub fn step(&self, y_lags: &[f64], u_lags: &[f64]) -> Result<f64> {
        let n = self.order();
        if y_lags.len() < n || u_lags.len() < n {
            return Err(Error::DimensionMismatch {
                what: "plant history",
                expected: n,
                found: y_lags.len().min(u_lags.len()),
            });
        }
        Ok((0..n)
            .map(|i| -self.f[i].eval(y_lags[i]) * y_lags[i] + self.g[i].eval(y_lags[i]) * u_lags[i])
            .sum())
    }

    /// `G_1` over a grid, for comparison with an identified estimate.
    pub fn g1(&self, y: f64) -> f64 {
        self.g[0].eval(y)
    }
}

/// `r_k = amplitude * sin(rate * k)`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CommandSpec {
    pub amplitude: f64,
    pub rate: f64,
}

impl CommandSpec {
    pub fn at(&self, k: i64) -> f64 {
        self.amplitude * libm::sin(self.rate * k as f64)
    }
}

/// Initial information matrix: a scaled identity or an explicit matrix.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(untagged))]
pub enum InitialInformation {
    Scaled(f64),
    Matrix(Vec<Vec<f64>>),
}

impl InitialInformation {
    pub fn to_matrix(&self, dim: usize) -> Result<DMatrix<f64>> {
        match self {
            InitialInformation::Scaled(s) => Ok(DMatrix::identity(dim, dim) * *s),
            InitialInformation::Matrix(rows) => {
                if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
                    return Err(Error::DimensionMismatch {
                        what: "initial information matrix",
                        expected: dim,
                        found: rows.len(),
                    });
                }
                Ok(DMatrix::from_fn(dim, dim, |i, j| rows[i][j]))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RlsConfig {
    pub theta0: Vec<f64>,
    pub info0: InitialInformation,
    pub lambda: f64,
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub name: String,
    pub steps: usize,
    pub y0: f64,
    pub u0: f64,
    /// Standard deviation of the warmup inputs.
    pub sigma_u: f64,
    pub seed: u64,
    pub plant: PlantSpec,
    pub command: CommandSpec,
    pub structure: ModelStructure,
    pub rls: RlsConfig,
    pub horizon: HorizonConfig,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.plant.validate()?;
        self.horizon.validate()?;
        let n = self.structure.order();
        if self.steps <= n {
            return Err(Error::InvalidSimulation(alloc::format!(
                "steps ({}) must exceed the model order ({n})",
                self.steps
            )));
        }
        if !(self.sigma_u >= 0.0 && self.sigma_u.is_finite()) {
            return Err(Error::InvalidSimulation("sigma_u must be nonnegative".into()));
        }
        if !(self.y0.is_finite() && self.u0.is_finite()) {
            return Err(Error::NonFinite("initial condition"));
        }
        if self.rls.theta0.len() != self.structure.regressor_dim() {
            return Err(Error::DimensionMismatch {
                what: "theta0",
                expected: self.structure.regressor_dim(),
                found: self.rls.theta0.len(),
            });
        }
        Ok(())
    }

    pub fn estimator(&self) -> Result<SiftRls> {
        let info = self.rls.info0.to_matrix(self.structure.regressor_dim())?;
        SiftRls::new(self.rls.theta0.clone(), info, self.rls.lambda, self.rls.epsilon)
    }
}

/// Seeded source of warmup inputs.
#[derive(Debug, Clone)]
pub struct WarmupInputs {
    rng: ChaCha8Rng,
    normal: Normal<f64>,
}

impl WarmupInputs {
    pub fn new(seed: u64, sigma: f64) -> Result<Self> {
        let normal = Normal::new(0.0, sigma)
            .map_err(|_| Error::InvalidSimulation("sigma_u must be nonnegative".into()))?;
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            normal,
        })
    }

    pub fn sample(&mut self) -> f64 {
        self.normal.sample(&mut self.rng)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepDiagnostics {
    pub evaluations: usize,
    pub residual: f64,
    pub converged: bool,
    pub diverged: bool,
    pub ridge_applied: bool,
    pub qp_active_set_iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub k: i64,
    pub y: f64,
    pub u: f64,
    pub r: f64,
    /// `r_k - y_k`.
    pub command_error: f64,
    /// `y_k - theta_k phi_k`; zero while the regressor is not yet available.
    pub prediction_error: f64,
    /// `theta_k`, the coefficients used to predict `y_k`.
    pub theta: Vec<f64>,
    /// Present on steps where the controller computed `u_{k+1}`.
    pub control: Option<StepDiagnostics>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub name: String,
    pub seed: u64,
    pub records: Vec<StepRecord>,
}

/// A run stopped early by a controller failure; `log` holds every completed step.
#[derive(Debug, Clone, PartialEq)]
pub struct Aborted {
    pub step: i64,
    pub error: Error,
    pub log: Box<RunLog>,
}

impl core::fmt::Display for Aborted {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "run aborted at step {}: {}", self.step, self.error)
    }
}

impl core::error::Error for Aborted {}

/// Step-by-step closed loop. [`run_closed_loop`] drives it to completion;
/// callers that need per-step timing can drive it themselves.
#[derive(Debug, Clone)]
pub struct Simulation {
    config: SimConfig,
    controller: AdaptiveController,
    warmup: WarmupInputs,
    y: Vec<f64>,
    u: Vec<f64>,
    log: RunLog,
    output_offset: f64,
}

impl Simulation {
    pub fn new(config: SimConfig) -> Result<Self> {
        config.validate()?;
        let controller = AdaptiveController::new(
            config.structure.clone(),
            config.estimator()?,
            config.horizon,
            config.y0,
            config.u0,
        )?;
        let warmup = WarmupInputs::new(config.seed, config.sigma_u)?;
        let log = RunLog {
            name: config.name.clone(),
            seed: config.seed,
            records: Vec::with_capacity(config.steps),
        };
        Ok(Self {
            y: vec![config.y0],
            // u_1 continues u_0.
            u: vec![config.u0, config.u0],
            controller,
            warmup,
            log,
            output_offset: 0.0,
            config,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn controller(&self) -> &AdaptiveController {
        &self.controller
    }

    pub fn log(&self) -> &RunLog {
        &self.log
    }

    pub fn into_log(self) -> RunLog {
        self.log
    }

    /// Index of the next step to run.
    pub fn next_step(&self) -> i64 {
        self.y.len() as i64
    }

    pub fn is_done(&self) -> bool {
        self.log.records.len() >= self.config.steps
    }

    /// The input that will be applied at the next step.
    pub fn pending_input(&self) -> f64 {
        self.u[self.y.len()]
    }

    /// Adds `offset` to the next measured output. Used to audit causality.
    #[doc(hidden)]
    pub fn perturb_next_output(&mut self, offset: f64) {
        self.output_offset = offset;
    }

    fn lagged(values: &[f64], k: usize, n: usize) -> Vec<f64> {
        (1..=n).map(|i| if i <= k { values[k - i] } else { 0.0 }).collect()
    }

    /// Runs one step and returns its record.
    pub fn advance(&mut self) -> Result<&StepRecord> {
        let k = self.y.len();
        let n_plant = self.config.plant.order();
        let y_k = self.config.plant.step(
            &Self::lagged(&self.y, k, n_plant),
            &Self::lagged(&self.u, k, n_plant),
        )? + core::mem::take(&mut self.output_offset);
        let u_k = self.u[k];
        self.y.push(y_k);

        let obs = self.controller.observe(y_k, u_k)?;
        let (next_u, control) = if k >= self.config.structure.order() {
            let command = self.config.command;
            let decision = self.controller.compute_control(|j| command.at(j))?;
            let d = decision.diagnostics;
            (
                decision.control,
                Some(StepDiagnostics {
                    evaluations: d.evaluations,
                    residual: d.residual,
                    converged: d.converged,
                    diverged: d.diverged,
                    ridge_applied: d.ridge_applied,
                    qp_active_set_iterations: d.qp_active_set_iterations,
                }),
            )
        } else {
            (self.warmup.sample(), None)
        };
        self.u.push(next_u);

        let r = self.config.command.at(k as i64);
        self.log.records.push(StepRecord {
            k: k as i64,
            y: y_k,
            u: u_k,
            r,
            command_error: r - y_k,
            prediction_error: obs.update.map_or(0.0, |u| u.prediction_error),
            theta: obs.theta.into_inner(),
            control,
        });
        Ok(self.log.records.last().expect("record just pushed"))
    }
}

pub fn run_closed_loop(config: SimConfig) -> Result<RunLog, Aborted> {
    let name = config.name.clone();
    let seed = config.seed;
    let mut sim = Simulation::new(config).map_err(|error| Aborted {
        step: 0,
        error,
        log: Box::new(RunLog {
            name,
            seed,
            records: Vec::new(),
        }),
    })?;
    while !sim.is_done() {
        let step = sim.next_step();
        if let Err(error) = sim.advance() {
            return Err(Aborted {
                step,
                error,
                log: Box::new(sim.into_log()),
            });
        }
    }
    Ok(sim.into_log())
}

/// Floor applied to `log10 |e|` for exact zeros.
pub const LOG10_FLOOR: f64 = -16.0;

pub fn log10_abs(v: f64) -> f64 {
    if v == 0.0 {
        LOG10_FLOOR
    } else {
        libm::log10(libm::fabs(v)).max(LOG10_FLOOR)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub first: i64,
    pub last: i64,
    pub mean_abs_command_error: f64,
    pub mean_abs_prediction_error: f64,
    pub max_abs_input: f64,
    pub log10_abs_command_error: Vec<f64>,
    pub log10_abs_prediction_error: Vec<f64>,
}

/// Summaries over steps `first ..= last`.
pub fn metrics(log: &RunLog, first: i64, last: i64) -> Result<Metrics> {
    let window: Vec<&StepRecord> = log.records.iter().filter(|r| r.k >= first && r.k <= last).collect();
    if window.is_empty() {
        return Err(Error::InvalidSimulation(alloc::format!(
            "metrics window {first}..={last} selects no steps"
        )));
    }
    let count = window.len() as f64;
    let mean = |f: fn(&StepRecord) -> f64| window.iter().map(|r| libm::fabs(f(r))).sum::<f64>() / count;
    Ok(Metrics {
        first,
        last,
        mean_abs_command_error: mean(|r| r.command_error),
        mean_abs_prediction_error: mean(|r| r.prediction_error),
        max_abs_input: window.iter().map(|r| libm::fabs(r.u)).fold(0.0, f64::max),
        log10_abs_command_error: window.iter().map(|r| log10_abs(r.command_error)).collect(),
        log10_abs_prediction_error: window.iter().map(|r| log10_abs(r.prediction_error)).collect(),
    })
}

/// `G_hat_1(y) = G_1 . g_1(y)` over `grid` for the coefficients `theta`.
pub fn g1_estimate(structure: &ModelStructure, theta: &[f64], grid: &[f64]) -> Result<Vec<(f64, f64)>> {
    let theta = CoefficientVector::new(theta.to_vec());
    grid.iter()
        .map(|&y| Ok((y, structure.g_hat(&theta, 1, &[y])?)))
        .collect()
}

/// `count` evenly spaced points on `[lo, hi]`.
pub fn linspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..count)
            .map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64)
            .collect(),
    }
}

/// Identified structure whose `G_1` basis reproduces a plant coefficient
/// function exactly (constant `f`, no offset).
pub fn matching_basis(g: &CoefficientFn) -> BasisSpec {
    match g {
        CoefficientFn::Linear { .. } => BasisSpec::Constant,
        CoefficientFn::AtanAffine { .. } => BasisSpec::AffineAtan,
        CoefficientFn::SinAffine { .. } => BasisSpec::AffineSin,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn eg1_plant() -> PlantSpec {
        PlantSpec {
            f: vec![CoefficientFn::Linear { c: -1.1 }],
            g: vec![CoefficientFn::AtanAffine { c0: 0.9, c1: 0.5 }],
        }
    }

    #[test]
    fn plant_examples() {
        assert_abs_diff_eq!(eg1_plant().step(&[0.1], &[0.0]).unwrap(), 0.11, epsilon = 1e-16);
        let eg3 = PlantSpec {
            f: vec![CoefficientFn::Linear { c: -1.1 }],
            g: vec![CoefficientFn::AtanAffine { c0: 0.4, c1: 0.5 }],
        };
        assert_eq!(eg3.step(&[0.0], &[1.0]).unwrap(), 0.4);
        let sin = PlantSpec {
            f: vec![CoefficientFn::SinAffine { c0: 0.3, c1: 2.0 }; 2],
            g: vec![CoefficientFn::SinAffine { c0: 0.4, c1: 0.5 }; 2],
        };
        assert_eq!(sin.step(&[0.0, 0.0], &[0.0, 0.0]).unwrap(), 0.0);
        assert!(sin.step(&[0.0], &[0.0]).is_err());
    }

    #[test]
    fn command_signal() {
        let c = CommandSpec {
            amplitude: core::f64::consts::PI,
            rate: 0.05,
        };
        assert_eq!(c.at(0), 0.0);
        assert_abs_diff_eq!(c.at(10), core::f64::consts::PI * 0.5f64.sin(), epsilon = 1e-15);
    }

    #[test]
    fn metrics_examples() {
        let rec = |k: i64, e: f64| StepRecord {
            k,
            y: 0.0,
            u: -2.0 * e,
            r: e,
            command_error: e,
            prediction_error: 0.0,
            theta: vec![],
            control: None,
        };
        let log = RunLog {
            name: "synthetic".into(),
            seed: 0,
            records: vec![rec(1, 1.0), rec(2, -1.0), rec(3, 1.0), rec(4, -1.0)],
        };
        let m = metrics(&log, 1, 4).unwrap();
        assert_eq!(m.mean_abs_command_error, 1.0);
        assert_eq!(m.max_abs_input, 2.0);
        assert_eq!(m.log10_abs_prediction_error, vec![LOG10_FLOOR; 4]);
        assert_eq!(metrics(&log, 2, 2).unwrap().mean_abs_command_error, 1.0);
        assert!(metrics(&log, 5, 9).is_err());
        assert!(metrics(&log, 3, 2).is_err());
    }

    #[test]
    fn log10_floor() {
        assert_eq!(log10_abs(0.0), LOG10_FLOOR);
        assert_eq!(log10_abs(1e-300), LOG10_FLOOR);
        assert_eq!(log10_abs(-100.0), 2.0);
    }

    #[test]
    fn linspace_endpoints() {
        let g = linspace(-6.0, 6.0, 241);
        assert_eq!(g.len(), 241);
        assert_eq!(g[0], -6.0);
        assert_eq!(g[240], 6.0);
        assert_abs_diff_eq!(g[120], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn information_from_matrix() {
        let m = InitialInformation::Matrix(vec![vec![2.0, 0.0], vec![0.0, 3.0]]);
        assert_eq!(m.to_matrix(2).unwrap()[(1, 1)], 3.0);
        assert!(m.to_matrix(3).is_err());
        assert_eq!(InitialInformation::Scaled(0.5).to_matrix(2).unwrap()[(0, 0)], 0.5);
    }
}
