//! Front end for the closed-loop experiments: configuration documents, run
//! artifacts, multi-seed comparisons and the built-in self test.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use npcac_core::plant::{g1_estimate, linspace, metrics, preset, run_closed_loop, RunLog};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub mod config;
pub mod output;
pub mod selftest;

use config::{ConfigDocument, SCHEMA_VERSION};
use output::{grid_csv, steps_csv, theta_csv, write_atomic, Artifacts};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("run failed: {0}")]
    Runtime(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) | CliError::Io { .. } => 3,
        }
    }
}

/// Document for a built-in experiment.
pub fn preset_document(name: &str) -> Result<ConfigDocument, CliError> {
    let cfg = preset(name).map_err(|e| CliError::Config(e.to_string()))?;
    Ok(ConfigDocument::from_sim(&cfg))
}

pub fn config_digest(doc: &ConfigDocument) -> String {
    Sha256::digest(doc.to_toml().as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct WindowSummary {
    pub first: i64,
    pub last: i64,
    pub mean_abs_e_c: f64,
    pub mean_abs_e_p: f64,
    pub max_abs_u: f64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct DiagnosticTotals {
    pub qp_solves: usize,
    pub ridge_steps: usize,
    pub converged_steps: usize,
    pub diverged_steps: usize,
    pub max_active_set_iterations: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct GridInfo {
    pub step: i64,
    pub points: usize,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub schema: &'static str,
    pub status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub name: String,
    pub seed: u64,
    pub steps_completed: usize,
    pub versions: Versions,
    pub config_sha256: String,
    pub config: ConfigDocument,
    pub windows: Vec<WindowSummary>,
    pub diagnostics: DiagnosticTotals,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub g_grid: Option<GridInfo>,
    pub wall_clock_seconds: f64,
    pub notes: Notes,
}

#[derive(Debug, Clone, Serialize)]
pub struct Versions {
    pub npcac_core: &'static str,
    pub npcac_cli: &'static str,
}

#[derive(Debug, Clone, Serialize)]
pub struct Notes {
    pub sigma_u: &'static str,
    pub u_a: &'static str,
    pub log10_floor: &'static str,
}

const NOTES: Notes = Notes {
    sigma_u: "sim.sigma_u is the standard deviation of the Gaussian warmup inputs",
    u_a: "sim.u_a is recorded for reference and not used by the loop",
    log10_floor: "log10 columns are floored at -16; exact zeros map to -16",
};

pub struct RunOutcome {
    pub log: RunLog,
    pub summary: Summary,
    pub artifacts: Artifacts,
}

impl RunOutcome {
    pub fn aborted(&self) -> bool {
        self.summary.status != "completed"
    }
}

fn totals(log: &RunLog) -> DiagnosticTotals {
    let mut t = DiagnosticTotals::default();
    for d in log.records.iter().filter_map(|r| r.control) {
        t.qp_solves += d.evaluations;
        t.ridge_steps += usize::from(d.ridge_applied);
        t.converged_steps += usize::from(d.converged);
        t.diverged_steps += usize::from(d.diverged);
        t.max_active_set_iterations = t.max_active_set_iterations.max(d.qp_active_set_iterations);
    }
    t
}

fn window_summaries(log: &RunLog, windows: &[[i64; 2]]) -> Vec<WindowSummary> {
    windows
        .iter()
        .filter_map(|&[first, last]| metrics(log, first, last).ok())
        .map(|m| WindowSummary {
            first: m.first,
            last: m.last,
            mean_abs_e_c: m.mean_abs_command_error,
            mean_abs_e_p: m.mean_abs_prediction_error,
            max_abs_u: m.max_abs_input,
        })
        .collect()
}

/// Runs one experiment and writes its artifacts into `out_dir`. A run that
/// aborts still writes everything recorded up to the failing step and
/// reports `status = "aborted"` in the summary.
pub fn run_document(doc: &ConfigDocument, out_dir: &Path) -> Result<RunOutcome, CliError> {
    let cfg = doc.to_sim()?;
    let structure = cfg.structure.clone();
    let start = Instant::now();
    let (log, error) = match run_closed_loop(cfg) {
        Ok(log) => (log, None),
        Err(a) => (*a.log, Some(format!("step {}: {}", a.step, a.error))),
    };
    let wall = start.elapsed().as_secs_f64();

    let stem = doc.stem();
    let mut artifacts = Artifacts::default();
    let steps_path = out_dir.join(format!("{stem}.csv"));
    write_atomic(&steps_path, steps_csv(&log).as_bytes())?;
    artifacts.steps = Some(steps_path);

    let grid_spec = &doc.output.g_grid;
    let mut grid = None;
    if grid_spec.enabled {
        let step = grid_spec.step.min(log.records.last().map_or(0, |r| r.k));
        if let Some(record) = log.records.iter().find(|r| r.k == step) {
            let ys = linspace(grid_spec.lo, grid_spec.hi, grid_spec.points);
            let points = g1_estimate(&structure, &record.theta, &ys).map_err(|e| CliError::Runtime(e.to_string()))?;
            let path = out_dir.join(format!("{stem}_g1.csv"));
            write_atomic(&path, grid_csv(&points).as_bytes())?;
            artifacts.grid = Some(path);
            grid = Some(GridInfo {
                step,
                points: grid_spec.points,
                lo: grid_spec.lo,
                hi: grid_spec.hi,
            });
        }
    }
    if doc.output.theta_every > 0 {
        let path = out_dir.join(format!("{stem}_theta.csv"));
        write_atomic(&path, theta_csv(&log, doc.output.theta_every).as_bytes())?;
        artifacts.theta = Some(path);
    }

    let summary = Summary {
        schema: SCHEMA_VERSION,
        status: if error.is_some() { "aborted" } else { "completed" },
        error,
        name: doc.sim.name.clone(),
        seed: doc.sim.seed,
        steps_completed: log.records.len(),
        versions: Versions {
            npcac_core: npcac_core::VERSION,
            npcac_cli: env!("CARGO_PKG_VERSION"),
        },
        config_sha256: config_digest(doc),
        config: doc.clone(),
        windows: window_summaries(&log, &doc.windows()),
        diagnostics: totals(&log),
        g_grid: grid,
        wall_clock_seconds: wall,
        notes: NOTES,
    };
    let summary_path = out_dir.join(format!("{stem}.summary.json"));
    let json = serde_json::to_string_pretty(&summary).expect("summaries always serialize");
    write_atomic(&summary_path, json.as_bytes())?;
    artifacts.summary = Some(summary_path);
    Ok(RunOutcome { log, summary, artifacts })
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareRow {
    pub preset: String,
    pub runs: usize,
    pub aborted: usize,
    /// Median over seeds; an aborted run counts as infinite error.
    pub median_abs_e_c: f64,
    pub median_abs_e_p: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Ratio {
    pub numerator: String,
    pub denominator: String,
    pub e_c_ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Comparison {
    pub window: [i64; 2],
    pub seeds: Vec<u64>,
    pub rows: Vec<CompareRow>,
    pub ratios: Vec<Ratio>,
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => values[n / 2],
        _ => 0.5 * (values[n / 2 - 1] + values[n / 2]),
    }
}

/// Windowed `(mean |e_c|, mean |e_p|)` for one preset and seed.
pub fn windowed_errors(name: &str, seed: u64, steps: Option<usize>, window: [i64; 2]) -> Result<Option<(f64, f64)>, CliError> {
    let mut cfg = preset(name).map_err(|e| CliError::Config(e.to_string()))?;
    cfg.seed = seed;
    if let Some(n) = steps {
        cfg.steps = n;
    }
    match run_closed_loop(cfg) {
        Ok(log) => {
            let m = metrics(&log, window[0], window[1]).map_err(|e| CliError::Config(e.to_string()))?;
            Ok(Some((m.mean_abs_command_error, m.mean_abs_prediction_error)))
        }
        Err(_) => Ok(None),
    }
}

/// Runs every preset under every seed in parallel and aggregates by median.
/// Ratios compare each later preset against each earlier one.
pub fn compare(presets: &[String], seeds: &[u64], steps: Option<usize>) -> Result<Comparison, CliError> {
    if presets.is_empty() || seeds.is_empty() {
        return Err(CliError::Config("compare needs at least one preset and one seed".into()));
    }
    for name in presets {
        preset(name).map_err(|e| CliError::Config(e.to_string()))?;
    }
    let n = steps.unwrap_or(500) as i64;
    let window = [(n - 199).max(1), n];
    let jobs: Vec<(usize, u64)> = (0..presets.len()).flat_map(|p| seeds.iter().map(move |&s| (p, s))).collect();
    let results = Mutex::new(vec![None; jobs.len()]);
    let next = AtomicUsize::new(0);
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(jobs.len());
    let failure = Mutex::new(None);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(p, seed)) = jobs.get(i) else { break };
                match windowed_errors(&presets[p], seed, steps, window) {
                    Ok(r) => results.lock().unwrap()[i] = Some(r),
                    Err(e) => *failure.lock().unwrap() = Some(e),
                }
            });
        }
    });
    if let Some(e) = failure.into_inner().unwrap() {
        return Err(e);
    }
    let results = results.into_inner().unwrap();
    let rows: Vec<CompareRow> = presets
        .iter()
        .enumerate()
        .map(|(p, name)| {
            let mine: Vec<Option<(f64, f64)>> = jobs
                .iter()
                .zip(&results)
                .filter(|((q, _), _)| *q == p)
                .map(|(_, r)| r.expect("every job finished"))
                .collect();
            let mut ec: Vec<f64> = mine.iter().map(|r| r.map_or(f64::INFINITY, |v| v.0)).collect();
            let mut ep: Vec<f64> = mine.iter().map(|r| r.map_or(f64::INFINITY, |v| v.1)).collect();
            CompareRow {
                preset: name.clone(),
                runs: mine.len(),
                aborted: mine.iter().filter(|r| r.is_none()).count(),
                median_abs_e_c: median(&mut ec),
                median_abs_e_p: median(&mut ep),
            }
        })
        .collect();
    let mut ratios = Vec::new();
    for (i, a) in rows.iter().enumerate() {
        for b in &rows[i + 1..] {
            ratios.push(Ratio {
                numerator: b.preset.clone(),
                denominator: a.preset.clone(),
                e_c_ratio: b.median_abs_e_c / a.median_abs_e_c,
            });
        }
    }
    Ok(Comparison {
        window,
        seeds: seeds.to_vec(),
        rows,
        ratios,
    })
}

impl Comparison {
    pub fn render(&self) -> String {
        let mut out = format!(
            "window {}..={}, {} seed(s)\n{:<10} {:>5} {:>7} {:>16} {:>16}\n",
            self.window[0],
            self.window[1],
            self.seeds.len(),
            "preset",
            "runs",
            "aborted",
            "median|e_c|",
            "median|e_p|"
        );
        for r in &self.rows {
            out += &format!(
                "{:<10} {:>5} {:>7} {:>16.6e} {:>16.6e}\n",
                r.preset, r.runs, r.aborted, r.median_abs_e_c, r.median_abs_e_p
            );
        }
        for r in &self.ratios {
            out += &format!("ratio {}/{} = {:.6e}\n", r.numerator, r.denominator, r.e_c_ratio);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 3.0, 2.0]), 2.5);
        assert_eq!(median(&mut [1.0, f64::INFINITY, 2.0]), 2.0);
        assert!(median(&mut []).is_nan());
    }

    #[test]
    fn digest_tracks_content() {
        let a = preset_document("eg1").unwrap();
        let mut b = a.clone();
        assert_eq!(config_digest(&a), config_digest(&b));
        b.sim.seed += 1;
        assert_ne!(config_digest(&a), config_digest(&b));
        assert_eq!(config_digest(&a).len(), 64);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Config(String::new()).exit_code(), 2);
        assert_eq!(CliError::Runtime(String::new()).exit_code(), 3);
    }
}
