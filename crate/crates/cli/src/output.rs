//! Run artifacts: the per-step table, the JSON summary and the `G_1` grid.
//!
//! Numbers are written with `{:.16e}` (17 significant digits, `.` as the
//! decimal separator regardless of locale), which round-trips every `f64`.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use npcac_core::plant::{log10_abs, RunLog};

use crate::CliError;

pub const CSV_HEADER: &str = "k,y,u,r,e_c,e_p,log10_abs_ec,log10_abs_ep,subiters,qp_ridge";

pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn steps_csv(log: &RunLog) -> String {
    let mut out = String::with_capacity(64 + 200 * log.records.len());
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in &log.records {
        let (subiters, ridge) = r.control.map_or((0, false), |c| (c.evaluations, c.ridge_applied));
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.k,
            num(r.y),
            num(r.u),
            num(r.r),
            num(r.command_error),
            num(r.prediction_error),
            num(log10_abs(r.command_error)),
            num(log10_abs(r.prediction_error)),
            subiters,
            u8::from(ridge)
        )
        .unwrap();
    }
    out
}

/// `k,theta_0,...` for every step divisible by `every`.
pub fn theta_csv(log: &RunLog, every: usize) -> String {
    let dim = log.records.first().map_or(0, |r| r.theta.len());
    let mut out = String::from("k");
    for i in 0..dim {
        write!(out, ",theta_{i}").unwrap();
    }
    out.push('\n');
    for r in log.records.iter().filter(|r| r.k % every as i64 == 0) {
        out.push_str(&r.k.to_string());
        for t in &r.theta {
            out.push(',');
            out.push_str(&num(*t));
        }
        out.push('\n');
    }
    out
}

pub fn grid_csv(points: &[(f64, f64)]) -> String {
    let mut out = String::from("y,g1_hat\n");
    for (y, g) in points {
        writeln!(out, "{},{}", num(*y), num(*g)).unwrap();
    }
    out
}

/// Writes through a temporary file in the target directory and renames it
/// into place, so readers never observe a partial file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::io(dir, e))?;
    tmp.write_all(contents).map_err(|e| CliError::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| CliError::io(path, e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct Artifacts {
    pub steps: Option<PathBuf>,
    pub summary: Option<PathBuf>,
    pub grid: Option<PathBuf>,
    pub theta: Option<PathBuf>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use npcac_core::plant::{StepDiagnostics, StepRecord};

    fn record(k: i64, e: f64) -> StepRecord {
        StepRecord {
            k,
            y: 0.1,
            u: -2.5e-300,
            r: 0.0,
            command_error: e,
            prediction_error: 0.0,
            theta: vec![1.0, 0.01],
            control: Some(StepDiagnostics {
                evaluations: 3,
                residual: 0.0,
                converged: true,
                diverged: false,
                ridge_applied: true,
                qp_active_set_iterations: 0,
            }),
        }
    }

    #[test]
    fn seventeen_significant_digits() {
        assert_eq!(num(0.1), "1.0000000000000001e-1");
        assert_eq!(num(0.1).parse::<f64>().unwrap(), 0.1);
        assert_eq!(num(-3.0), "-3.0000000000000000e0");
    }

    #[test]
    fn exact_zero_error_hits_floor() {
        let log = RunLog {
            name: "t".into(),
            seed: 0,
            records: vec![record(1, 0.0), record(2, 1e-3)],
        };
        let csv = steps_csv(&log);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        let first: Vec<&str> = lines[1].split(',').collect();
        assert_eq!(first.len(), 10);
        assert_eq!(first[6], "-1.6000000000000000e1");
        assert_eq!(first[7], "-1.6000000000000000e1");
        assert_eq!(&first[8..], ["3", "1"]);
        assert!(!csv.contains("inf"));
    }

    #[test]
    fn theta_table_respects_cadence() {
        let log = RunLog {
            name: "t".into(),
            seed: 0,
            records: (1..=10).map(|k| record(k, 0.5)).collect(),
        };
        let csv = theta_csv(&log, 5);
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.starts_with("k,theta_0,theta_1\n5,"));
    }

    #[test]
    fn atomic_write_replaces_contents() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/out.csv");
        write_atomic(&path, b"one").unwrap();
        write_atomic(&path, b"two").unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(path.parent().unwrap()).unwrap().count(), 1);
    }
}
