//! Experiment configuration documents.
//!
//! A document is TOML (or the equivalent JSON) with the sections `plant`,
//! `model`, `rls`, `mpc`, `sim`, `command` and `output`. Every preset has an
//! exact document form, so a run can always be replayed from the echo stored
//! in its summary.

use std::path::Path;

use npcac_core::basis::BasisSpec;
use npcac_core::impc::HorizonConfig;
use npcac_core::model::ModelStructure;
use npcac_core::plant::{CommandSpec, InitialInformation, PlantSpec, RlsConfig, SimConfig};
use npcac_core::qp::ControlBounds;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const SCHEMA_VERSION: &str = "npcac-run/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigDocument {
    pub plant: PlantSpec,
    pub model: ModelSection,
    pub rls: RlsSection,
    pub mpc: MpcSection,
    pub sim: SimSection,
    pub command: CommandSpec,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub order: usize,
    /// One basis per lag.
    pub f: Vec<BasisSpec>,
    pub g: Vec<BasisSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<BasisSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RlsSection {
    pub theta0: Vec<f64>,
    /// Scalar multiple of the identity or a full matrix.
    pub info0: InitialInformation,
    pub lambda: f64,
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MpcSection {
    pub horizon: usize,
    pub subiterations: usize,
    pub q: f64,
    pub r: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<ControlBounds>,
    #[serde(default = "default_broyden_tol")]
    pub broyden_tol: f64,
}

fn default_broyden_tol() -> f64 {
    HorizonConfig::DEFAULT_BROYDEN_TOL
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub name: String,
    pub steps: usize,
    pub y0: f64,
    pub u0: f64,
    /// Standard deviation of the warmup inputs.
    pub sigma_u: f64,
    pub seed: u64,
    /// Recorded for reference; no part of the loop reads it.
    #[serde(default = "default_ua")]
    pub u_a: f64,
}

fn default_ua() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    /// File name stem; defaults to `<name>_seed<seed>`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stem: Option<String>,
    /// Inclusive step windows for the summary metrics. Empty means the first
    /// 100 and the last 200 steps.
    #[serde(default)]
    pub windows: Vec<[i64; 2]>,
    /// Write `theta` every this many steps to a separate table; 0 disables.
    #[serde(default)]
    pub theta_every: usize,
    #[serde(default)]
    pub g_grid: GridSpec,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            stem: None,
            windows: Vec::new(),
            theta_every: 0,
            g_grid: GridSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub enabled: bool,
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
    pub step: i64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            enabled: true,
            lo: -6.0,
            hi: 6.0,
            points: 241,
            step: 450,
        }
    }
}

impl ConfigDocument {
    pub fn from_sim(cfg: &SimConfig) -> Self {
        let s = &cfg.structure;
        let h = &cfg.horizon;
        Self {
            plant: cfg.plant.clone(),
            model: ModelSection {
                order: s.order(),
                f: (1..=s.order()).map(|i| *s.f_basis(i)).collect(),
                g: (1..=s.order()).map(|i| *s.g_basis(i)).collect(),
                h: s.h_basis().copied(),
            },
            rls: RlsSection {
                theta0: cfg.rls.theta0.clone(),
                info0: cfg.rls.info0.clone(),
                lambda: cfg.rls.lambda,
                epsilon: cfg.rls.epsilon,
            },
            mpc: MpcSection {
                horizon: h.horizon,
                subiterations: h.subiterations,
                q: h.output_weight,
                r: h.control_weight,
                bounds: h.bounds,
                broyden_tol: h.broyden_tol,
            },
            sim: SimSection {
                name: cfg.name.clone(),
                steps: cfg.steps,
                y0: cfg.y0,
                u0: cfg.u0,
                sigma_u: cfg.sigma_u,
                seed: cfg.seed,
                u_a: default_ua(),
            },
            command: cfg.command,
            output: OutputSection::default(),
        }
    }

    pub fn to_sim(&self) -> Result<SimConfig, CliError> {
        let m = &self.model;
        let structure = ModelStructure::new(m.order, m.f.clone(), m.g.clone(), m.h)
            .map_err(|e| CliError::Config(format!("model: {e}")))?;
        let dim = structure.regressor_dim();
        if self.rls.theta0.len() != dim {
            return Err(CliError::Config(format!(
                "rls.theta0 has {} entries but the model implies a regressor of dimension {dim}",
                self.rls.theta0.len()
            )));
        }
        if self.plant.order() != m.order {
            return Err(CliError::Config(format!(
                "plant has order {} but model.order is {}",
                self.plant.order(),
                m.order
            )));
        }
        let mut horizon = HorizonConfig::new(self.mpc.horizon, self.mpc.subiterations, self.mpc.q, self.mpc.r);
        horizon.bounds = self.mpc.bounds;
        horizon.broyden_tol = self.mpc.broyden_tol;
        let cfg = SimConfig {
            name: self.sim.name.clone(),
            steps: self.sim.steps,
            y0: self.sim.y0,
            u0: self.sim.u0,
            sigma_u: self.sim.sigma_u,
            seed: self.sim.seed,
            plant: self.plant.clone(),
            command: self.command,
            structure,
            rls: RlsConfig {
                theta0: self.rls.theta0.clone(),
                info0: self.rls.info0.clone(),
                lambda: self.rls.lambda,
                epsilon: self.rls.epsilon,
            },
            horizon,
        };
        cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
        cfg.estimator().map_err(|e| CliError::Config(format!("rls: {e}")))?;
        self.validate_output()?;
        Ok(cfg)
    }

    fn validate_output(&self) -> Result<(), CliError> {
        for [a, b] in &self.output.windows {
            if a > b {
                return Err(CliError::Config(format!("output window [{a}, {b}] is empty")));
            }
        }
        let g = &self.output.g_grid;
        if g.enabled && !(g.lo < g.hi && g.points >= 2) {
            return Err(CliError::Config("output.g_grid needs lo < hi and at least 2 points".into()));
        }
        Ok(())
    }

    /// Metric windows, defaulting to the first 100 and the last 200 steps.
    pub fn windows(&self) -> Vec<[i64; 2]> {
        if !self.output.windows.is_empty() {
            return self.output.windows.clone();
        }
        let n = self.sim.steps as i64;
        vec![[1, n.min(100)], [(n - 199).max(1), n]]
    }

    pub fn stem(&self) -> String {
        self.output
            .stem
            .clone()
            .unwrap_or_else(|| format!("{}_seed{}", self.sim.name, self.sim.seed))
    }

    /// Parses TOML, or JSON when the path ends in `.json`. A JSON run summary
    /// is accepted too; its `config` echo is used.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        if is_json {
            let value: serde_json::Value =
                serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            let value = match value.get("config") {
                Some(inner) if value.get("schema").is_some() => inner.clone(),
                _ => value,
            };
            serde_json::from_value(value).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
        } else {
            Self::from_toml(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration documents always serialize")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use npcac_core::plant::{preset, PRESET_NAMES};

    #[test]
    fn presets_round_trip_through_toml() {
        for name in PRESET_NAMES {
            let cfg = preset(name).unwrap();
            let doc = ConfigDocument::from_sim(&cfg);
            let back = ConfigDocument::from_toml(&doc.to_toml()).unwrap();
            assert_eq!(back, doc, "{name}");
            assert_eq!(back.to_sim().unwrap(), cfg, "{name}");
        }
    }

    #[test]
    fn theta_length_error_names_both_sizes() {
        let mut doc = ConfigDocument::from_sim(&preset("eg4-CB4").unwrap());
        doc.rls.theta0.push(0.0);
        let msg = doc.to_sim().unwrap_err().to_string();
        assert!(msg.contains("has 6 entries") && msg.contains("dimension 5"), "{msg}");
    }

    #[test]
    fn default_windows_follow_run_length() {
        let mut doc = ConfigDocument::from_sim(&preset("eg1").unwrap());
        assert_eq!(doc.windows(), vec![[1, 100], [301, 500]]);
        doc.sim.steps = 50;
        assert_eq!(doc.windows(), vec![[1, 50], [1, 50]]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let doc = ConfigDocument::from_sim(&preset("eg1").unwrap());
        let text = doc.to_toml().replace("[sim]\n", "[sim]\nstepz = 3\n");
        assert!(ConfigDocument::from_toml(&text).is_err());
    }
}
