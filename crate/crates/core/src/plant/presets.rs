//! Built-in benchmark experiments.
//!
//! Shared settings: `y0 = 0.1`, `u0 = 0`, `epsilon = 1e-4`, `sigma_u = 0.01`,
//! `Q = 1`, `r_k = pi sin(0.05 k)`, unconstrained inputs and 500 steps.
//! Every plant is first order with `F_1 = -1.1` and `G_1 = 0.9 + 0.5 atan`
//! (`eg1`), `0.4 + 0.5 atan` (`eg3`, `eg4-*`) or `0.4 + 0.5 sin` (`eg5-*`,
//! `eg6-*`). The linear presets carry no offset term, so their initial
//! estimate is `[1, 0.01]`.

use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use super::{CoefficientFn, CommandSpec, InitialInformation, PlantSpec, RlsConfig, SimConfig};
use crate::basis::BasisSpec;
use crate::impc::HorizonConfig;
use crate::model::ModelStructure;
use crate::{Error, Result};

pub const PRESET_NAMES: &[&str] = &[
    "eg1", "eg3", "eg4-BL", "eg4-PB2", "eg4-FB3", "eg4-CB4", "eg5-BL", "eg5-PB2", "eg5-FB3",
    "eg5-CB4", "eg6-BL", "eg6-PB2", "eg6-FB5", "eg6-CB4",
];

const DEFAULT_STEPS: usize = 500;
const DEFAULT_SEED: u64 = 0;

#[derive(Clone, Copy)]
enum Plant {
    Atan09,
    Atan04,
    Sin04,
}

impl Plant {
    fn spec(self) -> PlantSpec {
        let g = match self {
            Plant::Atan09 => CoefficientFn::AtanAffine { c0: 0.9, c1: 0.5 },
            Plant::Atan04 => CoefficientFn::AtanAffine { c0: 0.4, c1: 0.5 },
            Plant::Sin04 => CoefficientFn::SinAffine { c0: 0.4, c1: 0.5 },
        };
        PlantSpec {
            f: vec![CoefficientFn::Linear { c: -1.1 }],
            g: vec![g],
        }
    }
}

struct Setup {
    plant: Plant,
    g: BasisSpec,
    theta0: Vec<f64>,
    lambda: f64,
    info0: f64,
    horizon: usize,
    subiterations: usize,
    control_weight: f64,
}

const SPLINE: BasisSpec = BasisSpec::Spline {
    interior_nodes: 2,
    lo: -6.0,
    hi: 6.0,
};

fn fourier(harmonics: usize) -> BasisSpec {
    BasisSpec::Fourier {
        harmonics,
        half_period: 6.0,
    }
}

/// `[1, 0.01, ...]` with `len` entries.
fn theta0(len: usize) -> Vec<f64> {
    let mut t = vec![0.01; len];
    t[0] = 1.0;
    t
}

fn lpcac(plant: Plant, control_weight: f64) -> Setup {
    Setup {
        plant,
        g: BasisSpec::Constant,
        theta0: theta0(2),
        lambda: 0.1,
        info0: 1e-3,
        horizon: 10,
        subiterations: 1,
        control_weight,
    }
}

fn npcac(plant: Plant, g: BasisSpec, lambda: f64, info0: f64, control_weight: f64) -> Setup {
    Setup {
        plant,
        g,
        theta0: theta0(1 + g.output_dim()),
        lambda,
        info0,
        horizon: 20,
        subiterations: 10,
        control_weight,
    }
}

fn setup(name: &str) -> Option<Setup> {
    use Plant::*;
    let poly = BasisSpec::Polynomial { degree: 1 };
    Some(match name {
        "eg1" => lpcac(Atan09, 1e-2),
        "eg3" => lpcac(Atan04, 1.0),
        "eg4-BL" => npcac(Atan04, BasisSpec::AffineAtan, 0.1, 1e-3, 0.0),
        "eg4-PB2" => npcac(Atan04, poly, 0.1, 1e-2, 2e-4),
        "eg4-FB3" => npcac(Atan04, fourier(1), 0.3, 1e-1, 4e-3),
        "eg4-CB4" => npcac(Atan04, SPLINE, 0.1, 1e-3, 7e-4),
        "eg5-BL" | "eg6-BL" => npcac(Sin04, BasisSpec::AffineSin, 0.1, 1e-3, 0.0),
        "eg5-PB2" | "eg6-PB2" => npcac(Sin04, poly, 0.1, 1e-2, 1.0),
        "eg5-FB3" => npcac(Sin04, fourier(1), 0.3, 1.0, 4e-1),
        "eg5-CB4" | "eg6-CB4" => npcac(Sin04, SPLINE, 0.7, 1e-1, 8e-4),
        "eg6-FB5" => npcac(Sin04, fourier(2), 0.3, 1.0, 4e-1),
        _ => return None,
    })
}

/// Configuration of a named benchmark experiment.
pub fn preset(name: &str) -> Result<SimConfig> {
    let s = setup(name).ok_or_else(|| Error::UnknownPreset(name.to_string()))?;
    let structure = ModelStructure::new(
        1,
        vec![BasisSpec::Constant],
        vec![s.g],
        None,
    )?;
    Ok(SimConfig {
        name: name.to_string(),
        steps: DEFAULT_STEPS,
        y0: 0.1,
        u0: 0.0,
        sigma_u: 0.01,
        seed: DEFAULT_SEED,
        plant: s.plant.spec(),
        command: CommandSpec {
            amplitude: PI,
            rate: 0.05,
        },
        structure,
        rls: RlsConfig {
            theta0: s.theta0,
            info0: InitialInformation::Scaled(s.info0),
            lambda: s.lambda,
            epsilon: 1e-4,
        },
        horizon: HorizonConfig::new(s.horizon, s.subiterations, 1.0, s.control_weight),
    })
}
