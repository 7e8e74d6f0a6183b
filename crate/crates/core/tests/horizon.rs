mod common;

use common::Rng;
use nalgebra::DVector;
use npcac_core::basis::BasisSpec;
use npcac_core::impc::{assemble, build_sdc, frozen_rollout, rollout, subiterate, HorizonConfig, HorizonState, SdcRow};
use npcac_core::model::{CoefficientVector, ModelStructure};

fn random_state(rng: &mut Rng, n: usize, l: usize) -> HorizonState {
    HorizonState {
        past_outputs: rng.vec(n),
        past_controls: rng.vec(n),
        anchor: rng.normal(),
        commands: rng.vec(l),
    }
}

fn random_basis(rng: &mut Rng) -> BasisSpec {
    match rng.index(0, 5) {
        0 => BasisSpec::Constant,
        1 => BasisSpec::Polynomial { degree: rng.index(1, 2) },
        2 => BasisSpec::Fourier {
            harmonics: rng.index(1, 2),
            half_period: 6.0,
        },
        3 => BasisSpec::Spline {
            interior_nodes: 2,
            lo: -6.0,
            hi: 6.0,
        },
        4 => BasisSpec::AffineAtan,
        _ => BasisSpec::AffineSin,
    }
}

fn random_structure(rng: &mut Rng, n: usize) -> ModelStructure {
    let f = vec![random_basis(rng); n];
    let g = vec![random_basis(rng); n];
    let h = (rng.uniform(0.0, 1.0) < 0.5).then(|| random_basis(rng));
    ModelStructure::new(n, f, g, h).unwrap()
}

/// Coefficients scaled so the free response stays bounded over short horizons.
fn random_theta(rng: &mut Rng, structure: &ModelStructure) -> CoefficientVector {
    CoefficientVector::new(rng.vec(structure.regressor_dim()).into_iter().map(|v| 0.3 * v).collect())
}

/// Polynomial coefficients can make the free response explode past what any
/// double-precision QP resolves; such draws are skipped.
fn tame(structure: &ModelStructure, theta: &CoefficientVector, state: &HorizonState, controls: &[f64]) -> bool {
    rollout(structure, theta, state, controls).is_ok_and(|y| y.iter().all(|v| v.abs() < 1e3))
}

#[test]
fn constraint_rows_reproduce_the_frozen_recursion() {
    let mut rng = Rng::new(21);
    for case in 0..200 {
        let n = rng.index(1, 3);
        let l = rng.index(1, 12);
        let rows: Vec<SdcRow> = (0..l)
            .map(|_| SdcRow {
                f: rng.vec(n).into_iter().map(|v| 0.5 * v).collect(),
                g: rng.vec(n),
                h: rng.normal(),
            })
            .collect();
        let state = random_state(&mut rng, n, l);
        let controls = rng.vec(l);
        let outputs = frozen_rollout(&rows, &state, &controls);
        let config = HorizonConfig::new(l, 1, 1.0, 0.1);
        let qp = assemble(&rows, &state, &config, DVector::zeros(2 * l));
        let z = DVector::from_iterator(2 * l, outputs.iter().chain(&controls).copied());
        let residual = &qp.a_eq * &z - &qp.b_eq;
        let scale = z.amax().max(1.0);
        assert!(residual.amax() <= 1e-12 * scale, "case {case}: {}", residual.amax());

        // And the direct recursion, written out independently.
        for i in 0..l {
            let y_at = |p: isize| if p <= 0 { state.past_outputs[(n as isize - 1 + p) as usize] } else if p == 1 { state.anchor } else { outputs[(p - 2) as usize] };
            let u_at = |p: isize| if p <= 0 { state.past_controls[(n as isize - 1 + p) as usize] } else { controls[(p - 1) as usize] };
            let idx = i as isize + 2;
            let mut y = rows[i].h;
            for j in 0..n {
                y += rows[i].f[j] * y_at(idx - 1 - j as isize) + rows[i].g[j] * u_at(idx - 1 - j as isize);
            }
            assert!((y - outputs[i]).abs() <= 1e-12 * y.abs().max(1.0));
        }
    }
}

#[test]
fn rollout_repeats_one_step_prediction() {
    let mut rng = Rng::new(22);
    for _ in 0..200 {
        let n = rng.index(1, 3);
        let l = rng.index(1, 10);
        let structure = random_structure(&mut rng, n);
        let theta = random_theta(&mut rng, &structure);
        let state = random_state(&mut rng, n, l);
        let controls = rng.vec(l);
        let outputs = rollout(&structure, &theta, &state, &controls).unwrap();

        // Full output/control sequences with index 1 at position n.
        let mut ys: Vec<f64> = state.past_outputs.clone();
        ys.push(state.anchor);
        let mut us: Vec<f64> = state.past_controls.clone();
        us.extend(&controls);
        for &y in &outputs {
            let t = ys.len();
            let y_lags: Vec<f64> = (1..=n).map(|i| ys[t - i]).collect();
            let u_lags: Vec<f64> = (1..=n).map(|i| us[t - i]).collect();
            let phi = structure.regressor_from_lags(&y_lags, &u_lags).unwrap();
            let expected = theta.predict(&phi).unwrap();
            assert!((y - expected).abs() <= 1e-14 * expected.abs().max(1.0), "{y} vs {expected}");
            ys.push(y);
        }
    }
}

#[test]
fn coefficients_frozen_on_a_rollout_reproduce_it() {
    let mut rng = Rng::new(23);
    for _ in 0..200 {
        let n = rng.index(1, 3);
        let l = rng.index(1, 10);
        let structure = random_structure(&mut rng, n);
        let theta = random_theta(&mut rng, &structure);
        let state = random_state(&mut rng, n, l);
        let controls = rng.vec(l);
        let outputs = rollout(&structure, &theta, &state, &controls).unwrap();
        let rows = build_sdc(&structure, &theta, &state, &outputs).unwrap();
        let again = frozen_rollout(&rows, &state, &controls);
        for (a, b) in outputs.iter().zip(&again) {
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }
}

#[test]
fn scalar_horizon_matches_closed_form() {
    let mut rng = Rng::new(24);
    let structure = ModelStructure::linear(1, true).unwrap();
    for _ in 0..100 {
        let (f, g, h) = (rng.normal(), rng.normal(), rng.normal());
        let theta = CoefficientVector::new(vec![f, g, h]);
        let state = HorizonState {
            past_outputs: vec![rng.normal()],
            past_controls: vec![rng.normal()],
            anchor: rng.normal(),
            commands: vec![rng.normal() * 3.0],
        };
        let q = rng.uniform(0.1, 5.0);
        let r = rng.uniform(1e-3, 5.0);
        let config = HorizonConfig::new(1, 1, q, r);
        let out = subiterate(&structure, &theta, &state, &config, &[rng.normal()]).unwrap();
        // y = -f a + g u + h, cost q (r - y)^2 + r u^2.
        let free = -f * state.anchor + h;
        let expected = q * g * (state.commands[0] - free) / (q * g * g + r);
        assert!((out.controls[0] - expected).abs() <= 1e-12 * expected.abs().max(1.0));
        assert!((out.outputs[0] - (free + g * expected)).abs() <= 1e-12 * out.outputs[0].abs().max(1.0));
    }
}

#[test]
fn single_subiteration_is_one_qp_solve() {
    let mut rng = Rng::new(25);
    let mut checked = 0;
    for _ in 0..100 {
        let n = rng.index(1, 2);
        let l = rng.index(1, 10);
        let structure = random_structure(&mut rng, n);
        let theta = random_theta(&mut rng, &structure);
        let state = random_state(&mut rng, n, l);
        let initial = rng.vec(l);
        let config = HorizonConfig::new(l, 1, 1.0, rng.uniform(1e-2, 1.0));
        if !tame(&structure, &theta, &state, &initial) {
            continue;
        }
        let out = subiterate(&structure, &theta, &state, &config, &initial).unwrap();
        assert_eq!(out.diagnostics.evaluations, 1);

        let outputs = rollout(&structure, &theta, &state, &initial).unwrap();
        let rows = build_sdc(&structure, &theta, &state, &outputs).unwrap();
        let sol = assemble(&rows, &state, &config, DVector::zeros(2 * l)).solve().unwrap();
        assert_eq!(out.controls.as_slice(), sol.controls());
        checked += 1;
    }
    assert!(checked >= 50, "only {checked} draws checked");
}

#[test]
fn accepted_residuals_never_increase() {
    let mut rng = Rng::new(26);
    let mut checked = 0;
    for _ in 0..200 {
        let n = rng.index(1, 2);
        let l = rng.index(2, 20);
        let structure = random_structure(&mut rng, n);
        let theta = random_theta(&mut rng, &structure);
        let state = random_state(&mut rng, n, l);
        let nu = rng.index(2, 15);
        let config = HorizonConfig::new(l, nu, 1.0, rng.uniform(1e-3, 1.0));
        if !tame(&structure, &theta, &state, &vec![0.0; l]) {
            continue;
        }
        let out = subiterate(&structure, &theta, &state, &config, &vec![0.0; l]).unwrap();
        let d = &out.diagnostics;
        assert!(d.evaluations <= nu);
        assert!(d.accepted_residuals.windows(2).all(|w| w[1] <= w[0]), "{:?}", d.accepted_residuals);
        checked += 1;
    }
    assert!(checked >= 100, "only {checked} draws checked");
}

#[test]
fn linear_models_converge_after_one_correction() {
    let mut rng = Rng::new(27);
    for _ in 0..50 {
        let l = rng.index(1, 15);
        let structure = ModelStructure::linear(1, false).unwrap();
        let theta = CoefficientVector::new(vec![rng.normal(), rng.normal()]);
        let state = random_state(&mut rng, 1, l);
        let config = HorizonConfig::new(l, 10, 1.0, 0.5);
        let out = subiterate(&structure, &theta, &state, &config, &rng.vec(l)).unwrap();
        assert!(out.diagnostics.converged);
        assert_eq!(out.diagnostics.evaluations, 2);
    }
}
