//! Built-in invariant and oracle suite.
//!
//! Every property checks the library against an independent reference: a
//! dense Gaussian-elimination KKT solve, a batch least-squares fit, a direct
//! transcription of the output recursion, finite differences. The routines
//! under test are reached through [`Subjects`] so a fixture can substitute a
//! faulty implementation and confirm that exactly the affected property fails.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use npcac_core::basis::BasisSpec;
use npcac_core::ident::{self, SiftRls};
use npcac_core::impc::{assemble, frozen_rollout, HorizonConfig, HorizonState, SdcRow};
use npcac_core::plant::{preset, run_closed_loop};
use npcac_core::qp::{QpProblem, QpSolution};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::output::steps_csv;

type Forget = fn(&DMatrix<f64>, &DMatrix<f64>, &DVector<f64>, f64) -> (DMatrix<f64>, DMatrix<f64>);
type BasisEval = fn(&BasisSpec, f64) -> npcac_core::Result<Vec<f64>>;
type QpSolve = fn(&QpProblem) -> npcac_core::Result<QpSolution>;

/// Implementations exercised by the suite.
#[derive(Clone, Copy)]
pub struct Subjects {
    pub forget: Forget,
    pub basis_eval: BasisEval,
    pub qp_solve: QpSolve,
}

impl Default for Subjects {
    fn default() -> Self {
        Self {
            forget: ident::forget,
            basis_eval: BasisSpec::eval,
            qp_solve: QpProblem::solve,
        }
    }
}

pub struct Property {
    pub name: &'static str,
    pub check: fn(&Subjects) -> Result<(), String>,
}

pub const SUITE: &[Property] = &[
    Property { name: "rls-inverse-invariant", check: rls_inverse_invariant },
    Property { name: "directional-forgetting", check: directional_forgetting },
    Property { name: "rls-batch-equivalence", check: rls_batch_equivalence },
    Property { name: "qp-kkt-oracle", check: qp_kkt_oracle },
    Property { name: "constraint-recursion", check: constraint_recursion },
    Property { name: "spline-partition-of-unity", check: spline_partition_of_unity },
    Property { name: "spline-node-interpolation", check: spline_node_interpolation },
    Property { name: "spline-c1-continuity", check: spline_c1_continuity },
    Property { name: "spline-support", check: spline_support },
    Property { name: "fourier-bounded", check: fourier_bounded },
    Property { name: "polynomial-origin", check: polynomial_origin },
    Property { name: "closed-loop-determinism", check: closed_loop_determinism },
];

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub name: &'static str,
    pub result: Result<(), String>,
    pub elapsed: Duration,
}

pub fn run(subjects: &Subjects) -> Vec<Outcome> {
    SUITE.iter().map(|p| run_one(p, subjects)).collect()
}

pub fn run_one(property: &Property, subjects: &Subjects) -> Outcome {
    let start = Instant::now();
    let result = (property.check)(subjects);
    Outcome {
        name: property.name,
        result,
        elapsed: start.elapsed(),
    }
}

pub fn find(name: &str) -> Option<&'static Property> {
    SUITE.iter().find(|p| p.name == name)
}

struct Rng(ChaCha8Rng);

impl Rng {
    fn new(seed: u64) -> Self {
        Self(ChaCha8Rng::seed_from_u64(seed))
    }

    fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.0)
    }

    fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        Uniform::new(lo, hi).unwrap().sample(&mut self.0)
    }

    fn index(&mut self, lo: usize, hi: usize) -> usize {
        Uniform::new_inclusive(lo, hi).unwrap().sample(&mut self.0)
    }

    fn vec(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.normal()).collect()
    }

    /// `G G' + shift I` with a Gaussian `G`.
    fn spd(&mut self, n: usize, shift: f64) -> DMatrix<f64> {
        let g = DMatrix::from_fn(n, n, |_, _| self.normal());
        &g * g.transpose() + DMatrix::identity(n, n) * shift
    }
}

/// Gaussian elimination with partial pivoting on a dense row-major system.
pub fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, p);
        b.swap(c, p);
        for r in c + 1..n {
            let m = a[r][c] / a[c][c];
            if m != 0.0 {
                for k in c..n {
                    a[r][k] -= m * a[c][k];
                }
                b[r] -= m * b[c];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let tail: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - tail) / a[r][r];
    }
    x
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rls_inverse_invariant(_: &Subjects) -> Result<(), String> {
    let mut rng = Rng::new(1);
    let dim = 5;
    let mut rls = SiftRls::with_scaled_identity(vec![0.0; dim], 1e-2, 0.3, 1e-4).map_err(|e| e.to_string())?;
    let identity = DMatrix::<f64>::identity(dim, dim);
    for k in 0..500 {
        let phi = rng.vec(dim);
        let y = rng.normal();
        rls.step(y, &phi).map_err(|e| e.to_string())?;
        let residual = rls.covariance() * rls.information() - &identity;
        let norm = residual.row_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
        ensure(norm < 1e-8, || format!("step {k}: |P R - I|_inf = {norm:e}"))?;
    }
    Ok(())
}

fn directional_forgetting(s: &Subjects) -> Result<(), String> {
    let mut rng = Rng::new(2);
    for case in 0..10_000 {
        let n = rng.index(1, 6);
        let info = rng.spd(n, 0.1);
        let cov = info.clone().try_inverse().ok_or("random information matrix singular")?;
        let phi = DVector::from_vec(rng.vec(n));
        let lambda = rng.uniform(0.01, 1.0);
        let (info_bar, _) = (s.forget)(&info, &cov, &phi, lambda);
        let before = phi.dot(&(&info * &phi));
        let after = phi.dot(&(&info_bar * &phi));
        let err = (after - lambda * before).abs();
        ensure(err <= 1e-10 * before.max(1.0), || {
            format!("case {case}: phi' R_bar phi = {after:e}, lambda phi' R phi = {:e}", lambda * before)
        })?;
    }
    Ok(())
}

fn rls_batch_equivalence(_: &Subjects) -> Result<(), String> {
    let mut rng = Rng::new(3);
    for case in 0..200 {
        let dim = rng.index(1, 5);
        let steps = rng.index(5, 50);
        let theta0 = rng.vec(dim);
        let info0 = rng.spd(dim, 0.5);
        let mut rls = SiftRls::new(theta0.clone(), info0.clone(), 1.0, 1e-12).map_err(|e| e.to_string())?;
        // Normal equations (R0 + sum phi phi') theta = R0 theta0 + sum y phi.
        let mut a: Vec<Vec<f64>> = (0..dim).map(|i| (0..dim).map(|j| info0[(i, j)]).collect()).collect();
        let mut b: Vec<f64> = (0..dim).map(|i| (0..dim).map(|j| info0[(i, j)] * theta0[j]).sum()).collect();
        for _ in 0..steps {
            let phi = rng.vec(dim);
            let y = rng.normal();
            rls.step(y, &phi).map_err(|e| e.to_string())?;
            for i in 0..dim {
                for j in 0..dim {
                    a[i][j] += phi[i] * phi[j];
                }
                b[i] += y * phi[i];
            }
        }
        let oracle = gauss_solve(a, b);
        let scale = oracle.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for (t, o) in rls.theta().as_slice().iter().zip(&oracle) {
            ensure((t - o).abs() <= 1e-8 * scale, || format!("case {case}: theta {t} vs oracle {o}"))?;
        }
    }
    Ok(())
}

fn random_qp(rng: &mut Rng, l: usize) -> QpProblem {
    let mut a_eq = DMatrix::zeros(l, 2 * l);
    for i in 0..l {
        a_eq[(i, i)] = 1.0;
        for j in 0..i {
            a_eq[(i, j)] = 0.5 * rng.normal();
        }
        for j in 0..=i {
            a_eq[(i, l + j)] = rng.normal();
        }
    }
    let q = rng.uniform(0.1, 10.0);
    let r = if rng.uniform(0.0, 1.0) < 0.2 { 0.0 } else { rng.uniform(1e-3, 5.0) };
    let diag = DVector::from_fn(2 * l, |i, _| if i < l { q } else { r });
    let linear = DVector::from_fn(2 * l, |i, _| if i < l { -6.0 * q * rng.normal() } else { 0.0 });
    QpProblem {
        hessian: DMatrix::from_diagonal(&diag),
        linear,
        a_eq,
        b_eq: DVector::from_vec(rng.vec(l)),
        bounds: None,
        initial_guess: DVector::zeros(2 * l),
    }
}

/// Stationarity plus feasibility of `min z' H z + F' z` s.t. `A z = b`, as
/// one dense symmetric-indefinite system.
fn kkt_solve(p: &QpProblem) -> Vec<f64> {
    let l = p.b_eq.len();
    let n = 2 * l;
    let mut a = vec![vec![0.0; n + l]; n + l];
    let mut b = vec![0.0; n + l];
    for i in 0..n {
        for j in 0..n {
            a[i][j] = p.hessian[(i, j)] + p.hessian[(j, i)];
        }
        b[i] = -p.linear[i];
    }
    for r in 0..l {
        for j in 0..n {
            a[n + r][j] = p.a_eq[(r, j)];
            a[j][n + r] = p.a_eq[(r, j)];
        }
        b[n + r] = p.b_eq[r];
    }
    let mut z = gauss_solve(a, b);
    z.truncate(n);
    z
}

fn qp_kkt_oracle(s: &Subjects) -> Result<(), String> {
    let mut rng = Rng::new(4);
    for case in 0..500 {
        let l = rng.index(1, 8);
        let p = random_qp(&mut rng, l);
        let sol = (s.qp_solve)(&p).map_err(|e| format!("case {case}: {e}"))?;
        let oracle = kkt_solve(&p);
        let scale = oracle.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for (i, (a, b)) in sol.z.iter().zip(&oracle).enumerate() {
            ensure((a - b).abs() <= 1e-9 * scale, || format!("case {case} (l = {l}), z[{i}]: {a} vs {b}"))?;
        }
        let residual = (&p.a_eq * &sol.z - &p.b_eq).amax();
        ensure(residual <= 1e-10 * scale, || format!("case {case}: equality residual {residual:e}"))?;
    }
    Ok(())
}

fn constraint_recursion(_: &Subjects) -> Result<(), String> {
    let mut rng = Rng::new(5);
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
        let state = HorizonState {
            past_outputs: rng.vec(n),
            past_controls: rng.vec(n),
            anchor: rng.normal(),
            commands: rng.vec(l),
        };
        let controls = rng.vec(l);
        // Direct recursion over the grid: index <= 0 is past data, 1 is the
        // anchor, 2..=l+1 the predictions.
        let mut ys = state.past_outputs.clone();
        ys.push(state.anchor);
        let mut us = state.past_controls.clone();
        us.extend(&controls);
        for (i, row) in rows.iter().enumerate() {
            let at = n + i + 1;
            let mut y = row.h;
            for j in 0..n {
                y += row.f[j] * ys[at - 1 - j] + row.g[j] * us[at - 1 - j];
            }
            ys.push(y);
        }
        let outputs = &ys[n + 1..];
        let library = frozen_rollout(&rows, &state, &controls);
        for (a, b) in library.iter().zip(outputs) {
            ensure((a - b).abs() <= 1e-12 * b.abs().max(1.0), || format!("case {case}: rollout {a} vs {b}"))?;
        }
        let qp = assemble(&rows, &state, &HorizonConfig::new(l, 1, 1.0, 0.1), DVector::zeros(2 * l));
        let z = DVector::from_iterator(2 * l, outputs.iter().chain(&controls).copied());
        let residual = (&qp.a_eq * &z - &qp.b_eq).amax();
        ensure(residual <= 1e-12 * z.amax().max(1.0), || format!("case {case}: |A_eq z - b_eq| = {residual:e}"))?;
    }
    Ok(())
}

const SPLINE: BasisSpec = BasisSpec::Spline {
    interior_nodes: 3,
    lo: -6.0,
    hi: 6.0,
};

fn spline_nodes() -> Vec<f64> {
    (0..5).map(|j| -6.0 + 3.0 * j as f64).collect()
}

fn eval(s: &Subjects, spec: &BasisSpec, x: f64) -> Result<Vec<f64>, String> {
    (s.basis_eval)(spec, x).map_err(|e| e.to_string())
}

fn spline_partition_of_unity(s: &Subjects) -> Result<(), String> {
    let nodes = spline_nodes();
    let (a, b) = (nodes[1], nodes[3]);
    for i in 0..1000 {
        let x = a + (b - a) * i as f64 / 999.0;
        let v = eval(s, &SPLINE, x)?;
        let sum: f64 = v.iter().step_by(2).sum();
        ensure((sum - 1.0).abs() <= 1e-12, || format!("sum of p_i at {x} is {sum}"))?;
    }
    Ok(())
}

fn derivative(s: &Subjects, x: f64, h: f64) -> Result<Vec<f64>, String> {
    let hi = eval(s, &SPLINE, x + h)?;
    let lo = eval(s, &SPLINE, x - h)?;
    Ok(hi.iter().zip(&lo).map(|(a, b)| (a - b) / (2.0 * h)).collect())
}

fn spline_node_interpolation(s: &Subjects) -> Result<(), String> {
    let mut rng = Rng::new(6);
    let nodes = spline_nodes();
    for trial in 0..20 {
        let coeffs = rng.vec(6);
        for j in 1..=3 {
            let x = nodes[j];
            let v = eval(s, &SPLINE, x)?;
            let f: f64 = coeffs.iter().zip(&v).map(|(c, b)| c * b).sum();
            let d = derivative(s, x, 1e-6)?;
            let slope: f64 = coeffs.iter().zip(&d).map(|(c, b)| c * b).sum();
            let (value, tangent) = (coeffs[2 * (j - 1)], coeffs[2 * (j - 1) + 1]);
            ensure((f - value).abs() <= 1e-12, || format!("trial {trial}: f(s_{j}) = {f}, expected {value}"))?;
            ensure((slope - tangent).abs() <= 1e-5, || format!("trial {trial}: f'(s_{j}) = {slope}, expected {tangent}"))?;
        }
    }
    Ok(())
}

fn spline_c1_continuity(s: &Subjects) -> Result<(), String> {
    let h = 1e-7;
    for &x in &spline_nodes() {
        let left = eval(s, &SPLINE, x - h)?;
        let right = eval(s, &SPLINE, x + h)?;
        let at = eval(s, &SPLINE, x)?;
        let below = eval(s, &SPLINE, x - 2.0 * h)?;
        let above = eval(s, &SPLINE, x + 2.0 * h)?;
        for c in 0..left.len() {
            let (dl, dr) = ((at[c] - below[c]) / (2.0 * h), (above[c] - at[c]) / (2.0 * h));
            ensure((left[c] - right[c]).abs() < 1e-5, || format!("component {c} jumps at {x}"))?;
            ensure((dl - dr).abs() < 1e-5, || format!("slope of component {c} jumps at {x}: {dl} vs {dr}"))?;
        }
    }
    Ok(())
}

fn spline_support(s: &Subjects) -> Result<(), String> {
    for x in [-1e6, -6.0 - 1e-12, -7.5, 6.0, 6.0 + 1e-9, 42.0] {
        let v = eval(s, &SPLINE, x)?;
        ensure(v.iter().all(|&b| b == 0.0), || format!("basis at {x} is {v:?}"))?;
    }
    Ok(())
}

fn fourier_bounded(s: &Subjects) -> Result<(), String> {
    let mut rng = Rng::new(7);
    for _ in 0..2000 {
        let spec = BasisSpec::Fourier {
            harmonics: rng.index(1, 5),
            half_period: rng.uniform(0.1, 20.0),
        };
        let x = rng.uniform(-1e3, 1e3);
        let v = eval(s, &spec, x)?;
        ensure(v.iter().all(|b| (-1.0..=1.0).contains(b)), || format!("{spec:?} at {x}: {v:?}"))?;
    }
    Ok(())
}

fn polynomial_origin(s: &Subjects) -> Result<(), String> {
    for degree in 0..6 {
        let v = eval(s, &BasisSpec::Polynomial { degree }, 0.0)?;
        let mut expected = vec![0.0; degree + 1];
        expected[0] = 1.0;
        ensure(v == expected, || format!("degree {degree}: {v:?}"))?;
    }
    Ok(())
}

fn closed_loop_determinism(_: &Subjects) -> Result<(), String> {
    let mut cfg = preset("eg4-BL").map_err(|e| e.to_string())?;
    cfg.steps = 120;
    let a = run_closed_loop(cfg.clone()).map_err(|e| e.to_string())?;
    let b = run_closed_loop(cfg).map_err(|e| e.to_string())?;
    ensure(steps_csv(&a) == steps_csv(&b), || "two identical runs produced different tables".into())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique() {
        for (i, p) in SUITE.iter().enumerate() {
            assert!(SUITE[i + 1..].iter().all(|q| q.name != p.name), "{}", p.name);
        }
    }

    #[test]
    fn gauss_solve_small_system() {
        let x = gauss_solve(vec![vec![0.0, 2.0], vec![3.0, 1.0]], vec![4.0, 5.0]);
        assert!((x[0] - 1.0).abs() < 1e-15 && (x[1] - 2.0).abs() < 1e-15);
    }
}
