//! Brute-force references: grid extrema of the process and a plain composite
//! Simpson rule for the oscillatory integral.
//!
//! Both deliberately avoid the machinery they check.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::bump::Bump;
use crate::expr::{EvalError, Expr, ProcessSpec, Var};
use crate::oscint::max_abs_on_grid;
use crate::prob::OmegaModel;

pub const MIN_RESOLUTION: usize = 64;
/// Largest `|k|` accepted by [`reference_integral`].
pub const MAX_REFERENCE_K: f64 = 5000.0;

const NODES_PER_PERIOD: f64 = 200.0;
const MIN_SIMPSON_NODES: usize = 2000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("resolution must be at least {MIN_RESOLUTION}, got {0}")]
    Resolution(usize),
    #[error("non-finite process value at t = {t}, omega = {omega:?}")]
    NonFinite { t: f64, omega: Vec<f64> },
    #[error("|k| = {0} exceeds the reference cost guard {MAX_REFERENCE_K}")]
    CostGuard(f64),
    #[error("evaluation failed: {0}")]
    Eval(#[from] EvalError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Extrema {
    pub min: f64,
    pub max: f64,
    /// `(t, ω)` of the minimum.
    pub argmin: (f64, Vec<f64>),
    pub argmax: (f64, Vec<f64>),
}

#[derive(Clone)]
struct Candidate {
    value: f64,
    t: f64,
    omega: Vec<f64>,
}

/// Extrema of `ξ` over `[a, b] × supp(P)`: tensor grid with `resolution`
/// intervals per axis, then a Newton polish from the best node.
pub fn grid_extrema(process: &ProcessSpec, model: &OmegaModel, resolution: usize) -> Result<Extrema, OracleError> {
    if resolution < MIN_RESOLUTION {
        return Err(OracleError::Resolution(resolution));
    }
    let (a, b) = process.interval;
    let omegas = model.validation_points(resolution + 1);
    let expr = &process.expr;
    let per_t: Vec<Result<(Candidate, Candidate), OracleError>> = (0..=resolution)
        .into_par_iter()
        .map(|i| {
            let t = a + (b - a) * i as f64 / resolution as f64;
            let mut lo: Option<Candidate> = None;
            let mut hi: Option<Candidate> = None;
            for omega in &omegas {
                let value = expr.eval(t, omega)?;
                if !value.is_finite() {
                    return Err(OracleError::NonFinite {
                        t,
                        omega: omega.clone(),
                    });
                }
                if lo.as_ref().is_none_or(|c| value < c.value) {
                    lo = Some(Candidate { value, t, omega: omega.clone() });
                }
                if hi.as_ref().is_none_or(|c| value > c.value) {
                    hi = Some(Candidate { value, t, omega: omega.clone() });
                }
            }
            Ok((lo.expect("omega grid is non-empty"), hi.expect("omega grid is non-empty")))
        })
        .collect();
    let mut best_lo: Option<Candidate> = None;
    let mut best_hi: Option<Candidate> = None;
    for r in per_t {
        let (lo, hi) = r?;
        if best_lo.as_ref().is_none_or(|c| lo.value < c.value) {
            best_lo = Some(lo);
        }
        if best_hi.as_ref().is_none_or(|c| hi.value > c.value) {
            best_hi = Some(hi);
        }
    }
    let bounds = polish_bounds(process, model);
    let lo = polish(expr, &bounds, best_lo.expect("grid is non-empty"), 1.0);
    let hi = polish(expr, &bounds, best_hi.expect("grid is non-empty"), -1.0);
    Ok(Extrema {
        min: lo.value,
        max: hi.value,
        argmin: (lo.t, lo.omega),
        argmax: (hi.t, hi.omega),
    })
}

/// Boundaries of the continuous variables; discrete ω components are held fixed.
fn polish_bounds(process: &ProcessSpec, model: &OmegaModel) -> Vec<(f64, f64)> {
    let mut bounds = vec![process.interval];
    if let Some(b) = model.bounds() {
        bounds.extend_from_slice(b);
    }
    bounds
}

/// Newton on the gradient of `sign·ξ`, kept inside `bounds`. The polished
/// point replaces the grid node only if it is strictly better.
fn polish(expr: &Expr, bounds: &[(f64, f64)], start: Candidate, sign: f64) -> Candidate {
    let vars: Vec<Var> = std::iter::once(Var::T)
        .chain((1..bounds.len()).map(Var::W))
        .collect();
    let grad: Vec<Expr> = vars.iter().map(|&v| expr.diff(v)).collect();
    let hess: Vec<Vec<Expr>> = grad
        .iter()
        .map(|g| vars.iter().map(|&v| g.diff(v)).collect())
        .collect();
    let n = vars.len();
    let mut x: Vec<f64> = std::iter::once(start.t)
        .chain(start.omega.iter().copied().take(n - 1))
        .collect();
    let fixed: Vec<f64> = start.omega.iter().copied().skip(n - 1).collect();
    let point = |x: &[f64]| -> Vec<f64> { x[1..].iter().chain(&fixed).copied().collect() };

    for _ in 0..50 {
        let w = point(&x);
        let mut g = DVector::zeros(n);
        let mut h = DMatrix::zeros(n, n);
        let mut ok = true;
        for i in 0..n {
            match grad[i].eval(x[0], &w) {
                Ok(v) => g[i] = v,
                Err(_) => ok = false,
            }
            for j in 0..n {
                match hess[i][j].eval(x[0], &w) {
                    Ok(v) => h[(i, j)] = v,
                    Err(_) => ok = false,
                }
            }
        }
        if !ok || g.norm() <= 1e-14 {
            break;
        }
        let Some(step) = h.lu().solve(&g) else { break };
        let mut moved = 0.0f64;
        for (i, (lo, hi)) in bounds.iter().enumerate() {
            let next = (x[i] - step[i]).clamp(*lo, *hi);
            moved = moved.max((next - x[i]).abs());
            x[i] = next;
        }
        if !(moved > 1e-15) {
            break;
        }
    }
    let omega = point(&x);
    match expr.eval(x[0], &omega) {
        Ok(value) if value.is_finite() && sign * value < sign * start.value => Candidate {
            value,
            t: x[0],
            omega,
        },
        _ => start,
    }
}

/// `∫ φ(t) e^{ikf(t, ω)} dt` by composite Simpson with at least 200 nodes per
/// period, plus the Richardson error estimate `|S_N - S_{N/2}| / 15`.
pub fn reference_integral(
    phase: &Expr,
    omega: &[f64],
    bump: &Bump,
    k: f64,
) -> Result<(Complex64, f64), OracleError> {
    if !(k.abs() <= MAX_REFERENCE_K) {
        return Err(OracleError::CostGuard(k));
    }
    let (lo, hi) = bump.support();
    let slope = max_abs_on_grid(&phase.diff(Var::T), omega, lo, hi, 4096)?;
    let periods = k.abs() * slope * (hi - lo) / (2.0 * PI);
    // a multiple of 4 so the half-resolution rule is also a Simpson rule
    let n = ((NODES_PER_PERIOD * periods).ceil() as usize)
        .max(MIN_SIMPSON_NODES)
        .div_ceil(4)
        * 4;
    let h = (hi - lo) / n as f64;
    let samples: Vec<Complex64> = (0..=n)
        .into_par_iter()
        .map(|i| {
            let t = lo + h * i as f64;
            let phi = bump.eval(t);
            if phi == 0.0 {
                return Ok(Complex64::new(0.0, 0.0));
            }
            Ok(Complex64::from_polar(phi, k * phase.eval(t, omega)?))
        })
        .collect::<Result<_, EvalError>>()?;
    let simpson = |stride: usize| {
        let m = n / stride;
        let mut acc = samples[0] + samples[n];
        for j in 1..m {
            acc += samples[j * stride] * if j % 2 == 1 { 4.0 } else { 2.0 };
        }
        acc * (h * stride as f64 / 3.0)
    };
    let fine = simpson(1);
    let coarse = simpson(2);
    Ok((fine, (fine - coarse).norm() / 15.0))
}

/// `√(π/k) e^{iπ/4}`, the exact Fresnel integral `∫ e^{ikx²} dx` for `k > 0`.
pub fn fresnel_reference(k: f64) -> Complex64 {
    (PI / k).sqrt() * Complex64::from_polar(1.0, PI / 4.0)
}

/// `2Γ(1 + 1/m)`, the closed form of the stationary-phase constant.
pub fn gamma_reference(m: usize) -> f64 {
    2.0 * statrs::function::gamma::gamma(1.0 + 1.0 / m as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bump::BumpSpec;
    use crate::oscint::{oscillatory_integral, QuadSettings};
    use crate::phase::cm_constant;
    use crate::prob::{Atom, OmegaSpec};

    fn bump(a: f64, b: f64, epsilon: f64) -> Bump {
        Bump::new(BumpSpec {
            a,
            b,
            epsilon,
            normalized: false,
        })
        .unwrap()
    }

    #[test]
    fn deterministic_parabola() {
        let p = ProcessSpec::new("1+(t-0.5)^2", (0.0, 1.0), 0).unwrap();
        let e = grid_extrema(&p, &OmegaModel::Deterministic, 64).unwrap();
        assert!((e.min - 1.0).abs() < 1e-14);
        assert!((e.argmin.0 - 0.5).abs() < 1e-12);
        assert!((e.max - 1.25).abs() < 1e-14);
        assert!(e.argmax.0 == 0.0 || e.argmax.0 == 1.0);
    }

    #[test]
    fn two_dimensional_minimum_off_grid() {
        let p = ProcessSpec::new("1+(t-0.5)^2+(w1-0.4123)^2", (0.0, 1.0), 1).unwrap();
        let model = OmegaModel::uniform_box(&[[0.0, 1.0]]).unwrap();
        let e = grid_extrema(&p, &model, 64).unwrap();
        assert!((e.min - 1.0).abs() < 1e-14);
        assert!((e.argmin.1[0] - 0.4123).abs() < 1e-8);
        assert!((e.max - (1.25 + 0.5877f64.powi(2))).abs() < 1e-12);
    }

    #[test]
    fn sine_range() {
        let p = ProcessSpec::new("0.5+0.25*sin(2*pi*t)", (0.0, 1.0), 0).unwrap();
        let e = grid_extrema(&p, &OmegaModel::Deterministic, 64).unwrap();
        assert!((e.min - 0.25).abs() < 1e-14);
        assert!((e.max - 0.75).abs() < 1e-14);
    }

    #[test]
    fn discrete_atoms_are_enumerated() {
        let model = OmegaModel::from_spec(
            &OmegaSpec::Discrete {
                atoms: vec![
                    Atom { point: vec![0.2], weight: 0.7 },
                    Atom { point: vec![0.5], weight: 0.3 },
                ],
            },
            0,
        )
        .unwrap();
        let p = ProcessSpec::new("1+(t-0.5)^2+w1", (0.0, 1.0), 1).unwrap();
        let e = grid_extrema(&p, &model, 64).unwrap();
        assert!((e.min - 1.2).abs() < 1e-14);
        assert_eq!(e.argmin.1, vec![0.2]);
        assert!((e.max - 1.75).abs() < 1e-14);
    }

    #[test]
    fn refinement_is_monotone() {
        let p = ProcessSpec::new("1+0.3*sin(7*t+w1)+(w1-0.37)^2*t", (0.0, 1.0), 1).unwrap();
        let model = OmegaModel::uniform_box(&[[0.0, 1.0]]).unwrap();
        let mut previous: Option<Extrema> = None;
        for res in [64, 128, 256] {
            let e = grid_extrema(&p, &model, res).unwrap();
            if let Some(prev) = &previous {
                assert!(e.min <= prev.min + 1e-15);
                assert!(e.max >= prev.max - 1e-15);
            }
            previous = Some(e);
        }
    }

    #[test]
    fn errors() {
        let p = ProcessSpec::new("1+t", (0.0, 1.0), 0).unwrap();
        assert!(matches!(
            grid_extrema(&p, &OmegaModel::Deterministic, 10),
            Err(OracleError::Resolution(10))
        ));
        let b = bump(0.0, 1.0, 0.1);
        assert!(matches!(
            reference_integral(&p.expr, &[], &b, 6000.0),
            Err(OracleError::CostGuard(_))
        ));
    }

    #[test]
    fn reference_at_zero_is_mass() {
        let b = bump(0.0, 1.0, 0.1);
        let (v, _) = reference_integral(&Expr::parse("t", 0).unwrap(), &[], &b, 0.0).unwrap();
        assert!((v.re - b.mass()).abs() < 1e-12);
        assert_eq!(v.im, 0.0);
    }

    #[test]
    fn reference_agrees_with_panel_quadrature() {
        let s = QuadSettings::default();
        let centred = bump(-0.5, 0.5, 0.25);
        let f = Expr::parse("t^2", 0).unwrap();
        let (r, err) = reference_integral(&f, &[], &centred, 400.0).unwrap();
        let q = oscillatory_integral(&f, &[], &centred, 400.0, &s).unwrap();
        assert!((r - q.value).norm() < 1e-6);
        assert!((r - q.value).norm() <= err + q.error + 1e-12);

        let b = bump(0.0, 1.0, 0.1);
        let (r, _) = reference_integral(&Expr::parse("t", 0).unwrap(), &[], &b, 3200.0).unwrap();
        assert!(r.norm() <= 1e-6);
    }

    #[test]
    fn closed_forms() {
        let v = fresnel_reference(400.0);
        assert!((v.re - 0.062_666).abs() < 1e-5 && (v.re - v.im).abs() < 1e-15);
        for m in 2..=6 {
            assert!((gamma_reference(m) - cm_constant(m).unwrap()).abs() < 1e-10);
        }
    }
}
