//! Stationary points of the phase and their leading-order contributions.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::bump::Bump;
use crate::expr::{EvalError, Expr, ProcessSpec, Var};
use crate::prob::{density_at, OmegaModel, ProbError};
use crate::quad::adaptive_gk;

/// Highest stationary-point order that is classified.
pub const MAX_ORDER: usize = 6;

const SCAN_GRID: usize = 4096;
const ROOT_TOL: f64 = 1e-12;
const MERGE_DIST: f64 = 1e-8;
const JOINT_STARTS_PER_AXIS: usize = 17;
// relative to the window; degenerate points only converge linearly
const JOINT_MERGE_DIST: f64 = 1e-4;
/// `|det H|` below this times `max|H_ij|^(n+1)` counts as singular.
const SINGULAR_DET: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StationaryPoint {
    pub t_star: f64,
    pub omega_star: Vec<f64>,
    pub order: usize,
    pub mth_derivative: f64,
    pub phase_value: f64,
    /// `false` for tangential zeros of `f_t` found without a sign change.
    pub verified: bool,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PhaseError {
    #[error("stationary point at t = {t} has order above {MAX_ORDER}")]
    Unclassifiable { t: f64 },
    #[error("order must be in 2..={MAX_ORDER}, got {0}")]
    Order(usize),
    #[error("frequency must be non-zero")]
    ZeroFrequency,
    #[error("{points} stationary points but {values} amplitude values")]
    Mismatch { points: usize, values: usize },
    #[error("no joint stationary point in the window")]
    NoJointPoint,
    #[error("{0} joint stationary points in the window; exactly one is required")]
    MultipleJointPoints(usize),
    #[error("Hessian determinant {0:e} is singular")]
    SingularHessian(f64),
    #[error("second time derivative vanishes at the joint stationary point")]
    NotSecondOrder,
    #[error("density at the stationary point is {0}, must be positive")]
    NonPositiveDensity(f64),
    #[error("omega model: {0}")]
    Model(#[from] ProbError),
    #[error("evaluation failed: {0}")]
    Eval(#[from] EvalError),
}

/// `C_m = 2 ∫_0^∞ exp(-x^m) dx`.
pub fn cm_constant(m: usize) -> Result<f64, PhaseError> {
    if !(2..=MAX_ORDER).contains(&m) {
        return Err(PhaseError::Order(m));
    }
    // exp(-x^m) < 1e-17 beyond x^m = 40
    let cut = 40f64.powf(1.0 / m as f64);
    let f = |x: f64| (-x.powi(m as i32)).exp();
    let (head, _) = adaptive_gk(f, 0.0, 1.0, 1e-14, 0.0);
    let (tail, _) = adaptive_gk(f, 1.0, cut, 1e-14, 0.0);
    Ok(2.0 * (head + tail))
}

fn factorial(m: usize) -> f64 {
    (1..=m).map(|i| i as f64).product()
}

/// Polishes a root of `g` near `t0`, staying within `[lo, hi]`.
///
/// Bisection on a sign change, Newton with `dg` otherwise.
fn polish_root(g: &Expr, dg: &Expr, omega: &[f64], t0: f64, lo: f64, hi: f64) -> Result<f64, EvalError> {
    let (glo, ghi) = (g.eval(lo, omega)?, g.eval(hi, omega)?);
    if glo == 0.0 {
        return Ok(lo);
    }
    if ghi == 0.0 {
        return Ok(hi);
    }
    if glo * ghi < 0.0 {
        let (mut a, mut b, mut fa) = (lo, hi, glo);
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            let fm = g.eval(m, omega)?;
            if fm == 0.0 || m == a || m == b {
                return Ok(m);
            }
            if fm.abs() <= ROOT_TOL && (b - a) < 1e-14 * (1.0 + m.abs()) {
                return Ok(m);
            }
            if fa * fm < 0.0 {
                b = m;
            } else {
                a = m;
                fa = fm;
            }
        }
        return Ok(0.5 * (a + b));
    }
    let mut t = t0;
    for _ in 0..200 {
        let v = g.eval(t, omega)?;
        let d = dg.eval(t, omega)?;
        if v == 0.0 || d == 0.0 {
            break;
        }
        let next = (t - v / d).clamp(lo, hi);
        if (next - t).abs() <= 1e-16 * (1.0 + t.abs()) {
            t = next;
            break;
        }
        t = next;
    }
    Ok(t)
}

/// Scans `f_t` on a 4096-point grid over `window` and returns every
/// stationary point, classified by order.
pub fn find_stationary_points(
    phase: &Expr,
    omega: &[f64],
    window: (f64, f64),
) -> Result<Vec<StationaryPoint>, PhaseError> {
    let (lo, hi) = window;
    let derivs: Vec<Expr> = (0..=MAX_ORDER + 1)
        .scan(phase.clone(), |e, _| {
            let cur = e.clone();
            *e = e.diff(Var::T);
            Some(cur)
        })
        .collect();
    let f_t = &derivs[1];
    let f_tt = &derivs[2];
    let h = (hi - lo) / (SCAN_GRID - 1) as f64;
    let grid: Vec<f64> = (0..SCAN_GRID).map(|i| lo + h * i as f64).collect();
    let mut values = Vec::with_capacity(SCAN_GRID);
    let mut f_sup: f64 = 0.0;
    for &t in &grid {
        values.push(f_t.eval(t, omega)?);
        f_sup = f_sup.max(phase.eval(t, omega)?.abs());
    }
    let zero_tol = 1e-7 * (1.0 + f_sup);

    let mut candidates: Vec<(f64, bool)> = Vec::new();
    for i in 0..SCAN_GRID {
        if values[i] == 0.0 {
            candidates.push((grid[i], true));
        } else if i + 1 < SCAN_GRID && values[i] * values[i + 1] < 0.0 {
            let t = polish_root(f_t, f_tt, omega, grid[i], grid[i], grid[i + 1])?;
            candidates.push((t, true));
        } else if i > 0 && i + 1 < SCAN_GRID {
            let (l, c, r) = (values[i - 1].abs(), values[i].abs(), values[i + 1].abs());
            let no_sign_change = values[i - 1] * values[i] > 0.0 && values[i] * values[i + 1] > 0.0;
            if no_sign_change && c <= l && c <= r {
                // tangential touch: look for an extremum of f_t and test it
                let t = polish_root(f_tt, &derivs[3], omega, grid[i], grid[i - 1], grid[i + 1])?;
                if f_t.eval(t, omega)?.abs() <= zero_tol {
                    candidates.push((t, false));
                }
            }
        }
    }

    let mut points: Vec<StationaryPoint> = Vec::new();
    for (t0, verified) in candidates {
        if !(t0 > lo && t0 < hi) {
            continue;
        }
        let (t, order, value) = classify(&derivs, omega, t0, h, zero_tol)?;
        if points.iter().any(|p| (p.t_star - t).abs() < MERGE_DIST) {
            continue;
        }
        points.push(StationaryPoint {
            t_star: t,
            omega_star: omega.to_vec(),
            order,
            mth_derivative: value,
            phase_value: phase.eval(t, omega)?,
            verified,
        });
    }
    points.sort_by(|a, b| a.t_star.total_cmp(&b.t_star));
    Ok(points)
}

/// First order `m >= 2` with `|f^(m)| > zero_tol`, re-centring on the root of
/// each vanishing derivative so that higher-order points are not misread.
fn classify(
    derivs: &[Expr],
    omega: &[f64],
    t0: f64,
    h: f64,
    zero_tol: f64,
) -> Result<(f64, usize, f64), PhaseError> {
    let mut t = t0;
    for m in 2..=MAX_ORDER {
        let value = derivs[m].eval(t, omega)?;
        if value.abs() > zero_tol {
            return Ok((t, m, value));
        }
        let polished = polish_root(&derivs[m], &derivs[m + 1], omega, t, t - h, t + h)?;
        if derivs[1].eval(polished, omega)?.abs() <= zero_tol {
            t = polished;
        }
    }
    Err(PhaseError::Unclassifiable { t })
}

/// Leading stationary-phase term of `∫ φ e^{ikf} dt` summed over `points`,
/// with `phi_values[j] = φ(t_j)`.
pub fn asymptotic_sum(points: &[StationaryPoint], phi_values: &[f64], k: f64) -> Result<Complex64, PhaseError> {
    if points.len() != phi_values.len() {
        return Err(PhaseError::Mismatch {
            points: points.len(),
            values: phi_values.len(),
        });
    }
    if k == 0.0 {
        return Err(PhaseError::ZeroFrequency);
    }
    let mut total = Complex64::new(0.0, 0.0);
    for (p, &phi) in points.iter().zip(phi_values) {
        total += point_contribution(p, phi, k)?;
    }
    Ok(total)
}

fn point_contribution(p: &StationaryPoint, phi: f64, k: f64) -> Result<Complex64, PhaseError> {
    let m = p.order;
    let amplitude = phi
        * cm_constant(m)?
        * (factorial(m) / (k.abs() * p.mth_derivative.abs())).powf(1.0 / m as f64);
    let oscillation = Complex64::from_polar(1.0, k * p.phase_value);
    let factor = if m % 2 == 0 {
        let sign = p.mth_derivative.signum() * k.signum();
        Complex64::from_polar(1.0, sign * PI / (2.0 * m as f64))
    } else {
        Complex64::new((PI / (2.0 * m as f64)).cos(), 0.0)
    };
    Ok(amplitude * factor * oscillation)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Theorem2Report {
    pub t_star: f64,
    pub omega_star: Vec<f64>,
    /// Second derivatives in `(t, w1, .., wn)`.
    pub hessian: Vec<Vec<f64>>,
    pub det: f64,
    /// Positive minus negative eigenvalues.
    pub signature: i32,
    pub density_value: f64,
    pub phi_value: f64,
    pub leading_amplitude: f64,
    /// `ξ(t*, ω*)`, the limit the estimator should approach.
    pub predicted_limit: f64,
}

fn gradient_and_hessian(
    grad: &[Expr],
    hess: &[Vec<Expr>],
    x: &[f64],
) -> Result<(DVector<f64>, DMatrix<f64>), EvalError> {
    let n = grad.len();
    let (t, w) = (x[0], &x[1..]);
    let mut g = DVector::zeros(n);
    let mut h = DMatrix::zeros(n, n);
    for i in 0..n {
        g[i] = grad[i].eval(t, w)?;
        for j in 0..n {
            h[(i, j)] = hess[i][j].eval(t, w)?;
        }
    }
    Ok((g, h))
}

fn joint_vars(n: usize) -> Vec<Var> {
    std::iter::once(Var::T).chain((1..=n).map(Var::W)).collect()
}

/// Joint stationary points of `ξ` in `(t, ω)` inside `window`, by Newton on
/// the gradient from a 17-per-axis multi-start grid.
pub fn find_joint_stationary_points(
    xi: &Expr,
    window: &[(f64, f64)],
) -> Result<Vec<Vec<f64>>, PhaseError> {
    let dim = window.len();
    let vars = joint_vars(dim - 1);
    let grad: Vec<Expr> = vars.iter().map(|&v| xi.diff(v)).collect();
    let hess: Vec<Vec<Expr>> = grad
        .iter()
        .map(|g| vars.iter().map(|&v| g.diff(v)).collect())
        .collect();
    let total = JOINT_STARTS_PER_AXIS.pow(dim as u32);
    let scale: f64 = window.iter().map(|(lo, hi)| hi - lo).fold(0.0, f64::max);
    let found: Vec<Option<Vec<f64>>> = (0..total)
        .into_par_iter()
        .map(|idx| {
            let mut rem = idx;
            let mut x: Vec<f64> = window
                .iter()
                .map(|&(lo, hi)| {
                    let i = rem % JOINT_STARTS_PER_AXIS;
                    rem /= JOINT_STARTS_PER_AXIS;
                    lo + (hi - lo) * (i as f64 + 0.5) / JOINT_STARTS_PER_AXIS as f64
                })
                .collect();
            for _ in 0..60 {
                let (g, h) = gradient_and_hessian(&grad, &hess, &x).ok()?;
                if g.norm() <= 1e-13 {
                    break;
                }
                let step = h.lu().solve(&g)?;
                for (xi, s) in x.iter_mut().zip(step.iter()) {
                    *xi -= s;
                }
                if x.iter().any(|v| !v.is_finite()) || step.norm() > 10.0 * scale {
                    return None;
                }
                if step.norm() <= 1e-15 * (1.0 + scale) {
                    break;
                }
            }
            let (g, _) = gradient_and_hessian(&grad, &hess, &x).ok()?;
            let inside = x
                .iter()
                .zip(window)
                .all(|(v, (lo, hi))| *v > *lo && *v < *hi);
            (g.norm() <= 1e-10 && inside).then_some(x)
        })
        .collect();
    let mut points: Vec<Vec<f64>> = Vec::new();
    for x in found.into_iter().flatten() {
        let dup = points.iter().any(|p| {
            p.iter().zip(&x).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() < JOINT_MERGE_DIST * scale
        });
        if !dup {
            points.push(x);
        }
    }
    Ok(points)
}

/// Leading term of `∫_Ω ∫ φ(t) e^{ikξ(t,ω)} dt dP(ω)` from the single joint
/// stationary point:
/// `ρ(ω*) φ(t*) (2π/k)^{(n+1)/2} |det H|^{-1/2} e^{iπ·sig/4} e^{ikξ*}`.
pub fn theorem2_asymptotic(
    process: &ProcessSpec,
    model: &OmegaModel,
    bump: &Bump,
    k: f64,
) -> Result<(Complex64, Theorem2Report), PhaseError> {
    if k == 0.0 {
        return Err(PhaseError::ZeroFrequency);
    }
    let n = model.dim();
    let mut window = vec![bump.support()];
    match model {
        OmegaModel::Deterministic => {}
        OmegaModel::Box { density, .. } => window.extend_from_slice(&density.bounds),
        _ => return Err(PhaseError::Model(ProbError::Unsupported)),
    }
    let points = find_joint_stationary_points(&process.expr, &window)?;
    let x = match points.as_slice() {
        [] => return Err(PhaseError::NoJointPoint),
        [x] => x.clone(),
        many => return Err(PhaseError::MultipleJointPoints(many.len())),
    };
    let (t_star, omega_star) = (x[0], x[1..].to_vec());

    let vars = joint_vars(n);
    let mut hessian = vec![vec![0.0; n + 1]; n + 1];
    for (i, &vi) in vars.iter().enumerate() {
        let di = process.expr.diff(vi);
        for (j, &vj) in vars.iter().enumerate() {
            hessian[i][j] = di.diff(vj).eval(t_star, &omega_star)?;
        }
    }
    if hessian[0][0].abs() <= 1e-7 {
        return Err(PhaseError::NotSecondOrder);
    }
    let h = DMatrix::from_fn(n + 1, n + 1, |i, j| hessian[i][j]);
    let det = h.determinant();
    let h_scale = h.amax().powi(n as i32 + 1);
    if !(det.abs() >= SINGULAR_DET * h_scale) {
        return Err(PhaseError::SingularHessian(det));
    }
    let eig = SymmetricEigen::new(h);
    let signature = eig
        .eigenvalues
        .iter()
        .map(|&l| if l > 0.0 { 1 } else { -1 })
        .sum::<i32>();
    let density_value = match model {
        OmegaModel::Deterministic => 1.0,
        _ => density_at(model, &omega_star)?,
    };
    if !(density_value > 0.0) {
        return Err(PhaseError::NonPositiveDensity(density_value));
    }
    let phi_value = bump.eval(t_star);
    let predicted_limit = process.expr.eval(t_star, &omega_star)?;
    let leading_amplitude = density_value
        * phi_value
        * (2.0 * PI / k.abs()).powf((n + 1) as f64 / 2.0)
        / det.abs().sqrt();
    let value = leading_amplitude
        * Complex64::from_polar(1.0, k.signum() * PI / 4.0 * signature as f64)
        * Complex64::from_polar(1.0, k * predicted_limit);
    Ok((
        value,
        Theorem2Report {
            t_star,
            omega_star,
            hessian,
            det,
            signature,
            density_value,
            phi_value,
            leading_amplitude,
            predicted_limit,
        },
    ))
}
