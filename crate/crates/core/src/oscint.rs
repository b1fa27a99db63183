//! High-frequency integrals `I(k) = ∫ φ(t) e^{i k f(t, ω)} dt`.
//!
//! The support is cut into panels sized so that each panel carries at most a
//! fixed number of phase oscillations, then integrated with fixed-order
//! Gauss–Legendre. Every result is checked against the same panels at twice
//! the order; the difference is the reported error.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bump::Bump;
use crate::expr::{EvalError, Expr, Var};
use crate::quad::{composite_nodes, gauss_legendre, uniform_breaks};

/// Grid size used to bound `|f_t|` and to detect stationary points.
pub const PHASE_GRID: usize = 2048;

/// `|f_t|` below this anywhere on the grid counts as a stationary point.
pub const STATIONARY_TOL: f64 = 1e-9;

const MIN_PANELS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuadSettings {
    /// Gauss–Legendre nodes per panel.
    pub order: usize,
    pub oscillations_per_panel: f64,
    pub rel_tol: f64,
    /// Absolute floor, relative to `∫|φ|`.
    pub abs_tol: f64,
    pub max_panels: usize,
}

impl Default for QuadSettings {
    fn default() -> Self {
        QuadSettings {
            order: 12,
            oscillations_per_panel: 2.0,
            rel_tol: 1e-8,
            abs_tol: 1e-13,
            max_panels: 200_000,
        }
    }
}

/// Panel layout for one integral.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadPlan {
    pub breaks: Vec<f64>,
    pub order: usize,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_panels: usize,
}

impl QuadPlan {
    /// Lays out panels over the regions delimited by `regions` so that each
    /// panel spans at most `oscillations_per_panel` periods of `e^{ikf}`.
    pub fn build(
        settings: &QuadSettings,
        phase: &Expr,
        omega: &[f64],
        regions: &[f64],
        k: f64,
    ) -> Result<QuadPlan, OscError> {
        let f_t = phase.diff(Var::T);
        let total = regions[regions.len() - 1] - regions[0];
        let n_regions = regions.len() - 1;
        let mut breaks = vec![regions[0]];
        let mut needed = 0usize;
        for pair in regions.windows(2) {
            let (lo, hi) = (pair[0], pair[1]);
            let width = hi - lo;
            let samples = ((PHASE_GRID as f64 * width / total).ceil() as usize).max(64);
            let slope = max_abs_on_grid(&f_t, omega, lo, hi, samples)?;
            let oscillations = k.abs() * slope * width / (2.0 * PI);
            let floor = if n_regions == 1 {
                MIN_PANELS
            } else {
                (MIN_PANELS as f64 * width / total).ceil().max(4.0) as usize
            };
            let n = ((oscillations / settings.oscillations_per_panel).ceil() as usize).max(floor);
            needed += n;
            if needed > settings.max_panels {
                return Err(OscError::PanelBudget {
                    needed,
                    max: settings.max_panels,
                });
            }
            let sub = uniform_breaks(lo, hi, n);
            breaks.extend_from_slice(&sub[1..]);
        }
        Ok(QuadPlan {
            breaks,
            order: settings.order,
            rel_tol: settings.rel_tol,
            abs_tol: settings.abs_tol,
            max_panels: settings.max_panels,
        })
    }

    pub fn panels(&self) -> usize {
        self.breaks.len() - 1
    }

    /// Each panel split in two.
    pub fn refined(&self) -> QuadPlan {
        let mut breaks = Vec::with_capacity(2 * self.breaks.len());
        for pair in self.breaks.windows(2) {
            breaks.push(pair[0]);
            breaks.push(0.5 * (pair[0] + pair[1]));
        }
        breaks.push(self.breaks[self.breaks.len() - 1]);
        QuadPlan {
            breaks,
            ..self.clone()
        }
    }

    /// Quadrature nodes `(t, weight)` at the plan's base order.
    pub fn nodes(&self) -> Vec<(f64, f64)> {
        composite_nodes(&self.breaks, &gauss_legendre(self.order))
    }
}

pub(crate) fn max_abs_on_grid(
    e: &Expr,
    omega: &[f64],
    lo: f64,
    hi: f64,
    samples: usize,
) -> Result<f64, EvalError> {
    let mut m: f64 = 0.0;
    for i in 0..=samples {
        let t = lo + (hi - lo) * i as f64 / samples as f64;
        m = m.max(e.eval(t, omega)?.abs());
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OscError {
    #[error("tolerance not met: achieved {achieved:e}, target {target:e}")]
    ToleranceNotMet { achieved: f64, target: f64 },
    #[error("panel budget exceeded: {needed} panels needed, maximum {max}")]
    PanelBudget { needed: usize, max: usize },
    #[error("phase derivative vanishes near t = {t} (|f_t| = {value:e})")]
    StationaryPointInSupport { t: f64, value: f64 },
    #[error("decay fit needs at least {needed} usable frequencies, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("evaluation failed: {0}")]
    Eval(#[from] EvalError),
}

/// Real amplitude `φ(t)` with known compact support.
pub trait Amplitude: Sync {
    fn value(&self, t: f64) -> Result<f64, EvalError>;

    /// Sorted region boundaries; the first and last are the support ends.
    fn regions(&self) -> Vec<f64>;
}

impl Amplitude for Bump {
    fn value(&self, t: f64) -> Result<f64, EvalError> {
        Ok(self.eval(t))
    }

    fn regions(&self) -> Vec<f64> {
        self.breakpoints()
    }
}

/// An expression in `t` (at a fixed ω) used as amplitude, e.g. `L^n(φ)`.
#[derive(Debug, Clone)]
pub struct ExprAmplitude {
    pub expr: Expr,
    pub omega: Vec<f64>,
    pub regions: Vec<f64>,
}

impl Amplitude for ExprAmplitude {
    fn value(&self, t: f64) -> Result<f64, EvalError> {
        self.expr.eval(t, &self.omega)
    }

    fn regions(&self) -> Vec<f64> {
        self.regions.clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OscResult {
    pub value: Complex64,
    /// `|I_2p - I_p|` on the final panel layout.
    pub error: f64,
    pub panels: usize,
}

fn sum_on_plan<A: Amplitude + ?Sized>(
    plan: &QuadPlan,
    order: usize,
    phase: &Expr,
    omega: &[f64],
    amp: &A,
    k: f64,
) -> Result<(Complex64, f64), OscError> {
    let rule = gauss_legendre(order);
    let partial: Vec<Result<(Complex64, f64), EvalError>> = plan
        .breaks
        .par_windows(2)
        .map(|pair| {
            let mut acc = Complex64::new(0.0, 0.0);
            let mut l1 = 0.0;
            for &(t, w) in &composite_nodes(pair, &rule) {
                let a = amp.value(t)?;
                if a == 0.0 {
                    continue;
                }
                let theta = k * phase.eval(t, omega)?;
                let (s, c) = theta.sin_cos();
                acc += Complex64::new(c, s) * (w * a);
                l1 += w * a.abs();
            }
            Ok((acc, l1))
        })
        .collect();
    let mut total = Complex64::new(0.0, 0.0);
    let mut l1 = 0.0;
    for p in partial {
        let (v, m) = p?;
        total += v;
        l1 += m;
    }
    Ok((total, l1))
}

/// `∫ amp(t) e^{i k f(t, ω)} dt` over the amplitude's support.
///
/// Panels are doubled until the order-`p` and order-`2p` results agree to
/// `rel_tol·|I| + abs_tol·∫|φ|`.
pub fn oscillatory_integral<A: Amplitude + ?Sized>(
    phase: &Expr,
    omega: &[f64],
    amp: &A,
    k: f64,
    settings: &QuadSettings,
) -> Result<OscResult, OscError> {
    let plan = QuadPlan::build(settings, phase, omega, &amp.regions(), k)?;
    integrate_with_plan(&plan, phase, omega, amp, k)
}

pub fn integrate_with_plan<A: Amplitude + ?Sized>(
    plan: &QuadPlan,
    phase: &Expr,
    omega: &[f64],
    amp: &A,
    k: f64,
) -> Result<OscResult, OscError> {
    converge_plan(plan, phase, omega, amp, k).map(|(_, r)| r)
}

/// Like [`integrate_with_plan`], also returning the refined plan on which
/// the tolerance was met.
pub fn converge_plan<A: Amplitude + ?Sized>(
    plan: &QuadPlan,
    phase: &Expr,
    omega: &[f64],
    amp: &A,
    k: f64,
) -> Result<(QuadPlan, OscResult), OscError> {
    let mut plan = plan.clone();
    loop {
        let (low, _) = sum_on_plan(&plan, plan.order, phase, omega, amp, k)?;
        let (high, l1) = sum_on_plan(&plan, 2 * plan.order, phase, omega, amp, k)?;
        let error = (high - low).norm();
        let target = plan.rel_tol * high.norm() + plan.abs_tol * l1;
        if error <= target {
            let result = OscResult {
                value: high,
                error,
                panels: plan.panels(),
            };
            return Ok((plan, result));
        }
        if 2 * plan.panels() > plan.max_panels {
            return Err(OscError::ToleranceNotMet {
                achieved: error,
                target,
            });
        }
        plan = plan.refined();
    }
}

/// `L^n(φ)` with `L(φ) = -d/dt (φ / f_t)`.
///
/// Fails when `|f_t| < 1e-9` at any of 2048 grid points over `support`, or
/// when `f_t` changes sign between two of them.
pub fn ibp_transform(
    amplitude: &Expr,
    phase: &Expr,
    omega: &[f64],
    support: (f64, f64),
    n: usize,
) -> Result<Expr, OscError> {
    let f_t = phase.diff(Var::T);
    let (lo, hi) = support;
    let mut previous: Option<f64> = None;
    for i in 0..PHASE_GRID {
        let t = lo + (hi - lo) * i as f64 / (PHASE_GRID - 1) as f64;
        let v = f_t.eval(t, omega)?;
        // a sign change means a zero between grid points
        if v.abs() < STATIONARY_TOL || previous.is_some_and(|p| p * v < 0.0) {
            return Err(OscError::StationaryPointInSupport { t, value: v });
        }
        previous = Some(v);
    }
    let mut current = amplitude.clone();
    for _ in 0..n {
        current = (-(current / f_t.clone()).diff(Var::T)).simplify();
    }
    Ok(current)
}

/// Both sides of the `n`-fold integration-by-parts identity at frequency `k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IbpCheck {
    pub direct: Complex64,
    pub transformed: Complex64,
    pub relative_difference: f64,
}

pub fn ibp_identity(
    bump: &Bump,
    phase: &Expr,
    omega: &[f64],
    n: usize,
    k: f64,
    settings: &QuadSettings,
) -> Result<IbpCheck, OscError> {
    let direct = oscillatory_integral(phase, omega, bump, k, settings)?.value;
    let ln_phi = ibp_transform(&bump.to_expr(), phase, omega, bump.support(), n)?;
    let amp = ExprAmplitude {
        expr: ln_phi,
        omega: omega.to_vec(),
        regions: bump.breakpoints(),
    };
    let integral = oscillatory_integral(phase, omega, &amp, k, settings)?.value;
    let transformed = integral / Complex64::new(0.0, k).powi(n as i32);
    Ok(IbpCheck {
        direct,
        transformed,
        relative_difference: (direct - transformed).norm() / direct.norm(),
    })
}

/// Least-squares slope of `log|I|` against `log k`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayFit {
    pub slope: f64,
    pub intercept: f64,
    pub k: Vec<f64>,
    pub magnitude: Vec<f64>,
    /// Grid points dropped after `|I|` fell below 1e-300.
    pub truncated: usize,
}

pub fn decay_exponent<A: Amplitude + ?Sized>(
    phase: &Expr,
    omega: &[f64],
    amp: &A,
    k_grid: &[f64],
    settings: &QuadSettings,
) -> Result<DecayFit, OscError> {
    let mut ks = Vec::new();
    let mut mags = Vec::new();
    let mut truncated = 0;
    for (i, &k) in k_grid.iter().enumerate() {
        let m = oscillatory_integral(phase, omega, amp, k, settings)?.value.norm();
        if m < 1e-300 {
            truncated = k_grid.len() - i;
            break;
        }
        ks.push(k);
        mags.push(m);
    }
    if ks.len() < 2 {
        return Err(OscError::TooFewPoints {
            needed: 2,
            got: ks.len(),
        });
    }
    let xs: Vec<f64> = ks.iter().map(|k| k.ln()).collect();
    let ys: Vec<f64> = mags.iter().map(|m| m.ln()).collect();
    let (intercept, slope) = linear_fit(&xs, &ys);
    Ok(DecayFit {
        slope,
        intercept,
        k: ks,
        magnitude: mags,
        truncated,
    })
}

/// Ordinary least squares `y = a + b x`, returns `(a, b)`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let b = sxy / sxx;
    (my - b * mx, b)
}
