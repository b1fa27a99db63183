//! The extremal-value estimator.
//!
//! `J(λ) = ∫_Ω ∫ φ(t) e^{iλξ(t,ω)} dt dP(ω)` is traced along a λ grid, its
//! argument is unwrapped along the way (the continuous branch of `ln J`, i.e.
//! `Im ∫ dz/z` along the curve) and `E(k) = θ(k)/k` is extrapolated in `1/k`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::bump::Bump;
use crate::expr::{EvalError, Expr, ProcessSpec, Var};
use crate::oscint::{converge_plan, linear_fit, OscError, QuadPlan, QuadSettings};
use crate::prob::{OmegaModel, ProbError};
use crate::quad::{composite_nodes, gauss_legendre, uniform_breaks};

pub const DEFAULT_K_MAX: f64 = 800.0;
pub const DEFAULT_GRID_SIZE: usize = 24;
pub const DEFAULT_MAX_BISECT: usize = 12;
/// Steps touching `|J| < DIP_LEVEL·|J(0)|` are unwrapped more cautiously.
pub const DIP_LEVEL: f64 = 1e-3;
/// `|J| < AMBIGUOUS_LEVEL·|J(0)|` makes the winding undecidable.
pub const AMBIGUOUS_LEVEL: f64 = 1e-13;
/// Upper limit on stored `(ξ, weight)` pairs.
pub const MAX_SPECTRAL_NODES: usize = 12_000_000;

const CHUNK: usize = 4096;
const RESEED: usize = 256;
const COARSE: usize = 65;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExtremumError {
    #[error("k_max must be finite and positive, got {0}")]
    KMax(f64),
    #[error("winding ambiguous near lambda = {lambda}: |J| = {abs_j:e} relative to |J(0)|")]
    WindingAmbiguous { lambda: f64, abs_j: f64 },
    #[error("J(0) = {0} is not real and positive")]
    BranchStart(Complex64),
    #[error("degenerate fit: {usable} usable points, at least 4 required")]
    DegenerateFit { usable: usize },
    #[error("k = {0} is not on the traced lambda grid")]
    OffGrid(f64),
    #[error("{needed} spectral nodes exceed the budget of {MAX_SPECTRAL_NODES}")]
    Budget { needed: usize },
    #[error("quadrature: {0}")]
    Quad(#[from] OscError),
    #[error("omega model: {0}")]
    Model(#[from] ProbError),
    #[error("evaluation failed: {0}")]
    Eval(#[from] EvalError),
}

/// The distribution of `ξ` under `φ(t) dt dP(ω)` as weighted point masses, so
/// that `J(λ) = Σ w_i e^{iλ v_i}`. Accurate for `|λ| ≤ k_max`.
#[derive(Debug, Clone)]
pub struct SpectralNodes {
    pub values: Vec<f64>,
    pub weights: Vec<f64>,
    pub k_max: f64,
}

/// Coarse `(t, ω)` sweep: `max |ξ|` and, per ω axis, `max |∂ξ/∂w_d|`.
fn coarse_scan(process: &ProcessSpec, model: &OmegaModel, bump: &Bump) -> Result<(f64, Vec<f64>), EvalError> {
    let (lo, hi) = bump.support();
    let ts = uniform_breaks(lo, hi, COARSE - 1);
    let omegas = model.validation_points(COARSE);
    let dw: Vec<Expr> = (1..=model.dim()).map(|d| process.expr.diff(Var::W(d))).collect();
    let mut xi_max: f64 = 0.0;
    let mut slopes = vec![0.0f64; dw.len()];
    for omega in &omegas {
        for &t in &ts {
            xi_max = xi_max.max(process.expr.eval(t, omega)?.abs());
            for (s, d) in slopes.iter_mut().zip(&dw) {
                *s = s.max(d.eval(t, omega)?.abs());
            }
        }
    }
    Ok((xi_max, slopes))
}

impl SpectralNodes {
    /// Nodes for `process` with the (normalized) `bump` and `model`. Each
    /// ω node gets its own converged time quadrature at `k_max`; box models
    /// are split into panels of about eight oscillations at `k_max`.
    pub fn build(
        process: &ProcessSpec,
        model: &OmegaModel,
        bump: &Bump,
        k_max: f64,
        settings: &QuadSettings,
    ) -> Result<SpectralNodes, ExtremumError> {
        let (_, slopes) = coarse_scan(process, model, bump)?;
        let omega_nodes = match model {
            OmegaModel::Box { density, nodes } => {
                let panels: Vec<usize> = slopes
                    .iter()
                    .zip(&density.bounds)
                    .map(|(s, (lo, hi))| {
                        let oscillations = k_max * s * (hi - lo) / (2.0 * PI);
                        ((oscillations / (*nodes as f64 / 8.0)).ceil() as usize).max(1)
                    })
                    .collect();
                model.nodes(Some(&panels))
            }
            _ => model.nodes(None),
        };
        let expr = &process.expr;
        let regions = bump.breakpoints();
        let per_omega: Vec<Result<(Vec<f64>, Vec<f64>), ExtremumError>> = omega_nodes
            .par_iter()
            .map(|(omega, w_omega)| {
                if *w_omega == 0.0 {
                    return Ok((Vec::new(), Vec::new()));
                }
                let plan = QuadPlan::build(settings, expr, omega, &regions, k_max)?;
                let (plan, _) = converge_plan(&plan, expr, omega, bump, k_max)?;
                // the order-p sum is within the converged p-vs-2p difference
                let rule = gauss_legendre(plan.order);
                let mut values = Vec::new();
                let mut weights = Vec::new();
                for (t, w) in composite_nodes(&plan.breaks, &rule) {
                    let phi = bump.eval(t);
                    if phi == 0.0 {
                        continue;
                    }
                    values.push(expr.eval(t, omega)?);
                    weights.push(w * phi * w_omega);
                }
                Ok((values, weights))
            })
            .collect();
        let mut values = Vec::new();
        let mut weights = Vec::new();
        for r in per_omega {
            let (v, w) = r?;
            values.extend(v);
            weights.extend(w);
            if values.len() > MAX_SPECTRAL_NODES {
                return Err(ExtremumError::Budget {
                    needed: values.len(),
                });
            }
        }
        Ok(SpectralNodes {
            values,
            weights,
            k_max,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `J(λ)` summed directly. Chunk sums are combined in a fixed order, so
    /// the result does not depend on the thread count.
    pub fn eval(&self, lambda: f64) -> Complex64 {
        let partial: Vec<Complex64> = self
            .values
            .par_chunks(CHUNK)
            .zip(self.weights.par_chunks(CHUNK))
            .map(|(v, w)| {
                v.iter()
                    .zip(w)
                    .map(|(&v, &w)| Complex64::from_polar(w, lambda * v))
                    .sum()
            })
            .collect();
        partial.into_iter().sum()
    }

    /// `J(j·step)` for `j = 0..=count` by rotating each node's phasor, with a
    /// direct re-evaluation every 256 steps to stop rounding drift.
    pub fn eval_uniform(&self, step: f64, count: usize) -> Vec<Complex64> {
        let partial: Vec<Vec<Complex64>> = self
            .values
            .par_chunks(CHUNK)
            .zip(self.weights.par_chunks(CHUNK))
            .map(|(v, w)| {
                let n = v.len();
                let (mut zr, mut zi) = (vec![0.0; n], vec![0.0; n]);
                let (mut rr, mut ri) = (vec![0.0; n], vec![0.0; n]);
                for i in 0..n {
                    let (s, c) = (step * v[i]).sin_cos();
                    rr[i] = c;
                    ri[i] = s;
                }
                let mut out = Vec::with_capacity(count + 1);
                for j in 0..=count {
                    if j % RESEED == 0 {
                        let lambda = j as f64 * step;
                        for i in 0..n {
                            let (s, c) = (lambda * v[i]).sin_cos();
                            zr[i] = w[i] * c;
                            zi[i] = w[i] * s;
                        }
                    }
                    out.push(Complex64::new(lane_sum(&zr), lane_sum(&zi)));
                    for i in 0..n {
                        let (a, b) = (zr[i], zi[i]);
                        zr[i] = a * rr[i] - b * ri[i];
                        zi[i] = a * ri[i] + b * rr[i];
                    }
                }
                out
            })
            .collect();
        let mut total = vec![Complex64::new(0.0, 0.0); count + 1];
        for chunk in partial {
            for (t, c) in total.iter_mut().zip(chunk) {
                *t += c;
            }
        }
        total
    }
}

/// Sum in eight interleaved lanes, which vectorizes and is still a fixed order.
fn lane_sum(x: &[f64]) -> f64 {
    let mut lanes = [0.0; 8];
    let mut chunks = x.chunks_exact(8);
    for c in &mut chunks {
        for (l, v) in lanes.iter_mut().zip(c) {
            *l += v;
        }
    }
    let tail: f64 = chunks.remainder().iter().sum();
    lanes.iter().sum::<f64>() + tail
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceOptions {
    pub k_max: f64,
    /// Extra λ values, evaluated directly and merged into the grid.
    pub checkpoints: Vec<f64>,
    /// Divides the base step `π/(4·max|ξ|)`; 2 doubles the grid.
    pub grid_factor: f64,
    pub max_bisect: usize,
}

impl TraceOptions {
    /// Default options with the standard geometric k grid as checkpoints.
    pub fn new(k_max: f64) -> TraceOptions {
        TraceOptions {
            k_max,
            checkpoints: geometric_grid(k_max / 16.0, k_max, DEFAULT_GRID_SIZE),
            grid_factor: 1.0,
            max_bisect: DEFAULT_MAX_BISECT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurveTrace {
    pub lambda: Vec<f64>,
    pub j: Vec<Complex64>,
    /// Unwrapped argument, `theta[0] = 0`.
    pub theta: Vec<f64>,
    /// Smallest `|J|/|J(0)|` seen, including bisection points.
    pub min_abs_j: f64,
    pub j0: f64,
    pub step: f64,
    pub bisections: usize,
    pub epsilon: f64,
    pub spectral_nodes: usize,
}

impl CurveTrace {
    /// `E(λ) = θ(λ)/λ`, `NaN` at `λ = 0`.
    pub fn e_of_lambda(&self) -> Vec<f64> {
        self.lambda
            .iter()
            .zip(&self.theta)
            .map(|(&l, &th)| if l == 0.0 { f64::NAN } else { th / l })
            .collect()
    }

    /// Index of `k` on the λ grid.
    pub fn index_of(&self, k: f64) -> Option<usize> {
        let i = self.lambda.partition_point(|&l| l < k);
        [i.checked_sub(1), Some(i)]
            .into_iter()
            .flatten()
            .filter(|&i| i < self.lambda.len())
            .find(|&i| (self.lambda[i] - k).abs() <= 1e-12 * k.abs().max(1.0))
    }
}

/// Traces `J` from `λ = 0` to `k_max` with the bump normalized.
pub fn trace_curve(
    process: &ProcessSpec,
    model: &OmegaModel,
    bump: &Bump,
    options: &TraceOptions,
    settings: &QuadSettings,
) -> Result<CurveTrace, ExtremumError> {
    let k_max = options.k_max;
    if !(k_max.is_finite() && k_max > 0.0) {
        return Err(ExtremumError::KMax(k_max));
    }
    let bump = bump.with_normalized(true);
    let nodes = SpectralNodes::build(process, model, &bump, k_max, settings)?;
    trace_with_nodes(&nodes, process, model, &bump, options)
}

/// [`trace_curve`] with prebuilt spectral nodes.
pub fn trace_with_nodes(
    nodes: &SpectralNodes,
    process: &ProcessSpec,
    model: &OmegaModel,
    bump: &Bump,
    options: &TraceOptions,
) -> Result<CurveTrace, ExtremumError> {
    let k_max = options.k_max;
    let (xi_max, _) = coarse_scan(process, model, bump)?;
    let base = if xi_max > 0.0 {
        (PI / (4.0 * xi_max)).min(k_max / 64.0)
    } else {
        k_max / 64.0
    };
    let count = (k_max / (base / options.grid_factor)).ceil() as usize;
    let step = k_max / count as f64;
    let uniform = nodes.eval_uniform(step, count);

    let j0 = uniform[0];
    if !(j0.re > 0.0 && j0.im == 0.0) {
        return Err(ExtremumError::BranchStart(j0));
    }
    let j0 = j0.re;

    let mut extra: Vec<f64> = options
        .checkpoints
        .iter()
        .copied()
        .filter(|&k| k > 0.0 && k < k_max)
        .filter(|&k| {
            let r = k / step;
            (r - r.round()).abs() > 1e-9 * r.max(1.0)
        })
        .collect();
    extra.sort_by(f64::total_cmp);
    extra.dedup();
    let extra_j: Vec<Complex64> = extra.iter().map(|&l| nodes.eval(l)).collect();

    let mut lambda = Vec::with_capacity(count + 1 + extra.len());
    let mut j = Vec::with_capacity(lambda.capacity());
    let mut e = 0;
    for (i, &u) in uniform.iter().enumerate() {
        let l = if i == count { k_max } else { i as f64 * step };
        while e < extra.len() && extra[e] < l {
            lambda.push(extra[e]);
            j.push(extra_j[e]);
            e += 1;
        }
        lambda.push(l);
        j.push(u);
    }

    let mut unwrap = Unwrapper {
        nodes,
        j0,
        max_depth: options.max_bisect,
        min_abs: 1.0,
        bisections: 0,
    };
    for (&l, z) in lambda.iter().zip(&j) {
        unwrap.observe(l, *z)?;
    }
    let mut theta = vec![0.0; lambda.len()];
    for i in 1..lambda.len() {
        theta[i] = theta[i - 1] + unwrap.increment(lambda[i - 1], j[i - 1], lambda[i], j[i], 0)?;
    }
    Ok(CurveTrace {
        lambda,
        j,
        theta,
        min_abs_j: unwrap.min_abs,
        j0,
        step,
        bisections: unwrap.bisections,
        epsilon: bump.spec().epsilon,
        spectral_nodes: nodes.len(),
    })
}

struct Unwrapper<'a> {
    nodes: &'a SpectralNodes,
    j0: f64,
    max_depth: usize,
    min_abs: f64,
    bisections: usize,
}

impl Unwrapper<'_> {
    fn observe(&mut self, lambda: f64, z: Complex64) -> Result<(), ExtremumError> {
        let rel = z.norm() / self.j0;
        self.min_abs = self.min_abs.min(rel);
        if rel < AMBIGUOUS_LEVEL {
            return Err(ExtremumError::WindingAmbiguous { lambda, abs_j: rel });
        }
        Ok(())
    }

    /// Argument change from `a` to `b`: the principal increment once it is
    /// below π/2 (π/8 inside a dip), else the sum over the two halves.
    fn increment(
        &mut self,
        a: f64,
        ja: Complex64,
        b: f64,
        jb: Complex64,
        depth: usize,
    ) -> Result<f64, ExtremumError> {
        let d = (jb * ja.conj()).arg();
        let dip = ja.norm().min(jb.norm()) < DIP_LEVEL * self.j0;
        let limit = if dip { PI / 8.0 } else { PI / 2.0 };
        if d.abs() <= limit {
            return Ok(d);
        }
        if depth >= self.max_depth {
            if d.abs() < PI / 2.0 {
                return Ok(d);
            }
            return Err(ExtremumError::WindingAmbiguous {
                lambda: 0.5 * (a + b),
                abs_j: ja.norm().min(jb.norm()) / self.j0,
            });
        }
        self.bisections += 1;
        let m = 0.5 * (a + b);
        let jm = self.nodes.eval(m);
        self.observe(m, jm)?;
        Ok(self.increment(a, ja, m, jm, depth + 1)? + self.increment(m, jm, b, jb, depth + 1)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExtremumEstimate {
    pub k: Vec<f64>,
    pub e: Vec<f64>,
    /// `a` of the `a + b/k` fit, when the fit converged.
    pub limit: Option<f64>,
    pub smax: f64,
    pub smin: f64,
    /// `b` of the top-half fit.
    pub fit_b: f64,
    /// RMS residual of the top-half fit.
    pub residual: f64,
    pub converged: bool,
    /// Windowed extrapolants; a single entry when converged.
    pub extrapolants: Vec<f64>,
    /// Log-log slope of `|E(k) - limit|`, about -1 for a `1/k` correction.
    pub correction_exponent: Option<f64>,
    pub epsilon: f64,
}

fn fit_inverse(ks: &[f64], es: &[f64]) -> (f64, f64, f64) {
    let xs: Vec<f64> = ks.iter().map(|k| 1.0 / k).collect();
    let (a, b) = linear_fit(&xs, es);
    let rms = (xs
        .iter()
        .zip(es)
        .map(|(x, e)| (e - a - b * x).powi(2))
        .sum::<f64>()
        / xs.len() as f64)
        .sqrt();
    (a, b, rms)
}

/// `E(k) = θ(k)/k` on `k_grid` (which must lie on the trace), extrapolated
/// in `1/k` over the top half of the grid.
pub fn estimate(trace: &CurveTrace, k_grid: &[f64]) -> Result<ExtremumEstimate, ExtremumError> {
    let mut k = Vec::with_capacity(k_grid.len());
    let mut e = Vec::with_capacity(k_grid.len());
    for &kk in k_grid {
        let i = trace.index_of(kk).ok_or(ExtremumError::OffGrid(kk))?;
        let value = trace.theta[i] / trace.lambda[i];
        if value.is_finite() {
            k.push(trace.lambda[i]);
            e.push(value);
        }
    }
    let top = k.len() / 2;
    let (tk, te) = (&k[top..], &e[top..]);
    if tk.len() < 4 {
        return Err(ExtremumError::DegenerateFit { usable: tk.len() });
    }
    let (a, b, residual) = fit_inverse(tk, te);
    let converged = residual < 1e-3 * (1.0 + a.abs());
    let extrapolants = if converged {
        vec![a]
    } else {
        let width = (tk.len() / 2).max(4);
        (0..=tk.len() - width)
            .map(|s| fit_inverse(&tk[s..s + width], &te[s..s + width]).0)
            .collect()
    };
    let smax = extrapolants.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let smin = extrapolants.iter().copied().fold(f64::INFINITY, f64::min);
    let centre = if converged { a } else { 0.5 * (smax + smin) };
    let (lx, ly): (Vec<f64>, Vec<f64>) = k
        .iter()
        .zip(&e)
        .filter(|(_, &v)| (v - centre).abs() > 0.0)
        .map(|(kk, v)| (kk.ln(), (v - centre).abs().ln()))
        .unzip();
    let correction_exponent = (lx.len() >= 2).then(|| linear_fit(&lx, &ly).1);
    Ok(ExtremumEstimate {
        k,
        e,
        limit: converged.then_some(a),
        smax,
        smin,
        fit_b: b,
        residual,
        converged,
        extrapolants,
        correction_exponent,
        epsilon: trace.epsilon,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NoExtremaReport {
    pub no_extrema: bool,
    pub tolerance: f64,
    pub limit: Option<f64>,
    pub converged: bool,
    pub k: Vec<f64>,
    pub e: Vec<f64>,
}

/// True when the fit converged and `|limit| ≤ tolerance`.
pub fn no_extrema_test(estimate: &ExtremumEstimate, tolerance: f64) -> NoExtremaReport {
    NoExtremaReport {
        no_extrema: estimate.converged && estimate.limit.is_some_and(|a| a.abs() <= tolerance),
        tolerance,
        limit: estimate.limit,
        converged: estimate.converged,
        k: estimate.k.clone(),
        e: estimate.e.clone(),
    }
}

/// `n` geometrically spaced points from `lo` to `hi` inclusive.
pub fn geometric_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![hi],
        _ => (0..n)
            .map(|i| {
                if i == n - 1 {
                    hi
                } else {
                    lo * (hi / lo).powf(i as f64 / (n - 1) as f64)
                }
            })
            .collect(),
    }
}

/// Trace and estimate with the default geometric k grid.
pub fn estimate_process(
    process: &ProcessSpec,
    model: &OmegaModel,
    bump: &Bump,
    k_max: f64,
    settings: &QuadSettings,
) -> Result<(CurveTrace, ExtremumEstimate), ExtremumError> {
    let options = TraceOptions::new(k_max);
    let trace = trace_curve(process, model, bump, &options, settings)?;
    let est = estimate(&trace, &options.checkpoints)?;
    Ok((trace, est))
}
