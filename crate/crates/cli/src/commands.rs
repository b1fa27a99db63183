use num_complex::Complex64;
use serde::Serialize;
use stochex::extremum::{
    estimate, geometric_grid, no_extrema_test, trace_curve, CurveTrace, ExtremumEstimate, NoExtremaReport,
    SpectralNodes, TraceOptions,
};
use stochex::oracle::{grid_extrema, Extrema};
use stochex::oscint::oscillatory_integral;
use stochex::phase::{asymptotic_sum, find_stationary_points, theorem2_asymptotic, StationaryPoint, Theorem2Report};
use stochex::prob::OmegaModel;

use crate::scenario::Loaded;
use crate::CliError;

fn numerical(e: impl std::fmt::Display) -> CliError {
    CliError::Numerical(e.to_string())
}

fn frequency(s: &Loaded, k: Option<f64>) -> Result<f64, CliError> {
    k.or(s.scenario.k.k)
        .ok_or_else(|| CliError::Validation("no frequency: pass --k or set k.k in the scenario".into()))
}

fn k_grid(s: &Loaded, k_max: f64) -> Vec<f64> {
    geometric_grid(k_max / 16.0, k_max, s.scenario.k.grid_size)
}

#[derive(Serialize)]
pub struct IntegralOutput {
    pub k: f64,
    pub omega_point: Vec<f64>,
    pub value: Complex64,
    pub abs: f64,
    pub error: f64,
    pub panels: usize,
}

pub fn integral(s: &Loaded, k: Option<f64>) -> Result<IntegralOutput, CliError> {
    let k = frequency(s, k)?;
    let r = oscillatory_integral(&s.process.expr, &s.omega_point, &s.bump, k, &s.scenario.quadrature)
        .map_err(numerical)?;
    Ok(IntegralOutput {
        k,
        omega_point: s.omega_point.clone(),
        value: r.value,
        abs: r.value.norm(),
        error: r.error,
        panels: r.panels,
    })
}

#[derive(Serialize)]
pub struct PhasesOutput {
    pub omega_point: Vec<f64>,
    pub window: (f64, f64),
    pub points: Vec<StationaryPoint>,
    /// Joint stationary point in `(t, ω)`, for deterministic and box models.
    pub joint: Option<Theorem2Report>,
    pub joint_error: Option<String>,
}

fn joint_applies(model: &OmegaModel) -> bool {
    matches!(model, OmegaModel::Deterministic | OmegaModel::Box { .. })
}

pub fn phases(s: &Loaded) -> Result<PhasesOutput, CliError> {
    let window = s.bump.support();
    let points = find_stationary_points(&s.process.expr, &s.omega_point, window).map_err(numerical)?;
    let (joint, joint_error) = if joint_applies(&s.model) {
        match theorem2_asymptotic(&s.process, &s.model, &s.bump, 1.0) {
            Ok((_, report)) => (Some(report), None),
            Err(e) => (None, Some(e.to_string())),
        }
    } else {
        (None, None)
    };
    Ok(PhasesOutput {
        omega_point: s.omega_point.clone(),
        window,
        points,
        joint,
        joint_error,
    })
}

#[derive(Serialize)]
pub struct AsymRow {
    pub k: f64,
    pub quadrature: Complex64,
    pub asymptotic: Complex64,
    /// `|quadrature - asymptotic| / |asymptotic|`; absent when the
    /// asymptotic value is zero.
    pub relative_error: Option<f64>,
}

fn row(k: f64, quadrature: Complex64, asymptotic: Complex64) -> AsymRow {
    let a = asymptotic.norm();
    AsymRow {
        k,
        quadrature,
        asymptotic,
        relative_error: (a > 0.0).then(|| (quadrature - asymptotic).norm() / a),
    }
}

#[derive(Serialize)]
pub struct Theorem1Table {
    pub omega_point: Vec<f64>,
    pub points: Vec<StationaryPoint>,
    pub rows: Vec<AsymRow>,
}

#[derive(Serialize)]
pub struct Theorem2Table {
    pub report: Theorem2Report,
    pub rows: Vec<AsymRow>,
}

#[derive(Serialize)]
pub struct AsymOutput {
    pub theorem1: Theorem1Table,
    pub theorem2: Option<Theorem2Table>,
    pub theorem2_error: Option<String>,
}

pub fn asym(s: &Loaded, k: Option<f64>) -> Result<AsymOutput, CliError> {
    let ks = match k {
        Some(k) => vec![k],
        None => k_grid(s, s.scenario.k.k_max),
    };
    if ks.iter().any(|k| !(*k > 0.0)) {
        return Err(CliError::Validation("asym needs k > 0".into()));
    }
    let expr = &s.process.expr;
    let w = &s.omega_point;
    let points = find_stationary_points(expr, w, s.bump.support()).map_err(numerical)?;
    let phi: Vec<f64> = points.iter().map(|p| s.bump.eval(p.t_star)).collect();
    let mut rows = Vec::with_capacity(ks.len());
    for &k in &ks {
        let q = oscillatory_integral(expr, w, &s.bump, k, &s.scenario.quadrature).map_err(numerical)?;
        let a = asymptotic_sum(&points, &phi, k).map_err(numerical)?;
        rows.push(row(k, q.value, a));
    }
    let theorem1 = Theorem1Table {
        omega_point: w.clone(),
        points,
        rows,
    };

    let box_model = matches!(s.model, OmegaModel::Box { .. });
    let (theorem2, theorem2_error) = if box_model {
        match theorem2_asymptotic(&s.process, &s.model, &s.bump, ks[0]) {
            Ok((_, report)) => {
                let mut rows = Vec::with_capacity(ks.len());
                for &k in &ks {
                    let (a, _) = theorem2_asymptotic(&s.process, &s.model, &s.bump, k).map_err(numerical)?;
                    let nodes = SpectralNodes::build(&s.process, &s.model, &s.bump, k, &s.scenario.quadrature)
                        .map_err(numerical)?;
                    rows.push(row(k, nodes.eval(k), a));
                }
                (Some(Theorem2Table { report, rows }), None)
            }
            Err(e) => (None, Some(e.to_string())),
        }
    } else {
        (None, None)
    };
    Ok(AsymOutput {
        theorem1,
        theorem2,
        theorem2_error,
    })
}

fn trace_options(s: &Loaded, k_max: f64) -> TraceOptions {
    TraceOptions {
        checkpoints: k_grid(s, k_max),
        ..TraceOptions::new(k_max)
    }
}

pub fn trace(s: &Loaded, k: Option<f64>) -> Result<CurveTrace, CliError> {
    let k_max = k.unwrap_or(s.scenario.k.k_max);
    if !(k_max > 0.0) {
        return Err(CliError::Validation("k_max must be positive".into()));
    }
    trace_curve(&s.process, &s.model, &s.bump, &trace_options(s, k_max), &s.scenario.quadrature)
        .map_err(numerical)
}

pub fn trace_csv(trace: &CurveTrace) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| CliError::Io(e.to_string());
    w.write_record(["lambda", "re_J", "im_J", "abs_J", "theta_unwrapped", "E_of_lambda"])
        .map_err(io)?;
    for ((l, j), (th, e)) in trace
        .lambda
        .iter()
        .zip(&trace.j)
        .zip(trace.theta.iter().zip(trace.e_of_lambda()))
    {
        w.write_record([
            l.to_string(),
            j.re.to_string(),
            j.im.to_string(),
            j.norm().to_string(),
            th.to_string(),
            e.to_string(),
        ])
        .map_err(io)?;
    }
    w.into_inner().map_err(|e| CliError::Io(e.to_string()))
}

#[derive(Serialize)]
pub struct TraceSummary {
    pub points: usize,
    pub step: f64,
    pub k_max: f64,
    pub theta_at_k_max: f64,
    pub min_abs_j: f64,
    pub bisections: usize,
    pub spectral_nodes: usize,
}

#[derive(Serialize)]
pub struct EstimateOutput {
    pub estimate: ExtremumEstimate,
    pub verdict: NoExtremaReport,
    pub trace: TraceSummary,
}

pub fn estimate_cmd(s: &Loaded, k: Option<f64>) -> Result<EstimateOutput, CliError> {
    let t = trace(s, k)?;
    let k_max = *t.lambda.last().expect("trace is non-empty");
    let est = estimate(&t, &k_grid(s, k_max)).map_err(numerical)?;
    let verdict = no_extrema_test(&est, s.scenario.no_extrema_tolerance);
    Ok(EstimateOutput {
        verdict,
        trace: TraceSummary {
            points: t.lambda.len(),
            step: t.step,
            k_max,
            theta_at_k_max: *t.theta.last().expect("trace is non-empty"),
            min_abs_j: t.min_abs_j,
            bisections: t.bisections,
            spectral_nodes: t.spectral_nodes,
        },
        estimate: est,
    })
}

pub fn oracle(s: &Loaded) -> Result<Extrema, CliError> {
    grid_extrema(&s.process, &s.model, s.scenario.oracle_resolution).map_err(numerical)
}
