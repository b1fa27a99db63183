use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use stochex::expr::ProcessSpec;
use stochex::extremum::{DEFAULT_GRID_SIZE, DEFAULT_K_MAX};
use stochex::oscint::QuadSettings;
use stochex::prob::{OmegaModel, OmegaSpec};
use stochex::{Bump, BumpSpec};

use crate::CliError;

/// Top-level scenario file. See `docs/scenario.md` for the schema.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub process: ProcessSection,
    pub bump: BumpSection,
    #[serde(default = "deterministic")]
    pub omega: OmegaSpec,
    #[serde(default)]
    pub k: KSection,
    #[serde(default)]
    pub quadrature: QuadSettings,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_tolerance")]
    pub no_extrema_tolerance: f64,
    #[serde(default = "default_resolution")]
    pub oracle_resolution: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProcessSection {
    pub formula: String,
    pub interval: [f64; 2],
    #[serde(default)]
    pub omega_dim: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BumpSection {
    pub epsilon: f64,
    #[serde(default = "yes")]
    pub normalized: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KSection {
    #[serde(default = "default_k_max")]
    pub k_max: f64,
    #[serde(default = "default_grid_size")]
    pub grid_size: usize,
    /// Frequency for single-k commands.
    #[serde(default)]
    pub k: Option<f64>,
    /// ω at which single-ω commands run.
    #[serde(default)]
    pub omega_point: Option<Vec<f64>>,
}

impl Default for KSection {
    fn default() -> Self {
        KSection {
            k_max: DEFAULT_K_MAX,
            grid_size: DEFAULT_GRID_SIZE,
            k: None,
            omega_point: None,
        }
    }
}

fn deterministic() -> OmegaSpec {
    OmegaSpec::Deterministic
}

fn yes() -> bool {
    true
}

fn default_tolerance() -> f64 {
    0.01
}

fn default_resolution() -> usize {
    256
}

fn default_k_max() -> f64 {
    DEFAULT_K_MAX
}

fn default_grid_size() -> usize {
    DEFAULT_GRID_SIZE
}

/// Smallest k grid with at least 8 points in its top half.
pub const MIN_GRID_SIZE: usize = 16;

/// A scenario that passed validation, with everything built.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub scenario: Scenario,
    pub sha256: String,
    pub process: ProcessSpec,
    pub model: OmegaModel,
    pub bump: Bump,
    pub omega_point: Vec<f64>,
}

fn invalid(msg: impl std::fmt::Display) -> CliError {
    CliError::Validation(msg.to_string())
}

pub fn load(path: &Path) -> Result<Loaded, CliError> {
    let bytes =
        std::fs::read(path).map_err(|e| invalid(format!("cannot read {}: {e}", path.display())))?;
    let sha256 = hex::encode(Sha256::digest(&bytes));
    let scenario: Scenario =
        serde_json::from_slice(&bytes).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    validate(scenario, sha256)
}

pub fn validate(scenario: Scenario, sha256: String) -> Result<Loaded, CliError> {
    let [a, b] = scenario.process.interval;
    let process =
        ProcessSpec::new(&scenario.process.formula, (a, b), scenario.process.omega_dim).map_err(invalid)?;
    let bump = Bump::new(BumpSpec {
        a,
        b,
        epsilon: scenario.bump.epsilon,
        normalized: scenario.bump.normalized,
    })
    .map_err(invalid)?;
    let model = OmegaModel::from_spec(&scenario.omega, scenario.seed).map_err(invalid)?;
    if model.dim() != process.omega_dim {
        return Err(invalid(format!(
            "omega model has dimension {} but the process declares omega_dim = {}",
            model.dim(),
            process.omega_dim
        )));
    }
    let k = &scenario.k;
    if !(k.k_max.is_finite() && k.k_max > 0.0) {
        return Err(invalid(format!("k_max must be finite and positive, got {}", k.k_max)));
    }
    if k.grid_size < MIN_GRID_SIZE {
        return Err(invalid(format!("grid_size must be at least {MIN_GRID_SIZE}, got {}", k.grid_size)));
    }
    if let Some(kk) = k.k {
        if !kk.is_finite() {
            return Err(invalid("k must be finite"));
        }
    }
    let q = &scenario.quadrature;
    if q.order < 2 || !(q.rel_tol > 0.0) || !(q.abs_tol >= 0.0) || !(q.oscillations_per_panel > 0.0) {
        return Err(invalid("quadrature needs order >= 2, rel_tol > 0, abs_tol >= 0, oscillations_per_panel > 0"));
    }
    if !(scenario.no_extrema_tolerance >= 0.0) {
        return Err(invalid("no_extrema_tolerance must be non-negative"));
    }
    if scenario.oracle_resolution < stochex::oracle::MIN_RESOLUTION {
        return Err(invalid(format!(
            "oracle_resolution must be at least {}",
            stochex::oracle::MIN_RESOLUTION
        )));
    }
    process
        .check_nonnegative((a, b), &model.validation_points(17), 512)
        .map_err(invalid)?;
    let omega_point = match &k.omega_point {
        Some(w) => {
            if w.len() != process.omega_dim {
                return Err(invalid(format!(
                    "omega_point has {} components, expected {}",
                    w.len(),
                    process.omega_dim
                )));
            }
            w.clone()
        }
        None => default_omega_point(&model),
    };
    Ok(Loaded {
        scenario,
        sha256,
        process,
        model,
        bump,
        omega_point,
    })
}

/// First atom for discrete models, the box centre for continuous ones.
fn default_omega_point(model: &OmegaModel) -> Vec<f64> {
    match model {
        OmegaModel::Deterministic => Vec::new(),
        OmegaModel::Discrete(atoms) => atoms[0].point.clone(),
        _ => model
            .bounds()
            .map(|b| b.iter().map(|(lo, hi)| 0.5 * (lo + hi)).collect())
            .unwrap_or_default(),
    }
}
