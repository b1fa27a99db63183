//! Concrete probability models for the random coordinate ω.

use num_complex::Complex64;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{EvalError, Expr, ParseError};
use crate::quad::{composite_nodes, gauss_legendre, uniform_breaks};

/// Largest Ω dimension for box and Monte Carlo models.
pub const MAX_BOX_DIM: usize = 2;

pub const DEFAULT_BOX_NODES: usize = 64;

const MC_CHUNK: usize = 4096;
const DENSITY_CHECK_GRID: usize = 33;

fn default_density() -> String {
    "1".into()
}

fn default_nodes() -> usize {
    DEFAULT_BOX_NODES
}

fn default_samples() -> usize {
    20_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub point: Vec<f64>,
    pub weight: f64,
}

/// Serializable description of an Ω model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OmegaSpec {
    Deterministic,
    Discrete {
        atoms: Vec<Atom>,
    },
    Box {
        bounds: Vec<[f64; 2]>,
        #[serde(default = "default_density")]
        density: String,
        #[serde(default = "default_nodes")]
        nodes: usize,
    },
    MonteCarlo {
        bounds: Vec<[f64; 2]>,
        #[serde(default = "default_density")]
        density: String,
        #[serde(default = "default_samples")]
        samples: usize,
        #[serde(default)]
        seed: Option<u64>,
    },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProbError {
    #[error("discrete weights must be non-negative and sum to 1, got sum {0}")]
    Weights(f64),
    #[error("discrete model needs at least one atom, all of dimension {0}")]
    Atoms(usize),
    #[error("box dimension must be 1..={MAX_BOX_DIM}, got {0}")]
    Dimension(usize),
    #[error("bounds must be finite with lo < hi, got {0:?}")]
    Bounds([f64; 2]),
    #[error("density: {0}")]
    DensityParse(#[from] ParseError),
    #[error("density evaluation failed at {omega:?}: {source}")]
    DensityEval { omega: Vec<f64>, source: EvalError },
    #[error("density negative ({value}) at {omega:?}")]
    NegativeDensity { omega: Vec<f64>, value: f64 },
    #[error("density mass {0} is not within 1e-3 of 1")]
    Mass(f64),
    #[error("at least one quadrature node and one sample are required")]
    Empty,
    #[error("pointwise density is only defined for box models")]
    Unsupported,
    #[error("point {omega:?} is outside the model bounds")]
    OutOfBounds { omega: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IntegrateError<E> {
    #[error("integrand failed at {omega:?}: {source}")]
    Integrand { omega: Vec<f64>, source: E },
    #[error("non-finite integrand value at {omega:?}")]
    NonFinite { omega: Vec<f64> },
}

/// Density over a box, renormalized to unit mass.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxDensity {
    pub bounds: Vec<(f64, f64)>,
    pub density: Expr,
    /// Renormalization factor applied to `density`.
    pub scale: f64,
}

impl BoxDensity {
    fn new(bounds: &[[f64; 2]], density: &str, nodes: usize) -> Result<BoxDensity, ProbError> {
        if bounds.is_empty() || bounds.len() > MAX_BOX_DIM {
            return Err(ProbError::Dimension(bounds.len()));
        }
        for b in bounds {
            if !(b[0].is_finite() && b[1].is_finite() && b[0] < b[1]) {
                return Err(ProbError::Bounds(*b));
            }
        }
        let density = Expr::parse(density, bounds.len())?;
        let mut this = BoxDensity {
            bounds: bounds.iter().map(|b| (b[0], b[1])).collect(),
            density,
            scale: 1.0,
        };
        for omega in tensor_points(&this.bounds, DENSITY_CHECK_GRID) {
            let value = this.raw(&omega)?;
            if value < 0.0 {
                return Err(ProbError::NegativeDensity { omega, value });
            }
        }
        let mut mass = 0.0;
        for (omega, w) in tensor_nodes(&this.bounds, nodes, &vec![1; bounds.len()]) {
            mass += w * this.raw(&omega)?;
        }
        if !((mass - 1.0).abs() <= 1e-3) {
            return Err(ProbError::Mass(mass));
        }
        if (mass - 1.0).abs() > 1e-12 {
            this.scale = 1.0 / mass;
        }
        Ok(this)
    }

    fn raw(&self, omega: &[f64]) -> Result<f64, ProbError> {
        self.density
            .eval(0.0, omega)
            .map_err(|source| ProbError::DensityEval {
                omega: omega.to_vec(),
                source,
            })
    }

    pub fn value(&self, omega: &[f64]) -> Result<f64, ProbError> {
        Ok(self.scale * self.raw(omega)?)
    }

    pub fn contains(&self, omega: &[f64]) -> bool {
        omega.len() == self.bounds.len()
            && omega
                .iter()
                .zip(&self.bounds)
                .all(|(w, (lo, hi))| (*lo..=*hi).contains(w))
    }

    pub fn volume(&self) -> f64 {
        self.bounds.iter().map(|(lo, hi)| hi - lo).product()
    }
}

/// A validated Ω model.
#[derive(Debug, Clone, PartialEq)]
pub enum OmegaModel {
    Deterministic,
    Discrete(Vec<Atom>),
    Box {
        density: BoxDensity,
        nodes: usize,
    },
    MonteCarlo {
        density: BoxDensity,
        samples: usize,
        seed: u64,
    },
}

impl OmegaModel {
    /// Validates `spec`; `default_seed` is used when a Monte Carlo spec has none.
    pub fn from_spec(spec: &OmegaSpec, default_seed: u64) -> Result<OmegaModel, ProbError> {
        Ok(match spec {
            OmegaSpec::Deterministic => OmegaModel::Deterministic,
            OmegaSpec::Discrete { atoms } => {
                let dim = atoms.first().map_or(0, |a| a.point.len());
                if atoms.is_empty() || atoms.iter().any(|a| a.point.len() != dim) {
                    return Err(ProbError::Atoms(dim));
                }
                let sum: f64 = atoms.iter().map(|a| a.weight).sum();
                if atoms.iter().any(|a| !(a.weight >= 0.0)) || !((sum - 1.0).abs() <= 1e-12) {
                    return Err(ProbError::Weights(sum));
                }
                OmegaModel::Discrete(atoms.clone())
            }
            OmegaSpec::Box {
                bounds,
                density,
                nodes,
            } => {
                if *nodes == 0 {
                    return Err(ProbError::Empty);
                }
                OmegaModel::Box {
                    density: BoxDensity::new(bounds, density, *nodes)?,
                    nodes: *nodes,
                }
            }
            OmegaSpec::MonteCarlo {
                bounds,
                density,
                samples,
                seed,
            } => {
                if *samples == 0 {
                    return Err(ProbError::Empty);
                }
                OmegaModel::MonteCarlo {
                    density: BoxDensity::new(bounds, density, DEFAULT_BOX_NODES)?,
                    samples: *samples,
                    seed: seed.unwrap_or(default_seed),
                }
            }
        })
    }

    /// Uniform box model with unit density on the given bounds.
    pub fn uniform_box(bounds: &[[f64; 2]]) -> Result<OmegaModel, ProbError> {
        let volume: f64 = bounds.iter().map(|b| b[1] - b[0]).product();
        OmegaModel::from_spec(
            &OmegaSpec::Box {
                bounds: bounds.to_vec(),
                density: format!("{}", 1.0 / volume),
                nodes: DEFAULT_BOX_NODES,
            },
            0,
        )
    }

    pub fn dim(&self) -> usize {
        match self {
            OmegaModel::Deterministic => 0,
            OmegaModel::Discrete(atoms) => atoms[0].point.len(),
            OmegaModel::Box { density, .. } | OmegaModel::MonteCarlo { density, .. } => {
                density.bounds.len()
            }
        }
    }

    /// Box bounds for continuous models.
    pub fn bounds(&self) -> Option<&[(f64, f64)]> {
        match self {
            OmegaModel::Box { density, .. } | OmegaModel::MonteCarlo { density, .. } => {
                Some(&density.bounds)
            }
            _ => None,
        }
    }

    /// Quadrature nodes `(ω, weight·density)`. For box models each axis `d`
    /// is split into `panels[d]` Gauss–Legendre panels (one when `None`).
    pub fn nodes(&self, panels: Option<&[usize]>) -> Vec<(Vec<f64>, f64)> {
        match self {
            OmegaModel::Deterministic => vec![(Vec::new(), 1.0)],
            OmegaModel::Discrete(atoms) => atoms
                .iter()
                .map(|a| (a.point.clone(), a.weight))
                .collect(),
            OmegaModel::Box { density, nodes } => {
                let ones = vec![1; density.bounds.len()];
                let panels = panels.unwrap_or(&ones);
                tensor_nodes(&density.bounds, *nodes, panels)
                    .into_iter()
                    .map(|(w, q)| {
                        // density was validated on this box
                        let rho = density.value(&w).unwrap_or(0.0);
                        (w, q * rho)
                    })
                    .collect()
            }
            OmegaModel::MonteCarlo {
                density,
                samples,
                seed,
            } => {
                let volume = density.volume();
                mc_samples(&density.bounds, *samples, *seed)
                    .into_iter()
                    .map(|w| {
                        let rho = density.value(&w).unwrap_or(0.0);
                        (w, volume * rho / *samples as f64)
                    })
                    .collect()
            }
        }
    }

    /// Points covering the model's support, for validation sweeps.
    pub fn validation_points(&self, per_axis: usize) -> Vec<Vec<f64>> {
        match self {
            OmegaModel::Deterministic => vec![Vec::new()],
            OmegaModel::Discrete(atoms) => atoms.iter().map(|a| a.point.clone()).collect(),
            OmegaModel::Box { density, .. } | OmegaModel::MonteCarlo { density, .. } => {
                tensor_points(&density.bounds, per_axis)
            }
        }
    }
}

fn tensor_points(bounds: &[(f64, f64)], per_axis: usize) -> Vec<Vec<f64>> {
    let axes: Vec<Vec<f64>> = bounds
        .iter()
        .map(|&(lo, hi)| uniform_breaks(lo, hi, per_axis.max(2) - 1))
        .collect();
    cartesian(&axes)
        .into_iter()
        .map(|idx| idx.iter().enumerate().map(|(d, &i)| axes[d][i]).collect())
        .collect()
}

fn tensor_nodes(bounds: &[(f64, f64)], order: usize, panels: &[usize]) -> Vec<(Vec<f64>, f64)> {
    let rule = gauss_legendre(order);
    let axes: Vec<Vec<(f64, f64)>> = bounds
        .iter()
        .zip(panels)
        .map(|(&(lo, hi), &p)| composite_nodes(&uniform_breaks(lo, hi, p), &rule))
        .collect();
    let sizes: Vec<Vec<f64>> = axes.iter().map(|a| vec![0.0; a.len()]).collect();
    cartesian(&sizes)
        .into_iter()
        .map(|idx| {
            let mut point = Vec::with_capacity(idx.len());
            let mut weight = 1.0;
            for (d, &i) in idx.iter().enumerate() {
                point.push(axes[d][i].0);
                weight *= axes[d][i].1;
            }
            (point, weight)
        })
        .collect()
}

fn cartesian<T>(axes: &[Vec<T>]) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for axis in axes {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                (0..axis.len()).map(move |i| {
                    let mut p = prefix.clone();
                    p.push(i);
                    p
                })
            })
            .collect();
    }
    out
}

/// Uniform samples in the box; chunk `c` draws from ChaCha stream `c`, so the
/// sequence does not depend on how chunks are scheduled.
fn mc_samples(bounds: &[(f64, f64)], samples: usize, seed: u64) -> Vec<Vec<f64>> {
    let chunks = samples.div_ceil(MC_CHUNK);
    let parts: Vec<Vec<Vec<f64>>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let n = MC_CHUNK.min(samples - c * MC_CHUNK);
            (0..n)
                .map(|_| {
                    bounds
                        .iter()
                        .map(|&(lo, hi)| lo + (hi - lo) * rng.random::<f64>())
                        .collect()
                })
                .collect()
        })
        .collect();
    parts.into_iter().flatten().collect()
}

/// `∫_Ω g(ω) dP(ω)` using the model's nodes, atoms or samples.
pub fn integrate_over_omega<F, E>(integrand: F, model: &OmegaModel) -> Result<Complex64, IntegrateError<E>>
where
    F: Fn(&[f64]) -> Result<Complex64, E> + Sync,
    E: Send,
{
    integrate_nodes(integrand, &model.nodes(None))
}

/// Weighted sum over explicit `(ω, weight)` nodes. Terms are evaluated in
/// parallel and summed in node order, so results do not depend on threading.
pub fn integrate_nodes<F, E>(
    integrand: F,
    nodes: &[(Vec<f64>, f64)],
) -> Result<Complex64, IntegrateError<E>>
where
    F: Fn(&[f64]) -> Result<Complex64, E> + Sync,
    E: Send,
{
    let terms: Vec<Result<Complex64, IntegrateError<E>>> = nodes
        .par_iter()
        .map(|(omega, weight)| {
            let v = integrand(omega).map_err(|source| IntegrateError::Integrand {
                omega: omega.clone(),
                source,
            })?;
            if !(v.re.is_finite() && v.im.is_finite()) {
                return Err(IntegrateError::NonFinite {
                    omega: omega.clone(),
                });
            }
            Ok(v * *weight)
        })
        .collect();
    let mut total = Complex64::new(0.0, 0.0);
    for term in terms {
        total += term?;
    }
    Ok(total)
}

/// `dP/dω` at `omega`; box models only.
pub fn density_at(model: &OmegaModel, omega: &[f64]) -> Result<f64, ProbError> {
    match model {
        OmegaModel::Box { density, .. } => {
            if !density.contains(omega) {
                return Err(ProbError::OutOfBounds {
                    omega: omega.to_vec(),
                });
            }
            density.value(omega)
        }
        _ => Err(ProbError::Unsupported),
    }
}
