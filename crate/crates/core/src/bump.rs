//! Smooth truncation function equal to one on `[a, b]` and vanishing outside
//! `(a - ε, b + ε)`.
//!
//! Each ramp is the classical smoothstep `S(u) = g(u) / (g(u) + g(1 - u))`
//! with `g(u) = exp(-1/u)` for `u > 0`, so the bump is `C^∞` with an exact
//! plateau.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{expinv, Expr, Func};
use crate::quad::adaptive_gk;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BumpSpec {
    pub a: f64,
    pub b: f64,
    pub epsilon: f64,
    #[serde(default)]
    pub normalized: bool,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BumpError {
    #[error("bump interval needs finite a < b, got [{a}, {b}]")]
    Interval { a: f64, b: f64 },
    #[error("bump epsilon must be finite and positive, got {0}")]
    Epsilon(f64),
}

/// `S(u)`: 0 for `u <= 0`, 1 for `u >= 1`, smooth in between.
pub fn smoothstep(u: f64) -> f64 {
    let g0 = expinv(u, 0);
    let g1 = expinv(1.0 - u, 0);
    g0 / (g0 + g1)
}

fn smoothstep_expr(u: Expr) -> Expr {
    let g0 = Expr::apply(Func::ExpInv(0), u.clone());
    let g1 = Expr::apply(Func::ExpInv(0), Expr::Const(1.0) - u);
    g0.clone() / (g0 + g1)
}

/// A validated bump with its mass precomputed.
#[derive(Debug, Clone, PartialEq)]
pub struct Bump {
    spec: BumpSpec,
    raw_mass: f64,
}

impl Bump {
    pub fn new(spec: BumpSpec) -> Result<Bump, BumpError> {
        if !(spec.a.is_finite() && spec.b.is_finite() && spec.a < spec.b) {
            return Err(BumpError::Interval {
                a: spec.a,
                b: spec.b,
            });
        }
        if !(spec.epsilon.is_finite() && spec.epsilon > 0.0) {
            return Err(BumpError::Epsilon(spec.epsilon));
        }
        let raw_mass = raw_mass(&spec);
        Ok(Bump { spec, raw_mass })
    }

    pub fn spec(&self) -> &BumpSpec {
        &self.spec
    }

    /// Same bump with the normalization flag replaced.
    pub fn with_normalized(&self, normalized: bool) -> Bump {
        Bump {
            spec: BumpSpec {
                normalized,
                ..self.spec
            },
            raw_mass: self.raw_mass,
        }
    }

    /// Closed support `[a - ε, b + ε]`.
    pub fn support(&self) -> (f64, f64) {
        (self.spec.a - self.spec.epsilon, self.spec.b + self.spec.epsilon)
    }

    /// Support split at the plateau edges: `[a - ε, a, b, b + ε]`.
    pub fn breakpoints(&self) -> Vec<f64> {
        let BumpSpec { a, b, epsilon, .. } = self.spec;
        vec![a - epsilon, a, b, b + epsilon]
    }

    fn scale(&self) -> f64 {
        if self.spec.normalized {
            1.0 / self.raw_mass
        } else {
            1.0
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        raw_value(&self.spec, t) * self.scale()
    }

    /// `∫ φ dt`; exactly 1 up to rounding when normalized.
    pub fn mass(&self) -> f64 {
        self.raw_mass * self.scale()
    }

    /// The same function written in the expression language, for symbolic work.
    pub fn to_expr(&self) -> Expr {
        let BumpSpec { a, b, epsilon, .. } = self.spec;
        let eps = Expr::Const(epsilon);
        let rise = (Expr::t() - Expr::Const(a - epsilon)) / eps.clone();
        let fall = (Expr::Const(b + epsilon) - Expr::t()) / eps;
        let phi = smoothstep_expr(rise) * smoothstep_expr(fall);
        let scale = self.scale();
        if scale == 1.0 {
            phi
        } else {
            Expr::Const(scale) * phi
        }
    }
}

fn raw_value(spec: &BumpSpec, t: f64) -> f64 {
    let BumpSpec { a, b, epsilon, .. } = *spec;
    smoothstep((t - (a - epsilon)) / epsilon) * smoothstep(((b + epsilon) - t) / epsilon)
}

fn raw_mass(spec: &BumpSpec) -> f64 {
    let BumpSpec { a, b, epsilon, .. } = *spec;
    let ramp = |lo: f64, hi: f64| adaptive_gk(|t| raw_value(spec, t), lo, hi, 1e-14, 1e-300).0;
    // the plateau contributes exactly b - a
    ramp(a - epsilon, a) + (b - a) + ramp(b, b + epsilon)
}

/// Evaluates the bump described by `spec` at `t`.
pub fn bump_eval(spec: &BumpSpec, t: f64) -> Result<f64, BumpError> {
    Ok(Bump::new(*spec)?.eval(t))
}

/// `∫ φ dt` for the bump described by `spec`.
pub fn bump_mass(spec: &BumpSpec) -> Result<f64, BumpError> {
    Ok(Bump::new(*spec)?.mass())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec(a: f64, b: f64, epsilon: f64, normalized: bool) -> BumpSpec {
        BumpSpec {
            a,
            b,
            epsilon,
            normalized,
        }
    }

    #[test]
    fn values_at_reference_points() {
        let s = spec(0.0, 1.0, 0.1, false);
        assert_eq!(bump_eval(&s, 0.5).unwrap(), 1.0);
        assert_eq!(bump_eval(&s, 0.0).unwrap(), 1.0);
        assert_eq!(bump_eval(&s, 1.0).unwrap(), 1.0);
        assert_eq!(bump_eval(&s, -0.1).unwrap(), 0.0);
        assert_eq!(bump_eval(&s, 1.1).unwrap(), 0.0);
        assert!((bump_eval(&s, -0.05).unwrap() - 0.5).abs() < 1e-14);
        assert!((bump_eval(&s, 1.05).unwrap() - 0.5).abs() < 1e-14);
    }

    #[test]
    fn mass_matches_plateau_plus_epsilon() {
        // the ramps integrate to ε/2 each because S(u) + S(1-u) = 1
        let m = bump_mass(&spec(0.0, 1.0, 0.1, false)).unwrap();
        assert!((m - 1.1).abs() < 1e-12, "{m}");
        let narrow = bump_mass(&spec(0.0, 1.0, 1e-4, false)).unwrap();
        assert!((narrow - 1.0).abs() < 3e-4);
        let n = bump_mass(&spec(0.0, 1.0, 0.1, true)).unwrap();
        assert!((n - 1.0).abs() < 1e-12);
        let bump = Bump::new(spec(-0.5, 0.5, 0.25, true)).unwrap();
        assert!((bump.eval(0.0) - 1.0 / 1.25).abs() < 1e-14);
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(matches!(
            Bump::new(spec(1.0, 0.0, 0.1, false)),
            Err(BumpError::Interval { .. })
        ));
        assert!(matches!(
            Bump::new(spec(0.0, 1.0, 0.0, false)),
            Err(BumpError::Epsilon(_))
        ));
        assert!(Bump::new(spec(0.0, 1.0, f64::NAN, false)).is_err());
    }

    #[test]
    fn smooth_across_support_edges() {
        let bump = Bump::new(spec(0.0, 1.0, 0.1, false)).unwrap();
        let h = 1e-4;
        let d1 = |t: f64| (bump.eval(t + h) - bump.eval(t - h)) / (2.0 * h);
        let d2 = |t: f64| (bump.eval(t + h) - 2.0 * bump.eval(t) + bump.eval(t - h)) / (h * h);
        for edge in [-0.1, 1.1] {
            for delta in [1e-3, 2e-3] {
                assert!((d1(edge - delta) - d1(edge + delta)).abs() < 1e-8);
                assert!((d2(edge - delta) - d2(edge + delta)).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn monotone_ramps() {
        let bump = Bump::new(spec(0.0, 1.0, 0.1, false)).unwrap();
        let rise: Vec<f64> = (0..=200).map(|i| bump.eval(-0.1 + 0.1 * i as f64 / 200.0)).collect();
        assert!(rise.windows(2).all(|w| w[0] <= w[1]));
        let fall: Vec<f64> = (0..=200).map(|i| bump.eval(1.0 + 0.1 * i as f64 / 200.0)).collect();
        assert!(fall.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn expression_form_agrees() {
        for normalized in [false, true] {
            let bump = Bump::new(spec(0.0, 1.0, 0.1, normalized)).unwrap();
            let e = bump.to_expr();
            for i in 0..=240 {
                let t = -0.15 + 1.3 * i as f64 / 240.0;
                let v = e.eval(t, &[]).unwrap();
                assert!((v - bump.eval(t)).abs() < 1e-15, "t={t}");
            }
        }
    }

    proptest! {
        #[test]
        fn smoothstep_symmetry(u in 0.0f64..1.0) {
            prop_assert!((smoothstep(u) + smoothstep(1.0 - u) - 1.0).abs() < 1e-14);
        }

        #[test]
        fn bounded_between_zero_and_one(t in -1.0f64..2.0) {
            let v = bump_eval(&spec(0.0, 1.0, 0.1, false), t).unwrap();
            prop_assert!((0.0..=1.0).contains(&v));
            if !(-0.1..=1.1).contains(&t) {
                prop_assert_eq!(v, 0.0);
            }
        }
    }
}
