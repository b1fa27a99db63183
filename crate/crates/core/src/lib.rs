//! Extremal ranges of smooth stochastic processes from the high-frequency
//! behaviour of their characteristic integrals.
//!
//! The pipeline: a process `ξ(t, ω)` given as a formula ([`expr`]), a smooth
//! truncation function in time ([`bump`]), a probability model for `ω`
//! ([`prob`]), oscillatory quadrature ([`oscint`]), stationary-phase
//! asymptotics ([`phase`]) and the unwrapped-argument estimator of the
//! extremal value ([`extremum`]). [`oracle`] holds brute-force references used
//! to check all of the above.

pub mod bump;
pub mod expr;
pub mod extremum;
pub mod oracle;
pub mod oscint;
pub mod phase;
pub mod prob;
pub mod quad;

pub use bump::{Bump, BumpSpec};
pub use expr::{Expr, Var};
pub use num_complex::Complex64;
