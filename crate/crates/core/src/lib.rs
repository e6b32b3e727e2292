//! Spectral solver for the coupled system `-Δu + u = 0`, `-Δv + v = 0` in
//! the unit ball of R^3 with nonlinear Neumann coupling
//! `∂u/∂n = f(x, v)`, `∂v/∂n = g(x, u)`, together with numerical harnesses
//! for the exponent calculus, the truncation (Moser) machinery and the
//! L-infinity versus H^1 a priori estimate.
//!
//! The exponent calculus in [`exponents`] works for any dimension `N >= 3`;
//! everything that touches a grid is fixed to `N = 3`.

pub mod cli;
pub mod error;
pub mod exponents;
pub mod fields;
pub mod moser;
pub mod par;
pub mod solver;
pub mod sphere;
pub mod verify;

pub use error::{Error, Result};
