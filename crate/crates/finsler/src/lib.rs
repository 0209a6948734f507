//! Numerical workbench for Finsler geometry.
//!
//! The crate evaluates the differential-geometric apparatus of a Finsler
//! manifold exactly, by running one generic energy kernel F^2(x, v) on
//! nested dual numbers: fundamental tensors, Legendre duality and the dual
//! norm, the nonlinear divergence-form Laplacian and its Dirichlet energy,
//! harmonic coordinate charts on small balls, spray and Riemann curvature,
//! Berwald-type detection, and the indicatrix-averaged Riemannian metric.
//!
//! Everything is deterministic: the only randomness is seeded sampling in
//! verification routines, and parallel loops reduce in a fixed order.

pub mod berwald;
pub mod calculus;
pub mod chart;
pub mod dual;
pub mod error;
pub mod fields;
pub mod grid;
pub mod legendre;
pub mod linalg;
pub mod metric;
pub mod spray;
pub mod verify;

pub use error::{Error, Result};
