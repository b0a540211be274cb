//! Simulation and estimation laboratory for planar isotropic Brownian flows.
//!
//! The crate is organised bottom-up:
//!
//! * [`model`] builds finite Fourier-mode realisations of an isotropic
//!   covariance tensor and evaluates its moduli.
//! * [`flow`] integrates points, Jacobians and curves under shared field noise.
//! * [`geometry`] measures discretised paths against the Lipschitz ball.
//! * [`estimators`] wires the above into Monte Carlo experiments.
//! * [`rng`] holds the deterministic replica seeding scheme.

pub mod error;
pub mod estimators;
pub mod flow;
pub mod geometry;
pub mod model;
pub mod rng;

pub use error::{Error, Result};

/// Points and vectors in the plane.
pub type Vec2 = nalgebra::Vector2<f64>;
/// 2×2 real matrices (covariances, Jacobians).
pub type Mat2 = nalgebra::Matrix2<f64>;
