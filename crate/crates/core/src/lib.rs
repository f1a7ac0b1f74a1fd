//! Numerical laboratory for inverse boundary problems of quasilinear
//! hyperbolic equations.
//!
//! The crate is organized around the stages of the reconstruction pipeline:
//!
//! * [`geometry`] — metrics, geodesics, null lifts, Fermi charts, curvature
//!   data and null-vector combinatorics;
//! * [`beams`] — Gaussian beam quasi-solutions along null geodesics (complex
//!   Riccati solutions, phase/amplitude assembly, residual verification);
//! * [`forward`] — finite-difference solver for the quasilinear system, its
//!   linearizations, and boundary (DtN) trace extraction;
//! * [`linearize`] — ε-differentiation of simulated DtN data and the integral
//!   identities feeding reconstruction;
//! * [`transforms`] — light-ray transforms, pointwise localization recovery,
//!   and a flat-case filtered back-projection inversion;
//! * [`reconstruct`] — stationary-phase extraction of nonlinear coefficients
//!   and the end-to-end recovery pipelines;
//! * [`io`] — binary field storage with JSON sidecars and CSV emission.

pub mod beams;
pub mod error;
pub mod fields;
pub mod forward;
pub mod geometry;
pub mod io;
pub mod linearize;
pub mod reconstruct;
pub mod transforms;
pub mod util;

pub use error::Error;
pub type Result<T> = std::result::Result<T, Error>;

pub use num_complex::Complex64;
