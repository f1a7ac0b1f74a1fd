//! Gaussian beam quasi-solutions along null geodesics: complex Riccati
//! solutions via the linear Y/Z system, phase and amplitude assembly with
//! order-2 correctors, cutoff, and residual verification.

mod beam;
mod jets;
pub mod riccati;
mod residual;

pub use beam::{build_beam, evaluate_beam, BeamDescriptor, BeamJet, GaussianBeam};
pub use jets::{solve_correctors, Correctors};
pub use residual::{residual_norms, ResidualOptions, ResidualReport};
pub use riccati::{amplitude_leading, solve_riccati, AmplitudeSeries, DCurve, RiccatiSolution};
