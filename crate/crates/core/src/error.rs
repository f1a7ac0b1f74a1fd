//! Error taxonomy, one enum per subsystem.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("tangent vector is not unit for the effective metric: |v| = {norm}")]
    NonUnitTangent { norm: f64 },
    #[error("integration step too large: energy drift {drift:.3e} per unit length exceeds 1e-6")]
    StepTooLarge { drift: f64 },
    #[error("tube radius {radius} too wide: {reason}")]
    TubeTooWide { radius: f64, reason: String },
    #[error("parameter s = {s} outside chart range [{lo}, {hi}]")]
    OutOfRange { s: f64, lo: f64, hi: f64 },
    #[error("seed angles admit no sign-correct null combination: {reason}")]
    InfeasibleSeed { reason: String },
}

#[derive(Debug, Error)]
pub enum BeamError {
    #[error("initial matrix does not have positive-definite imaginary part (min eig {min_eig:.3e})")]
    NotPositiveImaginary { min_eig: f64 },
    #[error("Y(s) singular at s = {s}: internal consistency failure")]
    SingularY { s: f64 },
    #[error("det(Y) branch ambiguous at s = {s}: arg jump {jump:.3} > pi/2, refine grid")]
    BranchAmbiguity { s: f64, jump: f64 },
    #[error("evaluation point outside chart range")]
    ChartRangeExceeded,
    #[error("quadrature under-resolved: {points_per_wavelength:.2} points per wavelength < {required}")]
    UnderResolved {
        points_per_wavelength: f64,
        required: f64,
    },
}

#[derive(Debug, Error)]
pub enum ForwardError {
    #[error("inadmissible coefficients: {0:?}")]
    Inadmissible(Vec<String>),
    #[error("incompatible boundary/initial data: {0:?}")]
    Incompatible(Vec<String>),
    #[error("CFL violated: dt = {dt:.3e} exceeds limit {limit:.3e}")]
    CflViolation { dt: f64, limit: f64 },
    #[error("field blew up at step {step}: max |u| = {max_abs:.3e} exceeds 10x amplitude budget {budget:.3e}")]
    BlowUp { step: usize, max_abs: f64, budget: f64 },
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
}

#[derive(Debug, Error)]
pub enum TransformError {
    #[error("geodesic path leaves the field's domain")]
    PathOutsideField,
    #[error("|det Y| = {det_abs:.3e} at t = {t}: weight degenerates on the real path")]
    DegenerateWeight { t: f64, det_abs: f64 },
    #[error("conjugate point on path at t = {t}")]
    ConjugatePointOnPath { t: f64 },
    #[error("localization ladder diverged: {0}")]
    LadderDiverged(String),
    #[error("insufficient angles for inversion: {got} < {required}")]
    InsufficientAngles { got: usize, required: usize },
}

#[derive(Debug, Error)]
pub enum LinearizeError {
    #[error("epsilon ladder inconsistent: extrapolants disagree by {disagreement:.3e} > 10x predicted {predicted:.3e}")]
    LadderInconsistent { disagreement: f64, predicted: f64 },
}

#[derive(Debug, Error)]
pub enum ReconstructError {
    #[error("degenerate phase Hessian: |det| = {det_abs:.3e} < 1e-10")]
    DegenerateHessian { det_abs: f64 },
    #[error("no critical point at p: |grad phi| = {grad_norm:.3e} > 1e-6")]
    NoCriticalPoint { grad_norm: f64 },
    #[error("beam axes intersect at more than one point inside the tube")]
    MultipleIntersections,
    #[error("beam tubes overlap away from the target point")]
    TubeOverlapElsewhere,
    #[error("tau-limit fit residual {residual:.1}% exceeds 20%")]
    SlowConvergence { residual: f64 },
    #[error("induction incomplete: {missing} must be recovered before order {order}")]
    InductionIncomplete { missing: String, order: usize },
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Beam(#[from] BeamError),
    #[error(transparent)]
    Forward(#[from] ForwardError),
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error(transparent)]
    Linearize(#[from] LinearizeError),
    #[error(transparent)]
    Reconstruct(#[from] ReconstructError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("format: {0}")]
    Format(String),
}
