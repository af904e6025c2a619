use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Error, Debug, Clone)]
pub enum MftkError {
    #[error("matrix is not hyperbolic: trace {trace} <= 2")]
    NonHyperbolic { trace: i64 },
    #[error("matrix is not in SL(2,N): det {det} != 1 or negative entries")]
    NotUnimodular { det: i64 },
    #[error("rho_mu is not a diffeomorphism: mu*|k| = {value} >= 1")]
    RhoNotDiffeo { value: f64 },
    #[error("lattice vector k must be nonzero")]
    ZeroLattice,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("no convergence after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("mode cutoff too small: {0}")]
    CutoffTooSmall(String),
    #[error("iterative solver stalled near spectrum: residual {residual:.3e} after {iterations} iterations")]
    SolverStall { iterations: usize, residual: f64 },
    #[error("parameter outside certificate radius: |lambda - lambda0| = {distance:.3e} > delta1 = {delta1:.3e}")]
    OutsideCertificate { distance: f64, delta1: f64 },
    #[error("measured contraction factor {factor:.3} > 1/2, certificate invalidated")]
    ContractionViolated { factor: f64 },
    #[error("continuation step collapsed below floor at nu = {nu:.6}")]
    StepCollapse { nu: f64 },
    #[error("no sign change of Gamma - 1 in the given segment")]
    NoCrossing,
    #[error("a secular root lies within {distance:.3e} of the contour")]
    ContourTooClose { distance: f64 },
    #[error("classification within tolerance band of criteria boundary: {0}")]
    MarginalUndecidable(String),
    #[error("sampling density has clipped negative mass {mass:.3e} > 1e-3")]
    NegativeMass { mass: f64 },
}

pub type Result<T> = std::result::Result<T, MftkError>;
