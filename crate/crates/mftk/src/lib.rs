//! Numerical toolkit for the invariant measures of mean-field coupled chaotic
//! maps on the torus.
//!
//! The coupled system iterates T_{nu,h}(x) = T(x) + nu beta int(alpha h),
//! where T is a chaotic base map (a conjugated hyperbolic toral automorphism,
//! or an expanding circle map for the 1D test family). Because the coupling
//! enters only through the scalar mean field omega = int alpha h, the
//! invariant-measure problem reduces exactly to the fixed points of the
//! self-consistency map M_nu(omega), while densities, response fields and
//! stability live at the transfer-operator level.
//!
//! Modules:
//! - [`model`]: map families, closed-form coupling data, perturbative oracle;
//! - [`density`]: Fourier-Galerkin densities on the collocation grid;
//! - [`transfer`]: the factorized matrix-free transfer operator, SRB
//!   extraction, Krylov resolvents;
//! - [`meanfield`]: the nonlinear operator, M, Theta, Gamma, Xi and the
//!   derivative calculus with finite-difference validation;
//! - [`continuation`]: pseudo-arclength tracing through saddle-node folds,
//!   certified Newton correctors, the brute-force scalar oracle;
//! - [`stability`]: the rank-one linearization, secular roots, physical /
//!   unstable classification;
//! - [`particle`]: the finite-N interacting system with deterministic
//!   counter-based sampling and residence statistics;
//! - [`validate`]: cross-oracle invariant suites.

pub mod continuation;
pub mod density;
pub mod error;
pub mod meanfield;
pub mod model;
pub mod particle;
pub mod stability;
pub mod transfer;
pub mod validate;

pub use error::{MftkError, Result};
