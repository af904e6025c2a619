//! The concrete coupled-map families.
//!
//! 2D family: T0(x) = A x mod 2pi with A in SL(2,N) hyperbolic, conjugated by
//! rho_mu(x) = x - mu*chi(x), chi(x) = (cos<k,x>, sin<k,x>); the coupled map is
//!
//!   T_{nu,omega}(x) = rho(T0^{n*}(rho^{-1}(x))) + nu * beta * omega   (mod 2pi)
//!
//! with beta = k/|k| and omega = int alpha h, alpha(x) = 1 - cos<k,x>.
//! The sign of the mu-displacement is chosen so that the SRB of T satisfies
//! int alpha dSRB = 1 - J1(mu|k|), i.e. the leading-order mean-field law
//! M(nu,omega) = 1 - (mu|k|/2) cos(nu omega |k| - theta) + O(mu^3) holds.
//!
//! 1D test family: T0(x) = m x mod 2pi (expanding), chi(x) = sin(kx); same
//! conjugation and coupling structure, used for dense-matrix oracles.

use std::f64::consts::TAU;

use crate::density::Density;
use crate::error::{MftkError, Result};

/// Base dynamics before conjugation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Family {
    /// Hyperbolic toral automorphism A (entries of the 2x2 integer matrix).
    Anosov2d { a: [[i64; 2]; 2] },
    /// Expanding circle map x -> multiplier * x.
    Expanding1d { multiplier: i64 },
}

/// Validated model parameters.
#[derive(Clone, Debug)]
pub struct ModelSpec {
    pub family: Family,
    pub n_star: u32,
    pub mu: f64,
    /// Lattice vector of the coupling phase; 1D uses k[0] with k[1] = 0.
    pub k: [i64; 2],
    /// Angle with (sin theta, cos theta) = k/|k|.
    pub theta: f64,
    /// Admissible coupling upper bound nu_*.
    pub nu_max: f64,
}

/// Builder input for `build_model`.
#[derive(Clone, Debug)]
pub struct ModelConfig {
    pub dim: u8,
    pub a: [[i64; 2]; 2],
    pub multiplier: i64,
    pub n_star: u32,
    pub mu: f64,
    pub k: [i64; 2],
    pub nu_max: Option<f64>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            dim: 2,
            a: [[2, 1], [1, 1]],
            multiplier: 2,
            n_star: 10,
            mu: 0.05,
            k: [0, 1],
            nu_max: None,
        }
    }
}

/// Batch of torus points, coordinates reduced modulo 2pi.
#[derive(Clone, Debug)]
pub struct TorusPoints {
    pub dim: u8,
    coords: Vec<f64>,
}

#[inline]
pub fn wrap(x: f64) -> f64 {
    x.rem_euclid(TAU)
}

impl TorusPoints {
    pub fn new(dim: u8, coords: Vec<f64>) -> Self {
        assert!(dim == 1 || dim == 2);
        assert_eq!(coords.len() % dim as usize, 0);
        let coords = coords.into_iter().map(wrap).collect();
        TorusPoints { dim, coords }
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim as usize
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    #[inline]
    pub fn point(&self, i: usize) -> [f64; 2] {
        let d = self.dim as usize;
        if d == 1 {
            [self.coords[i], 0.0]
        } else {
            [self.coords[2 * i], self.coords[2 * i + 1]]
        }
    }

    #[inline]
    pub fn set_point(&mut self, i: usize, p: [f64; 2]) {
        let d = self.dim as usize;
        if d == 1 {
            self.coords[i] = wrap(p[0]);
        } else {
            self.coords[2 * i] = wrap(p[0]);
            self.coords[2 * i + 1] = wrap(p[1]);
        }
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }
}

/// Validate parameters and derive theta. Rejects non-hyperbolic matrices,
/// zero lattice vectors and non-diffeomorphic conjugacies.
pub fn build_model(config: &ModelConfig) -> Result<ModelSpec> {
    if config.dim != 1 && config.dim != 2 {
        return Err(MftkError::InvalidParameter(format!(
            "dim must be 1 or 2, got {}",
            config.dim
        )));
    }
    if config.mu < 0.0 {
        return Err(MftkError::InvalidParameter(format!(
            "mu must be >= 0, got {}",
            config.mu
        )));
    }
    if config.n_star == 0 {
        return Err(MftkError::InvalidParameter("n_star must be positive".into()));
    }
    let (family, k) = match config.dim {
        2 => {
            let a = config.a;
            let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
            if det != 1 || a.iter().flatten().any(|&e| e < 0) {
                return Err(MftkError::NotUnimodular { det });
            }
            let trace = a[0][0] + a[1][1];
            if trace <= 2 {
                return Err(MftkError::NonHyperbolic { trace });
            }
            if config.k == [0, 0] {
                return Err(MftkError::ZeroLattice);
            }
            (Family::Anosov2d { a }, config.k)
        }
        _ => {
            if config.multiplier.abs() < 2 {
                return Err(MftkError::InvalidParameter(format!(
                    "1D multiplier must satisfy |m| >= 2, got {}",
                    config.multiplier
                )));
            }
            if config.k[0] == 0 {
                return Err(MftkError::ZeroLattice);
            }
            (
                Family::Expanding1d {
                    multiplier: config.multiplier,
                },
                [config.k[0], 0],
            )
        }
    };
    let k_norm = ((k[0] * k[0] + k[1] * k[1]) as f64).sqrt();
    let diffeo = config.mu * k_norm;
    if diffeo >= 1.0 {
        return Err(MftkError::RhoNotDiffeo { value: diffeo });
    }
    // 2D: (sin theta, cos theta) = k/|k|. 1D: chi = sin(kx) mirrors the second
    // 2D component, so <k, chi> = |k| sin(<k,x> + theta) holds with theta = 0
    // for k > 0 and pi for k < 0.
    let theta = if config.dim == 2 {
        (k[0] as f64).atan2(k[1] as f64)
    } else {
        (0f64).atan2(k[0] as f64)
    };
    let nu_max = config.nu_max.unwrap_or_else(|| {
        if config.mu > 0.0 {
            config.mu.powi(-2)
        } else {
            1e6
        }
    });
    Ok(ModelSpec {
        family,
        n_star: config.n_star,
        mu: config.mu,
        k,
        theta,
        nu_max,
    })
}

impl ModelSpec {
    pub fn dim(&self) -> u8 {
        match self.family {
            Family::Anosov2d { .. } => 2,
            Family::Expanding1d { .. } => 1,
        }
    }

    pub fn k_norm(&self) -> f64 {
        ((self.k[0] * self.k[0] + self.k[1] * self.k[1]) as f64).sqrt()
    }

    /// Coupling displacement direction beta = k/|k|.
    pub fn beta(&self) -> [f64; 2] {
        let n = self.k_norm();
        [self.k[0] as f64 / n, self.k[1] as f64 / n]
    }

    /// Unstable eigenvector of A, unit length (2D only).
    pub fn unstable_eigenvector(&self) -> [f64; 2] {
        match self.family {
            Family::Anosov2d { a } => {
                let tr = (a[0][0] + a[1][1]) as f64;
                let lambda = 0.5 * (tr + (tr * tr - 4.0).sqrt());
                let v = if a[0][1] != 0 {
                    [a[0][1] as f64, lambda - a[0][0] as f64]
                } else {
                    [lambda - a[1][1] as f64, a[1][0] as f64]
                };
                let n = (v[0] * v[0] + v[1] * v[1]).sqrt();
                [v[0] / n, v[1] / n]
            }
            Family::Expanding1d { .. } => [1.0, 0.0],
        }
    }

    /// Expansion factor of the base map.
    pub fn lambda(&self) -> f64 {
        match self.family {
            Family::Anosov2d { a } => {
                let tr = (a[0][0] + a[1][1]) as f64;
                0.5 * (tr + (tr * tr - 4.0).sqrt())
            }
            Family::Expanding1d { multiplier } => multiplier.abs() as f64,
        }
    }

    /// Smallest n with lambda^{-n} <= mu^3 (the contraction budget used by
    /// the perturbative expansions), floored at 1.
    pub fn n_star_for(&self, mu: f64) -> u32 {
        if mu <= 0.0 {
            return self.n_star;
        }
        let n = (3.0 * (1.0 / mu).ln() / self.lambda().ln()).ceil();
        (n.max(1.0)) as u32
    }

    /// Coupling phase <k, x>.
    #[inline]
    pub fn phase(&self, p: &[f64; 2]) -> f64 {
        self.k[0] as f64 * p[0] + self.k[1] as f64 * p[1]
    }

    /// Displacement profile chi; 2D: (cos theta, sin theta), 1D: sin(kx).
    #[inline]
    pub fn chi(&self, p: &[f64; 2]) -> [f64; 2] {
        let th = self.phase(p);
        match self.family {
            Family::Anosov2d { .. } => [th.cos(), th.sin()],
            Family::Expanding1d { .. } => [th.sin(), 0.0],
        }
    }

    /// alpha(x) = 1 - cos<k,x>.
    #[inline]
    pub fn alpha(&self, p: &[f64; 2]) -> f64 {
        1.0 - self.phase(p).cos()
    }

    /// rho_mu(x) = x - mu chi(x), reduced mod 2pi.
    #[inline]
    pub fn rho(&self, p: &[f64; 2]) -> [f64; 2] {
        let c = self.chi(p);
        [wrap(p[0] - self.mu * c[0]), wrap(p[1] - self.mu * c[1])]
    }

    /// Exact Jacobian determinant of rho at x: J = 1 + mu a(x).
    #[inline]
    pub fn jacobian(&self, p: &[f64; 2]) -> f64 {
        1.0 + self.mu * self.coeff_a(p)
    }

    /// a(x) = |k| (sin theta sin<k,x> - cos theta cos<k,x>) = -|k| cos(<k,x> + theta).
    #[inline]
    pub fn coeff_a(&self, p: &[f64; 2]) -> f64 {
        let th = self.phase(p);
        -self.k_norm() * (th + self.theta).cos()
    }

    /// b(x) = <grad a, chi> = |k|^2 sin^2(<k,x> + theta); the mu^2 coefficient
    /// of J o rho^{-1} = 1 + a mu + b mu^2 + O(mu^3).
    #[inline]
    pub fn coeff_b(&self, p: &[f64; 2]) -> f64 {
        let th = self.phase(p);
        let s = (th + self.theta).sin();
        self.k_norm().powi(2) * s * s
    }

    /// Scalar phase map g(t) = t - mu |k| sin(t + theta); <k, rho(x)> = g(<k,x>).
    #[inline]
    pub fn phase_forward(&self, t: f64) -> f64 {
        t - self.mu * self.k_norm() * (t + self.theta).sin()
    }

    /// Invert the scalar phase map by Newton iteration; g'(t) = J > 0.
    pub fn phase_inverse(&self, s: f64) -> f64 {
        let mk = self.mu * self.k_norm();
        let mut t = s + mk * (s + self.theta).sin();
        for _ in 0..50 {
            let f = t - mk * (t + self.theta).sin() - s;
            let fp = 1.0 - mk * (t + self.theta).cos();
            let dt = f / fp;
            t -= dt;
            if dt.abs() < 1e-15 {
                break;
            }
        }
        t
    }

    /// One application of the base map T0 (mod 2pi).
    #[inline]
    pub fn base_map(&self, p: &[f64; 2]) -> [f64; 2] {
        match self.family {
            Family::Anosov2d { a } => [
                wrap(a[0][0] as f64 * p[0] + a[0][1] as f64 * p[1]),
                wrap(a[1][0] as f64 * p[0] + a[1][1] as f64 * p[1]),
            ],
            Family::Expanding1d { multiplier } => [wrap(multiplier as f64 * p[0]), 0.0],
        }
    }

    /// rho^{-1} of one point. The displacement depends on x only through the
    /// coupling phase, so the inversion reduces to the scalar Newton solve of
    /// the phase map: theta* = g^{-1}(<k,y>), x = y + mu chi(theta*).
    /// Iteration counts are fixed so all callers agree bitwise.
    #[inline]
    pub fn rho_inverse_point(&self, y: &[f64; 2]) -> [f64; 2] {
        let mk = self.mu * self.k_norm();
        if mk == 0.0 {
            return *y;
        }
        let s = self.phase(y);
        let theta = self.phase_inverse_fixed(s);
        let c = self.chi_of_phase(theta);
        [y[0] + self.mu * c[0], y[1] + self.mu * c[1]]
    }

    /// chi as a function of the phase value.
    #[inline]
    pub fn chi_of_phase(&self, theta: f64) -> [f64; 2] {
        match self.family {
            Family::Anosov2d { .. } => {
                let (s, c) = theta.sin_cos();
                [c, s]
            }
            Family::Expanding1d { .. } => [theta.sin(), 0.0],
        }
    }

    /// Scalar phase inversion with a fixed-count Newton (quadratic
    /// convergence reaches machine precision; count depends only on mu |k|).
    #[inline]
    pub fn phase_inverse_fixed(&self, s: f64) -> f64 {
        let mk = self.mu * self.k_norm();
        let iters = if mk < 0.15 { 3 } else { 5 };
        let s0 = (s + self.theta).sin();
        let mut t = s + mk * s0;
        for _ in 0..iters {
            let (st, ct) = (t + self.theta).sin_cos();
            t -= (t - mk * st - s) / (1.0 - mk * ct);
        }
        t
    }

    /// The uncoupled conjugated map T = rho o T0^{n*} o rho^{-1}.
    /// The base power runs unreduced and wraps once at the end; coordinate
    /// growth is lambda^{n*} ~ 1e4, costing ~1e-11 absolute accuracy.
    #[inline]
    pub fn map_point(&self, p: &[f64; 2]) -> [f64; 2] {
        let z = self.rho_inverse_point(p);
        match self.family {
            Family::Anosov2d { a } => {
                let (mut z0, mut z1) = (z[0], z[1]);
                for i in 0..self.n_star {
                    let w0 = a[0][0] as f64 * z0 + a[0][1] as f64 * z1;
                    let w1 = a[1][0] as f64 * z0 + a[1][1] as f64 * z1;
                    z0 = w0;
                    z1 = w1;
                    if i % 8 == 7 {
                        z0 = wrap(z0);
                        z1 = wrap(z1);
                    }
                }
                self.rho(&[wrap(z0), wrap(z1)])
            }
            Family::Expanding1d { multiplier } => {
                let mut z0 = z[0];
                for i in 0..self.n_star {
                    z0 *= multiplier as f64;
                    if i % 8 == 7 {
                        z0 = wrap(z0);
                    }
                }
                self.rho(&[wrap(z0), 0.0])
            }
        }
    }

    /// T_{nu,omega}(x) = T(x) + nu beta omega mod 2pi.
    #[inline]
    pub fn coupled_map_point(&self, nu: f64, omega: f64, p: &[f64; 2]) -> [f64; 2] {
        let t = self.map_point(p);
        let b = self.beta();
        [wrap(t[0] + nu * b[0] * omega), wrap(t[1] + nu * b[1] * omega)]
    }
}

/// Apply the coupled map to a batch of points.
pub fn apply_coupled_map(model: &ModelSpec, nu: f64, omega: f64, x: &TorusPoints) -> TorusPoints {
    assert_eq!(model.dim(), x.dim);
    let mut out = x.clone();
    for i in 0..x.len() {
        let p = x.point(i);
        out.set_point(i, model.coupled_map_point(nu, omega, &p));
    }
    out
}

/// Invert rho_mu on a batch: returns x with ||rho(x) - y|| <= tol.
pub fn invert_rho(model: &ModelSpec, y: &TorusPoints, tol: f64) -> Result<TorusPoints> {
    let mut out = y.clone();
    let max_iter = 50usize;
    for i in 0..y.len() {
        let yp = y.point(i);
        let c0 = model.chi(&yp);
        let mut x = [yp[0] + model.mu * c0[0], yp[1] + model.mu * c0[1]];
        let mut converged = false;
        let mut residual = f64::INFINITY;
        for _ in 0..max_iter {
            let c = model.chi(&x);
            x = [yp[0] + model.mu * c[0], yp[1] + model.mu * c[1]];
            let r = model.rho(&x);
            let d0 = torus_dist(r[0], yp[0]);
            let d1 = torus_dist(r[1], yp[1]);
            residual = (d0 * d0 + d1 * d1).sqrt();
            if residual <= tol {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(MftkError::NoConvergence {
                iterations: max_iter,
                residual,
            });
        }
        out.set_point(i, x);
    }
    Ok(out)
}

#[inline]
pub fn torus_dist(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    d.min(TAU - d)
}

/// Exact expansion coefficients (a, b) of J o rho_mu^{-1} = 1 + a mu + b mu^2 + O(mu^3),
/// evaluated at a batch of points.
pub fn coefficients_ab(model: &ModelSpec, x: &TorusPoints) -> Vec<(f64, f64)> {
    (0..x.len())
        .map(|i| {
            let p = x.point(i);
            (model.coeff_a(&p), model.coeff_b(&p))
        })
        .collect()
}

/// The O(mu^3)-accurate closed-form invariant density of the frozen map
/// T_{nu,omega}: h = (2pi)^{-d} [1 - mu a + mu^2 (a^2 - b)] o Phi_{-nu,omega}.
/// Independent oracle; never used inside the solvers.
pub fn perturbative_density(model: &ModelSpec, nu: f64, omega: f64, cutoff: usize) -> Density {
    let d = model.dim();
    let b = model.beta();
    let shift = [nu * b[0] * omega, nu * b[1] * omega];
    let norm = TAU.powi(-(d as i32));
    Density::from_fn(d, cutoff, |x| {
        let y = [x[0] - shift[0], x.get(1).copied().unwrap_or(0.0) - shift[1]];
        let a = model.coeff_a(&y);
        let bb = model.coeff_b(&y);
        norm * (1.0 - model.mu * a + model.mu * model.mu * (a * a - bb))
    })
}
