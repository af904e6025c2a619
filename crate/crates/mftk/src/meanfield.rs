//! The nonlinear mean-field operator and its derivative calculus.
//!
//! The frozen map depends on the state h only through the scalar mean field
//! omega = int alpha h, so fixed points of the nonlinear operator
//! Ltilde_nu(h) = L_{T_{nu,h}} h are roots of omega - M_nu(omega) with
//! M_nu(omega) = int alpha H(nu, omega), H the SRB of the frozen map.
//!
//! Derivatives implemented here (validated against finite differences):
//!   Theta        = -(Id - L)^{-1} div(L beta H)
//!   Gamma        = nu int alpha Theta           (= dM/domega)
//!   Xi(z)        = -nu int alpha (z - L)^{-1} div(L beta h)   (Xi(1) = Gamma)
//!   D_h F(phi)   = phi - nu Theta int alpha phi
//!   D_nu F       = -Theta int alpha h
//!   D^2_h F(Theta,Theta) per the two-term resolvent formula.

use num_complex::Complex64;

use crate::density::Density;
use crate::error::{MftkError, Result};
use crate::model::ModelSpec;
use crate::transfer::TransferOp;

/// Default mode cutoff per family dimension.
pub fn default_cutoff(model: &ModelSpec) -> usize {
    if model.dim() == 2 {
        64
    } else {
        128
    }
}

/// A converged fixed point of the nonlinear operator.
#[derive(Clone, Debug)]
pub struct FixedPointRecord {
    pub nu: f64,
    pub omega: f64,
    pub density: Density,
    /// |omega - M_nu(omega)|
    pub residual: f64,
    /// Gamma = nu int alpha Theta
    pub gamma: f64,
    /// Xi(1); equals Gamma at fixed points to 1e-8
    pub xi1: Complex64,
}

impl FixedPointRecord {
    /// One CSV row: nu, omega, residual, gamma, xi1_re, xi1_im.
    pub fn csv_row(&self) -> String {
        format!(
            "{:.17e},{:.17e},{:.3e},{:.17e},{:.17e},{:.17e}",
            self.nu, self.omega, self.residual, self.gamma, self.xi1.re, self.xi1.im
        )
    }
}

/// Outcome of direct iteration of the nonlinear operator.
#[derive(Clone, Debug)]
pub enum IterationOutcome {
    Fixed(FixedPointRecord),
    /// A cycle of the stated period was detected; omegas along the cycle.
    Cycle { period: usize, omegas: Vec<f64> },
}

/// One application of the nonlinear operator Ltilde_nu.
pub fn nonlinear_step(model: &ModelSpec, nu: f64, h: &Density) -> Density {
    let omega = h.omega(&model.k);
    let op = TransferOp::new(model, nu, omega, h.cutoff());
    op.apply(h)
}

/// Iterate the nonlinear operator from h0 until a fixed point or a cycle.
pub fn find_fixed_by_iteration(
    model: &ModelSpec,
    nu: f64,
    h0: &Density,
    max_steps: usize,
    tol: f64,
) -> Result<IterationOutcome> {
    let mut h = h0.clone();
    let mut history: Vec<(f64, Density)> = Vec::new();
    let max_period = 16usize;
    let mut dist = f64::INFINITY;
    for _ in 0..max_steps {
        let next = nonlinear_step(model, nu, &h);
        dist = next.distance(&h);
        if dist <= tol {
            let rec = make_record(model, nu, &next)?;
            return Ok(IterationOutcome::Fixed(rec));
        }
        let om = next.omega(&model.k);
        // cycle detection: the p-step recurrence must be far tighter than the
        // one-step motion, otherwise this is just slow convergence
        for p in 2..=max_period.min(history.len()) {
            let (om_p, h_p) = &history[history.len() - p];
            if dist > tol * 1000.0 && (om - om_p).abs() < tol * 10.0 && next.distance(h_p) < tol * 100.0
            {
                let omegas = history[history.len() - p..]
                    .iter()
                    .map(|(o, _)| *o)
                    .chain(std::iter::once(om))
                    .collect();
                return Ok(IterationOutcome::Cycle { period: p, omegas });
            }
        }
        history.push((om, next.clone()));
        if history.len() > max_period + 1 {
            history.remove(0);
        }
        h = next;
    }
    Err(MftkError::NoConvergence {
        iterations: max_steps,
        residual: dist,
    })
}

/// Assemble the full record (residual, Gamma, Xi(1)) for a candidate fixed point.
pub fn make_record(model: &ModelSpec, nu: f64, h: &Density) -> Result<FixedPointRecord> {
    let omega = h.omega(&model.k);
    let m = mean_field_map(model, nu, omega, h.cutoff())?;
    let gamma = gamma(model, nu, omega, h.cutoff())?;
    let rec_xi1 = xi_at(model, nu, h, Complex64::new(1.0, 0.0))?;
    Ok(FixedPointRecord {
        nu,
        omega,
        density: h.clone(),
        residual: (omega - m).abs(),
        gamma,
        xi1: rec_xi1,
    })
}

/// SRB density of the frozen map T_{nu, omega}.
pub fn frozen_srb(model: &ModelSpec, nu: f64, omega: f64, cutoff: usize) -> Result<Density> {
    TransferOp::new(model, nu, omega, cutoff).srb_density(1e-13)
}

/// Self-consistency map M_nu(omega) = int alpha H(nu, omega).
pub fn mean_field_map(model: &ModelSpec, nu: f64, omega: f64, cutoff: usize) -> Result<f64> {
    Ok(frozen_srb(model, nu, omega, cutoff)?.omega(&model.k))
}

/// Response field Theta(nu, omega) = -(Id - L)^{-1} div(L beta H).
pub fn theta(model: &ModelSpec, nu: f64, omega: f64, cutoff: usize) -> Result<Density> {
    let op = TransferOp::new(model, nu, omega, cutoff);
    let h = op.srb_density(1e-13)?;
    let u = op.divergence_coupling(&h);
    let mut t = op.resolvent_solve(Complex64::new(1.0, 0.0), &u, 1e-12)?;
    t.scale(Complex64::new(-1.0, 0.0));
    Ok(t)
}

/// Gamma(nu, omega) = nu int alpha Theta.
pub fn gamma(model: &ModelSpec, nu: f64, omega: f64, cutoff: usize) -> Result<f64> {
    let t = theta(model, nu, omega, cutoff)?;
    Ok(nu * t.alpha_integral(&model.k).re)
}

/// Secular function Xi(z) = -nu int alpha (z - L)^{-1} div(L beta h),
/// evaluated at the density h (a fixed point or near one).
pub fn xi_at(model: &ModelSpec, nu: f64, h: &Density, z: Complex64) -> Result<Complex64> {
    let omega = h.omega(&model.k);
    let op = TransferOp::new(model, nu, omega, h.cutoff());
    let u = op.divergence_coupling(h);
    let w = op.resolvent_solve(z, &u, 1e-12)?;
    Ok(-nu * w.alpha_integral(&model.k))
}

/// Xi for a fixed-point record.
pub fn xi(model: &ModelSpec, record: &FixedPointRecord, z: Complex64) -> Result<Complex64> {
    xi_at(model, record.nu, &record.density, z)
}

/// Full implicit-equation residual F(nu, h) = h - H(nu, omega(h)).
pub fn f_eval(model: &ModelSpec, nu: f64, h: &Density) -> Result<Density> {
    let omega = h.omega(&model.k);
    let hh = frozen_srb(model, nu, omega, h.cutoff())?;
    let mut out = h.clone();
    out.axpy(Complex64::new(-1.0, 0.0), &hh);
    Ok(out)
}

/// D_h F(phi) = phi - nu Theta int alpha phi.
pub fn df_dh(model: &ModelSpec, nu: f64, h: &Density, phi: &Density) -> Result<Density> {
    let omega = h.omega(&model.k);
    let t = theta(model, nu, omega, h.cutoff())?;
    let a = phi.alpha_integral(&model.k);
    let mut out = phi.clone();
    out.axpy(-nu * a, &t);
    Ok(out)
}

/// Closed-form inverse of D_h F (valid when nu int alpha Theta != 1):
/// psi -> psi + nu Theta int(alpha psi) / (1 - nu int alpha Theta).
pub fn df_dh_inverse(model: &ModelSpec, nu: f64, h: &Density, psi: &Density) -> Result<Density> {
    let omega = h.omega(&model.k);
    let t = theta(model, nu, omega, h.cutoff())?;
    let g = nu * t.alpha_integral(&model.k).re;
    let a = psi.alpha_integral(&model.k);
    let mut out = psi.clone();
    out.axpy(a * nu / (1.0 - g), &t);
    Ok(out)
}

/// D_nu F = -Theta int alpha h.
pub fn df_dnu(model: &ModelSpec, nu: f64, h: &Density) -> Result<Density> {
    let omega = h.omega(&model.k);
    let mut t = theta(model, nu, omega, h.cutoff())?;
    t.scale(Complex64::new(-omega, 0.0));
    Ok(t)
}

/// D^2_h F(Theta, Theta): the two-term resolvent formula
///   -{ 2 R div(L beta R div(L beta H)) + R d2_beta(L H) } nu^2 (int alpha Theta)^2
/// with R = (Id - L)^{-1} on the mean-zero subspace.
pub fn d2f_dh2_along_theta(model: &ModelSpec, nu: f64, h: &Density) -> Result<Density> {
    let omega = h.omega(&model.k);
    let cutoff = h.cutoff();
    let op = TransferOp::new(model, nu, omega, cutoff);
    let hh = op.srb_density(1e-13)?;
    let one = Complex64::new(1.0, 0.0);
    // inner chain: w = R div(L beta H)  (= -Theta)
    let u = op.divergence_coupling(&hh);
    let w = op.resolvent_solve(one, &u, 1e-12)?;
    let t_int = -w.alpha_integral(&model.k).re; // int alpha Theta
    // term1 = 2 R div(L beta w)
    let v = op.divergence_coupling(&w);
    let mut term1 = op.resolvent_solve(one, &v, 1e-12)?;
    term1.scale(Complex64::new(2.0, 0.0));
    // term2 = R d^2_beta (L H)
    let lh = op.apply(&hh);
    let d2 = lh.second_directional_derivative(&model.beta());
    let term2 = op.resolvent_solve(one, &d2, 1e-12)?;
    let mut out = term1;
    out.axpy(one, &term2);
    let scale = -nu * nu * t_int * t_int;
    out.scale(Complex64::new(scale, 0.0));
    Ok(out)
}
