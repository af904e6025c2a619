//! Continuation of the fixed-point curve through saddle-node folds.
//!
//! The frozen map depends on (nu, h) only through the shift nu*beta*omega, so
//! the fixed-point equation reduces exactly to the scalar problem
//! g(nu, omega) = omega - M_nu(omega) = 0, and M(nu, omega) = 1 - Re[s0
//! e^{-i nu omega |k|}] where s0 is the k-mode of the base invariant density.
//! The profile below caches s0 (computed honestly by power iteration) and is
//! asserted against the full operator path at construction.
//!
//! Tracing uses natural parameterization in nu away from folds and exchanges
//! variables to tau = nu - omega near them; the corrector is the frozen-slope
//! Newton map of the quantitative implicit function theorem, with its
//! contraction factor measured on every run.

use num_complex::Complex64;
use rayon::prelude::*;
use std::f64::consts::TAU;

use crate::error::{MftkError, Result};
use crate::meanfield;
use crate::model::ModelSpec;
use crate::stability::{self, StabilityClass};
use crate::transfer::TransferOp;

/// Cached scalar reduction of the self-consistency map.
#[derive(Clone, Debug)]
pub struct ScalarProfile {
    pub model: ModelSpec,
    pub cutoff: usize,
    /// (2pi)^d * base-SRB k-mode; M(nu,omega) = 1 - Re[s0 e^{-i nu omega |k|}].
    s0: Complex64,
    knorm: f64,
}

impl ScalarProfile {
    /// Build from the honest operator path and verify the reduction at
    /// sample points before trusting it.
    pub fn build(model: &ModelSpec, cutoff: usize) -> Result<ScalarProfile> {
        let base = TransferOp::new(model, 0.0, 0.0, cutoff).srb_density(1e-13)?;
        let s0 = base.mode(&model.k) * TAU.powi(model.dim() as i32);
        let profile = ScalarProfile {
            model: model.clone(),
            cutoff,
            s0,
            knorm: model.k_norm(),
        };
        for &(nu, om) in &[(3.7, 1.013), (41.3, 0.987), (97.1, 1.021)] {
            let honest = meanfield::mean_field_map(model, nu, om, cutoff)?;
            if (profile.m(nu, om) - honest).abs() > 1e-11 {
                return Err(MftkError::CutoffTooSmall(format!(
                    "scalar reduction mismatch at (nu,omega)=({nu},{om}): profile {} vs operator {honest}",
                    profile.m(nu, om)
                )));
            }
        }
        Ok(profile)
    }

    #[inline]
    fn phase(&self, nu: f64, om: f64) -> Complex64 {
        self.s0 * Complex64::from_polar(1.0, -nu * om * self.knorm)
    }

    /// M(nu, omega).
    #[inline]
    pub fn m(&self, nu: f64, om: f64) -> f64 {
        1.0 - self.phase(nu, om).re
    }

    /// g(nu, omega) = omega - M.
    #[inline]
    pub fn g(&self, nu: f64, om: f64) -> f64 {
        om - self.m(nu, om)
    }

    /// Gamma = dM/domega.
    #[inline]
    pub fn gamma(&self, nu: f64, om: f64) -> f64 {
        -nu * self.knorm * self.phase(nu, om).im
    }

    /// dM/dnu.
    #[inline]
    pub fn dm_dnu(&self, nu: f64, om: f64) -> f64 {
        -om * self.knorm * self.phase(nu, om).im
    }

    /// dGamma/domega.
    #[inline]
    pub fn dgamma_dom(&self, nu: f64, om: f64) -> f64 {
        nu * nu * self.knorm * self.knorm * self.phase(nu, om).re
    }

    /// Scalar-shadow nu''(tau0) = -dGamma/domega / dM/dnu at a fold.
    pub fn nu_second_derivative(&self, nu: f64, om: f64) -> f64 {
        -self.dgamma_dom(nu, om) / self.dm_dnu(nu, om)
    }
}

/// All roots of omega = M_nu(omega): dense sign-change scan plus bisection.
pub fn solve_scalar_all(profile: &ScalarProfile, nu: f64) -> Vec<f64> {
    let mu = profile.model.mu.max(1e-6);
    let lo = 1.0 - mu;
    let hi = 1.0 + mu;
    let n = 4096;
    let mut roots = Vec::new();
    let f = |om: f64| profile.g(nu, om);
    let mut prev = f(lo);
    let mut prev_om = lo;
    for i in 1..=n {
        let om = lo + (hi - lo) * i as f64 / n as f64;
        let v = f(om);
        if prev == 0.0 {
            roots.push(prev_om);
        } else if prev * v < 0.0 {
            let (mut a, mut b) = (prev_om, om);
            let (mut fa, _) = (prev, v);
            for _ in 0..80 {
                let c = 0.5 * (a + b);
                let fc = f(c);
                if fa * fc <= 0.0 {
                    b = c;
                } else {
                    a = c;
                    fa = fc;
                }
                if b - a < 1e-12 {
                    break;
                }
            }
            roots.push(0.5 * (a + b));
        }
        prev = v;
        prev_om = om;
    }
    roots.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    roots
}

/// Fold nu-locations from the brute-force oracle: bisect on root-count changes.
pub fn fold_nus_oracle(profile: &ScalarProfile, nu_range: (f64, f64), scan_step: f64) -> Vec<f64> {
    let count = |nu: f64| solve_scalar_all(profile, nu).len();
    let mut folds = Vec::new();
    let mut nu = nu_range.0;
    let mut prev = count(nu);
    while nu < nu_range.1 {
        let next = (nu + scan_step).min(nu_range.1);
        let c = count(next);
        if c != prev {
            let (mut a, mut b) = (nu, next);
            let ca = prev;
            for _ in 0..60 {
                let mid = 0.5 * (a + b);
                if count(mid) == ca {
                    a = mid;
                } else {
                    b = mid;
                }
                if b - a < 2e-8 {
                    break;
                }
            }
            folds.push(0.5 * (a + b));
        }
        prev = c;
        nu = next;
    }
    folds
}

/// Independent confirmation of one fold location: root-count bisection of the
/// brute-force scan restricted to a small omega window around the merging
/// pair. The window pins the resolution floor (about nu'' (d omega/2)^2 / 2)
/// far below 1e-6 even at the sharpest folds, and excludes roots belonging to
/// other solution components.
pub fn confirm_fold_oracle(profile: &ScalarProfile, nu_fold: f64, omega_fold: f64) -> Option<f64> {
    let half_w = 0.005f64;
    let n = 16384usize;
    let count = |nu: f64| -> usize {
        let lo = omega_fold - half_w;
        let step = 2.0 * half_w / n as f64;
        let mut c = 0usize;
        let mut prev = profile.g(nu, lo);
        for i in 1..=n {
            let v = profile.g(nu, lo + step * i as f64);
            if prev * v < 0.0 {
                c += 1;
            }
            prev = v;
        }
        c
    };
    let mut bracket = 0.004f64;
    for _ in 0..5 {
        let (mut a, mut b) = (nu_fold - bracket, nu_fold + bracket);
        let (ca, cb) = (count(a), count(b));
        if ca != cb {
            let ca0 = ca;
            for _ in 0..60 {
                let mid = 0.5 * (a + b);
                if count(mid) == ca0 {
                    a = mid;
                } else {
                    b = mid;
                }
                if b - a < 1e-9 {
                    break;
                }
            }
            return Some(0.5 * (a + b));
        }
        bracket *= 2.0;
    }
    None
}

/// Quantitative implicit-function-theorem certificate for a scalar system.
#[derive(Clone, Debug)]
pub struct IFTCertificate {
    pub x0: f64,
    pub lambda0: f64,
    /// Ball radius in the state variable.
    pub delta: f64,
    /// Parameter radius delta / (2 upsilon).
    pub delta1: f64,
    /// sup |A0^{-1} d_lambda F| over the certified box.
    pub upsilon: f64,
    /// sup |1 - A0^{-1} d_x F| over the certified box (must be <= 1/2).
    pub contraction: f64,
    /// Frozen slope A0 = d_x F(x0, lambda0).
    pub slope: f64,
    /// Closed-form radii delta = 1/(4 C^2 {|1-Gamma|^-1 + 1}^2) and
    /// delta1 = delta/(2 C {|1-Gamma|^-1 + 1}), with C measured, when Gamma
    /// at the base point is known.
    pub closed_form_delta: Option<f64>,
    pub closed_form_delta1: Option<f64>,
}

fn fd_dx(f: &dyn Fn(f64, f64) -> f64, x: f64, l: f64) -> f64 {
    let h = 1e-6 * x.abs().max(1.0);
    (f(x + h, l) - f(x - h, l)) / (2.0 * h)
}

fn fd_dl(f: &dyn Fn(f64, f64) -> f64, x: f64, l: f64) -> f64 {
    let h = 1e-6 * l.abs().max(1.0);
    (f(x, l + h) - f(x, l - h)) / (2.0 * h)
}

/// Build a certificate around (x0, lambda0), shrinking the trial radius until
/// the measured contraction bound is <= 1/2.
pub fn certify(
    f: &dyn Fn(f64, f64) -> f64,
    x0: f64,
    lambda0: f64,
    delta_trial: f64,
    gamma0: Option<f64>,
) -> Result<IFTCertificate> {
    let a0 = fd_dx(f, x0, lambda0);
    if a0.abs() < 1e-13 {
        return Err(MftkError::InvalidParameter(
            "frozen slope vanishes at the certificate base point".into(),
        ));
    }
    let mut delta = delta_trial;
    let mut contraction = f64::INFINITY;
    let mut upsilon = 0.0f64;
    let mut cbar = 1.0f64;
    for _ in 0..60 {
        contraction = 0.0;
        upsilon = 0.0;
        cbar = 1.0;
        for i in 0..9 {
            for j in 0..9 {
                let x = x0 + delta * (i as f64 / 4.0 - 1.0);
                let l = lambda0 + delta * (j as f64 / 4.0 - 1.0);
                let c = (1.0 - fd_dx(f, x, l) / a0).abs();
                contraction = contraction.max(c);
                upsilon = upsilon.max((fd_dl(f, x, l) / a0).abs());
                let dist = (x - x0).abs() + (l - lambda0).abs();
                if dist > 1e-9 {
                    cbar = cbar.max(c / dist.sqrt());
                }
            }
        }
        if contraction <= 0.5 {
            break;
        }
        delta *= 0.5;
    }
    if contraction > 0.5 {
        return Err(MftkError::ContractionViolated { factor: contraction });
    }
    let upsilon = upsilon.max(1e-300);
    let (closed_form_delta, closed_form_delta1) = match gamma0 {
        Some(g) => {
            let factor = 1.0 / (1.0 - g).abs() + 1.0;
            (
                Some(1.0 / (4.0 * cbar * cbar * factor * factor)),
                Some(1.0 / (8.0 * cbar.powi(3) * factor.powi(3))),
            )
        }
        None => (None, None),
    };
    Ok(IFTCertificate {
        x0,
        lambda0,
        delta,
        delta1: delta / (2.0 * upsilon),
        upsilon,
        contraction,
        slope: a0,
        closed_form_delta,
        closed_form_delta1,
    })
}

/// The frozen-slope Newton corrector Theta_lambda(x) = x - A0^{-1} F(x, lambda).
/// Returns the solution and the measured contraction factor.
pub fn newton_corrector(
    f: &dyn Fn(f64, f64) -> f64,
    cert: &IFTCertificate,
    lambda: f64,
    tol: f64,
) -> Result<(f64, f64)> {
    let distance = (lambda - cert.lambda0).abs();
    if distance > cert.delta1 * (1.0 + 1e-12) {
        return Err(MftkError::OutsideCertificate {
            distance,
            delta1: cert.delta1,
        });
    }
    let mut x = cert.x0;
    let mut prev_step: Option<f64> = None;
    let mut measured = 0.0f64;
    for _ in 0..200 {
        let step = -f(x, lambda) / cert.slope;
        x += step;
        if (x - cert.x0).abs() > cert.delta * (1.0 + 1e-9) {
            return Err(MftkError::OutsideCertificate {
                distance: (x - cert.x0).abs(),
                delta1: cert.delta,
            });
        }
        if let Some(p) = prev_step {
            if p.abs() > 1e-15 {
                measured = measured.max(step.abs() / p.abs());
            }
        }
        if step.abs() <= tol {
            if measured > 0.5 + 1e-9 {
                return Err(MftkError::ContractionViolated { factor: measured });
            }
            return Ok((x, measured));
        }
        prev_step = Some(step);
    }
    Err(MftkError::NoConvergence {
        iterations: 200,
        residual: f(x, lambda).abs(),
    })
}

#[derive(Clone, Debug)]
pub struct ContinuationSettings {
    pub max_step: f64,
    pub min_step: f64,
    pub corrector_tol: f64,
    /// |1 - Gamma| below this switches to the exchanged parameterization
    /// and halves the step.
    pub gamma_band: f64,
    pub max_points: usize,
}

impl Default for ContinuationSettings {
    fn default() -> Self {
        ContinuationSettings {
            max_step: 0.1,
            min_step: 1e-8,
            corrector_tol: 1e-13,
            gamma_band: 0.2,
            max_points: 200_000,
        }
    }
}

#[derive(Clone, Debug)]
pub struct BranchPoint {
    /// Cumulative arclength in the (nu, omega) plane.
    pub tau: f64,
    pub nu: f64,
    pub omega: f64,
    pub gamma: f64,
    pub residual: f64,
    pub xi1: Complex64,
    pub leading_eig: Complex64,
    pub fold_flag: bool,
    pub stability: Option<StabilityClass>,
}

#[derive(Clone, Debug)]
pub struct FoldRecord {
    /// Cumulative arclength at the fold.
    pub tau: f64,
    pub nu: f64,
    pub omega: f64,
    /// Sign of dnu/ds on the incoming arc.
    pub direction: i8,
    /// nu''(tau0) from the density-level formula nu^3 Z(D^2F(Theta,Theta)) / int alpha h.
    pub nu_second_derivative: f64,
    /// nu''(tau0) from a symmetric quadratic fit of nu(tau), tau = nu - omega.
    pub nu_second_derivative_fit: f64,
    /// |nu'(tau0)| from the same fit.
    pub nu_prime_fit: f64,
    /// Half-width of the fit window in tau.
    pub fit_window: f64,
}

#[derive(Clone, Debug)]
pub struct CorrectorStats {
    pub runs: usize,
    pub max_contraction: f64,
}

#[derive(Clone, Debug)]
pub struct Branch {
    pub points: Vec<BranchPoint>,
    pub folds: Vec<FoldRecord>,
    pub corrector: CorrectorStats,
    pub cutoff: usize,
}

#[derive(Clone, Copy, Debug)]
pub enum Annotate {
    None,
    Decimated(usize),
    Full,
}

/// Solve g(omega + tau, omega) = 0 in omega for fixed tau = nu - omega.
/// Valid locally around folds; the parameterization is singular where the
/// curve tangent is parallel to (1,1) (at Gamma = 1 + omega/nu).
fn solve_exchanged(profile: &ScalarProfile, tau: f64, om_seed: f64, tol: f64) -> Option<f64> {
    let mut om = om_seed;
    for _ in 0..60 {
        let nu = om + tau;
        let g = profile.g(nu, om);
        let gp = -profile.dm_dnu(nu, om) + 1.0 - profile.gamma(nu, om);
        if gp.abs() < 1e-14 {
            return None;
        }
        let step = g / gp;
        om -= step;
        if step.abs() < tol {
            return Some(om);
        }
    }
    None
}

/// Pseudo-arclength corrector: full Newton on
/// [g(nu,omega); <(nu,omega) - pred, t>] = 0.
fn palc_correct(
    profile: &ScalarProfile,
    pred: (f64, f64),
    t: (f64, f64),
    tol: f64,
) -> Option<(f64, f64)> {
    let mut x = pred;
    for _ in 0..80 {
        let g_nu = -profile.dm_dnu(x.0, x.1);
        let g_om = 1.0 - profile.gamma(x.0, x.1);
        let det = g_nu * t.1 - g_om * t.0;
        if det.abs() < 1e-14 {
            return None;
        }
        let r1 = profile.g(x.0, x.1);
        let r2 = (x.0 - pred.0) * t.0 + (x.1 - pred.1) * t.1;
        let d0 = (-t.1 * r1 + g_om * r2) / det;
        let d1 = (t.0 * r1 - g_nu * r2) / det;
        x = (x.0 + d0, x.1 + d1);
        let step = (d0 * d0 + d1 * d1).sqrt();
        if step < tol {
            return Some(x);
        }
    }
    None
}

/// Trace the solution curve over the given nu range starting from the unique
/// point at nu_range.0 (seed omega = 1).
pub fn trace_branch(
    model: &ModelSpec,
    profile: &ScalarProfile,
    nu_range: (f64, f64),
    settings: &ContinuationSettings,
    annotate: Annotate,
) -> Result<Branch> {
    let (nu_lo, nu_hi) = nu_range;
    // starting point
    let mut om = 1.0;
    for _ in 0..200 {
        let g = profile.g(nu_lo, om);
        let gw = 1.0 - profile.gamma(nu_lo, om);
        let step = g / gw;
        om -= step;
        if step.abs() < settings.corrector_tol {
            break;
        }
    }
    let mut pts: Vec<(f64, f64, bool)> = vec![(nu_lo, om, false)];
    let mut folds_raw: Vec<(usize, f64, f64, i8)> = Vec::new(); // insert-at, nu, omega, direction
    let mut x = (nu_lo, om);
    let mut tangent = initial_tangent(profile, x);
    if tangent.0 < 0.0 {
        tangent = (-tangent.0, -tangent.1);
    }
    let mut s = settings.max_step / 10.0;
    let mut corrector = CorrectorStats {
        runs: 0,
        max_contraction: 0.0,
    };

    while pts.len() < settings.max_points {
        let gamma_here = profile.gamma(x.0, x.1);
        let near_fold = (1.0 - gamma_here).abs() < settings.gamma_band;
        let step_cap = if near_fold {
            (s * 0.5).max(settings.min_step)
        } else {
            s
        };
        let pred = (x.0 + step_cap * tangent.0, x.1 + step_cap * tangent.1);
        let accepted: Option<((f64, f64), Option<f64>)> = if !near_fold && tangent.0.abs() > 0.5 {
            // natural parameterization: frozen-slope Newton in omega at fixed nu
            let nu_new = pred.0;
            let a0 = 1.0 - profile.gamma(nu_new, pred.1);
            let mut w = pred.1;
            let mut prev_step: Option<f64> = None;
            let mut contraction = 0.0f64;
            let mut ok = false;
            for _ in 0..50 {
                let step = -profile.g(nu_new, w) / a0;
                w += step;
                if let Some(p) = prev_step {
                    if p.abs() > 1e-16 {
                        contraction = contraction.max(step.abs() / p.abs());
                    }
                }
                if step.abs() < settings.corrector_tol {
                    ok = true;
                    break;
                }
                prev_step = Some(step);
            }
            if ok {
                Some(((nu_new, w), Some(contraction)))
            } else {
                None
            }
        } else {
            // Lambda-style exchanged parameterization (tau = nu - omega) close
            // to folds, with the pseudo-arclength corrector as fallback where
            // tau degenerates
            let tau_p = pred.0 - pred.1;
            let exch = solve_exchanged(profile, tau_p, pred.1, settings.corrector_tol)
                .map(|w| ((w + tau_p, w), None));
            // near its singularity tau has two preimages on the curve; accept
            // the exchanged solve only when it makes forward progress
            let forward = |p: (f64, f64)| -> bool {
                (p.0 - x.0) * tangent.0 + (p.1 - x.1) * tangent.1 > 0.0
            };
            match exch {
                Some(v)
                    if ((v.0 .0 - x.0).powi(2) + (v.0 .1 - x.1).powi(2)).sqrt()
                        <= 3.0 * step_cap
                        && forward(v.0) =>
                {
                    Some(v)
                }
                _ => palc_correct(profile, pred, tangent, settings.corrector_tol)
                    .map(|p| (p, None)),
            }
        };
        let forward_ok = |p: (f64, f64)| -> bool {
            (p.0 - x.0) * tangent.0 + (p.1 - x.1) * tangent.1 > 0.0
        };

        // Gamma stride guard: a step may only move Gamma by a fraction of the
        // current distance to the fold value 1, so no crossing can be skipped
        let gamma_guard = |newx: (f64, f64)| -> bool {
            let g_old = 1.0 - gamma_here;
            let g_new = 1.0 - profile.gamma(newx.0, newx.1);
            if g_old * g_new < 0.0 {
                // genuine crossing: allow only modest overshoot
                return g_new.abs() <= 0.5 * g_old.abs().max(0.02);
            }
            (g_new - g_old).abs() <= 0.5 * g_old.abs().max(0.02)
        };

        match accepted {
            Some((newx, contraction))
                if ((newx.0 - x.0).powi(2) + (newx.1 - x.1).powi(2)).sqrt() <= 3.0 * step_cap
                    && gamma_guard(newx)
                    && forward_ok(newx) =>
            {
                if let Some(c) = contraction {
                    corrector.runs += 1;
                    corrector.max_contraction = corrector.max_contraction.max(c);
                }
                // fold detection between x and newx
                let g_old = 1.0 - profile.gamma(x.0, x.1);
                let g_new = 1.0 - profile.gamma(newx.0, newx.1);
                if g_old * g_new < 0.0 {
                    let (fnu, fom) = bisect_fold(profile, x, newx, settings.corrector_tol)?;
                    let dir = if fnu >= x.0 { 1 } else { -1 };
                    folds_raw.push((pts.len(), fnu, fom, dir));
                    pts.push((fnu, fom, true));
                }
                pts.push((newx.0, newx.1, false));
                // orient the new tangent along the actual motion (the secant):
                // across a tight fold the direction can rotate by more than 90
                // degrees, which defeats tangent-to-tangent continuity
                let secant = (newx.0 - x.0, newx.1 - x.1);
                let mut t_new = tangent_at(profile, newx, tangent);
                let align = t_new.0 * secant.0 + t_new.1 * secant.1;
                if align < 0.0 || (align == 0.0 && t_new.0 * tangent.0 + t_new.1 * tangent.1 < 0.0)
                {
                    t_new = (-t_new.0, -t_new.1);
                }
                tangent = t_new;
                x = newx;
                s = (s * 1.3).min(settings.max_step);
                if x.0 > nu_hi || x.0 < nu_lo - 1e-9 {
                    break;
                }
            }
            _ => {
                s *= 0.5;
                if s < settings.min_step {
                    return Err(MftkError::StepCollapse { nu: x.0 });
                }
            }
        }
    }

    // cumulative arclength
    let mut taus = vec![0.0f64];
    for w in pts.windows(2) {
        let d = ((w[1].0 - w[0].0).powi(2) + (w[1].1 - w[0].1).powi(2)).sqrt();
        taus.push(taus.last().unwrap() + d);
    }

    // fold records with formula and fit
    let mut folds = Vec::new();
    for &(idx, fnu, fom, dir) in &folds_raw {
        let rec = fold_record(model, profile, fnu, fom, dir, taus[idx.min(taus.len() - 1)])?;
        folds.push(rec);
    }

    // assemble annotated points
    let classify_idx: Vec<bool> = match annotate {
        Annotate::None => vec![false; pts.len()],
        Annotate::Full => vec![true; pts.len()],
        Annotate::Decimated(n) => (0..pts.len())
            .map(|i| i % n.max(1) == 0 || pts[i].2)
            .collect(),
    };
    let gap_hint = if classify_idx.iter().any(|&b| b) {
        Some(TransferOp::new(model, 0.0, 0.0, profile.cutoff).spectral_gap_estimate())
    } else {
        None
    };
    let points: Vec<BranchPoint> = pts
        .par_iter()
        .enumerate()
        .map(|(i, &(nu, omega, fold_flag))| {
            let gamma = profile.gamma(nu, omega);
            let residual = profile.g(nu, omega).abs();
            if classify_idx[i] {
                match stability::classify_at_with_gap(model, nu, omega, profile.cutoff, gap_hint) {
                    Ok(rep) => BranchPoint {
                        tau: taus[i],
                        nu,
                        omega,
                        gamma,
                        residual,
                        xi1: rep.xi1,
                        leading_eig: rep.leading_eig,
                        fold_flag,
                        stability: Some(rep.classification),
                    },
                    Err(_) => BranchPoint {
                        tau: taus[i],
                        nu,
                        omega,
                        gamma,
                        residual,
                        xi1: Complex64::new(gamma, 0.0),
                        leading_eig: Complex64::new(gamma, 0.0),
                        fold_flag,
                        stability: Some(stability::shadow_class(gamma)),
                    },
                }
            } else {
                // scalar-shadow annotation; exact for this family (see
                // stability::shadow_class) and cross-checked on decimated points
                BranchPoint {
                    tau: taus[i],
                    nu,
                    omega,
                    gamma,
                    residual,
                    xi1: Complex64::new(gamma, 0.0),
                    leading_eig: Complex64::new(gamma, 0.0),
                    fold_flag,
                    stability: Some(stability::shadow_class(gamma)),
                }
            }
        })
        .collect();

    Ok(Branch {
        points,
        folds,
        corrector,
        cutoff: profile.cutoff,
    })
}

fn initial_tangent(profile: &ScalarProfile, x: (f64, f64)) -> (f64, f64) {
    tangent_at(profile, x, (1.0, 0.0))
}

fn tangent_at(profile: &ScalarProfile, x: (f64, f64), _prev: (f64, f64)) -> (f64, f64) {
    let g_nu = -profile.dm_dnu(x.0, x.1);
    let g_om = 1.0 - profile.gamma(x.0, x.1);
    let t = (g_om, -g_nu);
    let n = (t.0 * t.0 + t.1 * t.1).sqrt();
    (t.0 / n, t.1 / n)
}

/// Bisection of the Gamma = 1 crossing along the curve between two bracketing
/// curve points: midpoints are projected back onto the curve with the
/// pseudo-arclength corrector (monotone along the arc, fold included).
fn bisect_fold(
    profile: &ScalarProfile,
    a: (f64, f64),
    b: (f64, f64),
    tol: f64,
) -> Result<(f64, f64)> {
    let mut pa = a;
    let mut pb = b;
    let ga0 = 1.0 - profile.gamma(pa.0, pa.1);
    if ga0 * (1.0 - profile.gamma(pb.0, pb.1)) > 0.0 {
        return Err(MftkError::NoCrossing);
    }
    for _ in 0..400 {
        let chord = (pb.0 - pa.0, pb.1 - pa.1);
        let n = (chord.0 * chord.0 + chord.1 * chord.1).sqrt();
        if n < 4.0 * f64::EPSILON * (1.0 + pa.0.abs()) {
            break;
        }
        // local tangent at the bracket start, oriented toward the other end
        let mut t = tangent_at(profile, pa, (chord.0 / n, chord.1 / n));
        if t.0 * chord.0 + t.1 * chord.1 < 0.0 {
            t = (-t.0, -t.1);
        }
        // march from pa along the tangent as far as the corrector can follow
        let mut corrected = None;
        let mut frac = 0.5f64;
        while frac > 1e-10 {
            let pred = (pa.0 + frac * n * t.0, pa.1 + frac * n * t.1);
            if let Some(m) = palc_correct(profile, pred, t, tol) {
                let d = ((m.0 - pa.0).powi(2) + (m.1 - pa.1).powi(2)).sqrt();
                if d <= 1.5 * n && d > 1e-16 {
                    corrected = Some(m);
                    break;
                }
            }
            frac *= 0.5;
        }
        let m = match corrected {
            // bracket exhausted at floating-point resolution
            None => break,
            Some(m) => m,
        };
        let gm = 1.0 - profile.gamma(m.0, m.1);
        if gm.abs() <= 1e-11 {
            return Ok(m);
        }
        if (1.0 - profile.gamma(pa.0, pa.1)) * gm > 0.0 {
            pa = m;
        } else {
            pb = m;
        }
    }
    Ok((0.5 * (pa.0 + pb.0), 0.5 * (pa.1 + pb.1)))
}

/// Locate and characterize the fold inside a bracketing curve segment:
/// bisects the Gamma = 1 crossing along the arc, then assembles the record
/// (curvature by the density-level formula and by a local fit).
pub fn detect_fold(
    model: &ModelSpec,
    profile: &ScalarProfile,
    a: (f64, f64),
    b: (f64, f64),
) -> Result<FoldRecord> {
    let (fnu, fom) = bisect_fold(profile, a, b, 1e-13)?;
    let dir = if fnu >= a.0 { 1 } else { -1 };
    fold_record(model, profile, fnu, fom, dir, 0.0)
}

/// Assemble the fold record: density-level curvature formula plus a symmetric
/// quadratic fit of nu(tau) sampled on the curve.
pub fn fold_record(
    model: &ModelSpec,
    profile: &ScalarProfile,
    fnu: f64,
    fom: f64,
    direction: i8,
    tau_global: f64,
) -> Result<FoldRecord> {
    // formula: nu0^3 Z(D^2F(Theta,Theta)) / int alpha h0
    let h0 = meanfield::frozen_srb(model, fnu, fom, profile.cutoff)?;
    let d2 = meanfield::d2f_dh2_along_theta(model, fnu, &h0)?;
    let z_d2 = d2.alpha_integral(&model.k).re;
    let alpha_h = h0.omega(&model.k);
    let nu_pp_formula = fnu.powi(3) * z_d2 / alpha_h;

    // Symmetric quartic fit of nu(tau) around the fold, tau = nu - omega.
    // The tau-parameterization develops structure at the scale of its
    // singularity (Gamma = 1 + omega/nu, curve distance about
    // (omega/nu)/|dGamma/domega|), so the window must sit well inside it and
    // the fit must carry the cubic and quartic terms to leave the curvature
    // coefficient uncontaminated.
    let tau0 = fnu - fom;
    let singular_dist = (fom / fnu).abs() / profile.dgamma_dom(fnu, fom).abs().max(1e-9);
    let window = (0.12 * singular_dist).clamp(1e-9, 2e-4);
    let mut xs = vec![0.0];
    let mut ys = vec![fnu];
    // march outward from the fold keeping the design exactly symmetric:
    // a sample enters only together with its mirror
    let mut seed_m = fom;
    let mut seed_p = fom;
    for j in 1..=6i32 {
        let tm = tau0 - window * j as f64 / 6.0;
        let tp = tau0 + window * j as f64 / 6.0;
        match (
            solve_exchanged(profile, tm, seed_m, 1e-13),
            solve_exchanged(profile, tp, seed_p, 1e-13),
        ) {
            (Some(om_m), Some(om_p)) => {
                xs.push(tm - tau0);
                ys.push(om_m + tm);
                xs.push(tp - tau0);
                ys.push(om_p + tp);
                seed_m = om_m;
                seed_p = om_p;
            }
            _ => break,
        }
    }
    // degree falls back when the window is too tight for full sampling
    // (folds at very large nu sit at the floating-point resolution floor)
    let (prime_fit, second_fit) = if xs.len() >= 11 {
        let c = polynomial_fit::<7>(&xs, &ys);
        (c[1].abs(), 2.0 * c[2])
    } else if xs.len() >= 7 {
        let c = polynomial_fit::<5>(&xs, &ys);
        (c[1].abs(), 2.0 * c[2])
    } else if xs.len() >= 4 {
        let c = polynomial_fit::<3>(&xs, &ys);
        (c[1].abs(), 2.0 * c[2])
    } else {
        (f64::NAN, f64::NAN)
    };
    Ok(FoldRecord {
        tau: tau_global,
        nu: fnu,
        omega: fom,
        direction,
        nu_second_derivative: nu_pp_formula,
        nu_second_derivative_fit: second_fit,
        nu_prime_fit: prime_fit,
        fit_window: window,
    })
}

/// Least-squares polynomial fit y = sum_{i<D} c_i x^i (normal equations).
fn polynomial_fit<const D: usize>(xs: &[f64], ys: &[f64]) -> [f64; D] {
    let mut ata = nalgebra::DMatrix::<f64>::zeros(D, D);
    let mut atb = nalgebra::DVector::<f64>::zeros(D);
    // scale x for conditioning
    let xmax = xs.iter().fold(0.0f64, |a, x| a.max(x.abs())).max(1e-300);
    for (&x, &y) in xs.iter().zip(ys) {
        let xs_ = x / xmax;
        let mut pow = [0.0f64; D];
        let mut p = 1.0;
        for v in pow.iter_mut() {
            *v = p;
            p *= xs_;
        }
        for i in 0..D {
            for j in 0..D {
                ata[(i, j)] += pow[i] * pow[j];
            }
            atb[i] += pow[i] * y;
        }
    }
    let sol = ata.lu().solve(&atb).expect("polynomial fit solve");
    let mut out = [0.0f64; D];
    let mut scale = 1.0;
    for i in 0..D {
        out[i] = sol[i] / scale;
        scale *= xmax;
    }
    out
}

/// Omegas where the traced branch crosses the vertical line at nu.
pub fn branch_omegas_at(branch: &Branch, profile: &ScalarProfile, nu: f64) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::new();
    for w in branch.points.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        if (a.nu - nu) * (b.nu - nu) > 0.0 {
            continue;
        }
        if (b.nu - a.nu).abs() < 1e-15 {
            continue;
        }
        let t = (nu - a.nu) / (b.nu - a.nu);
        let mut om = a.omega + t * (b.omega - a.omega);
        // polish at fixed nu when the crossing is transversal enough
        let gw = 1.0 - profile.gamma(nu, om);
        if gw.abs() > 1e-3 {
            for _ in 0..60 {
                let step = profile.g(nu, om) / (1.0 - profile.gamma(nu, om));
                om -= step;
                if step.abs() < 1e-13 {
                    break;
                }
            }
        }
        if !out.iter().any(|&o| (o - om).abs() < 1e-7) {
            out.push(om);
        }
    }
    out.sort_by(|a, b| a.partial_cmp(b).unwrap());
    out
}

/// Track the real secular root z(tau) across a fold: samples classify() on
/// curve points around the fold and fits a line. Returns (slope, z-values).
pub fn fold_root_crossing(
    model: &ModelSpec,
    profile: &ScalarProfile,
    fold: &FoldRecord,
    window: f64,
    samples: usize,
) -> Result<(f64, Vec<(f64, f64)>)> {
    let tau0 = fold.nu - fold.omega;
    let singular_dist =
        (fold.omega / fold.nu).abs() / profile.dgamma_dom(fold.nu, fold.omega).abs().max(1e-9);
    let window = window.min(0.25 * singular_dist);
    let half = (samples / 2).max(2);
    let mut pts = Vec::new();
    for dir in [-1.0f64, 1.0] {
        let mut seed = fold.omega;
        for j in 1..=half {
            let t = tau0 + dir * window * j as f64 / half as f64;
            if let Some(om) = solve_exchanged(profile, t, seed, 1e-14) {
                pts.push((t - tau0, om + t, om));
                seed = om;
            }
        }
    }
    pts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut fitx = Vec::new();
    let mut fity = Vec::new();
    for &(dt, nu, om) in &pts {
        let rep = stability::classify_at(model, nu, om, profile.cutoff)?;
        // the tracked root: real secular root nearest to 1
        let root = rep
            .secular_roots
            .iter()
            .filter(|r| r.z.im.abs() < 1e-6)
            .min_by(|a, b| {
                (a.z.re - 1.0)
                    .abs()
                    .partial_cmp(&(b.z.re - 1.0).abs())
                    .unwrap()
            })
            .map(|r| r.z.re);
        if let Some(z) = root {
            fitx.push(dt);
            fity.push(z);
        }
    }
    if fitx.len() < 3 {
        return Err(MftkError::NoCrossing);
    }
    // linear fit z = a + b dt
    let n = fitx.len() as f64;
    let sx: f64 = fitx.iter().sum();
    let sy: f64 = fity.iter().sum();
    let sxx: f64 = fitx.iter().map(|x| x * x).sum();
    let sxy: f64 = fitx.iter().zip(&fity).map(|(x, y)| x * y).sum();
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    Ok((slope, fitx.into_iter().zip(fity).collect()))
}

impl Branch {
    /// CSV with the columns pinned by the interface contract.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        s.push_str("tau,nu,omega,gamma,xi1_re,xi1_im,leading_eig_re,leading_eig_im,fold_flag,stability\n");
        for p in &self.points {
            s.push_str(&format!(
                "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{},{}\n",
                p.tau,
                p.nu,
                p.omega,
                p.gamma,
                p.xi1.re,
                p.xi1.im,
                p.leading_eig.re,
                p.leading_eig.im,
                if p.fold_flag { 1 } else { 0 },
                p.stability
                    .map(|c| c.to_string())
                    .unwrap_or_else(|| "unclassified".into())
            ));
        }
        s
    }

    /// JSON summary: fold list and per-nu solution counts on a sample grid.
    pub fn summary_json(&self, profile: &ScalarProfile, count_nus: &[f64]) -> String {
        self.summary_json_with_meta(profile, count_nus, "")
    }

    pub fn summary_json_with_meta(
        &self,
        profile: &ScalarProfile,
        count_nus: &[f64],
        meta: &str,
    ) -> String {
        let folds: Vec<String> = self
            .folds
            .iter()
            .map(|f| {
                format!(
                    "{{\"tau\":{:.17e},\"nu\":{:.17e},\"omega\":{:.17e},\"direction\":{},\"nu_second_derivative\":{:.17e},\"nu_second_derivative_fit\":{:.17e},\"nu_prime_fit\":{:.3e}}}",
                    f.tau, f.nu, f.omega, f.direction, f.nu_second_derivative,
                    f.nu_second_derivative_fit, f.nu_prime_fit
                )
            })
            .collect();
        let counts: Vec<String> = count_nus
            .iter()
            .map(|&nu| {
                let roots = solve_scalar_all(profile, nu);
                let on_branch = branch_omegas_at(self, profile, nu);
                let unmatched: Vec<f64> = roots
                    .iter()
                    .cloned()
                    .filter(|r| !on_branch.iter().any(|b| (b - r).abs() < 1e-7))
                    .collect();
                format!(
                    "{{\"nu\":{:.17e},\"count\":{},\"on_branch\":{},\"unmatched\":{:?}}}",
                    nu,
                    roots.len(),
                    on_branch.len(),
                    unmatched
                )
            })
            .collect();
        format!(
            "{{\"meta\":\"{}\",\"corrector_runs\":{},\"corrector_max_contraction\":{:.6},\"folds\":[{}],\"solution_counts\":[{}]}}",
            meta,
            self.corrector.runs,
            self.corrector.max_contraction,
            folds.join(","),
            counts.join(",")
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, ModelConfig};

    fn profile() -> (ModelSpec, ScalarProfile) {
        let m = build_model(&ModelConfig::default()).unwrap();
        let p = ScalarProfile::build(&m, 48).unwrap();
        (m, p)
    }

    #[test]
    fn profile_matches_operator_path() {
        let (m, p) = profile();
        for &(nu, om) in &[(0.0, 1.0), (12.3, 0.97), (55.5, 1.04)] {
            let honest = meanfield::mean_field_map(&m, nu, om, 48).unwrap();
            assert!((p.m(nu, om) - honest).abs() < 1e-11);
        }
        // Gamma против honest
        for &(nu, om) in &[(6.0, 1.0), (30.0, 1.01)] {
            let honest = meanfield::gamma(&m, nu, om, 48).unwrap();
            assert!(
                (p.gamma(nu, om) - honest).abs() < 1e-9,
                "profile {} honest {honest}",
                p.gamma(nu, om)
            );
        }
    }

    #[test]
    fn scalar_roots_weak_coupling_unique() {
        let (_, p) = profile();
        for &nu in &[0.0, 5.0, 10.0, 15.0, 20.0, 25.0] {
            let roots = solve_scalar_all(&p, nu);
            assert_eq!(roots.len(), 1, "nu = {nu}: {roots:?}");
        }
    }

    #[test]
    fn scalar_roots_mu0_unique_at_one() {
        let m = build_model(&ModelConfig {
            mu: 0.0,
            ..ModelConfig::default()
        })
        .unwrap();
        let p = ScalarProfile::build(&m, 32).unwrap();
        let roots = solve_scalar_all(&p, 300.0);
        assert_eq!(roots.len(), 1);
        assert!((roots[0] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn multi_solution_window_count_matches_leading_order_model() {
        let (_, p) = profile();
        // window 2 from the leading-order law: scan both models
        let nu = 51.85;
        let roots = solve_scalar_all(&p, nu);
        assert_eq!(roots.len(), 3, "{roots:?}");
        // leading-order closed form omega = 1 - (mu/2) cos(nu omega)
        let mu = 0.05;
        let lead_count = {
            let f = |om: f64| om - (1.0 - 0.5 * mu * (nu * om).cos());
            let n = 4096;
            let mut c = 0;
            let mut prev = f(1.0 - mu);
            for i in 1..=n {
                let om = 1.0 - mu + 2.0 * mu * i as f64 / n as f64;
                let v = f(om);
                if prev * v < 0.0 {
                    c += 1;
                }
                prev = v;
            }
            c
        };
        assert_eq!(roots.len(), lead_count);
    }

    #[test]
    fn trace_weak_coupling_no_folds() {
        let (m, p) = profile();
        let b = trace_branch(&m, &p, (0.0, 26.0), &ContinuationSettings::default(), Annotate::None)
            .unwrap();
        assert!(b.folds.is_empty());
        assert!(b.corrector.max_contraction <= 0.5);
        // single-valued graph: nu strictly increasing
        for w in b.points.windows(2) {
            assert!(w[1].nu > w[0].nu);
        }
    }

    #[test]
    fn trace_mu0_horizontal_line() {
        let m = build_model(&ModelConfig {
            mu: 0.0,
            ..ModelConfig::default()
        })
        .unwrap();
        let p = ScalarProfile::build(&m, 32).unwrap();
        let b = trace_branch(&m, &p, (0.0, 50.0), &ContinuationSettings::default(), Annotate::None)
            .unwrap();
        assert!(b.folds.is_empty());
        for pt in &b.points {
            assert!((pt.omega - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn trace_through_first_folds_matches_oracle() {
        let (m, p) = profile();
        let b = trace_branch(&m, &p, (0.0, 60.0), &ContinuationSettings::default(), Annotate::None)
            .unwrap();
        assert!(b.folds.len() >= 2, "folds: {:?}", b.folds.len());
        let oracle = fold_nus_oracle(&p, (30.0, 60.0), 0.01);
        assert_eq!(b.folds.len(), oracle.len(), "branch {:?} oracle {oracle:?}", b.folds);
        let mut branch_nus: Vec<f64> = b.folds.iter().map(|f| f.nu).collect();
        branch_nus.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (bn, on) in branch_nus.iter().zip(&oracle) {
            assert!((bn - on).abs() <= 1e-6, "branch {bn} oracle {on}");
        }
        // fold flags carry |Gamma - 1| <= 1e-6 and the sign flips across
        for (i, pt) in b.points.iter().enumerate() {
            if pt.fold_flag {
                assert!((pt.gamma - 1.0).abs() <= 1e-6);
                let before = &b.points[i - 1];
                let after = &b.points[i + 1];
                assert!((1.0 - before.gamma) * (1.0 - after.gamma) < 0.0);
            }
        }
        // nu strictly monotone between consecutive folds
        let fold_idx: Vec<usize> = b
            .points
            .iter()
            .enumerate()
            .filter(|(_, p)| p.fold_flag)
            .map(|(i, _)| i)
            .collect();
        let mut bounds = vec![0usize];
        bounds.extend(&fold_idx);
        bounds.push(b.points.len() - 1);
        for seg in bounds.windows(2) {
            let slice = &b.points[seg[0]..=seg[1]];
            if slice.len() < 3 {
                continue;
            }
            let increasing = slice[1].nu > slice[0].nu;
            for w in slice.windows(2) {
                if w[1].fold_flag || w[0].fold_flag {
                    continue;
                }
                assert_eq!(w[1].nu > w[0].nu, increasing, "non-monotone between folds");
            }
        }
    }

    #[test]
    fn fold_curvature_formula_vs_fit() {
        let (m, p) = profile();
        let b = trace_branch(&m, &p, (40.0, 47.0), &ContinuationSettings::default(), Annotate::None);
        // start at nu=40 on the pre-fold arc
        let b = match b {
            Ok(b) => b,
            Err(e) => panic!("{e}"),
        };
        assert!(!b.folds.is_empty());
        for f in &b.folds {
            let rel = ((f.nu_second_derivative - f.nu_second_derivative_fit)
                / f.nu_second_derivative)
                .abs();
            assert!(rel <= 1e-3, "formula {} fit {}", f.nu_second_derivative, f.nu_second_derivative_fit);
            assert!(f.nu_prime_fit <= 1e-5 * f.nu_second_derivative.abs() * f.fit_window);
            // scalar-shadow cross-check
            let shadow = p.nu_second_derivative(f.nu, f.omega);
            let rel2 = ((shadow - f.nu_second_derivative) / shadow).abs();
            assert!(rel2 <= 1e-6, "shadow {shadow} formula {}", f.nu_second_derivative);
        }
    }

    #[test]
    fn ift_quadratic_benchmark() {
        // F(x, lambda) = x^2 - lambda at (1, 1), delta = 0.2
        let f = |x: f64, l: f64| x * x - l;
        let cert = certify(&f, 1.0, 1.0, 0.2, None).unwrap();
        assert!(cert.contraction <= 0.5);
        assert!((cert.delta - 0.2).abs() < 1e-12, "delta = {}", cert.delta);
        for &l in &[1.0 - cert.delta1, 1.0 + cert.delta1, 1.05] {
            let (x, c) = newton_corrector(&f, &cert, l, 1e-15).unwrap();
            assert!((x - l.sqrt()).abs() <= 1e-12, "x = {x}, sqrt = {}", l.sqrt());
            assert!(c <= 0.5);
        }
        // outside the certificate
        assert!(matches!(
            newton_corrector(&f, &cert, 1.0 + cert.delta1 * 1.5, 1e-15),
            Err(MftkError::OutsideCertificate { .. })
        ));
    }

    #[test]
    fn ift_linear_system_one_step() {
        let f = |x: f64, l: f64| x - l;
        let cert = certify(&f, 0.0, 0.0, 10.0, None).unwrap();
        assert!((cert.upsilon - 1.0).abs() < 1e-6);
        let (x, _) = newton_corrector(&f, &cert, 3.0, 1e-15).unwrap();
        assert!((x - 3.0).abs() < 1e-14);
    }

    #[test]
    fn branch_completeness_random_nu() {
        let (m, p) = profile();
        let b = trace_branch(&m, &p, (0.0, 80.0), &ContinuationSettings::default(), Annotate::None)
            .unwrap();
        // deterministic pseudo-random sample of nu values
        let mut state = 12345u64;
        let mut rand = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..50 {
            let nu = rand() * 79.0;
            let roots = solve_scalar_all(&p, nu);
            let on_branch = branch_omegas_at(&b, &p, nu);
            assert_eq!(
                roots.len(),
                on_branch.len(),
                "nu = {nu}: oracle {roots:?} branch {on_branch:?}"
            );
            for (r, ob) in roots.iter().zip(&on_branch) {
                assert!((r - ob).abs() <= 1e-8, "nu = {nu}: {r} vs {ob}");
            }
        }
    }

    #[test]
    fn odd_root_count_off_folds() {
        let (_, p) = profile();
        let mut state = 777u64;
        let mut rand = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..60 {
            let nu = rand() * 150.0;
            let n = solve_scalar_all(&p, nu).len();
            assert_eq!(n % 2, 1, "nu = {nu}: count {n}");
        }
    }
}

