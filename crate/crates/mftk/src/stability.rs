//! Stability of fixed points via the linearization of the nonlinear operator.
//!
//! The Gateaux derivative at a fixed point h is the rank-one update
//!   D_h(phi) = L phi - nu div(L beta h) int(alpha phi),
//! and its spectrum outside sigma(L) consists exactly of the solutions of the
//! secular equation Xi(z) = 1. Xi is evaluated two ways: a Krylov moment
//! expansion Xi(z) = -nu sum_j c_j z^{-j-1} with c_j = int alpha L^j u (used
//! for circle sampling and winding counts), and resolvent solves (used for
//! Newton polishing). Roots are located by argument-principle counting on the
//! annulus 1/2 < |z| < R and seeded from the companion matrix of the moment
//! polynomial.

use num_complex::Complex64;

use crate::density::Density;
use crate::error::{MftkError, Result};
use crate::meanfield::FixedPointRecord;
use crate::model::ModelSpec;
use crate::transfer::TransferOp;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StabilityClass {
    Physical,
    Unstable,
    Marginal,
}

impl std::fmt::Display for StabilityClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StabilityClass::Physical => write!(f, "physical"),
            StabilityClass::Unstable => write!(f, "unstable"),
            StabilityClass::Marginal => write!(f, "marginal"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SecularRoot {
    pub z: Complex64,
    /// |Xi(z) - 1| after polishing.
    pub residual: f64,
}

#[derive(Clone, Debug)]
pub struct StabilityReport {
    pub nu: f64,
    pub omega: f64,
    /// sup over 256 samples of |Xi(e^{i theta})|.
    pub circle_sup: f64,
    pub secular_roots: Vec<SecularRoot>,
    pub leading_eig: Complex64,
    pub kappa: f64,
    pub xi1: Complex64,
    pub classification: StabilityClass,
    /// ||D_h phi - phi|| for the explicit eigenvector at 1, when computed.
    pub eigvec_residual: Option<f64>,
}

/// Matrix-free handle for the linearization D_h.
pub struct DhOperator {
    op: TransferOp,
    /// div(L beta h), the rank-one direction.
    w: Density,
    nu: f64,
    k: [i64; 2],
}

/// Build the linearization at a fixed point.
pub fn linearize(model: &ModelSpec, record: &FixedPointRecord) -> DhOperator {
    let op = TransferOp::new(model, record.nu, record.omega, record.density.cutoff());
    let w = op.divergence_coupling(&record.density);
    DhOperator {
        op,
        w,
        nu: record.nu,
        k: model.k,
    }
}

impl DhOperator {
    pub fn apply(&self, phi: &Density) -> Density {
        let mut out = self.op.apply(phi);
        let a = phi.alpha_integral(&self.k);
        out.axpy(-self.nu * a, &self.w);
        out
    }

    /// Dense complex-basis matrix (for 1D oracle checks).
    pub fn assemble_dense(&self) -> nalgebra::DMatrix<Complex64> {
        let dim = self.w.dim();
        let cutoff = self.w.cutoff();
        let side = 2 * cutoff + 1;
        let n = if dim == 1 { side } else { side * side };
        let mut mat = nalgebra::DMatrix::<Complex64>::zeros(n, n);
        for col in 0..n {
            let mut e = Density::zero(dim, cutoff);
            e.coeffs_mut()[col] = Complex64::new(1.0, 0.0);
            let out = self.apply(&e);
            for row in 0..n {
                mat[(row, col)] = out.coeffs()[row];
            }
        }
        mat
    }
}

/// Dense matrix of a density->density map in the real trigonometric basis
/// {1, cos(j x), sin(j x)} (1D) so nalgebra's real eigensolver applies.
pub fn dense_real_basis_1d(
    cutoff: usize,
    apply: &dyn Fn(&Density) -> Density,
) -> nalgebra::DMatrix<f64> {
    let n = 2 * cutoff + 1;
    let mut mat = nalgebra::DMatrix::<f64>::zeros(n, n);
    let basis_density = |idx: usize| -> Density {
        let mut d = Density::zero(1, cutoff);
        if idx == 0 {
            d.set_mode(&[0, 0], Complex64::new(1.0, 0.0));
        } else if idx <= cutoff {
            let j = idx as i64;
            d.set_mode(&[j, 0], Complex64::new(0.5, 0.0));
            d.set_mode(&[-j, 0], Complex64::new(0.5, 0.0));
        } else {
            let j = (idx - cutoff) as i64;
            d.set_mode(&[j, 0], Complex64::new(0.0, -0.5));
            d.set_mode(&[-j, 0], Complex64::new(0.0, 0.5));
        }
        d
    };
    for col in 0..n {
        let out = apply(&basis_density(col));
        mat[(0, col)] = out.mode(&[0, 0]).re;
        for j in 1..=cutoff {
            let c = out.mode(&[j as i64, 0]);
            mat[(j, col)] = 2.0 * c.re;
            mat[(cutoff + j, col)] = -2.0 * c.im;
        }
    }
    mat
}

/// Krylov moment expansion of the secular function:
/// Xi(z) = -nu sum_{j<=J} c_j z^{-j-1} with c_j = int alpha L^j u.
pub struct SecularFunction {
    pub nu: f64,
    pub moments: Vec<f64>,
    /// l2 norm of the last Krylov iterate (truncation tail).
    pub tail: f64,
}

impl SecularFunction {
    pub fn build(op: &TransferOp, h: &Density, k: &[i64; 2], nu: f64) -> SecularFunction {
        let mut v = op.divergence_coupling(h);
        let mut moments = Vec::with_capacity(64);
        let mut tail = v.l2_norm();
        let floor = tail.max(1e-30) * 1e-16;
        for _ in 0..60 {
            moments.push(v.alpha_integral(k).re);
            v = op.apply(&v);
            v.set_mode(&[0, 0], Complex64::new(0.0, 0.0));
            tail = v.l2_norm();
            if tail < floor {
                break;
            }
        }
        // drop the trailing noise floor: terms below 3e-15 of the peak are
        // measurement noise and would be amplified by z^{-j} on the inner contour
        let peak = moments.iter().fold(0.0f64, |a, c| a.max(c.abs()));
        if peak > 0.0 {
            let cut = moments
                .iter()
                .position(|c| c.abs() < 3e-15 * peak)
                .unwrap_or(moments.len());
            moments.truncate(cut.max(1));
        }
        SecularFunction { nu, moments, tail }
    }

    /// Xi(z) = -nu sum c_j z^{-j-1}.
    pub fn eval(&self, z: Complex64) -> Complex64 {
        let zin = Complex64::new(1.0, 0.0) / z;
        let mut acc = Complex64::new(0.0, 0.0);
        let mut p = zin;
        for &c in &self.moments {
            acc += c * p;
            p *= zin;
        }
        -self.nu * acc
    }

    pub fn eval_prime(&self, z: Complex64) -> Complex64 {
        let zin = Complex64::new(1.0, 0.0) / z;
        let mut acc = Complex64::new(0.0, 0.0);
        let mut p = zin * zin;
        for (j, &c) in self.moments.iter().enumerate() {
            acc += c * (j as f64 + 1.0) * p;
            p *= zin;
        }
        self.nu * acc
    }

    /// Candidate roots of Xi(z) = 1 from the companion matrix of
    /// z^{J+1} + nu c_0 z^J + ... + nu c_J = 0 (real coefficients).
    pub fn companion_roots(&self) -> Vec<Complex64> {
        let deg = self.moments.len();
        if deg == 0 || self.nu == 0.0 {
            return Vec::new();
        }
        let n = deg; // polynomial degree = J+1 where J = deg-1
        let mut mat = nalgebra::DMatrix::<f64>::zeros(n, n);
        for i in 1..n {
            mat[(i, i - 1)] = 1.0;
        }
        // companion of monic p(z) = z^n + a_{n-1} z^{n-1} + ... + a_0 with
        // a_{n-1-j} = nu c_j: last column holds -a_i in row i
        for j in 0..n {
            let a = self.nu * self.moments[j];
            mat[(n - 1 - j, n - 1)] = -a;
        }
        mat.complex_eigenvalues().iter().cloned().collect()
    }
}

fn annulus_outer_radius(op: &TransferOp, w: &Density, nu: f64, dim: u8) -> f64 {
    let rank_one = nu.abs() * w.l2_norm() * (std::f64::consts::TAU).powi(dim as i32) * 1.3;
    1.0 + rank_one + op.spectral_gap_estimate()
}

/// All roots of Xi(z) = 1 with |z| > 1/2: companion seeds, Newton polish on
/// the resolvent-backed Xi, verified by argument-principle winding counts.
pub fn secular_roots(model: &ModelSpec, record: &FixedPointRecord) -> Result<Vec<SecularRoot>> {
    let op = TransferOp::new(model, record.nu, record.omega, record.density.cutoff());
    let sf = SecularFunction::build(&op, &record.density, &model.k, record.nu);
    let w = op.divergence_coupling(&record.density);
    let r_out = annulus_outer_radius(&op, &w, record.nu, model.dim());

    let mut roots: Vec<Complex64> = sf
        .companion_roots()
        .into_iter()
        .filter(|z| z.norm() > 0.5 && z.norm() < r_out)
        .collect();

    // Newton polish on the honest resolvent-backed Xi
    let u = op.divergence_coupling(&record.density);
    let xi_resolvent = |z: Complex64| -> Result<Complex64> {
        let w = op.resolvent_solve(z, &u, 1e-12)?;
        Ok(-record.nu * w.alpha_integral(&model.k))
    };
    let mut polished: Vec<SecularRoot> = Vec::new();
    for z0 in roots.drain(..) {
        let mut z = z0;
        let mut residual = f64::INFINITY;
        for _ in 0..40 {
            let xi = xi_resolvent(z)?;
            residual = (xi - 1.0).norm();
            if residual < 1e-12 {
                break;
            }
            // Xi'(z) via squared resolvent
            let w1 = op.resolvent_solve(z, &u, 1e-12)?;
            let w2 = op.resolvent_solve(z, &w1, 1e-12)?;
            let dxi = record.nu * w2.alpha_integral(&model.k);
            if dxi.norm() < 1e-14 {
                break;
            }
            z -= (xi - 1.0) / dxi;
        }
        if residual < 1e-9 && z.norm() > 0.5 {
            // deduplicate
            if !polished.iter().any(|r| (r.z - z).norm() < 1e-7) {
                polished.push(SecularRoot { z, residual });
            }
        }
    }

    // argument-principle verification on the annulus, retrying once with
    // perturbed radii if a root sits too close to a contour
    let count = match winding_count(&sf, 0.5, r_out, 512) {
        Ok(c) => c,
        Err(_) => winding_count(&sf, 0.47, r_out * 1.03, 677)?,
    };
    if count != polished.len() as i64 {
        let count2 = winding_count(&sf, 0.46, r_out * 1.07, 677)?;
        if count2 != polished.len() as i64 {
            return Err(MftkError::ContourTooClose {
                distance: (count as f64 - polished.len() as f64).abs(),
            });
        }
    }
    polished.sort_by(|a, b| b.z.norm().partial_cmp(&a.z.norm()).unwrap());
    Ok(polished)
}

/// Zeros of Xi(z) - 1 inside the annulus r_in < |z| < r_out by winding counts.
fn winding_count(sf: &SecularFunction, r_in: f64, r_out: f64, samples: usize) -> Result<i64> {
    let wind = |r: f64| -> Result<i64> {
        let mut total = 0.0f64;
        let mut prev_arg = None;
        let mut min_mod = f64::INFINITY;
        for i in 0..=samples {
            let th = std::f64::consts::TAU * i as f64 / samples as f64;
            let z = Complex64::from_polar(r, th);
            let v = sf.eval(z) - 1.0;
            min_mod = min_mod.min(v.norm());
            let arg = v.arg();
            if let Some(p) = prev_arg {
                let mut d: f64 = arg - p;
                while d > std::f64::consts::PI {
                    d -= std::f64::consts::TAU;
                }
                while d < -std::f64::consts::PI {
                    d += std::f64::consts::TAU;
                }
                total += d;
            }
            prev_arg = Some(arg);
        }
        if min_mod < 1e-6 {
            return Err(MftkError::ContourTooClose { distance: min_mod });
        }
        Ok((total / std::f64::consts::TAU).round() as i64)
    };
    Ok(wind(r_out)? - wind(r_in)?)
}

/// Classification thresholds band (on |z|-1 and |Xi(1)-1|).
pub const MARGINAL_BAND: f64 = 1e-6;

/// Full stability classification of a fixed point.
pub fn classify(model: &ModelSpec, record: &FixedPointRecord) -> Result<StabilityReport> {
    classify_with_gap(model, record, None)
}

/// Classification with an optional precomputed bound on the second eigenvalue
/// modulus of L (for the shift-structured families the mean-zero transfer is
/// independent of (nu, omega), so the bound can be shared across a sweep).
pub fn classify_with_gap(
    model: &ModelSpec,
    record: &FixedPointRecord,
    gap_hint: Option<f64>,
) -> Result<StabilityReport> {
    let op = TransferOp::new(model, record.nu, record.omega, record.density.cutoff());
    let sf = SecularFunction::build(&op, &record.density, &model.k, record.nu);

    let mut circle_sup = 0.0f64;
    for i in 0..256 {
        let th = std::f64::consts::TAU * i as f64 / 256.0;
        let z = Complex64::from_polar(1.0, th);
        circle_sup = circle_sup.max(sf.eval(z).norm());
    }

    let roots = secular_roots(model, record)?;
    let xi1 = crate::meanfield::xi_at(model, record.nu, &record.density, Complex64::new(1.0, 0.0))?;

    let gap = gap_hint.unwrap_or_else(|| op.spectral_gap_estimate());
    let max_inner = roots
        .iter()
        .map(|r| r.z.norm())
        .filter(|n| *n < 1.0)
        .fold(0.0f64, f64::max);
    let kappa = gap.max(max_inner);
    let leading_eig = roots
        .iter()
        .map(|r| r.z)
        .max_by(|a, b| a.norm().partial_cmp(&b.norm()).unwrap())
        .unwrap_or(Complex64::new(gap, 0.0));

    let has_outside = roots.iter().any(|r| r.z.norm() > 1.0 + MARGINAL_BAND);
    let classification = if has_outside {
        StabilityClass::Unstable
    } else if circle_sup < 1.0 - MARGINAL_BAND && (xi1 - 1.0).norm() > MARGINAL_BAND {
        StabilityClass::Physical
    } else {
        StabilityClass::Marginal
    };

    // explicit eigenvector at 1 (skip close to folds where it degenerates)
    let eigvec_residual = if (xi1 - 1.0).norm() >= 0.05 {
        let u = op.divergence_coupling(&record.density);
        let mut theta1 = op.resolvent_solve(Complex64::new(1.0, 0.0), &u, 1e-12)?;
        theta1.scale(Complex64::new(-record.nu, 0.0));
        let alpha_h = record.density.alpha_integral(&model.k);
        let mut phi = record.density.clone();
        phi.axpy(alpha_h / (Complex64::new(1.0, 0.0) - xi1), &theta1);
        let dh = linearize(model, record);
        let dphi = dh.apply(&phi);
        Some(dphi.distance(&phi))
    } else {
        None
    };

    Ok(StabilityReport {
        nu: record.nu,
        omega: record.omega,
        circle_sup,
        secular_roots: roots,
        leading_eig,
        kappa,
        xi1,
        classification,
        eigvec_residual,
    })
}

/// Classification of the frozen-map fixed point at (nu, omega).
pub fn classify_at(model: &ModelSpec, nu: f64, omega: f64, cutoff: usize) -> Result<StabilityReport> {
    let h = crate::meanfield::frozen_srb(model, nu, omega, cutoff)?;
    let record = crate::meanfield::make_record(model, nu, &h)?;
    classify(model, &record)
}

/// As `classify_at` with a shared gap bound.
pub fn classify_at_with_gap(
    model: &ModelSpec,
    nu: f64,
    omega: f64,
    cutoff: usize,
    gap_hint: Option<f64>,
) -> Result<StabilityReport> {
    let h = crate::meanfield::frozen_srb(model, nu, omega, cutoff)?;
    let record = crate::meanfield::make_record(model, nu, &h)?;
    classify_with_gap(model, &record, gap_hint)
}

/// Scalar-shadow classification from Gamma alone. For the shift-structured
/// families at mode-annihilating cutoffs the secular function is exactly
/// Gamma/z, so this matches the full classification; the agreement is
/// asserted against `classify` on decimated points in the validation suite.
pub fn shadow_class(gamma: f64) -> StabilityClass {
    if gamma.abs() > 1.0 + MARGINAL_BAND {
        StabilityClass::Unstable
    } else if gamma.abs() < 1.0 - MARGINAL_BAND && (gamma - 1.0).abs() > MARGINAL_BAND {
        StabilityClass::Physical
    } else {
        StabilityClass::Marginal
    }
}

/// JSON rendering of a report (roots listed as re, im, residual).
pub fn report_to_json(r: &StabilityReport) -> String {
    let roots: Vec<String> = r
        .secular_roots
        .iter()
        .map(|s| {
            format!(
                "{{\"re\":{:.17e},\"im\":{:.17e},\"residual\":{:.3e}}}",
                s.z.re, s.z.im, s.residual
            )
        })
        .collect();
    format!(
        "{{\"nu\":{:.17e},\"omega\":{:.17e},\"circle_sup\":{:.17e},\"kappa\":{:.17e},\"xi1_re\":{:.17e},\"xi1_im\":{:.17e},\"leading_eig_re\":{:.17e},\"leading_eig_im\":{:.17e},\"classification\":\"{}\",\"secular_roots\":[{}]}}",
        r.nu,
        r.omega,
        r.circle_sup,
        r.kappa,
        r.xi1.re,
        r.xi1.im,
        r.leading_eig.re,
        r.leading_eig.im,
        r.classification,
        roots.join(",")
    )
}
