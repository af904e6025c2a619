//! Acceptance suite: one test per criterion, every tolerance pinned in code.
//! Each test prints one `criterion N: PASS/FAIL` line. Two sub-clauses are
//! known to fail for any faithful implementation of this model family and are
//! implemented as stated anyway (see the assertion messages): the criterion-2
//! slope window (the true remainder of the mean-field law is third order, not
//! second) and the criterion-10 unit slope (the secular root crosses 1 with
//! slope -dGamma/domega in tau, which is O(nu^2 mu), not 1).

use num_complex::Complex64;
use std::time::Instant;

use mftk::continuation::{
    branch_omegas_at, certify, fold_nus_oracle, fold_root_crossing, newton_corrector,
    solve_scalar_all, trace_branch, Annotate, ContinuationSettings, ScalarProfile,
};
use mftk::density::Density;
use mftk::meanfield::{self, IterationOutcome};
use mftk::model::{build_model, perturbative_density, ModelConfig, ModelSpec};
use mftk::particle::{self, BetaConvention};
use mftk::stability::{self, StabilityClass};
use mftk::transfer::TransferOp;

const CUTOFF: usize = 64;

fn default_model() -> ModelSpec {
    build_model(&ModelConfig::default()).unwrap()
}

fn pass_line(n: u32, ok: bool, detail: &str) {
    println!(
        "criterion {n}: {} — {detail}",
        if ok { "PASS" } else { "FAIL" }
    );
}

#[test]
fn criterion_01_unique_physical_weak_coupling() {
    let t0 = Instant::now();
    let m = default_model();
    let profile = ScalarProfile::build(&m, CUTOFF).unwrap();
    let gap = TransferOp::new(&m, 0.0, 0.0, CUTOFF).spectral_gap_estimate();
    let mut ok = true;
    let mut detail = String::new();
    for &nu in &[0.0, 5.0, 10.0, 15.0, 20.0, 25.0] {
        let roots = solve_scalar_all(&profile, nu);
        let unique = roots.len() == 1;
        let rep = stability::classify_at_with_gap(&m, nu, roots[0], CUTOFF, Some(gap)).unwrap();
        let physical = rep.classification == StabilityClass::Physical;
        ok &= unique && physical;
        detail.push_str(&format!(
            "nu={nu}: {} root(s), {}; ",
            roots.len(),
            rep.classification
        ));
    }
    let elapsed = t0.elapsed();
    let in_budget = elapsed.as_secs_f64() <= 120.0;
    pass_line(1, ok && in_budget, &format!("{detail}elapsed {elapsed:?} (<= 2 min)"));
    assert!(ok, "{detail}");
    assert!(in_budget, "runtime {elapsed:?} exceeds 2 min");
}

#[test]
fn criterion_02_mean_field_law() {
    let t0 = Instant::now();
    let mus = [0.01, 0.02, 0.04];
    let mut devs = Vec::new();
    for &mu in &mus {
        let base = default_model();
        let m = build_model(&ModelConfig {
            mu,
            n_star: base.n_star_for(mu),
            ..ModelConfig::default()
        })
        .unwrap();
        let mut worst = 0.0f64;
        for i in 0..20 {
            for j in 0..20 {
                let nu = 30.0 * i as f64 / 19.0;
                let om = 0.9 + 0.2 * j as f64 / 19.0;
                let mm = meanfield::mean_field_map(&m, nu, om, CUTOFF).unwrap();
                worst = worst.max((mm - (1.0 - 0.5 * mu * (nu * om).cos())).abs());
            }
        }
        devs.push(worst);
    }
    // bound with C = 5 (calibrated constant from the leading-order analysis)
    let bound_ok = devs
        .iter()
        .zip(&mus)
        .all(|(d, mu)| *d <= 5.0 * mu * mu);
    // least-squares log-log slope over the three mu values
    let lx: Vec<f64> = mus.iter().map(|m| m.ln()).collect();
    let ly: Vec<f64> = devs.iter().map(|d| d.ln()).collect();
    let mx = lx.iter().sum::<f64>() / 3.0;
    let my = ly.iter().sum::<f64>() / 3.0;
    let slope = lx
        .iter()
        .zip(&ly)
        .map(|(x, y)| (x - mx) * (y - my))
        .sum::<f64>()
        / lx.iter().map(|x| (x - mx) * (x - mx)).sum::<f64>();
    let slope_ok = (1.85..=2.15).contains(&slope);
    let elapsed = t0.elapsed();
    pass_line(
        2,
        bound_ok && slope_ok,
        &format!(
            "max deviations {devs:?} (bound 5 mu^2: {}), log-log slope {slope:.3} vs required window [1.85, 2.15]: {}; elapsed {elapsed:?} (<= 10 min)",
            if bound_ok { "ok" } else { "violated" },
            if slope_ok { "ok" } else { "violated" },
        ),
    );
    assert!(bound_ok, "deviation bound 5 mu^2 violated: {devs:?}");
    assert!(elapsed.as_secs_f64() <= 600.0);
    assert!(
        slope_ok,
        "slope clause fails as required: measured {slope:.4}, required window [1.85, 2.15]. \
         The remainder of the mean-field law is third order for this family \
         (M = 1 - J1(mu)cos(nu omega) exactly at the Galerkin cutoff, so the \
         deviation is (mu/2 - J1(mu))|cos| = mu^3/16 + O(mu^5)); an \
         exactly-second-order remainder does not exist to measure."
    );
}

#[test]
fn criterion_03_fold_criterion_and_diagram() {
    let t0 = Instant::now();
    let m = default_model();
    let profile = ScalarProfile::build(&m, CUTOFF).unwrap();
    // trace one full window past 400 so every fold below 400 lies on a
    // traversed arc (the curve keeps zigzagging across the boundary)
    let branch = trace_branch(
        &m,
        &profile,
        (0.0, 400.0 + std::f64::consts::TAU + 1.5),
        &ContinuationSettings::default(),
        Annotate::None,
    )
    .unwrap();
    assert!(branch.folds.len() >= 2, "expected many folds up to nu = 400");

    // first fold: (mu nu/2) |sin(nu omega - theta)| = 1 +- 0.1
    let mut folds_sorted: Vec<_> = branch
        .folds
        .iter()
        .filter(|f| f.nu <= 400.0)
        .cloned()
        .collect();
    folds_sorted.sort_by(|a, b| a.nu.partial_cmp(&b.nu).unwrap());
    let first = &folds_sorted[0];
    let crit = 0.5 * m.mu * first.nu * (first.nu * first.omega - m.theta).sin().abs();
    let first_ok = (0.9..=1.1).contains(&crit);

    // every traced fold is confirmed by the brute-force oracle to 1e-6: the
    // scan is restricted to an omega window around the merging pair, which
    // removes the global grid's resolution floor at the sharpest folds and
    // separates the disjoint solution components that appear at large nu
    let mut worst_mismatch = 0.0f64;
    let mut confirmed = 0usize;
    for f in &folds_sorted {
        match mftk::continuation::confirm_fold_oracle(&profile, f.nu, f.omega) {
            Some(nu_oracle) => {
                worst_mismatch = worst_mismatch.max((f.nu - nu_oracle).abs());
                confirmed += 1;
            }
            None => {}
        }
    }
    let match_ok = confirmed == folds_sorted.len() && worst_mismatch <= 1e-6;
    // global scan events not on the branch witness the other components
    // (Theorem-2.12-style multiplicity of curves; reported, not asserted away)
    let global = fold_nus_oracle(&profile, (0.0, 400.0), 0.01);
    let unmatched: Vec<f64> = global
        .iter()
        .cloned()
        .filter(|o| folds_sorted.iter().all(|f| (f.nu - o).abs() > 2e-4))
        .collect();

    // consecutive same-direction folds spaced <= 2 pi + 1
    let mut spacing_ok = true;
    let mut max_gap = 0.0f64;
    for dir in [1i8, -1] {
        let mut nus: Vec<f64> = folds_sorted
            .iter()
            .filter(|f| f.direction == dir)
            .map(|f| f.nu)
            .collect();
        nus.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for w in nus.windows(2) {
            let gap = w[1] - w[0];
            max_gap = max_gap.max(gap);
            spacing_ok &= gap <= std::f64::consts::TAU + 1.0;
        }
    }
    let elapsed = t0.elapsed();
    let in_budget = elapsed.as_secs_f64() <= 900.0;
    let ok = first_ok && match_ok && spacing_ok && in_budget;
    let nu_first = first.nu;
    pass_line(
        3,
        ok,
        &format!(
            "first fold nu={nu_first:.6}, (mu nu/2)|sin|={crit:.4}; {confirmed}/{} folds oracle-confirmed, worst |dnu|={worst_mismatch:.2e}; {} global scan events off-branch (disjoint components, reported); max same-direction spacing {max_gap:.4} (limit {:.4}); elapsed {elapsed:?} (<= 15 min)",
            folds_sorted.len(),
            unmatched.len(),
            std::f64::consts::TAU + 1.0
        ),
    );
    assert!(first_ok, "fold criterion value {crit} outside 1 +- 0.1");
    assert!(match_ok, "fold/oracle mismatch: worst {worst_mismatch:.2e}");
    assert!(spacing_ok, "same-direction fold spacing exceeded");
    assert!(in_budget);
}

#[test]
fn criterion_04_multiple_measures_physical_count() {
    let m = default_model();
    let profile = ScalarProfile::build(&m, CUTOFF).unwrap();
    let gap = TransferOp::new(&m, 0.0, 0.0, CUTOFF).spectral_gap_estimate();
    let windows = [51.845, 58.13, 64.415];
    let mut all_ok = true;
    let mut detail = String::new();
    for &nu in &windows {
        let roots = solve_scalar_all(&profile, nu);
        let count = roots.len();
        let m_count = (count - 1) / 2;
        let classes: Vec<StabilityClass> = roots
            .iter()
            .map(|&om| {
                stability::classify_at_with_gap(&m, nu, om, CUTOFF, Some(gap))
                    .unwrap()
                    .classification
            })
            .collect();
        let physical = classes
            .iter()
            .filter(|c| **c == StabilityClass::Physical)
            .count();
        // alternation along the branch within the window: omega-sorted roots
        // alternate physical/unstable/.../physical, flips only at the folds
        let alternating = classes
            .iter()
            .enumerate()
            .all(|(i, c)| {
                if i % 2 == 0 {
                    *c == StabilityClass::Physical
                } else {
                    *c == StabilityClass::Unstable
                }
            });
        let ok = count % 2 == 1 && m_count >= 1 && physical == m_count + 1 && alternating;
        all_ok &= ok;
        detail.push_str(&format!(
            "nu={nu}: count {count} (m={m_count}), {physical} physical, pattern {:?}; ",
            classes
        ));
    }
    pass_line(4, all_ok, &detail);
    assert!(all_ok, "{detail}");
}

#[test]
fn criterion_05_secular_equivalence_1d() {
    // ten accepted random parameter draws, dense rank-one eigenvalues vs
    // secular roots at K = 32
    let mut state = 0x5ec0u64;
    let mut rand = || {
        state = state
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        (state >> 11) as f64 / (1u64 << 53) as f64
    };
    let mut accepted = 0usize;
    let mut attempts = 0usize;
    let mut worst = 0.0f64;
    let mut total_matched = 0usize;
    while accepted < 10 && attempts < 200 {
        attempts += 1;
        let mu = 0.06 + 0.06 * rand();
        let nu = 12.0 + 14.0 * rand();
        let m = build_model(&ModelConfig {
            dim: 1,
            multiplier: 2,
            n_star: 4,
            mu,
            k: [1, 0],
            ..ModelConfig::default()
        })
        .unwrap();
        let h0 = Density::uniform(1, 32);
        let rec = match meanfield::find_fixed_by_iteration(&m, nu, &h0, 400, 1e-12) {
            Ok(IterationOutcome::Fixed(r)) => r,
            _ => continue,
        };
        let dh = stability::linearize(&m, &rec);
        let dense_dh = stability::dense_real_basis_1d(32, &|d| dh.apply(d));
        let op = TransferOp::new(&m, rec.nu, rec.omega, 32);
        let dense_l = stability::dense_real_basis_1d(32, &|d| op.apply(d));
        let eig_dh = dense_dh.complex_eigenvalues();
        let eig_l = dense_l.complex_eigenvalues();
        let discrete: Vec<Complex64> = eig_dh
            .iter()
            .filter(|e| {
                e.norm() > 0.6
                    && !eig_l.iter().any(|l| (l - **e).norm() < 1e-7)
                    && (**e - Complex64::new(1.0, 0.0)).norm() > 1e-7
            })
            .cloned()
            .collect();
        if discrete.is_empty() {
            continue;
        }
        let roots = match stability::secular_roots(&m, &rec) {
            Ok(r) => r,
            Err(_) => continue,
        };
        for e in &discrete {
            let best = roots
                .iter()
                .map(|r| (r.z - e).norm())
                .fold(f64::INFINITY, f64::min);
            worst = worst.max(best);
            total_matched += 1;
        }
        accepted += 1;
    }
    let ok = accepted == 10 && worst <= 1e-8;
    pass_line(
        5,
        ok,
        &format!(
            "{accepted}/10 draws ({attempts} attempts), {total_matched} discrete eigenvalues, worst match {worst:.2e} (tol 1e-8)"
        ),
    );
    assert_eq!(accepted, 10, "could not collect 10 informative draws");
    assert!(worst <= 1e-8, "worst secular/dense mismatch {worst:.2e}");
}

#[test]
fn criterion_06_derivative_linear_response_suite() {
    let m = default_model();
    let mut ok = true;
    let mut detail = String::new();

    // directional finite difference of F vs D_h F at two fixed points
    for &nu in &[9.0, 20.0] {
        let h0 = Density::uniform(2, 48);
        let rec = match meanfield::find_fixed_by_iteration(&m, nu, &h0, 300, 1e-12).unwrap() {
            IterationOutcome::Fixed(r) => r,
            other => panic!("{other:?}"),
        };
        let mut phi = Density::zero(2, 48);
        phi.set_mode(&[0, 1], Complex64::new(0.01, 0.0));
        phi.set_mode(&[0, -1], Complex64::new(0.01, 0.0));
        phi.set_mode(&[1, -1], Complex64::new(0.003, 0.001));
        phi.set_mode(&[-1, 1], Complex64::new(0.003, -0.001));
        let eps = 1e-4;
        let mut hp = rec.density.clone();
        hp.axpy(Complex64::new(eps, 0.0), &phi);
        let mut hm = rec.density.clone();
        hm.axpy(Complex64::new(-eps, 0.0), &phi);
        let fp = meanfield::f_eval(&m, nu, &hp).unwrap();
        let fm = meanfield::f_eval(&m, nu, &hm).unwrap();
        let mut fd = fp;
        fd.axpy(Complex64::new(-1.0, 0.0), &fm);
        fd.scale(Complex64::new(0.5 / eps, 0.0));
        let an = meanfield::df_dh(&m, nu, &rec.density, &phi).unwrap();
        let rel = fd.distance(&an) / an.l2_norm();
        ok &= rel <= 1e-4;
        detail.push_str(&format!("D_hF fd rel {rel:.2e}; "));

        // d_nu H = Theta int alpha h
        let hp2 = meanfield::frozen_srb(&m, nu + eps, rec.omega, 48).unwrap();
        let hm2 = meanfield::frozen_srb(&m, nu - eps, rec.omega, 48).unwrap();
        let mut fd2 = hp2;
        fd2.axpy(Complex64::new(-1.0, 0.0), &hm2);
        fd2.scale(Complex64::new(0.5 / eps, 0.0));
        let mut an2 = meanfield::theta(&m, nu, rec.omega, 48).unwrap();
        an2.scale(Complex64::new(rec.omega, 0.0));
        let rel2 = fd2.distance(&an2) / an2.l2_norm();
        ok &= rel2 <= 1e-4;
        detail.push_str(&format!("dnuH fd rel {rel2:.2e}; "));

        // Gamma = dM/domega to 1e-6 absolute
        let g = meanfield::gamma(&m, nu, rec.omega, 48).unwrap();
        let de = 1e-5;
        let fd3 = (meanfield::mean_field_map(&m, nu, rec.omega + de, 48).unwrap()
            - meanfield::mean_field_map(&m, nu, rec.omega - de, 48).unwrap())
            / (2.0 * de);
        ok &= (g - fd3).abs() <= 1e-6;
        detail.push_str(&format!("|Gamma - dM/dom| {:.2e}; ", (g - fd3).abs()));

        // Xi(1) = Gamma at the fixed point to 1e-8
        let xi_gap = (rec.xi1 - Complex64::new(rec.gamma, 0.0)).norm();
        ok &= xi_gap <= 1e-8;
        detail.push_str(&format!("|Xi(1)-Gamma| {xi_gap:.2e}; "));
    }
    pass_line(6, ok, &detail);
    assert!(ok, "{detail}");
}

#[test]
fn criterion_07_fold_local_model() {
    let m = default_model();
    let profile = ScalarProfile::build(&m, CUTOFF).unwrap();
    let branch = trace_branch(
        &m,
        &profile,
        (0.0, 80.0),
        &ContinuationSettings::default(),
        Annotate::None,
    )
    .unwrap();
    assert!(!branch.folds.is_empty());
    let mut ok = true;
    let mut worst_prime = 0.0f64;
    let mut worst_rel = 0.0f64;
    for f in &branch.folds {
        let prime_bound = 1e-5 * f.nu_second_derivative.abs() * f.fit_window;
        worst_prime = worst_prime.max(f.nu_prime_fit / prime_bound.max(1e-300));
        ok &= f.nu_prime_fit <= prime_bound;
        let rel = ((f.nu_second_derivative - f.nu_second_derivative_fit)
            / f.nu_second_derivative)
            .abs();
        worst_rel = worst_rel.max(rel);
        ok &= rel <= 1e-3;
    }
    pass_line(
        7,
        ok,
        &format!(
            "{} folds: worst |nu'|/bound = {worst_prime:.3}, worst |nu'' formula - fit| rel = {worst_rel:.2e} (tol 1e-3)",
            branch.folds.len()
        ),
    );
    assert!(ok, "fold local model violated");
}

#[test]
fn criterion_08_quantitative_ift() {
    // scalar quadratic benchmark
    let f = |x: f64, l: f64| x * x - l;
    let cert = certify(&f, 1.0, 1.0, 0.2, None).unwrap();
    let mut ok = cert.contraction <= 0.5;
    let mut worst_root = 0.0f64;
    let mut worst_contr: f64 = cert.contraction;
    for i in 0..21 {
        let l = 1.0 - cert.delta1 + 2.0 * cert.delta1 * i as f64 / 20.0;
        let (x, c) = newton_corrector(&f, &cert, l, 1e-15).unwrap();
        worst_root = worst_root.max((x - l.sqrt()).abs());
        worst_contr = worst_contr.max(c);
        ok &= (x - l.sqrt()).abs() <= 1e-12 && c <= 0.5;
    }
    // mean-field corrector honesty across a traced branch
    let m = default_model();
    let profile = ScalarProfile::build(&m, CUTOFF).unwrap();
    let branch = trace_branch(
        &m,
        &profile,
        (0.0, 60.0),
        &ContinuationSettings::default(),
        Annotate::None,
    )
    .unwrap();
    ok &= branch.corrector.max_contraction <= 0.5;
    // and one explicit certificate at a mid-branch point
    let nu0 = 20.0;
    let om0 = solve_scalar_all(&profile, nu0)[0];
    let g = |om: f64, nu: f64| profile.g(nu, om);
    let cert2 = certify(&g, om0, nu0, 0.1, Some(profile.gamma(nu0, om0))).unwrap();
    let (_, c2) = newton_corrector(&g, &cert2, nu0 + cert2.delta1, 1e-14).unwrap();
    ok &= c2 <= 0.5 && cert2.contraction <= 0.5;
    pass_line(
        8,
        ok,
        &format!(
            "benchmark: root error {worst_root:.2e} (tol 1e-12) contraction {worst_contr:.3}; branch corrector max contraction {:.3} over {} runs; mid-branch certificate delta={:.2e} delta1={:.2e} closed_form_delta={:.2e} contraction {:.3}",
            branch.corrector.max_contraction,
            branch.corrector.runs,
            cert2.delta,
            cert2.delta1,
            cert2.closed_form_delta.unwrap_or(f64::NAN),
            c2
        ),
    );
    assert!(ok, "quantitative IFT criterion violated");
}

#[test]
fn criterion_09_phase_transition_signature() {
    let t0 = Instant::now();
    let m = default_model();
    let profile = ScalarProfile::build(&m, CUTOFF).unwrap();
    let nu = 51.845;
    let roots = solve_scalar_all(&profile, nu);
    let stable: Vec<f64> = roots
        .iter()
        .cloned()
        .filter(|&om| profile.gamma(nu, om).abs() < 1.0)
        .collect();
    let unstable = roots
        .iter()
        .cloned()
        .find(|&om| profile.gamma(nu, om).abs() >= 1.0)
        .expect("middle unstable root");
    assert_eq!(stable.len(), 2, "expected a 3-solution window with 2 basins");

    let mut ok = true;
    let mut detail = String::new();

    // N = 1e5 started in each stable basin: plateau within 5 mu for 1e4 steps,
    // zero basin switches
    for (bi, &om0) in stable.iter().enumerate() {
        let h = perturbative_density(&m, nu, om0, 48);
        let mut e = particle::init_ensemble(&h, 100_000, 42 + bi as u64).unwrap();
        let rep = particle::run(&mut e, &m, nu, 10_000, &stable, BetaConvention::Lattice);
        let max_dev = rep
            .trajectory
            .iter()
            .map(|om| (om - om0).abs())
            .fold(0.0f64, f64::max);
        let crossings = particle::basin_crossings(&rep.trajectory, unstable, 100);
        ok &= max_dev <= 5.0 * m.mu && crossings == 0;
        detail.push_str(&format!(
            "basin{bi}: max|om-om0|={max_dev:.4} (<= {:.2}), switches={crossings}; ",
            5.0 * m.mu
        ));
    }

    // N = 100: at least one basin switch within 1e6 steps
    {
        let h = perturbative_density(&m, nu, stable[0], 48);
        let mut e = particle::init_ensemble(&h, 100, 17).unwrap();
        let rep = particle::run(&mut e, &m, nu, 1_000_000, &stable, BetaConvention::Lattice);
        let crossings = particle::basin_crossings(&rep.trajectory, unstable, 100);
        ok &= crossings >= 1;
        detail.push_str(&format!("N=100: {crossings} switches in 1e6 steps; "));
    }

    // nu small: two different initial densities agree in long-run omega
    {
        let nu_s = 5.0;
        let n_s = 10_000usize;
        let mut ea =
            particle::init_ensemble(&perturbative_density(&m, nu_s, 1.0, 48), n_s, 5).unwrap();
        let mut eb = particle::uniform_ensemble(&m, n_s, 6);
        let ra = particle::run(&mut ea, &m, nu_s, 20_000, &[], BetaConvention::Lattice);
        let rb = particle::run(&mut eb, &m, nu_s, 20_000, &[], BetaConvention::Lattice);
        let ma = ra.trajectory[2_000..].iter().sum::<f64>() / 18_000.0;
        let mb = rb.trajectory[2_000..].iter().sum::<f64>() / 18_000.0;
        let band = 6.0 / (n_s as f64).sqrt();
        ok &= (ma - mb).abs() <= band;
        detail.push_str(&format!(
            "nu=5 long-run means {ma:.6} vs {mb:.6}, |diff| {:.2e} (<= {band:.2e}); ",
            (ma - mb).abs()
        ));
    }
    let elapsed = t0.elapsed();
    let in_budget = elapsed.as_secs_f64() <= 1200.0;
    pass_line(9, ok && in_budget, &format!("{detail}elapsed {elapsed:?} (<= 20 min)"));
    assert!(ok, "{detail}");
    assert!(in_budget, "runtime {elapsed:?} exceeds 20 min");
}

#[test]
fn criterion_10_eigenvalue_crossing_at_folds() {
    let m = default_model();
    let profile = ScalarProfile::build(&m, CUTOFF).unwrap();
    let branch = trace_branch(
        &m,
        &profile,
        (40.0, 47.0),
        &ContinuationSettings::default(),
        Annotate::None,
    )
    .unwrap();
    assert!(branch.folds.len() >= 2);
    let mut transversal_ok = true;
    let mut consistency_ok = true;
    let mut slope_in_window = true;
    let mut detail = String::new();
    for f in &branch.folds {
        let (slope, values) = fold_root_crossing(&m, &profile, f, 2e-4, 9).unwrap();
        // the tracked root is real near 1 and crosses |z| = 1 transversally
        let below = values.iter().filter(|(_, z)| *z < 1.0).count();
        let above = values.iter().filter(|(_, z)| *z > 1.0).count();
        transversal_ok &= below > 0 && above > 0;
        // honest expectation: dz/dtau = -dGamma/domega at the fold
        let expected = -profile.dgamma_dom(f.nu, f.omega);
        consistency_ok &= ((slope.abs() - expected.abs()) / expected).abs() <= 0.06;
        slope_in_window &= (-1.1..=-0.9).contains(&slope);
        detail.push_str(&format!(
            "fold nu={:.4}: slope {slope:.3} (honest expectation -dGamma/domega = {expected:.3}); ",
            f.nu
        ));
    }
    pass_line(
        10,
        transversal_ok && consistency_ok && slope_in_window,
        &format!(
            "{detail}transversal crossing: {transversal_ok}, slope consistency: {consistency_ok}, required -1 +- 0.1 window: {slope_in_window}"
        ),
    );
    assert!(transversal_ok, "no transversal |z| = 1 crossing at a fold");
    assert!(
        consistency_ok,
        "measured z-slope disagrees with -dGamma/domega"
    );
    assert!(
        slope_in_window,
        "required slope window -1 +- 0.1 fails: the secular root is \
         z(tau) = Gamma(tau) to machine precision for this family, so its \
         slope at a fold is -dGamma/domega (about -25 at the first fold), \
         not -1. The transversal crossing and the stability flip it implies \
         are asserted above and hold."
    );
}
