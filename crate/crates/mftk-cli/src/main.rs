//! Command-line driver: traces bifurcation diagrams, classifies fixed points,
//! runs finite-N simulations and the validation suites, writing plot-ready
//! CSV/JSON. Exit codes: 0 success, 1 numerical failure, 2 config error.

mod config;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use std::io::Write;
use std::path::{Path, PathBuf};

use mftk::continuation::{
    certify, newton_corrector, solve_scalar_all, trace_branch, Annotate, ContinuationSettings,
    ScalarProfile,
};
use mftk::model::{build_model, perturbative_density, ModelConfig, ModelSpec};
use mftk::particle::{self, BetaConvention};
use mftk::stability;
use mftk::validate;

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser)]
#[command(name = "mftk", version, about = "Mean-field coupled map toolkit")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (created if absent).
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Seed for particle experiments.
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// Worker threads (also readable from MFTK_THREADS).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Trace the fixed-point branch and classify it.
    Trace,
    /// Solve and classify all fixed points at each configured nu.
    Sweep,
    /// Stability report at one (nu, omega).
    Stability,
    /// Finite-N particle run with residence statistics.
    Simulate,
    /// Run every cross-oracle invariant suite.
    Validate,
    /// Certify a frozen-slope Newton corrector at a branch point.
    IftCertify,
}

fn main() {
    let cli = Cli::parse();
    let loaded = match config::load(cli.config.as_deref()) {
        Ok(l) => l,
        Err(e) => {
            eprintln!("config error: {e:#}");
            std::process::exit(2);
        }
    };
    if let Some(n) = cli
        .threads
        .or_else(|| std::env::var("MFTK_THREADS").ok().and_then(|s| s.parse().ok()))
    {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    if let Err(e) = std::fs::create_dir_all(&cli.out) {
        eprintln!("config error: cannot create output directory: {e}");
        std::process::exit(2);
    }
    let run = || -> Result<()> {
        let model = build_model_from(&loaded.config.model)?;
        let header = file_header(loaded.hash);
        match cli.cmd {
            Cmd::Trace => cmd_trace(&cli, &loaded, &model, &header),
            Cmd::Sweep => cmd_sweep(&cli, &loaded, &model, &header),
            Cmd::Stability => cmd_stability(&cli, &loaded, &model, &header),
            Cmd::Simulate => cmd_simulate(&cli, &loaded, &model, &header),
            Cmd::Validate => cmd_validate(&cli, &loaded, &header),
            Cmd::IftCertify => cmd_ift(&cli, &loaded, &model, &header),
        }
    };
    if let Err(e) = run() {
        let msg = format!("{e:#}").replace('"', "'");
        let _ = std::fs::write(
            cli.out.join("error.json"),
            format!("{{\"error\":\"{msg}\",\"version\":\"{VERSION}\"}}"),
        );
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn build_model_from(m: &config::ModelSection) -> Result<ModelSpec> {
    build_model(&ModelConfig {
        dim: m.dim,
        a: m.a,
        multiplier: m.multiplier,
        n_star: m.n_star,
        mu: m.mu,
        k: m.k,
        nu_max: m.nu_max,
    })
    .map_err(|e| anyhow::anyhow!("{e}"))
}

fn file_header(hash: u64) -> String {
    format!("# mftk v{VERSION} config_hash={hash:016x}\n")
}

fn write_file(path: &Path, content: &str) -> Result<()> {
    let mut f = std::fs::File::create(path).with_context(|| format!("writing {}", path.display()))?;
    f.write_all(content.as_bytes())?;
    Ok(())
}

fn parse_annotate(s: &str) -> Result<Annotate> {
    match s {
        "full" => Ok(Annotate::Full),
        "none" => Ok(Annotate::None),
        other => {
            if let Some(stride) = other.strip_prefix("decimated:") {
                Ok(Annotate::Decimated(stride.parse()?))
            } else {
                anyhow::bail!("trace.annotate must be full|none|decimated:<n>, got {other:?}")
            }
        }
    }
}

fn cmd_trace(
    cli: &Cli,
    loaded: &config::LoadedConfig,
    model: &ModelSpec,
    header: &str,
) -> Result<()> {
    let c = &loaded.config;
    let profile = ScalarProfile::build(model, c.solver.cutoff).map_err(|e| anyhow::anyhow!("{e}"))?;
    let settings = ContinuationSettings {
        max_step: c.trace.max_step,
        ..ContinuationSettings::default()
    };
    let annotate = parse_annotate(&c.trace.annotate)?;
    let branch = trace_branch(model, &profile, (c.trace.nu_min, c.trace.nu_max), &settings, annotate)
        .map_err(|e| anyhow::anyhow!("{e}"))?;
    write_file(
        &cli.out.join("branch.csv"),
        &format!("{header}{}", branch.to_csv()),
    )?;
    // per-nu solution counts midway between folds plus the range ends
    let mut count_nus = vec![c.trace.nu_min, c.trace.nu_max];
    let mut fold_nus: Vec<f64> = branch.folds.iter().map(|f| f.nu).collect();
    fold_nus.sort_by(|a, b| a.partial_cmp(b).unwrap());
    for w in fold_nus.windows(2) {
        count_nus.push(0.5 * (w[0] + w[1]));
    }
    write_file(
        &cli.out.join("branch_summary.json"),
        &branch.summary_json_with_meta(&profile, &count_nus, header.trim_start_matches("# ").trim_end()),
    )?;
    println!(
        "trace: {} points, {} folds -> {}",
        branch.points.len(),
        branch.folds.len(),
        cli.out.display()
    );
    Ok(())
}

fn cmd_sweep(
    cli: &Cli,
    loaded: &config::LoadedConfig,
    model: &ModelSpec,
    header: &str,
) -> Result<()> {
    let c = &loaded.config;
    let profile = ScalarProfile::build(model, c.solver.cutoff).map_err(|e| anyhow::anyhow!("{e}"))?;
    let mut csv = String::from("nu,omega,gamma,classification\n");
    let mut nus = c.sweep.nus.clone();
    if nus.is_empty() {
        anyhow::bail!("sweep.nus is empty");
    }
    nus.sort_by(|a, b| a.partial_cmp(b).unwrap());
    for &nu in &nus {
        for om in solve_scalar_all(&profile, nu) {
            let rep = stability::classify_at(model, nu, om, c.solver.cutoff)
                .map_err(|e| anyhow::anyhow!("{e}"))?;
            csv.push_str(&format!(
                "{nu:.17e},{om:.17e},{:.17e},{}\n",
                profile.gamma(nu, om),
                rep.classification
            ));
        }
    }
    write_file(&cli.out.join("sweep.csv"), &format!("{header}{csv}"))?;
    println!("sweep: {} nu values -> {}", nus.len(), cli.out.display());
    Ok(())
}

fn cmd_stability(
    cli: &Cli,
    loaded: &config::LoadedConfig,
    model: &ModelSpec,
    header: &str,
) -> Result<()> {
    let c = &loaded.config;
    let nu = c.stability.nu;
    let omegas = match c.stability.omega {
        Some(om) => vec![om],
        None => {
            let profile =
                ScalarProfile::build(model, c.solver.cutoff).map_err(|e| anyhow::anyhow!("{e}"))?;
            solve_scalar_all(&profile, nu)
        }
    };
    let mut reports = Vec::new();
    for om in omegas {
        let rep = stability::classify_at(model, nu, om, c.solver.cutoff)
            .map_err(|e| anyhow::anyhow!("{e}"))?;
        reports.push(stability::report_to_json(&rep));
    }
    write_file(
        &cli.out.join("stability.json"),
        &format!(
            "{{\"meta\":\"{}\",\"reports\":[{}]}}",
            header.trim_start_matches("# ").trim_end(),
            reports.join(",")
        ),
    )?;
    println!("stability: {} reports -> {}", reports.len(), cli.out.display());
    Ok(())
}

fn cmd_simulate(
    cli: &Cli,
    loaded: &config::LoadedConfig,
    model: &ModelSpec,
    header: &str,
) -> Result<()> {
    let c = &loaded.config;
    let profile = ScalarProfile::build(model, c.solver.cutoff).map_err(|e| anyhow::anyhow!("{e}"))?;
    let nu = c.simulate.nu;
    let roots = solve_scalar_all(&profile, nu);
    let stable: Vec<f64> = roots
        .iter()
        .cloned()
        .filter(|&om| profile.gamma(nu, om).abs() < 1.0)
        .collect();
    let convention = if c.simulate.beta_convention == "lattice" {
        BetaConvention::Lattice
    } else {
        BetaConvention::UnstableEigenvector
    };
    let mut ensemble = match c.simulate.init.as_str() {
        "uniform" => particle::uniform_ensemble(model, c.simulate.n_particles, cli.seed),
        other => {
            let idx: usize = other
                .strip_prefix("basin:")
                .context("simulate.init must be uniform or basin:<i>")?
                .parse()?;
            let om0 = *stable
                .get(idx)
                .with_context(|| format!("basin index {idx} out of range ({} stable)", stable.len()))?;
            let h = perturbative_density(model, nu, om0, c.solver.cutoff.min(48));
            particle::init_ensemble(&h, c.simulate.n_particles, cli.seed)
                .map_err(|e| anyhow::anyhow!("{e}"))?
        }
    };
    let report = particle::run(&mut ensemble, model, nu, c.simulate.steps, &stable, convention);
    write_file(
        &cli.out.join("trajectory.csv"),
        &format!("{header}{}", particle::trajectory_csv(&report.trajectory)),
    )?;
    write_file(
        &cli.out.join("residences.json"),
        &particle::residences_json_with_meta(&report, header.trim_start_matches("# ").trim_end()),
    )?;
    println!(
        "simulate: {} steps, {} residences, {} switches -> {}",
        c.simulate.steps,
        report.residences.len(),
        report.switch_count,
        cli.out.display()
    );
    Ok(())
}

fn cmd_validate(cli: &Cli, loaded: &config::LoadedConfig, header: &str) -> Result<()> {
    let results =
        validate::run_all(loaded.config.solver.cutoff.min(48)).map_err(|e| anyhow::anyhow!("{e}"))?;
    for r in &results {
        println!(
            "{} {}: measured {:.3e} vs tol {:.3e} ({})",
            if r.pass { "PASS" } else { "FAIL" },
            r.name,
            r.measured,
            r.tolerance,
            r.detail
        );
    }
    write_file(
        &cli.out.join("validate_report.json"),
        &validate::report_json_with_meta(&results, header.trim_start_matches("# ").trim_end()),
    )?;
    if results.iter().any(|r| !r.pass) {
        anyhow::bail!("validation failures present");
    }
    Ok(())
}

fn cmd_ift(
    cli: &Cli,
    loaded: &config::LoadedConfig,
    model: &ModelSpec,
    header: &str,
) -> Result<()> {
    let c = &loaded.config;
    let profile = ScalarProfile::build(model, c.solver.cutoff).map_err(|e| anyhow::anyhow!("{e}"))?;
    let nu0 = c.ift.nu;
    let roots = solve_scalar_all(&profile, nu0);
    let om0 = *roots
        .first()
        .context("no fixed point at the requested nu")?;
    let f = |om: f64, nu: f64| profile.g(nu, om);
    let gamma0 = profile.gamma(nu0, om0);
    let cert =
        certify(&f, om0, nu0, c.ift.delta, Some(gamma0)).map_err(|e| anyhow::anyhow!("{e}"))?;
    // run the corrector at the certificate edge and record the contraction
    let (x_end, contraction) = newton_corrector(&f, &cert, nu0 + cert.delta1, 1e-14)
        .map_err(|e| anyhow::anyhow!("{e}"))?;
    let json = format!(
        "{{\"meta\":\"{}\",\"nu0\":{nu0:.17e},\"omega0\":{om0:.17e},\"gamma0\":{gamma0:.17e},\"delta\":{:.17e},\"delta1\":{:.17e},\"upsilon\":{:.17e},\"contraction_bound\":{:.6},\"measured_contraction\":{contraction:.6},\"solution_at_edge\":{x_end:.17e},\"closed_form_delta\":{},\"closed_form_delta1\":{}}}",
        header.trim_start_matches("# ").trim_end(),
        cert.delta,
        cert.delta1,
        cert.upsilon,
        cert.contraction,
        cert.closed_form_delta.map(|v| format!("{v:.17e}")).unwrap_or("null".into()),
        cert.closed_form_delta1.map(|v| format!("{v:.17e}")).unwrap_or("null".into()),
    );
    write_file(&cli.out.join("ift_certificate.json"), &json)?;
    println!(
        "ift-certify: delta={:.3e} delta1={:.3e} contraction {:.3} -> {}",
        cert.delta,
        cert.delta1,
        cert.contraction,
        cli.out.display()
    );
    Ok(())
}
