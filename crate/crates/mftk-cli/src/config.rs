//! TOML run configuration. Unknown keys are rejected.

use anyhow::{bail, Context, Result};
use serde::Deserialize;

#[derive(Debug, Deserialize, Clone)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub trace: TraceSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub stability: StabilitySection,
    #[serde(default)]
    pub simulate: SimulateSection,
    #[serde(default)]
    pub ift: IftSection,
}

#[derive(Debug, Deserialize, Clone)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub dim: u8,
    pub a: [[i64; 2]; 2],
    pub multiplier: i64,
    pub n_star: u32,
    pub mu: f64,
    pub k: [i64; 2],
    pub nu_max: Option<f64>,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
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

#[derive(Debug, Deserialize, Clone)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub cutoff: usize,
    pub srb_tol: f64,
    pub newton_tol: f64,
    pub max_newton: usize,
}

impl Default for SolverSection {
    fn default() -> Self {
        SolverSection {
            cutoff: 64,
            srb_tol: 1e-13,
            newton_tol: 1e-12,
            max_newton: 50,
        }
    }
}

#[derive(Debug, Deserialize, Clone)]
#[serde(deny_unknown_fields, default)]
pub struct TraceSection {
    pub nu_min: f64,
    pub nu_max: f64,
    pub max_step: f64,
    /// "full" | "none" | "decimated:<stride>"
    pub annotate: String,
}

impl Default for TraceSection {
    fn default() -> Self {
        TraceSection {
            nu_min: 0.0,
            nu_max: 400.0,
            max_step: 0.1,
            annotate: "decimated:50".into(),
        }
    }
}

#[derive(Debug, Deserialize, Clone, Default)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub nus: Vec<f64>,
}

#[derive(Debug, Deserialize, Clone)]
#[serde(deny_unknown_fields, default)]
pub struct StabilitySection {
    pub nu: f64,
    /// Classify at this omega; when absent, classify every scalar root at nu.
    pub omega: Option<f64>,
}

impl Default for StabilitySection {
    fn default() -> Self {
        StabilitySection { nu: 10.0, omega: None }
    }
}

#[derive(Debug, Deserialize, Clone)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateSection {
    pub nu: f64,
    pub n_particles: usize,
    pub steps: usize,
    /// "uniform" | "basin:<index>" (perturbative density at the i-th stable root)
    pub init: String,
    /// "lattice" | "unstable-eigenvector"
    pub beta_convention: String,
}

impl Default for SimulateSection {
    fn default() -> Self {
        SimulateSection {
            nu: 51.845,
            n_particles: 10_000,
            steps: 5_000,
            init: "uniform".into(),
            beta_convention: "lattice".into(),
        }
    }
}

#[derive(Debug, Deserialize, Clone)]
#[serde(deny_unknown_fields, default)]
pub struct IftSection {
    pub nu: f64,
    pub delta: f64,
}

impl Default for IftSection {
    fn default() -> Self {
        IftSection { nu: 20.0, delta: 0.1 }
    }
}

pub struct LoadedConfig {
    pub config: RunConfig,
    /// FNV-1a 64 over the raw config bytes (0 when no file given).
    pub hash: u64,
}

pub fn load(path: Option<&std::path::Path>) -> Result<LoadedConfig> {
    match path {
        None => Ok(LoadedConfig {
            config: toml::from_str("").unwrap(),
            hash: 0,
        }),
        Some(p) => {
            let raw = std::fs::read_to_string(p)
                .with_context(|| format!("reading config {}", p.display()))?;
            let config: RunConfig = toml::from_str(&raw)?;
            validate_values(&config)?;
            Ok(LoadedConfig {
                config,
                hash: fnv1a64(raw.as_bytes()),
            })
        }
    }
}

fn validate_values(c: &RunConfig) -> Result<()> {
    if c.solver.srb_tol <= 0.0 || c.solver.newton_tol <= 0.0 {
        bail!("tolerances must be > 0");
    }
    if c.solver.cutoff < 8 {
        bail!("solver.cutoff must be >= 8");
    }
    if !matches!(c.simulate.beta_convention.as_str(), "lattice" | "unstable-eigenvector") {
        bail!(
            "simulate.beta_convention must be \"lattice\" or \"unstable-eigenvector\", got {:?}",
            c.simulate.beta_convention
        );
    }
    Ok(())
}

pub fn fnv1a64(data: &[u8]) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for &b in data {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}
