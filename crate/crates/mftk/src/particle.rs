//! Finite-N mean-field particle system.
//!
//! (T_{N,nu}(x))_i = T(x_i) + (nu/N) beta sum_j alpha(x_j), evolved with a
//! per-particle counter-based RNG so parallel and serial runs agree bitwise.
//! The mean field omega_n is accumulated with a fixed binary tree over blocks
//! of 1024 so the reduction order is independent of the thread count.

use rayon::prelude::*;
use std::f64::consts::TAU;

use crate::density::Density;
use crate::error::{MftkError, Result};
use crate::model::{wrap, ModelSpec};

/// Which coupling direction the simulator applies.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BetaConvention {
    /// beta = k/|k| (the mean-field study's convention; default).
    Lattice,
    /// beta = unstable eigenvector of A (the finite-N section's choice).
    UnstableEigenvector,
}

/// splitmix64 finalizer; the stream for particle i is keyed by (seed, i).
#[inline]
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Uniform in [0,1) from (seed, stream, counter).
#[inline]
pub fn uniform_draw(seed: u64, stream: u64, counter: u64) -> f64 {
    let z = mix64(seed ^ mix64(stream.wrapping_mul(0xA24BAED4963EE407).wrapping_add(counter)));
    (z >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

#[derive(Clone, Debug)]
pub struct ParticleEnsemble {
    pub dim: u8,
    /// Interleaved coordinates, len = dim * n.
    positions: Vec<f64>,
    pub n: usize,
    pub seed: u64,
    pub step_count: u64,
    /// Recorded mean field omega_n = (1/N) sum alpha(x_i).
    pub trajectory: Vec<f64>,
    /// Mass clipped away when sampling from a slightly negative density.
    pub clipped_mass: f64,
    /// Per-block alpha sums cached by the last advance (same blocking and
    /// order as the tree reduction).
    alpha_blocks: Option<Vec<f64>>,
}

/// Piecewise-linear inverse CDF built from grid samples of a 1D profile.
struct InverseCdf {
    /// cdf[j] = integral up to grid node j; len = n + 1, cdf[n] = 1.
    cdf: Vec<f64>,
    step: f64,
}

impl InverseCdf {
    fn new(weights: &[f64]) -> InverseCdf {
        let n = weights.len();
        let total: f64 = weights.iter().sum();
        let mut cdf = Vec::with_capacity(n + 1);
        let mut acc = 0.0;
        cdf.push(0.0);
        for w in weights {
            acc += w.max(0.0) / total;
            cdf.push(acc);
        }
        cdf[n] = 1.0;
        InverseCdf {
            cdf,
            step: TAU / n as f64,
        }
    }

    fn sample(&self, u: f64) -> f64 {
        let n = self.cdf.len() - 1;
        let mut lo = 0usize;
        let mut hi = n;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if self.cdf[mid] <= u {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let w = self.cdf[hi] - self.cdf[lo];
        let frac = if w > 0.0 { (u - self.cdf[lo]) / w } else { 0.5 };
        (lo as f64 + frac) * self.step
    }
}

/// Draw N i.i.d. samples from a density by per-axis conditional inverse CDF
/// on the collocation grid with linear interpolation. Reproducible from seed.
pub fn init_ensemble(density: &Density, n: usize, seed: u64) -> Result<ParticleEnsemble> {
    assert!(n >= 1);
    let dim = density.dim();
    let grid = density.grid_view();
    let total: f64 = grid.iter().map(|v| v.max(0.0)).sum();
    let clipped: f64 = grid.iter().map(|v| (-v).max(0.0)).sum::<f64>() / total.max(1e-300);
    if clipped > 1e-3 {
        return Err(MftkError::NegativeMass { mass: clipped });
    }
    let ng = density.grid_points_per_axis();
    let positions: Vec<f64> = match dim {
        1 => {
            let cdf = InverseCdf::new(&grid);
            (0..n)
                .into_par_iter()
                .map(|i| cdf.sample(uniform_draw(seed, i as u64, 0)))
                .collect()
        }
        _ => {
            // marginal of x1, then the conditional row for x2
            let marginal: Vec<f64> = (0..ng)
                .map(|i| grid[i * ng..(i + 1) * ng].iter().map(|v| v.max(0.0)).sum())
                .collect();
            let cdf1 = InverseCdf::new(&marginal);
            let row_cdfs: Vec<InverseCdf> = (0..ng)
                .map(|i| InverseCdf::new(&grid[i * ng..(i + 1) * ng]))
                .collect();
            let step = TAU / ng as f64;
            (0..n)
                .into_par_iter()
                .flat_map_iter(|i| {
                    let u1 = uniform_draw(seed, i as u64, 0);
                    let u2 = uniform_draw(seed, i as u64, 1);
                    let x1 = cdf1.sample(u1);
                    let row = ((x1 / step) as usize).min(ng - 1);
                    let x2 = row_cdfs[row].sample(u2);
                    [x1, x2]
                })
                .collect()
        }
    };
    Ok(ParticleEnsemble {
        dim,
        positions,
        n,
        seed,
        step_count: 0,
        trajectory: Vec::new(),
        clipped_mass: clipped,
        alpha_blocks: None,
    })
}

/// Uniformly distributed ensemble (Lebesgue initial condition).
pub fn uniform_ensemble(model: &ModelSpec, n: usize, seed: u64) -> ParticleEnsemble {
    let dim = model.dim();
    let positions: Vec<f64> = (0..n)
        .into_par_iter()
        .flat_map_iter(|i| {
            let x1 = TAU * uniform_draw(seed, i as u64, 0);
            let x2 = TAU * uniform_draw(seed, i as u64, 1);
            if dim == 1 {
                vec![x1]
            } else {
                vec![x1, x2]
            }
        })
        .collect();
    ParticleEnsemble {
        dim,
        positions,
        n,
        seed,
        step_count: 0,
        trajectory: Vec::new(),
        clipped_mass: 0.0,
        alpha_blocks: None,
    }
}

impl ParticleEnsemble {
    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    #[inline]
    pub fn point(&self, i: usize) -> [f64; 2] {
        if self.dim == 1 {
            [self.positions[i], 0.0]
        } else {
            [self.positions[2 * i], self.positions[2 * i + 1]]
        }
    }

    /// Deterministic fixed-order tree reduction of the alpha-mean over
    /// index blocks of 1024. Uses the block sums cached by the last advance
    /// when available.
    pub fn mean_field(&self, model: &ModelSpec) -> f64 {
        let block = 1024usize;
        let nblocks = self.n.div_ceil(block);
        let mut sums: Vec<f64> = match &self.alpha_blocks {
            Some(cached) => cached.clone(),
            None => (0..nblocks)
                .into_par_iter()
                .map(|b| {
                    let lo = b * block;
                    let hi = ((b + 1) * block).min(self.n);
                    let mut acc = 0.0;
                    for i in lo..hi {
                        acc += model.alpha(&self.point(i));
                    }
                    acc
                })
                .collect(),
        };
        // pairwise tree over block sums, fixed order
        let mut len = sums.len();
        while len > 1 {
            let half = len.div_ceil(2);
            for i in 0..len / 2 {
                sums[i] = sums[2 * i] + sums[2 * i + 1];
            }
            if len % 2 == 1 {
                sums[half - 1] = sums[len - 1];
            }
            len = half;
        }
        sums[0] / self.n as f64
    }
}

/// One synchronous step of the coupled system; records omega_n.
pub fn step(ensemble: &mut ParticleEnsemble, model: &ModelSpec, nu: f64, convention: BetaConvention) {
    let omega = ensemble.mean_field(model);
    advance_with_mean_field(ensemble, model, nu, omega, convention);
}

/// The per-particle map x_i <- T(x_i) + nu beta omega with a frozen mean
/// field; commutes with particle permutations exactly (bitwise).
pub fn advance_with_mean_field(
    ensemble: &mut ParticleEnsemble,
    model: &ModelSpec,
    nu: f64,
    omega: f64,
    convention: BetaConvention,
) {
    let b = match convention {
        BetaConvention::Lattice => model.beta(),
        BetaConvention::UnstableEigenvector => model.unstable_eigenvector(),
    };
    let shift = [nu * b[0] * omega, nu * b[1] * omega];
    let dim = ensemble.dim as usize;
    let blocks: Vec<f64> = ensemble
        .positions
        .par_chunks_mut(dim * 1024)
        .map(|chunk| {
            let mut asum = 0.0;
            for p in chunk.chunks_mut(dim) {
                let x = if dim == 1 { [p[0], 0.0] } else { [p[0], p[1]] };
                let t = model.map_point(&x);
                p[0] = wrap(t[0] + shift[0]);
                if dim == 2 {
                    p[1] = wrap(t[1] + shift[1]);
                }
                asum += model.alpha(&if dim == 1 { [p[0], 0.0] } else { [p[0], p[1]] });
            }
            asum
        })
        .collect();
    ensemble.alpha_blocks = Some(blocks);
    ensemble.trajectory.push(omega);
    ensemble.step_count += 1;
}

/// A maximal stretch of steps spent near one stable mean-field value.
#[derive(Clone, Debug)]
pub struct Residence {
    pub start: usize,
    pub end: usize,
    pub plateau_mean: f64,
    pub matched_branch_omega: f64,
}

#[derive(Clone, Debug)]
pub struct RunReport {
    pub trajectory: Vec<f64>,
    pub residences: Vec<Residence>,
    pub switch_count: usize,
}

/// Iterate the system and segment the omega-trajectory into residences near
/// the supplied stable mean-field values. A residence opens after
/// `confirm_steps` consecutive steps within `open_band` of one value and
/// closes when the trajectory leaves the `close_band` hysteresis band.
pub fn run(
    ensemble: &mut ParticleEnsemble,
    model: &ModelSpec,
    nu: f64,
    steps: usize,
    stable_omegas: &[f64],
    convention: BetaConvention,
) -> RunReport {
    let open_band = 5.0 * model.mu;
    let close_band = 7.0 * model.mu;
    let confirm_steps = 100usize;
    let offset = ensemble.trajectory.len();
    for _ in 0..steps {
        step(ensemble, model, nu, convention);
    }
    let traj = &ensemble.trajectory[offset..];

    let nearest = |om: f64| -> Option<(usize, f64)> {
        stable_omegas
            .iter()
            .enumerate()
            .map(|(i, &s)| (i, (om - s).abs()))
            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
    };

    let mut residences: Vec<Residence> = Vec::new();
    let mut switch_count = 0usize;
    let mut current: Option<(usize, usize)> = None; // (root index, start step)
    let mut candidate: Option<(usize, usize)> = None;
    for (t, &om) in traj.iter().enumerate() {
        match current {
            Some((root, start)) => {
                if (om - stable_omegas[root]).abs() > close_band {
                    let mean =
                        traj[start..t].iter().sum::<f64>() / (t - start).max(1) as f64;
                    residences.push(Residence {
                        start,
                        end: t,
                        plateau_mean: mean,
                        matched_branch_omega: stable_omegas[root],
                    });
                    current = None;
                    candidate = None;
                }
            }
            None => {
                if let Some((root, d)) = nearest(om) {
                    if d <= open_band {
                        match candidate {
                            Some((r, since)) if r == root => {
                                if t - since + 1 >= confirm_steps {
                                    if let Some(last) = residences.last() {
                                        if last.matched_branch_omega != stable_omegas[root] {
                                            switch_count += 1;
                                        }
                                    }
                                    current = Some((root, since));
                                }
                            }
                            _ => candidate = Some((root, t)),
                        }
                    } else {
                        candidate = None;
                    }
                }
            }
        }
    }
    if let Some((root, start)) = current {
        let mean = traj[start..].iter().sum::<f64>() / (traj.len() - start).max(1) as f64;
        residences.push(Residence {
            start,
            end: traj.len(),
            plateau_mean: mean,
            matched_branch_omega: stable_omegas[root],
        });
    }
    RunReport {
        trajectory: traj.to_vec(),
        residences,
        switch_count,
    }
}

/// Count basin switches of the mean-field trajectory: sign changes of the
/// `window`-step moving average relative to the basin boundary (the unstable
/// middle fixed point of the scalar dynamics).
pub fn basin_crossings(traj: &[f64], boundary: f64, window: usize) -> usize {
    if traj.len() < window.max(1) {
        return 0;
    }
    let w = window.max(1);
    let mut acc: f64 = traj[..w].iter().sum();
    let mut prev_side = (acc / w as f64 - boundary).signum();
    let mut crossings = 0usize;
    for i in w..traj.len() {
        acc += traj[i] - traj[i - w];
        let side = (acc / w as f64 - boundary).signum();
        if side != prev_side && side != 0.0 {
            if prev_side != 0.0 {
                crossings += 1;
            }
            prev_side = side;
        }
    }
    crossings
}

pub fn trajectory_csv(traj: &[f64]) -> String {
    let mut s = String::from("step,omega\n");
    for (i, om) in traj.iter().enumerate() {
        s.push_str(&format!("{i},{om:.17e}\n"));
    }
    s
}

pub fn residences_json(report: &RunReport) -> String {
    residences_json_with_meta(report, "")
}

pub fn residences_json_with_meta(report: &RunReport, meta: &str) -> String {
    let items: Vec<String> = report
        .residences
        .iter()
        .map(|r| {
            format!(
                "{{\"start\":{},\"end\":{},\"plateau_mean\":{:.17e},\"matched_branch_omega\":{:.17e}}}",
                r.start, r.end, r.plateau_mean, r.matched_branch_omega
            )
        })
        .collect();
    format!(
        "{{\"meta\":\"{}\",\"switch_count\":{},\"residences\":[{}]}}",
        meta,
        report.switch_count,
        items.join(",")
    )
}
