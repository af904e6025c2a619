//! Probability densities on the torus as truncated Fourier series.
//!
//! A density h is stored by its complex coefficients h_hat(m), |m_i| <= K,
//! with h(x) = sum_m h_hat(m) e^{i<m,x>} on [0,2pi)^d. Total mass one means
//! h_hat(0) = (2pi)^{-d}. The collocation grid has 2K+2 points per axis,
//! which resolves all 2K+1 modes per axis without aliasing.

use num_complex::Complex64;
use rustfft::FftPlanner;
use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::TAU;
use std::sync::Arc;

use crate::error::{MftkError, Result};

type FftCache = HashMap<(usize, bool), Arc<dyn rustfft::Fft<f64>>>;

thread_local! {
    static FFT_CACHE: RefCell<FftCache> = RefCell::new(HashMap::new());
}

fn fft_in_place(data: &mut [Complex64], inverse: bool) {
    let n = data.len();
    let fft = FFT_CACHE.with(|c| {
        let mut cache = c.borrow_mut();
        cache
            .entry((n, inverse))
            .or_insert_with(|| {
                let mut planner = FftPlanner::new();
                if inverse {
                    planner.plan_fft_inverse(n)
                } else {
                    planner.plan_fft_forward(n)
                }
            })
            .clone()
    });
    fft.process(data);
}

/// Truncated Fourier representation of a real density (or tangent vector).
#[derive(Clone, Debug)]
pub struct Density {
    dim: u8,
    cutoff: usize,
    /// Row-major over m1 then m2, each ascending from -K to K.
    coeffs: Vec<Complex64>,
}

impl Density {
    pub fn zero(dim: u8, cutoff: usize) -> Self {
        assert!(dim == 1 || dim == 2);
        let side = 2 * cutoff + 1;
        let len = if dim == 1 { side } else { side * side };
        Density {
            dim,
            cutoff,
            coeffs: vec![Complex64::new(0.0, 0.0); len],
        }
    }

    /// The uniform probability density (Lebesgue).
    pub fn uniform(dim: u8, cutoff: usize) -> Self {
        let mut d = Self::zero(dim, cutoff);
        let mass_mode = (TAU).powi(-(dim as i32));
        d.set_mode(&[0, 0], Complex64::new(mass_mode, 0.0));
        d
    }

    pub fn dim(&self) -> u8 {
        self.dim
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    pub fn grid_points_per_axis(&self) -> usize {
        2 * self.cutoff + 2
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    #[inline]
    fn index(&self, m: &[i64]) -> Option<usize> {
        let k = self.cutoff as i64;
        match self.dim {
            1 => {
                let m0 = m[0];
                if m0.abs() > k {
                    None
                } else {
                    Some((m0 + k) as usize)
                }
            }
            _ => {
                let (m1, m2) = (m[0], m[1]);
                if m1.abs() > k || m2.abs() > k {
                    None
                } else {
                    let side = (2 * k + 1) as usize;
                    Some((m1 + k) as usize * side + (m2 + k) as usize)
                }
            }
        }
    }

    #[inline]
    pub fn mode(&self, m: &[i64]) -> Complex64 {
        self.index(m)
            .map(|i| self.coeffs[i])
            .unwrap_or(Complex64::new(0.0, 0.0))
    }

    #[inline]
    pub fn set_mode(&mut self, m: &[i64], v: Complex64) {
        if let Some(i) = self.index(m) {
            self.coeffs[i] = v;
        }
    }

    /// Iterate (mode-vector, coefficient).
    pub fn iter_modes(&self) -> impl Iterator<Item = ([i64; 2], Complex64)> + '_ {
        let k = self.cutoff as i64;
        let dim = self.dim;
        let side = 2 * k + 1;
        self.coeffs.iter().enumerate().map(move |(i, &c)| {
            let i = i as i64;
            if dim == 1 {
                ([i - k, 0], c)
            } else {
                ([i / side - k, i % side - k], c)
            }
        })
    }

    /// Total mass: integral of h over the torus.
    pub fn mass(&self) -> f64 {
        let m0 = self.mode(&[0, 0]);
        m0.re * TAU.powi(self.dim as i32)
    }

    pub fn mass_complex(&self) -> Complex64 {
        self.mode(&[0, 0]) * TAU.powi(self.dim as i32)
    }

    /// Set the zero mode so the total mass is exactly `mass`.
    pub fn renormalize_mass(&mut self, mass: f64) -> f64 {
        let drift = self.mass() - mass;
        let v = Complex64::new(mass * TAU.powi(-(self.dim as i32)), 0.0);
        self.set_mode(&[0, 0], v);
        drift
    }

    /// Enforce Hermitian symmetry coeff(-m) = conj(coeff(m)) by averaging.
    pub fn enforce_real(&mut self) {
        let k = self.cutoff as i64;
        match self.dim {
            1 => {
                for m in 1..=k {
                    let a = self.mode(&[m, 0]);
                    let b = self.mode(&[-m, 0]);
                    let avg = 0.5 * (a + b.conj());
                    self.set_mode(&[m, 0], avg);
                    self.set_mode(&[-m, 0], avg.conj());
                }
                let z = self.mode(&[0, 0]);
                self.set_mode(&[0, 0], Complex64::new(z.re, 0.0));
            }
            _ => {
                for m1 in -k..=k {
                    for m2 in -k..=k {
                        if (m1, m2) > (-m1, -m2) {
                            continue;
                        }
                        let a = self.mode(&[m1, m2]);
                        let b = self.mode(&[-m1, -m2]);
                        let avg = 0.5 * (a + b.conj());
                        self.set_mode(&[m1, m2], avg);
                        self.set_mode(&[-m1, -m2], avg.conj());
                    }
                }
                let z = self.mode(&[0, 0]);
                self.set_mode(&[0, 0], Complex64::new(z.re, 0.0));
            }
        }
    }

    pub fn hermitian_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for (m, c) in self.iter_modes() {
            let d = (c - self.mode(&[-m[0], -m[1]]).conj()).norm();
            worst = worst.max(d);
        }
        worst
    }

    /// int alpha(x) h(x) dx with alpha = 1 - cos<k,x>, valid for complex h:
    /// mass - (2pi)^d (h_hat(k) + h_hat(-k))/2.
    pub fn alpha_integral(&self, kvec: &[i64]) -> Complex64 {
        let scale = TAU.powi(self.dim as i32);
        let k0 = kvec[0];
        let k1 = kvec.get(1).copied().unwrap_or(0);
        let plus = self.mode(&[k0, k1]);
        let minus = self.mode(&[-k0, -k1]);
        self.mass_complex() - scale * 0.5 * (plus + minus)
    }

    /// Mean field omega = int alpha h for a real density.
    pub fn omega(&self, kvec: &[i64]) -> f64 {
        self.alpha_integral(kvec).re
    }

    /// Directional derivative: coefficients multiplied by i<m, beta>.
    pub fn directional_derivative(&self, beta: &[f64]) -> Density {
        let mut out = self.clone();
        for (i, (m, c)) in self.iter_modes().enumerate() {
            let dot = m[0] as f64 * beta[0] + m[1] as f64 * beta.get(1).copied().unwrap_or(0.0);
            out.coeffs[i] = c * Complex64::new(0.0, dot);
        }
        out
    }

    /// Second directional derivative: coefficients multiplied by -<m, beta>^2.
    pub fn second_directional_derivative(&self, beta: &[f64]) -> Density {
        let mut out = self.clone();
        for (i, (m, c)) in self.iter_modes().enumerate() {
            let dot = m[0] as f64 * beta[0] + m[1] as f64 * beta.get(1).copied().unwrap_or(0.0);
            out.coeffs[i] = c * (-dot * dot);
        }
        out
    }

    /// l2 norm of the coefficient vector.
    pub fn l2_norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn distance(&self, other: &Density) -> f64 {
        assert_eq!(self.coeffs.len(), other.coeffs.len());
        self.coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, s: Complex64) {
        for c in &mut self.coeffs {
            *c *= s;
        }
    }

    pub fn axpy(&mut self, a: Complex64, other: &Density) {
        for (c, o) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *c += a * o;
        }
    }

    /// Real samples on the collocation grid. 1D: length 2K+2.
    /// 2D: row-major over x1 then x2, (2K+2)^2 values.
    pub fn grid_view(&self) -> Vec<f64> {
        let n = self.grid_points_per_axis();
        match self.dim {
            1 => {
                let mut bins = vec![Complex64::new(0.0, 0.0); n];
                for (m, c) in self.iter_modes() {
                    bins[(m[0].rem_euclid(n as i64)) as usize] += c;
                }
                fft_in_place(&mut bins, true);
                bins.iter().map(|c| c.re).collect()
            }
            _ => {
                let grid = self.to_grid_complex();
                grid.iter().map(|c| c.re).collect()
            }
        }
    }

    /// 2D inverse transform to the grid, complex values (row-major over x1 then x2).
    pub fn to_grid_complex(&self) -> Vec<Complex64> {
        let n = self.grid_points_per_axis();
        assert_eq!(self.dim, 2);
        let mut field = vec![Complex64::new(0.0, 0.0); n * n];
        for (m, c) in self.iter_modes() {
            let b1 = (m[0].rem_euclid(n as i64)) as usize;
            let b2 = (m[1].rem_euclid(n as i64)) as usize;
            field[b1 * n + b2] += c;
        }
        // inverse FFT over axis 2 (contiguous rows), then axis 1
        for row in field.chunks_mut(n) {
            fft_in_place(row, true);
        }
        let mut col = vec![Complex64::new(0.0, 0.0); n];
        for j in 0..n {
            for i in 0..n {
                col[i] = field[i * n + j];
            }
            fft_in_place(&mut col, true);
            for i in 0..n {
                field[i * n + j] = col[i];
            }
        }
        field
    }

    /// Build from real grid samples (inverse of `grid_view`), truncating to the cutoff.
    pub fn from_grid(dim: u8, cutoff: usize, grid: &[f64]) -> Density {
        let n = 2 * cutoff + 2;
        match dim {
            1 => {
                assert_eq!(grid.len(), n);
                let mut bins: Vec<Complex64> =
                    grid.iter().map(|&v| Complex64::new(v, 0.0)).collect();
                fft_in_place(&mut bins, false);
                let scale = 1.0 / n as f64;
                let mut d = Density::zero(1, cutoff);
                let k = cutoff as i64;
                for m in -k..=k {
                    let b = (m.rem_euclid(n as i64)) as usize;
                    d.set_mode(&[m, 0], bins[b] * scale);
                }
                d
            }
            _ => {
                assert_eq!(grid.len(), n * n);
                let field: Vec<Complex64> =
                    grid.iter().map(|&v| Complex64::new(v, 0.0)).collect();
                Self::from_grid_complex(cutoff, field)
            }
        }
    }

    /// 2D forward transform from complex grid samples.
    pub fn from_grid_complex(cutoff: usize, mut field: Vec<Complex64>) -> Density {
        let n = 2 * cutoff + 2;
        assert_eq!(field.len(), n * n);
        for row in field.chunks_mut(n) {
            fft_in_place(row, false);
        }
        let mut col = vec![Complex64::new(0.0, 0.0); n];
        for j in 0..n {
            for i in 0..n {
                col[i] = field[i * n + j];
            }
            fft_in_place(&mut col, false);
            for i in 0..n {
                field[i * n + j] = col[i];
            }
        }
        let scale = 1.0 / (n * n) as f64;
        let mut d = Density::zero(2, cutoff);
        let k = cutoff as i64;
        for m1 in -k..=k {
            let b1 = (m1.rem_euclid(n as i64)) as usize;
            for m2 in -k..=k {
                let b2 = (m2.rem_euclid(n as i64)) as usize;
                d.set_mode(&[m1, m2], field[b1 * n + b2] * scale);
            }
        }
        d
    }

    /// Sample the density from a pointwise function of the grid coordinates.
    pub fn from_fn(dim: u8, cutoff: usize, f: impl Fn(&[f64]) -> f64) -> Density {
        let n = 2 * cutoff + 2;
        let step = TAU / n as f64;
        match dim {
            1 => {
                let grid: Vec<f64> = (0..n).map(|j| f(&[j as f64 * step])).collect();
                Density::from_grid(1, cutoff, &grid)
            }
            _ => {
                let mut grid = vec![0.0; n * n];
                for i in 0..n {
                    for j in 0..n {
                        grid[i * n + j] = f(&[i as f64 * step, j as f64 * step]);
                    }
                }
                Density::from_grid(2, cutoff, &grid)
            }
        }
    }

    /// Evaluate the Fourier series at one point by direct summation.
    pub fn evaluate(&self, x: &[f64]) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for (m, c) in self.iter_modes() {
            let phase = m[0] as f64 * x[0] + m[1] as f64 * x.get(1).copied().unwrap_or(0.0);
            acc += c * Complex64::from_polar(1.0, phase);
        }
        acc
    }

    /// Serialize as CSV rows `k1,k2,re,im`, row-major over k1 then k2, ascending.
    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(self.coeffs.len() * 32);
        s.push_str("k1,k2,re,im\n");
        for (m, c) in self.iter_modes() {
            s.push_str(&format!("{},{},{:.17e},{:.17e}\n", m[0], m[1], c.re, c.im));
        }
        s
    }

    /// Flat binary: little-endian i32 header [dim, cutoff] then f64 pairs (re,im)
    /// in the same row-major mode order as the CSV.
    pub fn to_binary(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + self.coeffs.len() * 16);
        out.extend_from_slice(&(self.dim as i32).to_le_bytes());
        out.extend_from_slice(&(self.cutoff as i32).to_le_bytes());
        for c in &self.coeffs {
            out.extend_from_slice(&c.re.to_le_bytes());
            out.extend_from_slice(&c.im.to_le_bytes());
        }
        out
    }

    pub fn from_binary(data: &[u8]) -> Result<Density> {
        if data.len() < 8 {
            return Err(MftkError::InvalidParameter("binary density too short".into()));
        }
        let dim = i32::from_le_bytes(data[0..4].try_into().unwrap()) as u8;
        let cutoff = i32::from_le_bytes(data[4..8].try_into().unwrap()) as usize;
        let mut d = Density::zero(dim, cutoff);
        let need = d.coeffs.len() * 16 + 8;
        if data.len() != need {
            return Err(MftkError::InvalidParameter(format!(
                "binary density length {} != expected {need}",
                data.len()
            )));
        }
        for (i, chunk) in data[8..].chunks_exact(16).enumerate() {
            let re = f64::from_le_bytes(chunk[0..8].try_into().unwrap());
            let im = f64::from_le_bytes(chunk[8..16].try_into().unwrap());
            d.coeffs[i] = Complex64::new(re, im);
        }
        Ok(d)
    }
}

/// Raised-cosine spectral damping on the outer fraction of the mode range.
#[derive(Clone, Debug)]
pub struct Mollifier {
    pub inner_fraction: f64,
}

impl Default for Mollifier {
    fn default() -> Self {
        Mollifier { inner_fraction: 0.75 }
    }
}

impl Mollifier {
    pub fn factor(&self, m: &[i64; 2], cutoff: usize) -> f64 {
        let t = m[0].abs().max(m[1].abs()) as f64 / cutoff as f64;
        if t <= self.inner_fraction {
            1.0
        } else {
            let s = (t - self.inner_fraction) / (1.0 - self.inner_fraction);
            0.5 * (1.0 + (std::f64::consts::PI * s.min(1.0)).cos())
        }
    }

    pub fn apply(&self, d: &mut Density) {
        let cutoff = d.cutoff();
        let factors: Vec<f64> = d
            .iter_modes()
            .map(|(m, _)| self.factor(&m, cutoff))
            .collect();
        for (c, f) in d.coeffs_mut().iter_mut().zip(factors) {
            *c *= f;
        }
    }
}

pub(crate) fn fft(data: &mut [Complex64], inverse: bool) {
    fft_in_place(data, inverse)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_mass_is_one() {
        let d = Density::uniform(2, 8);
        assert!((d.mass() - 1.0).abs() < 1e-14);
        assert!((d.omega(&[0, 1]) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn grid_round_trip_2d() {
        let k = 6;
        let mut d = Density::uniform(2, k);
        d.set_mode(&[1, 2], Complex64::new(0.01, 0.005));
        d.set_mode(&[-1, -2], Complex64::new(0.01, -0.005));
        d.set_mode(&[0, 1], Complex64::new(-0.02, 0.0));
        d.set_mode(&[0, -1], Complex64::new(-0.02, 0.0));
        let grid = d.grid_view();
        let back = Density::from_grid(2, k, &grid);
        assert!(d.distance(&back) < 1e-13);
    }

    #[test]
    fn grid_round_trip_1d() {
        let k = 16;
        let mut d = Density::uniform(1, k);
        d.set_mode(&[3, 0], Complex64::new(0.01, -0.002));
        d.set_mode(&[-3, 0], Complex64::new(0.01, 0.002));
        let grid = d.grid_view();
        let back = Density::from_grid(1, k, &grid);
        assert!(d.distance(&back) < 1e-13);
    }

    #[test]
    fn alpha_modes_integral() {
        // alpha = 1 - cos<k,x> has series coefficients 1 at 0 and -1/2 at +-k.
        // For h with a single k-mode c, int alpha h = mass - (2pi)^d Re c.
        let kvec = [0i64, 1];
        let mut h = Density::uniform(2, 8);
        h.set_mode(&[0, 1], Complex64::new(0.003, 0.001));
        h.set_mode(&[0, -1], Complex64::new(0.003, -0.001));
        let expect = 1.0 - TAU.powi(2) * 0.003;
        assert!((h.omega(&kvec) - expect).abs() < 1e-14);
    }

    #[test]
    fn evaluate_matches_grid() {
        let k = 5;
        let d = Density::from_fn(2, k, |x| {
            1.0 / TAU.powi(2) * (1.0 + 0.3 * (x[1]).cos() + 0.1 * (x[0] + 2.0 * x[1]).sin())
        });
        let n = d.grid_points_per_axis();
        let step = TAU / n as f64;
        let grid = d.grid_view();
        for &(i, j) in &[(0usize, 0usize), (3, 7), (10, 2)] {
            let v = d.evaluate(&[i as f64 * step, j as f64 * step]);
            assert!((v.re - grid[i * n + j]).abs() < 1e-12);
            assert!(v.im.abs() < 1e-12);
        }
    }

    #[test]
    fn binary_round_trip() {
        let mut d = Density::uniform(1, 4);
        d.set_mode(&[2, 0], Complex64::new(0.1, -0.2));
        let b = d.to_binary();
        let back = Density::from_binary(&b).unwrap();
        assert!(d.distance(&back) == 0.0);
    }
}
