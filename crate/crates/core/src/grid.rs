//! Periodic grids, FFT plumbing and multi-component fields.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform periodic grid `x_j = origin + j L / n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeriodicGrid {
    pub length: f64,
    pub n: usize,
    pub origin: f64,
}

impl PeriodicGrid {
    pub fn new(length: f64, n: usize) -> Result<Self> {
        Self::with_origin(length, n, 0.0)
    }

    /// Grid on `[-L/2, L/2)`.
    pub fn centered(length: f64, n: usize) -> Result<Self> {
        Self::with_origin(length, n, -0.5 * length)
    }

    pub fn with_origin(length: f64, n: usize, origin: f64) -> Result<Self> {
        if n < 16 || !n.is_power_of_two() {
            return Err(Error::Config(format!(
                "grid size must be a power of two >= 16, got {n}"
            )));
        }
        if !(length.is_finite() && length > 0.0) {
            return Err(Error::Config(format!("grid length must be positive, got {length}")));
        }
        Ok(Self { length, n, origin })
    }

    pub fn dx(&self) -> f64 {
        self.length / self.n as f64
    }

    pub fn x(&self, j: usize) -> f64 {
        self.origin + j as f64 * self.dx()
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n).map(|j| self.x(j)).collect()
    }

    /// Integer mode number of FFT slot `i`; the Nyquist slot maps to `-n/2`.
    pub fn mode(&self, i: usize) -> i64 {
        let n = self.n as i64;
        let i = i as i64;
        if i < n / 2 {
            i
        } else {
            i - n
        }
    }

    /// Wavenumber of FFT slot `i`.
    pub fn wavenumber(&self, i: usize) -> f64 {
        2.0 * PI * self.mode(i) as f64 / self.length
    }

    /// Wavenumbers in FFT order.
    pub fn wavenumbers(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.wavenumber(i)).collect()
    }

    /// Wavenumbers sorted ascending (`-n/2 .. n/2-1`).
    pub fn sorted_wavenumbers(&self) -> Vec<f64> {
        (0..self.n)
            .map(|s| 2.0 * PI * (s as i64 - self.n as i64 / 2) as f64 / self.length)
            .collect()
    }

    /// Position of FFT slot `i` in [`Self::sorted_wavenumbers`].
    pub fn sorted_index(&self, i: usize) -> usize {
        (i + self.n / 2) % self.n
    }

    pub fn nyquist_slot(&self) -> usize {
        self.n / 2
    }

    /// The same periodic domain seen through the slow variable `X = eps x`.
    pub fn scaled(&self, eps: f64) -> PeriodicGrid {
        PeriodicGrid {
            length: self.length * eps,
            n: self.n,
            origin: self.origin * eps,
        }
    }

    /// Carrier wavenumbers must sit on the grid for an exactly periodic ansatz.
    pub fn mode_of(&self, k: f64) -> Option<i64> {
        let m = k * self.length / (2.0 * PI);
        let r = m.round();
        ((m - r).abs() < 1e-9 * m.abs().max(1.0)).then_some(r as i64)
    }
}

/// Forward/inverse FFT pair; the inverse is normalized by `1/n`.
#[derive(Clone)]
pub struct Spectral {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Spectral {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Spectral").field("n", &self.n).finish()
    }
}

impl Spectral {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            n,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn forward(&self, buf: &mut [Complex64]) {
        self.forward.process(buf);
    }

    pub fn inverse(&self, buf: &mut [Complex64]) {
        self.inverse.process(buf);
        let s = 1.0 / self.n as f64;
        buf.iter_mut().for_each(|z| *z *= s);
    }

    /// Spectral derivative of order `order` of a periodic signal.
    pub fn derivative(&self, grid: &PeriodicGrid, values: &[Complex64], order: u32) -> Vec<Complex64> {
        let mut buf = values.to_vec();
        self.forward(&mut buf);
        for (i, z) in buf.iter_mut().enumerate() {
            if order % 2 == 1 && i == grid.nyquist_slot() {
                *z = Complex64::new(0.0, 0.0);
                continue;
            }
            let ik = Complex64::new(0.0, grid.wavenumber(i));
            *z *= ik.powu(order);
        }
        self.inverse(&mut buf);
        buf
    }

    /// Band-limited translate: returns `f(x - shift)` sampled on the same grid.
    pub fn translate(&self, grid: &PeriodicGrid, values: &[Complex64], shift: f64) -> Vec<Complex64> {
        let mut buf = values.to_vec();
        self.forward(&mut buf);
        for (i, z) in buf.iter_mut().enumerate() {
            if i == grid.nyquist_slot() {
                // keep the translate real for real input
                *z *= (grid.wavenumber(i) * shift).cos();
                continue;
            }
            *z *= Complex64::from_polar(1.0, -grid.wavenumber(i) * shift);
        }
        self.inverse(&mut buf);
        buf
    }
}

/// An `N`-component complex field on a periodic grid, stored component-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateField {
    pub grid: PeriodicGrid,
    pub components: usize,
    pub values: Vec<Complex64>,
}

impl StateField {
    pub fn zeros(grid: PeriodicGrid, components: usize) -> Self {
        Self {
            grid,
            components,
            values: vec![Complex64::new(0.0, 0.0); grid.n * components],
        }
    }

    pub fn from_components(grid: PeriodicGrid, comps: Vec<Vec<Complex64>>) -> Result<Self> {
        let components = comps.len();
        let mut values = Vec::with_capacity(components * grid.n);
        for c in comps {
            if c.len() != grid.n {
                return Err(Error::DimensionMismatch {
                    expected: grid.n,
                    found: c.len(),
                });
            }
            values.extend(c);
        }
        Ok(Self {
            grid,
            components,
            values,
        })
    }

    pub fn component(&self, c: usize) -> &[Complex64] {
        &self.values[c * self.grid.n..(c + 1) * self.grid.n]
    }

    pub fn component_mut(&mut self, c: usize) -> &mut [Complex64] {
        let n = self.grid.n;
        &mut self.values[c * n..(c + 1) * n]
    }

    /// Value vector at grid point `j`.
    pub fn at(&self, j: usize) -> Vec<Complex64> {
        (0..self.components)
            .map(|c| self.values[c * self.grid.n + j])
            .collect()
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Largest imaginary part, the realness defect of a physical state.
    pub fn imag_sup(&self) -> f64 {
        self.values.iter().map(|z| z.im.abs()).fold(0.0, f64::max)
    }

    /// Discrete L2 norm `sqrt(dx * sum |u|^2)`, summed in index order.
    pub fn l2_norm(&self) -> f64 {
        let s: f64 = self.values.iter().map(|z| z.norm_sqr()).sum();
        (s * self.grid.dx()).sqrt()
    }

    /// Per-component spectra (FFT order).
    pub fn spectrum(&self, fft: &Spectral) -> Vec<Vec<Complex64>> {
        (0..self.components)
            .map(|c| {
                let mut buf = self.component(c).to_vec();
                fft.forward(&mut buf);
                buf
            })
            .collect()
    }

    pub fn from_spectrum(grid: PeriodicGrid, fft: &Spectral, spectra: Vec<Vec<Complex64>>) -> Self {
        let comps = spectra
            .into_iter()
            .map(|mut s| {
                fft.inverse(&mut s);
                s
            })
            .collect::<Vec<_>>();
        Self::from_components(grid, comps).expect("spectra sized to the grid")
    }

    pub fn add_scaled(&mut self, other: &StateField, scale: f64) -> Result<()> {
        if self.grid != other.grid || self.components != other.components {
            return Err(Error::GridMismatch);
        }
        self.values
            .iter_mut()
            .zip(&other.values)
            .for_each(|(a, b)| *a += b * scale);
        Ok(())
    }

    /// Drop imaginary parts.
    pub fn real_part(&self) -> StateField {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|z| z.im = 0.0);
        out
    }
}

/// Max over components and points of `|a - b|`.
pub fn sup_distance(a: &StateField, b: &StateField) -> Result<f64> {
    if a.grid != b.grid || a.components != b.components {
        return Err(Error::GridMismatch);
    }
    Ok(a.values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max))
}

/// Smallest power of two `>= n`, at least 16.
pub fn pow2_at_least(n: usize) -> usize {
    n.max(16).next_power_of_two()
}

/// Centered grid for a packet with carrier `k0`: the slow window `eps L` is about
/// `slow_window`, `k0` sits exactly on the grid and each carrier wavelength gets at
/// least `ppw` points.
pub fn packet_grid(k0: f64, eps: f64, slow_window: f64, ppw: usize) -> Result<PeriodicGrid> {
    if !(k0 > 0.0 && eps > 0.0 && slow_window > 0.0) {
        return Err(Error::Config(format!(
            "packet grid needs positive k0, eps and window, got {k0}, {eps}, {slow_window}"
        )));
    }
    let periods = (slow_window * k0 / (2.0 * PI * eps)).round().max(1.0) as usize;
    PeriodicGrid::centered(2.0 * PI * periods as f64 / k0, pow2_at_least(periods * ppw))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    #[test]
    fn rejects_bad_sizes() {
        assert!(PeriodicGrid::new(1.0, 8).is_err());
        assert!(PeriodicGrid::new(1.0, 24).is_err());
        assert!(PeriodicGrid::new(-1.0, 32).is_err());
    }

    #[test]
    fn sorted_index_matches_wavenumbers() {
        let g = PeriodicGrid::new(10.0, 32).unwrap();
        let sorted = g.sorted_wavenumbers();
        for i in 0..g.n {
            assert!((sorted[g.sorted_index(i)] - g.wavenumber(i)).abs() < 1e-14);
        }
        assert!(sorted.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn spectral_derivative_of_sine() {
        let g = PeriodicGrid::new(2.0 * PI, 64).unwrap();
        let fft = Spectral::new(g.n);
        let f: Vec<_> = g.points().iter().map(|&x| c((3.0 * x).sin())).collect();
        let d = fft.derivative(&g, &f, 1);
        for (j, z) in d.iter().enumerate() {
            assert!((z.re - 3.0 * (3.0 * g.x(j)).cos()).abs() < 1e-12);
        }
    }

    #[test]
    fn translate_is_exact_for_band_limited() {
        let g = PeriodicGrid::centered(2.0 * PI, 64).unwrap();
        let fft = Spectral::new(g.n);
        let f: Vec<_> = g.points().iter().map(|&x| c((2.0 * x).cos())).collect();
        let t = fft.translate(&g, &f, 0.3);
        for (j, z) in t.iter().enumerate() {
            assert!((z.re - (2.0 * (g.x(j) - 0.3)).cos()).abs() < 1e-12);
        }
    }

    #[test]
    fn sup_distance_cases() {
        let g = PeriodicGrid::new(1.0, 16).unwrap();
        let a = StateField::zeros(g, 2);
        assert_eq!(sup_distance(&a, &a).unwrap(), 0.0);
        let mut b = a.clone();
        b.component_mut(1).iter_mut().for_each(|z| *z += 1e-3);
        assert!((sup_distance(&a, &b).unwrap() - 1e-3).abs() < 1e-18);
        let other = StateField::zeros(PeriodicGrid::new(2.0, 16).unwrap(), 2);
        assert_eq!(sup_distance(&a, &other), Err(Error::GridMismatch));
    }
}
