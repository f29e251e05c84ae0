//! Time integration of `U_t + A U_x + E U = T2 + T3` on a periodic grid.
//!
//! The state is advanced in diagonal Fourier variables `V = S^{-1} U`, where the
//! linear flow is the exact phase `exp(i omega_n(k) t)`. The nonlinearity is treated
//! by the classical four-stage scheme in the frame rotating with that flow
//! (integrating-factor RK4).

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dispersion::DispersionData;
use crate::error::{Error, Result};
use crate::grid::{PeriodicGrid, Spectral, StateField};
use crate::system::SystemSpec;

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

type Spectra = Vec<Vec<Complex64>>;

/// Sparse form of the nonlinearity for fast pointwise evaluation.
#[derive(Debug, Clone)]
struct SparseNonlinearity {
    dim: usize,
    quad: Vec<(usize, usize, usize, f64)>,
    cubic: Vec<(usize, usize, usize, usize, f64)>,
}

impl SparseNonlinearity {
    fn new(spec: &SystemSpec) -> Self {
        let n = spec.dim;
        let mut quad = Vec::new();
        for j in 0..n {
            for p in 0..n {
                for q in 0..n {
                    let v = spec.quad[(j * n + p) * n + q];
                    if v != 0.0 {
                        quad.push((j, p, q, v));
                    }
                }
            }
        }
        let mut cubic = Vec::new();
        for j in 0..n {
            for p in 0..n {
                for q in 0..n {
                    for r in 0..n {
                        let v = spec.cubic[((j * n + p) * n + q) * n + r];
                        if v != 0.0 {
                            cubic.push((j, p, q, r, v));
                        }
                    }
                }
            }
        }
        Self { dim: n, quad, cubic }
    }

    fn is_zero(&self) -> bool {
        self.quad.is_empty() && self.cubic.is_empty()
    }

    fn eval(&self, u: &[Complex64], out: &mut [Complex64]) {
        out[..self.dim].iter_mut().for_each(|z| *z = ZERO);
        for &(j, p, q, v) in &self.quad {
            out[j] += u[p] * u[q] * v;
        }
        for &(j, p, q, r, v) in &self.cubic {
            out[j] += u[p] * u[q] * u[r] * v;
        }
    }
}

/// Per-slot diagonalizers and frequencies for one grid.
#[derive(Debug, Clone)]
pub struct Propagator {
    pub grid: PeriodicGrid,
    pub dim: usize,
    fft: Spectral,
    /// `omega[n][slot]`.
    pub omega: Vec<Vec<f64>>,
    s: Vec<Complex64>,
    s_inv: Vec<Complex64>,
}

impl Propagator {
    pub fn new(data: &DispersionData, grid: &PeriodicGrid) -> Result<Self> {
        let n = data.dim();
        let nodes = data.slot_nodes(grid)?;
        let mut s = Vec::with_capacity(grid.n * n * n);
        let mut s_inv = Vec::with_capacity(grid.n * n * n);
        let mut omega = vec![vec![0.0; grid.n]; n];
        for (slot, &node) in nodes.iter().enumerate() {
            for r in 0..n {
                for c in 0..n {
                    s.push(data.s[node][(r, c)]);
                    s_inv.push(data.s_inv[node][(r, c)]);
                }
                omega[r][slot] = data.omega[r][node];
            }
        }
        Ok(Self {
            grid: *grid,
            dim: n,
            fft: Spectral::new(grid.n),
            omega,
            s,
            s_inv,
        })
    }

    pub fn fft(&self) -> &Spectral {
        &self.fft
    }

    fn apply(&self, mats: &[Complex64], x: &[Vec<Complex64>]) -> Spectra {
        let n = self.dim;
        let mut out = vec![vec![ZERO; self.grid.n]; n];
        for slot in 0..self.grid.n {
            let m = &mats[slot * n * n..(slot + 1) * n * n];
            for r in 0..n {
                let mut acc = ZERO;
                for c in 0..n {
                    acc += m[r * n + c] * x[c][slot];
                }
                out[r][slot] = acc;
            }
        }
        out
    }

    /// Physical field to diagonal spectra.
    pub fn to_v(&self, u: &StateField) -> Result<Spectra> {
        if u.grid != self.grid {
            return Err(Error::GridMismatch);
        }
        if u.components != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: u.components,
            });
        }
        Ok(self.apply(&self.s_inv, &u.spectrum(&self.fft)))
    }

    /// Diagonal spectra to physical field.
    pub fn to_u(&self, v: &[Vec<Complex64>]) -> StateField {
        StateField::from_spectrum(self.grid, &self.fft, self.apply(&self.s, v))
    }

    /// Multiply by `exp(i omega dt)`.
    pub fn linear(&self, v: &mut [Vec<Complex64>], dt: f64) {
        for (vn, wn) in v.iter_mut().zip(&self.omega) {
            for (z, &w) in vn.iter_mut().zip(wn) {
                *z *= Complex64::from_polar(1.0, w * dt);
            }
        }
    }

    /// Largest `|omega|` over `|k| <= 2/3` of the Nyquist wavenumber.
    pub fn max_resolved_omega(&self) -> f64 {
        let k_cut = (2.0 / 3.0) * std::f64::consts::PI * self.grid.n as f64 / self.grid.length;
        let mut m: f64 = 0.0;
        for slot in 0..self.grid.n {
            if self.grid.wavenumber(slot).abs() <= k_cut {
                for wn in &self.omega {
                    m = m.max(wn[slot].abs());
                }
            }
        }
        m
    }

    /// Default step `0.1 / (1 + max |omega|)` over the resolved band.
    pub fn default_dt(&self) -> f64 {
        0.1 / (1.0 + self.max_resolved_omega())
    }
}

/// Exact linear flow over `dt`.
pub fn propagate_linear(data: &DispersionData, field: &StateField, dt: f64) -> Result<StateField> {
    let p = Propagator::new(data, &field.grid)?;
    let mut v = p.to_v(field)?;
    p.linear(&mut v, dt);
    Ok(p.to_u(&v))
}

/// Integrating-factor RK4 with fixed step.
#[derive(Debug, Clone)]
pub struct Stepper {
    prop: Propagator,
    nl: SparseNonlinearity,
    dt: f64,
    half: Vec<Vec<Complex64>>,
    full: Vec<Vec<Complex64>>,
}

impl Stepper {
    pub fn new(spec: &SystemSpec, prop: Propagator, dt: f64) -> Result<Self> {
        if spec.dim != prop.dim {
            return Err(Error::DimensionMismatch {
                expected: prop.dim,
                found: spec.dim,
            });
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::Config(format!("time step must be positive, got {dt}")));
        }
        let phase = |f: f64| -> Vec<Vec<Complex64>> {
            prop.omega
                .iter()
                .map(|wn| wn.iter().map(|&w| Complex64::from_polar(1.0, w * f)).collect())
                .collect()
        };
        let half = phase(0.5 * dt);
        let full = phase(dt);
        Ok(Self {
            nl: SparseNonlinearity::new(spec),
            prop,
            dt,
            half,
            full,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn propagator(&self) -> &Propagator {
        &self.prop
    }

    /// `S^{-1} F[T(U)]` with `U = S V`; also returns `sup |U|`.
    fn rhs(&self, v: &[Vec<Complex64>]) -> (Spectra, f64) {
        let p = &self.prop;
        let n = p.dim;
        let npts = p.grid.n;
        let u = p.to_u(v);
        let sup = u.sup_norm();
        if self.nl.is_zero() {
            return (vec![vec![ZERO; npts]; n], sup);
        }
        let mut f = vec![ZERO; n * npts];
        // point-major scratch so that each point is evaluated independently
        let chunk = 256;
        let results: Vec<Vec<Complex64>> = (0..npts.div_ceil(chunk))
            .into_par_iter()
            .map(|b| {
                let lo = b * chunk;
                let hi = (lo + chunk).min(npts);
                let mut out = vec![ZERO; (hi - lo) * n];
                let mut point = vec![ZERO; n];
                let mut val = vec![ZERO; n];
                for j in lo..hi {
                    for c in 0..n {
                        point[c] = u.values[c * npts + j];
                    }
                    self.nl.eval(&point, &mut val);
                    out[(j - lo) * n..(j - lo + 1) * n].copy_from_slice(&val);
                }
                out
            })
            .collect();
        for (b, block) in results.into_iter().enumerate() {
            let lo = b * chunk;
            for (o, z) in block.chunks(n).enumerate() {
                for c in 0..n {
                    f[c * npts + lo + o] = z[c];
                }
            }
        }
        let mut spectra: Spectra = f.chunks(npts).map(|c| c.to_vec()).collect();
        for s in spectra.iter_mut() {
            p.fft.forward(s);
        }
        let mut out = p.apply(&p.s_inv, &spectra);
        let nyq = p.grid.nyquist_slot();
        for o in out.iter_mut() {
            o[nyq] = ZERO;
        }
        (out, sup)
    }

    fn rotate(&self, v: &[Vec<Complex64>], e: &[Vec<Complex64>]) -> Spectra {
        v.iter()
            .zip(e)
            .map(|(vn, en)| vn.iter().zip(en).map(|(a, b)| a * b).collect())
            .collect()
    }

    fn axpy(x: &[Vec<Complex64>], a: f64, y: &[Vec<Complex64>]) -> Spectra {
        x.iter()
            .zip(y)
            .map(|(xn, yn)| xn.iter().zip(yn).map(|(p, q)| p + q * a).collect())
            .collect()
    }

    /// One step in place; returns `(sup |U| at step start, |h N(V)|_2)`.
    pub fn advance(&self, v: &mut Spectra) -> (f64, f64) {
        let h = self.dt;
        let (a, sup) = self.rhs(v);
        let v2 = self.rotate(&Self::axpy(v, 0.5 * h, &a), &self.half);
        let (b, _) = self.rhs(&v2);
        let v3 = Self::axpy(&self.rotate(v, &self.half), 0.5 * h, &b);
        let (c, _) = self.rhs(&v3);
        let v4 = Self::axpy(&self.rotate(v, &self.full), h, &self.rotate(&c, &self.half));
        let (d, _) = self.rhs(&v4);
        let npts = self.prop.grid.n as f64;
        let mut incr = 0.0;
        for n in 0..v.len() {
            for i in 0..v[n].len() {
                let ef = self.full[n][i];
                let eh = self.half[n][i];
                v[n][i] = ef * v[n][i] + (ef * a[n][i] + (b[n][i] + c[n][i]) * eh * 2.0 + d[n][i]) * (h / 6.0);
                incr += a[n][i].norm_sqr();
            }
        }
        // Parseval: |f|_2^2 = dx * sum |f_hat|^2 / n
        let l2 = h * (incr * self.prop.grid.dx() / npts).sqrt();
        (sup, l2)
    }
}

/// One step of the nonlinear integrator.
pub fn step(spec: &SystemSpec, data: &DispersionData, field: &StateField, dt: f64) -> Result<StateField> {
    let stepper = Stepper::new(spec, Propagator::new(data, &field.grid)?, dt)?;
    let mut v = stepper.prop.to_v(field)?;
    stepper.advance(&mut v);
    let out = stepper.prop.to_u(&v);
    let cap = 1e3 * field.sup_norm();
    if out.sup_norm() > cap && cap > 0.0 {
        return Err(Error::BlowupDetected {
            t: dt,
            sup: out.sup_norm(),
            cap,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    pub t_end: f64,
    /// `None` selects [`Propagator::default_dt`].
    pub dt: Option<f64>,
    /// Sample every this many steps (the final time is always sampled).
    pub sample_every: usize,
    pub step_budget: usize,
    pub blowup_factor: f64,
}

impl SimOptions {
    pub fn new(t_end: f64) -> Self {
        Self {
            t_end,
            dt: None,
            sample_every: 1,
            step_budget: 10_000_000,
            blowup_factor: 1e3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RunStats {
    pub steps: usize,
    pub dt: f64,
    pub max_nonlinear_increment: f64,
    pub max_sup: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub samples: Vec<StateField>,
    pub stats: RunStats,
}

#[derive(Serialize)]
struct SampleRow {
    t: f64,
    sup: Vec<f64>,
}

impl Trajectory {
    fn rows(&self) -> Vec<SampleRow> {
        self.times
            .iter()
            .zip(&self.samples)
            .map(|(&t, s)| SampleRow {
                t,
                sup: (0..s.components)
                    .map(|c| s.component(c).iter().map(|z| z.norm()).fold(0.0, f64::max))
                    .collect(),
            })
            .collect()
    }

    /// `t sup_0 .. sup_{N-1}` per line.
    pub fn to_columns(&self) -> String {
        let mut out = String::new();
        for r in self.rows() {
            out.push_str(&format!("{:.12e}", r.t));
            for s in r.sup {
                out.push_str(&format!(" {s:.12e}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.rows()).expect("rows serialize")
    }

    /// Full-field snapshot: per component, interleaved `(re, im)` pairs.
    pub fn snapshot(&self, i: usize) -> Vec<Vec<f64>> {
        let s = &self.samples[i];
        (0..s.components)
            .map(|c| s.component(c).iter().flat_map(|z| [z.re, z.im]).collect())
            .collect()
    }
}

/// Run to `t_end`, calling `observe(t, U)` at every sample.
pub fn simulate_with<F>(spec: &SystemSpec, data: &DispersionData, init: &StateField, opts: &SimOptions, mut observe: F) -> Result<RunStats>
where
    F: FnMut(f64, &StateField) -> Result<()>,
{
    if !(opts.t_end.is_finite() && opts.t_end >= 0.0) {
        return Err(Error::Config(format!("t_end must be non-negative, got {}", opts.t_end)));
    }
    let prop = Propagator::new(data, &init.grid)?;
    let dt_req = opts.dt.unwrap_or_else(|| prop.default_dt());
    let steps = (opts.t_end / dt_req).ceil() as usize;
    if steps > opts.step_budget {
        return Err(Error::StepBudgetExceeded {
            needed: steps,
            budget: opts.step_budget,
        });
    }
    let dt = if steps == 0 { dt_req } else { opts.t_end / steps as f64 };
    let stepper = Stepper::new(spec, prop, dt)?;
    let mut v = stepper.prop.to_v(init)?;
    let cap = opts.blowup_factor * init.sup_norm();
    let every = opts.sample_every.max(1);
    let mut stats = RunStats {
        steps,
        dt,
        max_nonlinear_increment: 0.0,
        max_sup: init.sup_norm(),
    };
    observe(0.0, init)?;
    for i in 1..=steps {
        let (sup, incr) = stepper.advance(&mut v);
        stats.max_sup = stats.max_sup.max(sup);
        stats.max_nonlinear_increment = stats.max_nonlinear_increment.max(incr);
        let t = i as f64 * dt;
        if i % every == 0 || i == steps {
            let u = stepper.prop.to_u(&v);
            let s = u.sup_norm();
            stats.max_sup = stats.max_sup.max(s);
            if s > cap || !s.is_finite() {
                return Err(Error::BlowupDetected { t, sup: s, cap });
            }
            observe(t, &u)?;
        } else if sup > cap || !sup.is_finite() {
            return Err(Error::BlowupDetected { t, sup, cap });
        }
    }
    Ok(stats)
}

pub fn simulate(spec: &SystemSpec, data: &DispersionData, init: &StateField, opts: &SimOptions) -> Result<Trajectory> {
    let mut times = Vec::new();
    let mut samples = Vec::new();
    let stats = simulate_with(spec, data, init, opts, |t, u| {
        times.push(t);
        samples.push(u.clone());
        Ok(())
    })?;
    Ok(Trajectory { times, samples, stats })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dispersion::{eigendecompose, BranchPolicy};
    use crate::grid::sup_distance;
    use crate::system::{builtin_example2, builtin_klein_gordon, without_nonlinearity};
    use std::f64::consts::PI;

    fn setup(spec: &SystemSpec, length: f64, n: usize) -> (PeriodicGrid, DispersionData) {
        let g = PeriodicGrid::centered(length, n).unwrap();
        let d = eigendecompose(spec, &g.sorted_wavenumbers(), BranchPolicy::continuous()).unwrap();
        (g, d)
    }

    fn plane_wave(g: &PeriodicGrid, col: &[Complex64], k: f64) -> StateField {
        let comps = col
            .iter()
            .map(|&c| g.points().iter().map(|&x| c * Complex64::from_polar(1.0, k * x)).collect())
            .collect();
        StateField::from_components(*g, comps).unwrap()
    }

    #[test]
    fn zero_step_is_identity() {
        let s = builtin_example2(0.0, 1.0);
        let (g, d) = setup(&s, 2.0 * PI * 4.0, 32);
        let u = plane_wave(&g, &[Complex64::new(1.0, 0.0), Complex64::new(0.0, 1.0)], 0.5);
        let out = propagate_linear(&d, &u, 0.0).unwrap();
        assert!(sup_distance(&u, &out).unwrap() < 1e-14);
    }

    #[test]
    fn single_mode_phase_advance() {
        let s = builtin_example2(0.0, 1.0);
        let (g, d) = setup(&s, 2.0 * PI * 4.0, 32);
        let slot = 5;
        let k = g.wavenumber(slot);
        let m = d.branch_at(k).unwrap();
        for n in 0..2 {
            let u = plane_wave(&g, &m.column(n), k);
            let dt = 0.37;
            let out = propagate_linear(&d, &u, dt).unwrap();
            let w = if n == 0 { -(1.0 + k * k).sqrt() } else { (1.0 + k * k).sqrt() };
            let mut expect = u.clone();
            expect.values.iter_mut().for_each(|z| *z *= Complex64::from_polar(1.0, w * dt));
            assert!(sup_distance(&expect, &out).unwrap() < 1e-12);
        }
    }

    #[test]
    fn linear_flow_is_unitary() {
        let s = builtin_klein_gordon();
        let (g, d) = setup(&s, 40.0, 64);
        let p = Propagator::new(&d, &g).unwrap();
        let comps = (0..3)
            .map(|c| g.points().iter().map(|&x| Complex64::new((-(x - c as f64).powi(2)).exp(), 0.0)).collect())
            .collect();
        let u = StateField::from_components(g, comps).unwrap();
        let mut v = p.to_v(&u).unwrap();
        for _ in 0..10_000 {
            p.linear(&mut v, 0.013);
        }
        let back = p.to_u(&v);
        assert!((back.l2_norm() / u.l2_norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn linear_system_step_equals_linear_flow() {
        let s = without_nonlinearity(&builtin_klein_gordon());
        let (g, d) = setup(&s, 40.0, 64);
        let u = plane_wave(&g, &d.branch_at(g.wavenumber(3)).unwrap().column(0), g.wavenumber(3));
        let a = step(&s, &d, &u, 0.05).unwrap();
        let b = propagate_linear(&d, &u, 0.05).unwrap();
        assert!(sup_distance(&a, &b).unwrap() < 1e-13);
    }

    #[test]
    fn simulate_zero_horizon_and_plane_wave() {
        let s = without_nonlinearity(&builtin_klein_gordon());
        let (g, d) = setup(&s, 2.0 * PI * 2.0, 32);
        let k = g.wavenumber(4);
        let m = d.branch_at(k).unwrap();
        let u = plane_wave(&g, &m.column(0), k);
        let tr = simulate(&s, &d, &u, &SimOptions::new(0.0)).unwrap();
        assert_eq!(tr.times, vec![0.0]);
        assert_eq!(tr.samples[0], u);

        let mut opts = SimOptions::new(3.0);
        opts.dt = Some(0.01);
        opts.sample_every = 100;
        let tr = simulate(&s, &d, &u, &opts).unwrap();
        assert!(tr.times.windows(2).all(|w| w[1] > w[0]));
        let w = -(1.0 + k * k).sqrt();
        for (t, smp) in tr.times.iter().zip(&tr.samples) {
            let mut expect = u.clone();
            expect.values.iter_mut().for_each(|z| *z *= Complex64::from_polar(1.0, w * t));
            assert!(sup_distance(&expect, smp).unwrap() < 1e-10);
        }
        assert!(tr.to_columns().lines().count() == tr.times.len());
        assert!(tr.to_json().contains("\"sup\""));
    }

    #[test]
    fn budget_and_blowup_are_errors() {
        let s = builtin_klein_gordon();
        let (g, d) = setup(&s, 20.0, 32);
        let u = StateField::from_components(g, vec![vec![Complex64::new(0.1, 0.0); 32]; 3]).unwrap();
        let mut opts = SimOptions::new(10.0);
        opts.dt = Some(0.01);
        opts.step_budget = 10;
        assert!(matches!(
            simulate(&s, &d, &u, &opts),
            Err(Error::StepBudgetExceeded { needed: 1000, budget: 10 })
        ));
        // u_tt = -u + u^2 + u^3 blows up from large constant data
        let big = StateField::from_components(g, vec![vec![Complex64::new(3.0, 0.0); 32], vec![Complex64::new(0.0, 0.0); 32], vec![Complex64::new(0.0, 0.0); 32]]).unwrap();
        let mut opts = SimOptions::new(5.0);
        opts.dt = Some(1e-3);
        assert!(matches!(simulate(&s, &d, &big, &opts), Err(Error::BlowupDetected { .. })));
    }

    #[test]
    fn fourth_order_self_convergence() {
        let s = builtin_klein_gordon();
        let (g, d) = setup(&s, 2.0 * PI * 8.0, 128);
        let k0 = g.wavenumber(8);
        let m = d.branch_at(k0).unwrap();
        let col = m.column(0);
        let comps = (0..3)
            .map(|c| {
                g.points()
                    .iter()
                    .map(|&x| {
                        let z = col[c] * Complex64::from_polar(0.6 * (-(x / 6.0).powi(2)).exp(), k0 * x);
                        Complex64::new(2.0 * z.re, 0.0)
                    })
                    .collect()
            })
            .collect();
        let u = StateField::from_components(g, comps).unwrap();
        let run = |dt: f64| {
            let mut o = SimOptions::new(2.0);
            o.dt = Some(dt);
            o.sample_every = usize::MAX;
            let tr = simulate(&s, &d, &u, &o).unwrap();
            tr.samples.last().unwrap().clone()
        };
        let reference = run(0.1 / 8.0);
        let e1 = sup_distance(&run(0.1), &reference).unwrap();
        let e2 = sup_distance(&run(0.05), &reference).unwrap();
        let ratio = e1 / e2;
        assert!((ratio / 16.0 - 1.0).abs() < 0.2, "ratio {ratio}");
        assert!(reference.imag_sup() < 1e-9 * reference.sup_norm());
    }
}
