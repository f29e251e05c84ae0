//! NLS coefficients, carrier algebra and envelope solvers.
//!
//! Conventions: `theta = k0 x - omega0 t` with `omega0 = -omega_{n0}(k0)`,
//! `c = -omega_{n0}'(k0)` (the packet speed for this sign of the phase),
//! and `A_T = i nu1 A_XX + i nu2 |A|^2 A` with `nu1 = -omega_{n0}''(k0)/2`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dispersion::{derivatives, DispersionData, Modes};
use crate::error::{Error, Result};
use crate::grid::{PeriodicGrid, Spectral};
use crate::system::SystemSpec;

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };
const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// Divisors below this are resonant.
pub const RESONANCE_TOL: f64 = 1e-8;

/// `1 + ||m| - 1|` on the carrier branch, plus `2 delta_{|m|1}` elsewhere.
pub fn exponent_beta(n: usize, m: i32, n0: usize) -> u32 {
    let am = m.unsigned_abs();
    let base = 1 + am.abs_diff(1);
    if n != n0 && am == 1 {
        base + 2
    } else {
        base
    }
}

/// `m* - |m| - 2 delta_{|m|1}`; negative means an empty range.
pub fn j_star(m: i32, m_star: i32) -> i32 {
    let am = m.abs();
    m_star - am - if am == 1 { 2 } else { 0 }
}

/// Carrier data and the algebra of order-by-order matching in the original variables.
#[derive(Debug, Clone)]
pub struct Carrier {
    pub spec: SystemSpec,
    pub n0: usize,
    pub k0: f64,
    pub omega0: f64,
    pub c: f64,
    pub curvature: f64,
    /// `s_{n0}(k0)`.
    pub s: Vec<Complex64>,
    /// `l_{n0}(k0)`.
    pub l: Vec<Complex64>,
    harmonics: Vec<Modes>,
}

impl Carrier {
    /// Harmonics `m = 0..=max_m` are diagonalized at `m k0`.
    pub fn new(spec: &SystemSpec, data: &DispersionData, n0: usize, k0: f64, max_m: usize) -> Result<Self> {
        if n0 >= spec.dim {
            return Err(Error::DimensionMismatch {
                expected: spec.dim,
                found: n0 + 1,
            });
        }
        let d = derivatives(data, n0, k0).map_err(|e| match e {
            Error::OutOfGrid { .. } => Error::MissingDerivatives(format!("k0 = {k0} not interior to the grid: {e}")),
            other => other,
        })?;
        let harmonics = (0..=max_m.max(1))
            .map(|m| data.modes_at(m as f64 * k0))
            .collect::<Result<Vec<_>>>()?;
        let m1 = &harmonics[1];
        Ok(Self {
            spec: spec.clone(),
            n0,
            k0,
            omega0: -m1.omega[n0],
            c: -d.group_velocity,
            curvature: d.curvature,
            s: m1.column(n0),
            l: m1.left(n0),
            harmonics,
        })
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    pub fn modes(&self, m: usize) -> &Modes {
        &self.harmonics[m]
    }

    pub fn max_harmonic(&self) -> usize {
        self.harmonics.len() - 1
    }

    /// `omega_n(m k0) - m omega_{n0}(k0)`.
    pub fn divisor(&self, n: usize, m: usize) -> f64 {
        self.harmonics[m].omega[n] + m as f64 * self.omega0
    }

    pub fn t2(&self, x: &[Complex64], y: &[Complex64]) -> Vec<Complex64> {
        self.spec.quad_form(x, y)
    }

    pub fn t3(&self, x: &[Complex64], y: &[Complex64], z: &[Complex64]) -> Vec<Complex64> {
        self.spec.cubic_form(x, y, z)
    }

    /// `(A - c) v`.
    pub fn a_minus_c(&self, v: &[Complex64]) -> Vec<Complex64> {
        let n = self.dim();
        (0..n)
            .map(|r| (0..n).map(|q| v[q] * self.spec.a_entry(r, q)).sum::<Complex64>() - v[r] * self.c)
            .collect()
    }

    /// Solve `L_m W = F` on the complement of the carrier, `L_m = M(m k0) - i m omega0`.
    ///
    /// Resonant branches are skipped when `F` has no component on them.
    pub fn pseudo_inverse(&self, m: usize, f: &[Complex64]) -> Result<Vec<Complex64>> {
        self.pseudo_inverse_field(m, &f.iter().map(|&z| vec![z]).collect::<Vec<_>>())
            .map(|w| w.into_iter().map(|c| c[0]).collect())
    }

    /// Pointwise [`Self::pseudo_inverse`] on fields `f[component][point]`.
    pub fn pseudo_inverse_field(&self, m: usize, f: &[Vec<Complex64>]) -> Result<Vec<Vec<Complex64>>> {
        let n = self.dim();
        let npts = f.first().map_or(0, Vec::len);
        let mut out = vec![vec![ZERO; npts]; n];
        let scale = f.iter().flatten().map(|z| z.norm()).fold(0.0, f64::max);
        if scale == 0.0 {
            return Ok(out);
        }
        let modes = &self.harmonics[m];
        for b in 0..n {
            if m == 1 && b == self.n0 {
                continue;
            }
            let left = modes.left(b);
            let proj: Vec<Complex64> = (0..npts)
                .map(|p| (0..n).map(|j| left[j] * f[j][p]).sum())
                .collect();
            let pmax = proj.iter().map(|z| z.norm()).fold(0.0, f64::max);
            let d = self.divisor(b, m);
            if d.abs() < RESONANCE_TOL {
                if pmax <= 1e-12 * scale {
                    continue;
                }
                return Err(Error::ResonantDivisor {
                    divisor: d,
                    witness: format!("branch {b}, harmonic {m}, k = {}", m as f64 * self.k0),
                });
            }
            let inv = 1.0 / (-I * d);
            let col = modes.column(b);
            for (p, &z) in proj.iter().enumerate() {
                let w = z * inv;
                for j in 0..n {
                    out[j][p] += col[j] * w;
                }
            }
        }
        Ok(out)
    }

    pub fn project(&self, n: usize, m: usize, f: &[Complex64]) -> Complex64 {
        let left = self.harmonics[m].left(n);
        left.iter().zip(f).map(|(a, b)| a * b).sum()
    }
}

/// One eliminated harmonic coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Elimination {
    pub harmonic: usize,
    pub branch: usize,
    pub divisor: f64,
    /// `l_n(m k0) . F` for the quadratic source of that harmonic.
    pub projection: Complex64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveRecord {
    pub eliminations: Vec<Elimination>,
    /// Contributions to `i nu2`: direct cubic, through `m = 2`, through `m = 0`.
    pub direct: Complex64,
    pub via_second_harmonic: Complex64,
    pub via_mean: Complex64,
    /// `l (A - c) P_1 (A - c) s`, which must equal `i nu1`.
    pub nu1_projection: Complex64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NlsParams {
    pub n0: usize,
    pub k0: f64,
    pub omega0: f64,
    pub c: f64,
    pub nu1: Complex64,
    pub nu2: Complex64,
}

impl NlsParams {
    /// Purely linear Schroedinger flow with the same dispersion.
    pub fn linear(&self) -> NlsParams {
        NlsParams {
            nu2: ZERO,
            ..*self
        }
    }
}

/// `nu1`, `nu2` for the carrier `(n0, k0)`; `m_star` bounds the harmonics that are eliminated.
pub fn derive_nls_params(spec: &SystemSpec, data: &DispersionData, n0: usize, k0: f64, m_star: usize) -> Result<(NlsParams, SolveRecord)> {
    let car = Carrier::new(spec, data, n0, k0, m_star.max(2))?;
    derive_from_carrier(&car)
}

pub fn derive_from_carrier(car: &Carrier) -> Result<(NlsParams, SolveRecord)> {
    let s = &car.s;
    let sb: Vec<Complex64> = s.iter().map(|z| z.conj()).collect();
    let n = car.dim();
    let mut eliminations = Vec::new();

    let f2 = car.t2(s, s);
    let f0: Vec<Complex64> = car.t2(s, &sb).iter().map(|z| z * 2.0).collect();
    for (m, f) in [(2usize, &f2), (0usize, &f0)] {
        for b in 0..n {
            let projection = car.project(b, m, f);
            if projection.norm() > 0.0 {
                eliminations.push(Elimination {
                    harmonic: m,
                    branch: b,
                    divisor: car.divisor(b, m),
                    projection,
                });
            }
        }
    }
    let q2 = car.pseudo_inverse(2, &f2)?;
    let q0 = car.pseudo_inverse(0, &f0)?;
    let dot = |v: &[Complex64]| -> Complex64 { car.l.iter().zip(v).map(|(a, b)| a * b).sum() };
    let direct = dot(&car.t3(s, s, &sb)) * 3.0;
    let via_second_harmonic = dot(&car.t2(&sb, &q2)) * 2.0;
    let via_mean = dot(&car.t2(s, &q0)) * 2.0;
    let inu2 = direct + via_second_harmonic + via_mean;
    let nu2 = -I * inu2;
    if nu2.im.abs() > 1e-8 * nu2.norm().max(1.0) {
        return Err(Error::InvalidSystem(format!(
            "effective cubic coefficient is not real: nu2 = {nu2}"
        )));
    }
    let nu1_projection = dot(&car.a_minus_c(&car.pseudo_inverse(1, &car.a_minus_c(s))?));
    let params = NlsParams {
        n0: car.n0,
        k0: car.k0,
        omega0: car.omega0,
        c: car.c,
        nu1: Complex64::new(-0.5 * car.curvature, 0.0),
        nu2,
    };
    Ok((
        params,
        SolveRecord {
            eliminations,
            direct,
            via_second_harmonic,
            via_mean,
            nu1_projection,
        },
    ))
}

/// Envelope samples with time derivatives for cubic Hermite interpolation in `T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeTrajectory {
    pub grid: PeriodicGrid,
    pub times: Vec<f64>,
    pub samples: Vec<Vec<Complex64>>,
    pub rates: Vec<Vec<Complex64>>,
    pub mass: Vec<f64>,
}

pub fn mass(grid: &PeriodicGrid, a: &[Complex64]) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>() * grid.dx()
}

impl EnvelopeTrajectory {
    pub fn t_max(&self) -> f64 {
        *self.times.last().expect("trajectory has samples")
    }

    /// Largest relative mass change over the run.
    pub fn mass_drift(&self) -> f64 {
        let m0 = self.mass[0];
        self.mass
            .iter()
            .map(|m| (m - m0).abs() / m0.max(f64::MIN_POSITIVE))
            .fold(0.0, f64::max)
    }

    /// Envelope at time `t`, cubic Hermite between samples.
    pub fn at(&self, t: f64) -> Result<Vec<Complex64>> {
        let t_max = self.t_max();
        let tol = 1e-12 * t_max.max(1.0);
        if !(t >= -tol && t <= t_max + tol) {
            return Err(Error::TimeOutOfRange { t, t_max });
        }
        if self.times.len() == 1 {
            return Ok(self.samples[0].clone());
        }
        let t = t.clamp(0.0, t_max);
        let i = self.times.partition_point(|&s| s <= t).clamp(1, self.times.len() - 1) - 1;
        let (t0, t1) = (self.times[i], self.times[i + 1]);
        let h = t1 - t0;
        let u = (t - t0) / h;
        let h00 = (1.0 + 2.0 * u) * (1.0 - u) * (1.0 - u);
        let h10 = u * (1.0 - u) * (1.0 - u);
        let h01 = u * u * (3.0 - 2.0 * u);
        let h11 = u * u * (u - 1.0);
        Ok((0..self.grid.n)
            .map(|j| {
                self.samples[i][j] * h00
                    + self.rates[i][j] * (h10 * h)
                    + self.samples[i + 1][j] * h01
                    + self.rates[i + 1][j] * (h11 * h)
            })
            .collect())
    }
}

fn nls_rhs(fft: &Spectral, grid: &PeriodicGrid, p: &NlsParams, a: &[Complex64]) -> Vec<Complex64> {
    let axx = fft.derivative(grid, a, 2);
    a.iter()
        .zip(&axx)
        .map(|(&z, &d)| I * p.nu1.re * d + I * p.nu2.re * z.norm_sqr() * z)
        .collect()
}

struct SplitStep {
    fft: Spectral,
    nu2: f64,
    lin: Vec<Complex64>,
}

impl SplitStep {
    fn new(grid: &PeriodicGrid, p: &NlsParams, dt: f64) -> Self {
        let lin = (0..grid.n)
            .map(|i| {
                if i == grid.nyquist_slot() {
                    return Complex64::new(1.0, 0.0);
                }
                let k = grid.wavenumber(i);
                Complex64::from_polar(1.0, -p.nu1.re * k * k * dt)
            })
            .collect();
        Self {
            fft: Spectral::new(grid.n),
            nu2: p.nu2.re,
            lin,
        }
    }

    fn half_nonlinear(&self, a: &mut [Complex64], dt: f64) {
        if self.nu2 != 0.0 {
            for z in a.iter_mut() {
                *z *= Complex64::from_polar(1.0, self.nu2 * z.norm_sqr() * 0.5 * dt);
            }
        }
    }

    fn linear(&self, a: &mut [Complex64]) {
        self.fft.forward(a);
        for (z, e) in a.iter_mut().zip(&self.lin) {
            *z *= e;
        }
        self.fft.inverse(a);
    }

    fn step(&self, a: &mut [Complex64], dt: f64) {
        self.half_nonlinear(a, dt);
        self.linear(a);
        self.half_nonlinear(a, dt);
    }
}

fn sup_diff(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

/// Strang split-step for `A_T = i nu1 A_XX + i nu2 |A|^2 A`.
pub fn solve_nls(params: &NlsParams, grid: &PeriodicGrid, a0: &[Complex64], t_end: f64, dt: f64, sample_every: usize) -> Result<EnvelopeTrajectory> {
    if a0.len() != grid.n {
        return Err(Error::DimensionMismatch {
            expected: grid.n,
            found: a0.len(),
        });
    }
    if !(dt > 0.0 && t_end >= 0.0) {
        return Err(Error::Config(format!("need dT > 0 and T_end >= 0, got {dt}, {t_end}")));
    }
    let steps = (t_end / dt).ceil() as usize;
    let h = if steps == 0 { dt } else { t_end / steps as f64 };
    let full = SplitStep::new(grid, params, h);

    // self-test: a few steps at h against h/2
    let probe = steps.min(8);
    if probe > 0 {
        let half = SplitStep::new(grid, params, 0.5 * h);
        let mut x = a0.to_vec();
        let mut y = a0.to_vec();
        for _ in 0..probe {
            full.step(&mut x, h);
            half.step(&mut y, 0.5 * h);
            half.step(&mut y, 0.5 * h);
        }
        let sup = a0.iter().map(|z| z.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        let rel = sup_diff(&x, &y) / sup;
        if rel > 1e-4 {
            return Err(Error::StepTooLarge { rel });
        }
    }

    let every = sample_every.max(1);
    let mut a = a0.to_vec();
    let mut traj = EnvelopeTrajectory {
        grid: *grid,
        times: vec![0.0],
        samples: vec![a.clone()],
        rates: vec![nls_rhs(&full.fft, grid, params, &a)],
        mass: vec![mass(grid, &a)],
    };
    for i in 1..=steps {
        full.step(&mut a, h);
        if i % every == 0 || i == steps {
            traj.times.push(i as f64 * h);
            traj.rates.push(nls_rhs(&full.fft, grid, params, &a));
            traj.mass.push(mass(grid, &a));
            traj.samples.push(a.clone());
        }
    }
    Ok(traj)
}

/// `B_T = i nu1 B_XX + f(X, T)` with the source frozen over each step
/// (`B <- e^{L dT} (B + dT f(T_n))`); sources must be sampled at every step.
pub fn solve_linear_correction(params: &NlsParams, source: &EnvelopeTrajectory, b0: &[Complex64], dt: f64) -> Result<EnvelopeTrajectory> {
    let grid = source.grid;
    if b0.len() != grid.n {
        return Err(Error::DimensionMismatch {
            expected: grid.n,
            found: b0.len(),
        });
    }
    for (i, &t) in source.times.iter().enumerate() {
        if (t - i as f64 * dt).abs() > 1e-9 * dt.max(t) {
            return Err(Error::SampleMismatch(format!(
                "source sample {i} at T = {t}, expected {}",
                i as f64 * dt
            )));
        }
    }
    let lin = SplitStep::new(&grid, &params.linear(), dt);
    let rhs = |b: &[Complex64], f: &[Complex64]| -> Vec<Complex64> {
        let bxx = lin.fft.derivative(&grid, b, 2);
        bxx.iter().zip(f).map(|(d, s)| I * params.nu1.re * d + s).collect()
    };
    let mut b = b0.to_vec();
    let mut traj = EnvelopeTrajectory {
        grid,
        times: vec![0.0],
        samples: vec![b.clone()],
        rates: vec![rhs(&b, &source.samples[0])],
        mass: vec![mass(&grid, &b)],
    };
    for i in 1..source.times.len() {
        let f = &source.samples[i - 1];
        for (z, s) in b.iter_mut().zip(f) {
            *z += s * dt;
        }
        lin.linear(&mut b);
        traj.times.push(source.times[i]);
        traj.rates.push(rhs(&b, &source.samples[i]));
        traj.mass.push(mass(&grid, &b));
        traj.samples.push(b.clone());
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dispersion::{audit_grid, eigendecompose, BranchPolicy};
    use crate::system::{builtin_example2, builtin_klein_gordon, without_nonlinearity};
    use std::f64::consts::PI;

    fn params(nu1: f64, nu2: f64) -> NlsParams {
        NlsParams {
            n0: 0,
            k0: 1.0,
            omega0: 1.0,
            c: 0.0,
            nu1: Complex64::new(nu1, 0.0),
            nu2: Complex64::new(nu2, 0.0),
        }
    }

    fn slow_grid(l: f64, n: usize) -> PeriodicGrid {
        PeriodicGrid::centered(l, n).unwrap()
    }

    #[test]
    fn exponent_tables() {
        assert_eq!(exponent_beta(0, 1, 0), 1);
        assert_eq!(exponent_beta(0, -1, 0), 1);
        assert_eq!(exponent_beta(1, 1, 0), 3);
        assert_eq!(exponent_beta(0, 0, 0), 2);
        assert_eq!(exponent_beta(0, 2, 0), 2);
        assert_eq!(exponent_beta(2, 3, 0), 3);
        let ms = 5;
        assert_eq!(j_star(1, ms), ms - 3);
        assert_eq!(j_star(2, ms), ms - 2);
        assert_eq!(j_star(-1, 1), -2);
        for n in 0..3 {
            for m in -3..=3 {
                assert!(exponent_beta(n, m, 0) >= 1);
            }
        }
    }

    fn kg_data(k0: f64) -> (SystemSpec, DispersionData) {
        let kg = builtin_klein_gordon();
        let d = eigendecompose(&kg, &audit_grid(k0, 12.0, 1e-2), BranchPolicy::for_carrier(k0)).unwrap();
        (kg, d)
    }

    #[test]
    fn klein_gordon_coefficients_match_closed_form() {
        for k0 in [1.0, 3f64.sqrt()] {
            let (kg, d) = kg_data(k0);
            let (p, rec) = derive_nls_params(&kg, &d, 0, k0, 3).unwrap();
            let w0 = (1.0 + k0 * k0).sqrt();
            assert!((p.omega0 - w0).abs() < 1e-12);
            assert!((p.c - k0 / w0).abs() < 1e-8);
            assert!((p.nu1.re - 0.5 / w0.powi(3)).abs() < 1e-7);
            assert!((p.nu2.re - 19.0 / (12.0 * w0.powi(3))).abs() < 1e-10, "{}", p.nu2);
            assert!(p.nu2.im.abs() < 1e-8);
            // the projection route to nu1 agrees with the curvature route
            assert!((rec.nu1_projection - I * p.nu1).norm() < 1e-7);
            assert!(rec.eliminations.iter().any(|e| e.harmonic == 2 && e.branch == 0));
        }
    }

    #[test]
    fn cubic_only_coefficient_is_direct_term() {
        let s = builtin_example2(0.0, 1.0);
        let d = eigendecompose(&s, &audit_grid(1.0, 8.0, 1e-3), BranchPolicy::for_carrier(1.0)).unwrap();
        let (p, rec) = derive_nls_params(&s, &d, 0, 1.0, 3).unwrap();
        assert_eq!(rec.via_mean, ZERO);
        assert_eq!(rec.via_second_harmonic, ZERO);
        assert!((p.nu2 - (-I * rec.direct)).norm() < 1e-15);
        // |U|^2 E U on the branch omega = -sqrt(2): nu2 = 2 / sqrt(1 + k0^2)
        assert!((p.nu2.re - 2.0 / 2f64.sqrt()).abs() < 1e-12);
        let lin = without_nonlinearity(&s);
        let (p, _) = derive_nls_params(&lin, &d, 0, 1.0, 3).unwrap();
        assert_eq!(p.nu2, ZERO);
        assert!((p.nu1.re - 0.5 / 2f64.powf(1.5)).abs() < 1e-7);
    }

    #[test]
    fn example2_with_quadratic_terms_is_real() {
        let s = builtin_example2(1.0, 1.0);
        let d = eigendecompose(&s, &audit_grid(1.0, 8.0, 1e-3), BranchPolicy::for_carrier(1.0)).unwrap();
        let (p, _) = derive_nls_params(&s, &d, 0, 1.0, 3).unwrap();
        assert!(p.nu2.im.abs() < 1e-8);
    }

    #[test]
    fn constant_amplitude_solution() {
        let p = params(0.7, 1.3);
        let g = slow_grid(20.0, 64);
        let a = Complex64::new(0.8, 0.1);
        let tr = solve_nls(&p, &g, &vec![a; 64], 1.0, 1e-3, 100).unwrap();
        let exact = a * Complex64::from_polar(1.0, 1.3 * a.norm_sqr());
        let last = tr.samples.last().unwrap();
        assert!(last.iter().all(|z| (z - exact).norm() < 1e-8));
        assert!(tr.mass_drift() < 1e-10);
    }

    #[test]
    fn free_gaussian_spreads_per_closed_form() {
        let nu1 = 0.5;
        let p = params(nu1, 0.0);
        let g = slow_grid(80.0, 512);
        let sigma: f64 = 1.5;
        let a0: Vec<Complex64> = g.points().iter().map(|&x| Complex64::new((-x * x / (2.0 * sigma * sigma)).exp(), 0.0)).collect();
        let t = 1.0;
        let tr = solve_nls(&p, &g, &a0, t, 1e-2, 1000).unwrap();
        let q = Complex64::new(sigma * sigma, 2.0 * nu1 * t);
        for (j, z) in tr.samples.last().unwrap().iter().enumerate() {
            let x = g.x(j);
            let exact = (Complex64::new(sigma * sigma, 0.0) / q).sqrt() * (-(x * x) / (2.0 * q)).exp();
            assert!((z - exact).norm() < 1e-6);
        }
    }

    #[test]
    fn soliton_keeps_its_shape() {
        let (nu1, nu2) = (0.5, 1.0);
        let w: f64 = 1.0;
        let amp = (2.0 * nu1 / (nu2 * w * w)).sqrt();
        let lam = nu1 / (w * w);
        let p = params(nu1, nu2);
        let g = slow_grid(60.0, 512);
        let a0: Vec<Complex64> = g.points().iter().map(|&x| Complex64::new(amp / (x / w).cosh(), 0.0)).collect();
        let tr = solve_nls(&p, &g, &a0, 1.0, 1e-3, 1000).unwrap();
        let rot = Complex64::from_polar(1.0, lam);
        let err = sup_diff(tr.samples.last().unwrap(), &a0.iter().map(|z| z * rot).collect::<Vec<_>>());
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn split_step_is_second_order() {
        let p = params(0.5, 1.0);
        let g = slow_grid(40.0, 256);
        let a0: Vec<Complex64> = g.points().iter().map(|&x| Complex64::new(1.2 * (-x * x / 4.0).exp(), 0.0)).collect();
        let run = |dt: f64| solve_nls(&p, &g, &a0, 1.0, dt, usize::MAX).unwrap().samples.last().unwrap().clone();
        let r = run(1e-3 / 8.0);
        let e1 = sup_diff(&run(1e-2), &r);
        let e2 = sup_diff(&run(5e-3), &r);
        let slope = (e1 / e2).log2();
        assert!((slope - 2.0).abs() < 0.2, "{slope}");
    }

    #[test]
    fn too_large_step_is_rejected() {
        let p = params(0.5, 50.0);
        let g = slow_grid(10.0, 64);
        let a0: Vec<Complex64> = g.points().iter().map(|&x| Complex64::new(2.0 * (-x * x).exp(), 0.0)).collect();
        assert!(matches!(solve_nls(&p, &g, &a0, 1.0, 0.1, 1), Err(Error::StepTooLarge { .. })));
    }

    #[test]
    fn hermite_interpolation_is_accurate() {
        let p = params(0.0, 1.0);
        let g = slow_grid(10.0, 16);
        let a = Complex64::new(1.0, 0.0);
        let tr = solve_nls(&p, &g, &vec![a; 16], 1.0, 1e-3, 50).unwrap();
        let v = tr.at(0.333).unwrap();
        assert!((v[0] - Complex64::from_polar(1.0, 0.333)).norm() < 1e-7);
        assert!(matches!(tr.at(1.5), Err(Error::TimeOutOfRange { .. })));
    }

    fn source_traj(g: &PeriodicGrid, dt: f64, steps: usize, f: impl Fn(f64, f64) -> Complex64) -> EnvelopeTrajectory {
        let times: Vec<f64> = (0..=steps).map(|i| i as f64 * dt).collect();
        let samples: Vec<Vec<Complex64>> = times.iter().map(|&t| g.points().iter().map(|&x| f(x, t)).collect()).collect();
        EnvelopeTrajectory {
            grid: *g,
            rates: samples.iter().map(|s| vec![ZERO; s.len()]).collect(),
            mass: vec![0.0; times.len()],
            times,
            samples,
        }
    }

    #[test]
    fn linear_correction_cases() {
        let p = params(0.5, 0.0);
        let g = slow_grid(2.0 * PI * 4.0, 64);
        let zero = source_traj(&g, 0.01, 100, |_, _| ZERO);
        let out = solve_linear_correction(&p, &zero, &vec![ZERO; 64], 0.01).unwrap();
        assert!(out.samples.iter().flatten().all(|z| z.norm() == 0.0));

        let b0: Vec<Complex64> = g.points().iter().map(|&x| Complex64::new((-x * x / 4.0).exp(), 0.0)).collect();
        let hom = solve_linear_correction(&p, &zero, &b0, 0.01).unwrap();
        let reference = solve_nls(&p, &g, &b0, 1.0, 0.01, 1).unwrap();
        assert!(sup_diff(hom.samples.last().unwrap(), reference.samples.last().unwrap()) < 1e-12);

        // B = T cos(X/4): source g - i nu1 T g''
        let err = |dt: f64| {
            let steps = (1.0 / dt).round() as usize;
            let src = source_traj(&g, dt, steps, |x, t| {
                let gx = (x / 4.0).cos();
                Complex64::new(gx, 0.0) + I * (0.5 * t / 16.0) * gx
            });
            let out = solve_linear_correction(&p, &src, &vec![ZERO; 64], dt).unwrap();
            let last = out.samples.last().unwrap();
            g.points().iter().zip(last).map(|(&x, z)| (z - (x / 4.0).cos()).norm()).fold(0.0, f64::max)
        };
        let ratio = err(0.02) / err(0.01);
        assert!((ratio - 2.0).abs() < 0.2, "{ratio}");

        let bad = source_traj(&g, 0.02, 10, |_, _| ZERO);
        assert!(matches!(
            solve_linear_correction(&p, &bad, &vec![ZERO; 64], 0.01),
            Err(Error::SampleMismatch(_))
        ));
    }

    #[test]
    fn pseudo_inverse_inverts_off_carrier() {
        let (kg, d) = kg_data(3f64.sqrt());
        let car = Carrier::new(&kg, &d, 0, 3f64.sqrt(), 3).unwrap();
        assert!((car.divisor(0, 2).abs() - (13f64.sqrt() - 4.0).abs()).abs() < 1e-10);
        let f = car.t2(&car.s, &car.s);
        let w = car.pseudo_inverse(2, &f).unwrap();
        // L_2 w = f, L_m = M(m k0) - i m omega0
        let k = 2.0 * car.k0;
        let n = 3;
        for r in 0..n {
            let mut acc = -I * 2.0 * car.omega0 * w[r];
            for q in 0..n {
                acc += Complex64::new(kg.e_entry(r, q), k * kg.a_entry(r, q)) * w[q];
            }
            assert!((acc - f[r]).norm() < 1e-12);
        }
    }
}
