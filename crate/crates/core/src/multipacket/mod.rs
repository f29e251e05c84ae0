//! Several packets on different branches with a common carrier wavenumber.
//!
//! Packet `n` travels with its own group velocity `c_n`; collisions shift its carrier
//! phase by `eps Omega_nj` and, at the next order, its envelope by `eps^2 Psi_nj`, both
//! proportional to the running integral of the partner's mass. Everything else that the
//! cubic interaction creates is non-resonant and closed algebraically (`mixed_terms`).

mod assemble;
mod experiment;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dispersion::{derivatives, DispersionData};
use crate::error::{Error, Result};
use crate::grid::{PeriodicGrid, Spectral};
use crate::nls::RESONANCE_TOL;
use crate::system::SystemSpec;

pub use assemble::{assemble_multipacket, Corrections, MultiPacket, Packet, PacketConfig};
pub use experiment::{fit_envelope_constant, interaction_experiment, InteractionReport, InteractionSetup, PacketMeasurement};

/// Which end of the partner's mass the running integral starts from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Anchor {
    /// `int_{-inf}^X`: zero while the packet is left of its partner.
    Left,
    /// `-int_X^{inf}`: zero while the packet is right of its partner.
    Right,
}

/// A prefactor times the running mass integral of one partner envelope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftField {
    pub prefactor: f64,
    pub anchor: Anchor,
    /// `int_{left}^{X} |A_j|^2` by the trapezoid rule, on the partner's frame grid.
    pub kernel: Vec<f64>,
    pub mass: f64,
}

impl ShiftField {
    pub fn values(&self) -> Vec<f64> {
        let off = match self.anchor {
            Anchor::Left => 0.0,
            Anchor::Right => self.mass,
        };
        self.kernel.iter().map(|k| self.prefactor * (k - off)).collect()
    }

    /// Value once the packet has passed its partner completely.
    pub fn total(&self) -> f64 {
        match self.anchor {
            Anchor::Left => self.prefactor * self.mass,
            Anchor::Right => -self.prefactor * self.mass,
        }
    }

    /// Values at frame coordinate `X - shift` for every node `X` of `grid`: the smooth
    /// periodic part is translated spectrally, the linear ramp exactly.
    pub fn translated(&self, grid: &PeriodicGrid, fft: &Spectral, shift: f64) -> Vec<f64> {
        let l = grid.length;
        let ramp = |x: f64| self.mass * (x - grid.origin) / l;
        let periodic: Vec<Complex64> = (0..grid.n)
            .map(|j| Complex64::new(self.kernel[j] - ramp(grid.x(j)), 0.0))
            .collect();
        let moved = fft.translate(grid, &periodic, shift);
        let off = match self.anchor {
            Anchor::Left => 0.0,
            Anchor::Right => self.mass,
        };
        (0..grid.n)
            .map(|j| {
                let z = (grid.x(j) - shift - grid.origin).rem_euclid(l) + grid.origin;
                self.prefactor * (moved[j].re + ramp(z) - off)
            })
            .collect()
    }
}

/// Running trapezoid integral from the left end of the grid.
pub fn cumulative(grid: &PeriodicGrid, f: &[f64]) -> Vec<f64> {
    let dx = grid.dx();
    let mut out = Vec::with_capacity(f.len());
    let mut acc = 0.0;
    for (i, v) in f.iter().enumerate() {
        if i > 0 {
            acc += 0.5 * dx * (f[i - 1] + v);
        }
        out.push(acc);
    }
    out
}

fn check_localized(a: &[Complex64]) -> Result<()> {
    let sup = a.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let boundary = a[0].norm().max(a[a.len() - 1].norm());
    if boundary > 1e-10 * sup {
        return Err(Error::NonLocalizedEnvelope { boundary });
    }
    Ok(())
}

/// `c_n = -omega_n'(k0)` in the frequency convention of the dispersion data.
pub fn group_velocity(data: &DispersionData, n: usize, k0: f64) -> Result<f64> {
    Ok(-derivatives(data, n, k0)?.group_velocity)
}

/// `q_nj = 6 l_n . T3(s_n, s_j, conj s_j)`: the coefficient of `|A_j|^2 A_n` in the equation of packet `n`.
pub fn cross_coefficient(data: &DispersionData, spec: &SystemSpec, n: usize, j: usize, k0: f64) -> Result<Complex64> {
    let m = data.branch_at(k0)?;
    let sj = m.column(j);
    let sjb: Vec<Complex64> = sj.iter().map(|z| z.conj()).collect();
    let t = spec.cubic_form(&m.column(n), &sj, &sjb);
    Ok(m.left(n).iter().zip(&t).map(|(l, v)| l * v).sum::<Complex64>() * 6.0)
}

/// Real phase-shift prefactor `q_nj / (i (c_n - c_j))`.
pub fn phase_prefactor(data: &DispersionData, spec: &SystemSpec, n: usize, j: usize, k0: f64) -> Result<f64> {
    let cn = group_velocity(data, n, k0)?;
    let cj = group_velocity(data, j, k0)?;
    if (cn - cj).abs() <= 1e-3 {
        return Err(Error::EqualGroupVelocities { n, j, velocity: cn });
    }
    let p = cross_coefficient(data, spec, n, j, k0)? / Complex64::new(0.0, cn - cj);
    if p.im.abs() > 1e-8 * p.re.abs().max(1.0) {
        return Err(Error::InvalidSystem(format!(
            "cross coefficient of branches {n},{j} is not a pure phase (residue {:e})",
            p.im
        )));
    }
    Ok(p.re)
}

/// First-order phase shift of packet `n` caused by partner `j` with envelope `a_j` on the slow grid.
#[allow(clippy::too_many_arguments)]
pub fn phase_shift(data: &DispersionData, spec: &SystemSpec, n: usize, j: usize, k0: f64, grid: &PeriodicGrid, a_j: &[Complex64], anchor: Anchor) -> Result<ShiftField> {
    let prefactor = phase_prefactor(data, spec, n, j, k0)?;
    shift_with(prefactor, grid, a_j, anchor)
}

/// How the envelope-shift prefactor `C_nj` is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShiftConstant {
    Off,
    Supplied(f64),
    /// Least squares against the measured displacement of a calibration run.
    Fitted,
}

/// First-order envelope shift `C int |A_j|^2`; the same kernel as the phase shift.
#[allow(clippy::too_many_arguments)]
pub fn envelope_shift(data: &DispersionData, n: usize, j: usize, k0: f64, grid: &PeriodicGrid, a_j: &[Complex64], c: f64, anchor: Anchor) -> Result<ShiftField> {
    if (group_velocity(data, n, k0)? - group_velocity(data, j, k0)?).abs() <= 1e-3 {
        return Err(Error::EqualGroupVelocities {
            n,
            j,
            velocity: group_velocity(data, n, k0)?,
        });
    }
    shift_with(c, grid, a_j, anchor)
}

fn shift_with(prefactor: f64, grid: &PeriodicGrid, a_j: &[Complex64], anchor: Anchor) -> Result<ShiftField> {
    if a_j.len() != grid.n {
        return Err(Error::DimensionMismatch {
            expected: grid.n,
            found: a_j.len(),
        });
    }
    check_localized(a_j)?;
    let dens: Vec<f64> = a_j.iter().map(|z| z.norm_sqr()).collect();
    let kernel = cumulative(grid, &dens);
    let mass = dens.iter().sum::<f64>() * grid.dx();
    Ok(ShiftField {
        prefactor,
        anchor,
        kernel,
        mass,
    })
}

/// `|| (1 + x^2)^{m/2} A ||_{H^s}` with `||f||_{H^s}^2 = sum_{i<=s} ||d^i f||_{L^2}^2`.
pub fn weighted_norm(grid: &PeriodicGrid, a: &[Complex64], s: u32, m: u32) -> Result<f64> {
    if s > 2 {
        return Err(Error::Config(format!("weighted norms are defined for s <= 2, got {s}")));
    }
    let f: Vec<Complex64> = (0..grid.n)
        .map(|j| a[j] * (1.0 + grid.x(j).powi(2)).powf(m as f64 / 2.0))
        .collect();
    let fft = Spectral::new(grid.n);
    let mut total = 0.0;
    for i in 0..=s {
        let d = if i == 0 { f.clone() } else { fft.derivative(grid, &f, i) };
        total += d.iter().map(|z| z.norm_sqr()).sum::<f64>() * grid.dx();
    }
    Ok(total.sqrt())
}

/// One carrier wave of a packet: `(packet index, r = +-1)`.
pub type Wave = (usize, i32);

/// Non-resonant product of two or three waves, closed algebraically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedTerm {
    /// Sorted waves; the field is the product of their envelopes (conjugated for `r = -1`).
    pub waves: Vec<Wave>,
    /// `sum r`: the term oscillates like `e^{i R k0 x}`.
    pub harmonic: i32,
    /// Power of `eps` in front.
    pub order: u32,
    pub vector: Vec<Complex64>,
    /// `(branch, omega_b(R k0) + sum r omega0_j)` of every branch that received a contribution.
    pub divisors: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedTerms {
    pub terms: Vec<MixedTerm>,
}

/// What survives after cancelling `(j, 1)` against `(j, -1)`.
fn reduced(waves: &[Wave]) -> Vec<Wave> {
    let mut rest: Vec<Wave> = waves.to_vec();
    let mut i = 0;
    while i < rest.len() {
        if let Some(p) = rest.iter().position(|w| w.0 == rest[i].0 && w.1 == -rest[i].1) {
            let (a, b) = (i.max(p), i.min(p));
            rest.remove(a);
            rest.remove(b);
            i = 0;
        } else {
            i += 1;
        }
    }
    rest
}

fn multisets(waves: &[Wave], len: usize) -> Vec<Vec<Wave>> {
    fn rec(waves: &[Wave], len: usize, start: usize, cur: &mut Vec<Wave>, out: &mut Vec<Vec<Wave>>) {
        if cur.len() == len {
            out.push(cur.clone());
            return;
        }
        for i in start..waves.len() {
            cur.push(waves[i]);
            rec(waves, len, i, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(waves, len, 0, &mut Vec::new(), &mut out);
    out
}

fn orderings(ms: &[Wave]) -> f64 {
    let fact = |k: usize| (1..=k).product::<usize>() as f64;
    let mut counts = std::collections::BTreeMap::new();
    for w in ms {
        *counts.entry(*w).or_insert(0usize) += 1;
    }
    fact(ms.len()) / counts.values().map(|&c| fact(c)).product::<f64>()
}

/// Every non-resonant product of packet waves. `branches[p]` is the branch of packet `p`.
/// With `cross_only`, products of a single packet's waves (its own harmonics) are left out.
pub fn mixed_terms(data: &DispersionData, spec: &SystemSpec, branches: &[usize], k0: f64, cross_only: bool) -> Result<MixedTerms> {
    let carrier = data.branch_at(k0)?;
    let w0: Vec<f64> = branches.iter().map(|&b| -carrier.omega[b]).collect();
    let vec_of = |(p, r): Wave| -> Vec<Complex64> {
        let s = carrier.column(branches[p]);
        if r > 0 {
            s
        } else {
            s.iter().map(|z| z.conj()).collect()
        }
    };
    let waves: Vec<Wave> = (0..branches.len()).flat_map(|p| [(p, -1), (p, 1)]).collect();
    let mut terms = Vec::new();
    for (len, active) in [(2usize, spec.has_quadratic()), (3, spec.has_cubic())] {
        if !active {
            continue;
        }
        for ms in multisets(&waves, len) {
            if reduced(&ms).len() == 1 || (cross_only && ms.iter().all(|w| w.0 == ms[0].0)) {
                continue;
            }
            let v: Vec<Vec<Complex64>> = ms.iter().map(|&w| vec_of(w)).collect();
            let src = if len == 2 { spec.quad_form(&v[0], &v[1]) } else { spec.cubic_form(&v[0], &v[1], &v[2]) };
            let mult = orderings(&ms);
            let r: i32 = ms.iter().map(|w| w.1).sum();
            let nu: f64 = ms.iter().map(|&(p, s)| s as f64 * w0[p]).sum();
            let out = data.branch_at(r as f64 * k0)?;
            let scale = src.iter().map(|z| z.norm()).fold(0.0, f64::max);
            let mut vector = vec![Complex64::new(0.0, 0.0); spec.dim];
            let mut divisors = Vec::new();
            for b in 0..spec.dim {
                let proj: Complex64 = out.left(b).iter().zip(&src).map(|(l, s)| l * s).sum::<Complex64>() * mult;
                if proj.norm() <= 1e-12 * scale.max(f64::MIN_POSITIVE) * mult {
                    continue;
                }
                let d = out.omega[b] + nu;
                if d.abs() < RESONANCE_TOL {
                    return Err(Error::ResonantDivisor {
                        divisor: d,
                        witness: format!("waves {ms:?} on branch {b}"),
                    });
                }
                let w = proj / Complex64::new(0.0, -d);
                let col = out.column(b);
                for c in 0..spec.dim {
                    vector[c] += col[c] * w;
                }
                divisors.push((b, d));
            }
            if divisors.is_empty() {
                continue;
            }
            terms.push(MixedTerm {
                waves: ms,
                harmonic: r,
                order: len as u32,
                vector,
                divisors,
            });
        }
    }
    Ok(MixedTerms { terms })
}
