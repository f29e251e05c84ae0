//! Single-packet expansion, its assembly on the physical grid and its residual.
//!
//! The expansion is built in the original variables `U`: each term is a constant
//! polarization vector times a scalar envelope expression in `A = A_{n0,1,0}`,
//!
//! ```text
//! U = eps W10 e^{i theta} + eps^2 (W11 e^{i theta} + W20 e^{2 i theta}) + eps^3 (...) + c.c.
//!     + eps^2 W00 + eps^3 W01
//! ```
//!
//! evaluated at `X = eps (x - c t)`, `T = eps^2 t`. Projecting a term on `l_n(m k0)`
//! gives the branch amplitude of harmonic `m` on branch `n`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dispersion::{carrier_dispersion, DispersionData};
use crate::error::{Error, Result};
use crate::grid::{PeriodicGrid, Spectral, StateField};
use crate::nls::{derive_from_carrier, exponent_beta, j_star, solve_nls, Carrier, EnvelopeTrajectory, NlsParams, SolveRecord};
use crate::system::{evaluate_nonlinearity, SystemSpec};

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// Depth of the expansion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnsatzLevel {
    /// `eps s A e^{i theta} + c.c.` only.
    Carrier,
    /// Every term through `eps^3` that the NLS solvability closes: residual `O(eps^3)`.
    Leading,
    /// Adds the `eps^3` second-harmonic and mean corrections: residual `O(eps^4)`.
    FirstCorrection,
}

impl AnsatzLevel {
    /// Harmonic cutoff `m*` reported for this level.
    pub fn m_star(self) -> i32 {
        match self {
            AnsatzLevel::Carrier => 1,
            AnsatzLevel::Leading => 3,
            AnsatzLevel::FirstCorrection => 4,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "carrier" => Ok(AnsatzLevel::Carrier),
            "leading" => Ok(AnsatzLevel::Leading),
            "first-correction" => Ok(AnsatzLevel::FirstCorrection),
            _ => Err(Error::Config(format!("unknown ansatz level '{s}'"))),
        }
    }
}

/// Scalar envelope expression multiplying a polarization vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
enum Shape {
    A,
    Ax,
    Axx,
    A2,
    AbsA2,
    A3,
    AbsA2A,
    AAx,
    AConjAx,
    ConjAAx,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Piece {
    harmonic: usize,
    order: u32,
    shape: Shape,
    vector: Vec<Complex64>,
}

fn scale(v: &[Complex64], f: f64) -> Vec<Complex64> {
    v.iter().map(|z| z * f).collect()
}

fn add(a: &[Complex64], b: &[Complex64]) -> Vec<Complex64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn conj(v: &[Complex64]) -> Vec<Complex64> {
    v.iter().map(|z| z.conj()).collect()
}

/// Polarization vectors of every term of the given level.
fn pieces(car: &Carrier, level: AnsatzLevel) -> Result<Vec<Piece>> {
    let s = &car.s;
    let sb = conj(s);
    let mut out = vec![Piece {
        harmonic: 1,
        order: 1,
        shape: Shape::A,
        vector: s.clone(),
    }];
    if level == AnsatzLevel::Carrier {
        return Ok(out);
    }
    let p11 = car.pseudo_inverse(1, &car.a_minus_c(s))?;
    let q2 = car.pseudo_inverse(2, &car.t2(s, s))?;
    let q0 = car.pseudo_inverse(0, &scale(&car.t2(s, &sb), 2.0))?;
    let q3 = car.pseudo_inverse(3, &add(&car.t3(s, s, s), &scale(&car.t2(s, &q2), 2.0)))?;
    let g3 = add(
        &add(&scale(&car.t3(s, s, &sb), 3.0), &scale(&car.t2(&sb, &q2), 2.0)),
        &scale(&car.t2(s, &q0), 2.0),
    );
    let r12a = car.pseudo_inverse(1, &g3)?;
    let r12b = car.pseudo_inverse(1, &car.a_minus_c(&p11))?;
    out.extend([
        Piece { harmonic: 1, order: 2, shape: Shape::Ax, vector: scale(&p11, -1.0) },
        Piece { harmonic: 2, order: 2, shape: Shape::A2, vector: q2.clone() },
        Piece { harmonic: 0, order: 2, shape: Shape::AbsA2, vector: q0.clone() },
        Piece { harmonic: 3, order: 3, shape: Shape::A3, vector: q3 },
        Piece { harmonic: 1, order: 3, shape: Shape::AbsA2A, vector: r12a },
        Piece { harmonic: 1, order: 3, shape: Shape::Axx, vector: r12b },
    ]);
    if level == AnsatzLevel::Leading {
        return Ok(out);
    }
    // W21 = P2[2 T2(s A, W11) - (A - c) d_X W20]
    let w21 = add(
        &scale(&car.pseudo_inverse(2, &car.t2(s, &p11))?, -2.0),
        &scale(&car.pseudo_inverse(2, &car.a_minus_c(&q2))?, -2.0),
    );
    // W01 = P0[2 T2(s A, conj W11) + 2 T2(conj(s A), W11) - (A - c) d_X W00]
    let mean_flux = car.pseudo_inverse(0, &car.a_minus_c(&q0))?;
    let v1 = add(&scale(&car.pseudo_inverse(0, &car.t2(s, &conj(&p11)))?, -2.0), &scale(&mean_flux, -1.0));
    let v2 = add(&scale(&car.pseudo_inverse(0, &car.t2(&sb, &p11))?, -2.0), &scale(&mean_flux, -1.0));
    out.extend([
        Piece { harmonic: 2, order: 3, shape: Shape::AAx, vector: w21 },
        Piece { harmonic: 0, order: 3, shape: Shape::AConjAx, vector: v1 },
        Piece { harmonic: 0, order: 3, shape: Shape::ConjAAx, vector: v2 },
    ]);
    Ok(out)
}

/// Scalar fields of one envelope snapshot.
pub(crate) struct Shapes {
    pub(crate) a: Vec<Complex64>,
    pub(crate) ax: Vec<Complex64>,
    pub(crate) axx: Vec<Complex64>,
}

impl Shapes {
    pub(crate) fn new(fft: &Spectral, grid: &PeriodicGrid, a: Vec<Complex64>) -> Self {
        let ax = fft.derivative(grid, &a, 1);
        let axx = fft.derivative(grid, &a, 2);
        Self { a, ax, axx }
    }

    /// Envelope evaluated at `X + d(X)` to first order in `d`.
    pub(crate) fn displaced(&self, d: &[f64]) -> Shapes {
        let n = self.a.len();
        Shapes {
            a: (0..n).map(|j| self.a[j] + self.ax[j] * d[j]).collect(),
            ax: (0..n).map(|j| self.ax[j] + self.axx[j] * d[j]).collect(),
            axx: self.axx.clone(),
        }
    }

    fn eval(&self, shape: Shape, j: usize) -> Complex64 {
        let (a, ax, axx) = (self.a[j], self.ax[j], self.axx[j]);
        match shape {
            Shape::A => a,
            Shape::Ax => ax,
            Shape::Axx => axx,
            Shape::A2 => a * a,
            Shape::AbsA2 => Complex64::new(a.norm_sqr(), 0.0),
            Shape::A3 => a * a * a,
            Shape::AbsA2A => a * a.norm_sqr(),
            Shape::AAx => a * ax,
            Shape::AConjAx => a * ax.conj(),
            Shape::ConjAAx => a.conj() * ax,
        }
    }
}

/// Branch amplitude of one harmonic: `l_n(m k0) . W` at a given order of `eps`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchEnvelope {
    pub n: usize,
    pub m: usize,
    pub order: u32,
    pub values: Vec<Complex64>,
}

#[derive(Debug, Clone)]
pub struct AnsatzExpansion {
    pub carrier: Carrier,
    pub params: NlsParams,
    pub record: SolveRecord,
    pub level: AnsatzLevel,
    pub eps: f64,
    /// `A_{n0,1,0}` on the slow grid.
    pub envelope: EnvelopeTrajectory,
    pieces: Vec<Piece>,
    fft: Spectral,
}

impl AnsatzExpansion {
    pub fn new(carrier: Carrier, level: AnsatzLevel, eps: f64, envelope: EnvelopeTrajectory) -> Result<Self> {
        let (params, record) = derive_from_carrier(&carrier)?;
        let pieces = pieces(&carrier, level)?;
        Ok(Self {
            fft: Spectral::new(envelope.grid.n),
            carrier,
            params,
            record,
            level,
            eps,
            envelope,
            pieces,
        })
    }

    /// Derive the coefficients, solve the NLS to `T0` and build the expansion.
    #[allow(clippy::too_many_arguments)]
    pub fn build(spec: &SystemSpec, data: &DispersionData, n0: usize, k0: f64, level: AnsatzLevel, eps: f64, slow: &PeriodicGrid, a0: &[Complex64], t0: f64, dt: f64) -> Result<Self> {
        let carrier = Carrier::new(spec, data, n0, k0, 3)?;
        let (params, _) = derive_from_carrier(&carrier)?;
        let every = ((1e-3 / dt).round() as usize).max(1);
        let env = solve_nls(&params, slow, a0, t0, dt, every)?;
        Self::new(carrier, level, eps, env)
    }

    /// `beta_n(m)` for `m = -m*..=m*`, one row per branch.
    pub fn beta_table(&self) -> Vec<Vec<u32>> {
        let ms = self.level.m_star();
        (0..self.carrier.dim())
            .map(|n| (-ms..=ms).map(|m| exponent_beta(n, m, self.carrier.n0)).collect())
            .collect()
    }

    /// `j*(m)` for `m = -m*..=m*`.
    pub fn j_table(&self) -> Vec<i32> {
        let ms = self.level.m_star();
        (-ms..=ms).map(|m| j_star(m, ms)).collect()
    }

    pub(crate) fn shapes_at(&self, t: f64) -> Result<Shapes> {
        let tt = self.eps * self.eps * t;
        let a = self.envelope.at(tt)?;
        let shift = self.eps * self.params.c * t;
        let g = self.envelope.grid;
        Ok(Shapes::new(&self.fft, &g, self.fft.translate(&g, &a, shift)))
    }

    /// Per-branch, per-harmonic amplitudes at physical time `t` (harmonics `m >= 0`;
    /// `m < 0` are the complex conjugates).
    pub fn envelopes_at(&self, t: f64) -> Result<Vec<BranchEnvelope>> {
        let sh = self.shapes_at(t)?;
        let n = self.carrier.dim();
        let npts = self.envelope.grid.n;
        let mut out: Vec<BranchEnvelope> = Vec::new();
        for p in &self.pieces {
            for b in 0..n {
                let w = self.carrier.project(b, p.harmonic, &p.vector);
                if w == ZERO {
                    continue;
                }
                let vals: Vec<Complex64> = (0..npts).map(|j| w * sh.eval(p.shape, j)).collect();
                if let Some(e) = out.iter_mut().find(|e| e.n == b && e.m == p.harmonic && e.order == p.order) {
                    e.values.iter_mut().zip(&vals).for_each(|(x, y)| *x += y);
                } else {
                    out.push(BranchEnvelope {
                        n: b,
                        m: p.harmonic,
                        order: p.order,
                        values: vals,
                    });
                }
            }
        }
        Ok(out)
    }
}

/// Leading branch amplitude of harmonic `m` on branch `n` for envelope samples `a`:
/// the pointwise quotient of the product source by `-i (omega_n(m k0) - m omega_{n0}(k0))`.
pub fn close_algebraic_modes(carrier: &Carrier, grid: &PeriodicGrid, a: &[Complex64], m: usize, n: usize) -> Result<Vec<Complex64>> {
    if m == 1 && n == carrier.n0 {
        return Err(Error::Config("the carrier mode is not algebraic".into()));
    }
    if m > carrier.max_harmonic() {
        return Err(Error::Config(format!("harmonic {m} was not prepared")));
    }
    let s = &carrier.s;
    let sb = conj(s);
    let (source, shape) = match m {
        0 => (scale(&carrier.t2(s, &sb), 2.0), Shape::AbsA2),
        1 => (scale(&carrier.a_minus_c(s), -1.0), Shape::Ax),
        2 => (carrier.t2(s, s), Shape::A2),
        3 => {
            let q2 = carrier.pseudo_inverse(2, &carrier.t2(s, s))?;
            (add(&carrier.t3(s, s, s), &scale(&carrier.t2(s, &q2), 2.0)), Shape::A3)
        }
        _ => return Err(Error::Config(format!("harmonic {m} is beyond the expansion"))),
    };
    let fft = Spectral::new(grid.n);
    let sh = Shapes::new(&fft, grid, a.to_vec());
    let proj = carrier.project(n, m, &source);
    let d = carrier.divisor(n, m);
    if proj.norm() <= 1e-12 * source.iter().map(|z| z.norm()).fold(0.0, f64::max) {
        return Ok(vec![ZERO; grid.n]);
    }
    if d.abs() < crate::nls::RESONANCE_TOL {
        return Err(Error::ResonantDivisor {
            divisor: d,
            witness: format!("branch {n}, harmonic {m}"),
        });
    }
    let w = proj / Complex64::new(0.0, -d);
    Ok((0..grid.n).map(|j| w * sh.eval(shape, j)).collect())
}

/// The physical field `eps Psi` at time `t` on `grid` (whose slow image must be the envelope grid).
pub fn assemble_ansatz(expansion: &AnsatzExpansion, t: f64, grid: &PeriodicGrid) -> Result<StateField> {
    let slow = grid.scaled(expansion.eps);
    let eg = expansion.envelope.grid;
    if slow.n != eg.n || (slow.length - eg.length).abs() > 1e-9 * eg.length || (slow.origin - eg.origin).abs() > 1e-9 * eg.length {
        return Err(Error::GridMismatch);
    }
    let sh = expansion.shapes_at(t)?;
    let k0 = expansion.params.k0;
    let w0 = expansion.params.omega0;
    let theta: Vec<f64> = (0..grid.n).map(|j| k0 * grid.x(j) - w0 * t).collect();
    let mut out = StateField::zeros(*grid, expansion.carrier.dim());
    add_terms(expansion, &sh, &theta, &mut out);
    Ok(out)
}

/// Adds every term of `expansion` for the given envelope fields with local carrier phase `theta`.
pub(crate) fn add_terms(expansion: &AnsatzExpansion, sh: &Shapes, theta: &[f64], out: &mut StateField) {
    let n = out.components;
    let npts = out.grid.n;
    let eps = expansion.eps;
    for p in &expansion.pieces {
        let amp = eps.powi(p.order as i32);
        for j in 0..npts {
            let f = sh.eval(p.shape, j) * amp;
            if p.harmonic == 0 {
                for c in 0..n {
                    out.values[c * npts + j] += p.vector[c] * f;
                }
            } else {
                let ph = Complex64::from_polar(1.0, p.harmonic as f64 * theta[j]);
                for c in 0..n {
                    let z = p.vector[c] * f * ph;
                    out.values[c * npts + j] += Complex64::new(2.0 * z.re, 0.0);
                }
            }
        }
    }
}

/// Step of the time differences in [`residual_norm`].
pub const RESIDUAL_DT: f64 = 1e-4;

/// Sup-norm of `d_t U + A d_x U + E U - T2(U,U) - T3(U,U,U)` for `U = eps Psi`.
pub fn residual_norm(spec: &SystemSpec, expansion: &AnsatzExpansion, t: f64, grid: &PeriodicGrid) -> Result<f64> {
    let h = RESIDUAL_DT;
    let t_max = expansion.envelope.t_max() / (expansion.eps * expansion.eps);
    if t < 0.0 || t > t_max * (1.0 + 1e-12) {
        return Err(Error::TimeOutOfRange { t, t_max });
    }
    // fourth-order stencils: central, or one-sided near the ends
    let (offsets, weights): ([f64; 5], [f64; 5]) = if t - 2.0 * h >= 0.0 && t + 2.0 * h <= t_max {
        ([-2.0, -1.0, 0.0, 1.0, 2.0], [1.0, -8.0, 0.0, 8.0, -1.0])
    } else if t - 2.0 * h < 0.0 {
        ([0.0, 1.0, 2.0, 3.0, 4.0], [-25.0, 48.0, -36.0, 16.0, -3.0])
    } else {
        ([0.0, -1.0, -2.0, -3.0, -4.0], [25.0, -48.0, 36.0, -16.0, 3.0])
    };
    let n = spec.dim;
    let npts = grid.n;
    let mut dudt = StateField::zeros(*grid, n);
    let mut center = None;
    for (o, w) in offsets.iter().zip(weights) {
        let u = assemble_ansatz(expansion, t + o * h, grid)?;
        if *o == 0.0 {
            center = Some(u.clone());
        }
        if w != 0.0 {
            dudt.add_scaled(&u, w / (12.0 * h))?;
        }
    }
    let u = center.expect("stencil contains the centre");
    let fft = Spectral::new(npts);
    let ux: Vec<Vec<Complex64>> = (0..n).map(|c| fft.derivative(grid, u.component(c), 1)).collect();
    let nl = evaluate_nonlinearity(spec, &u)?;
    let mut sup: f64 = 0.0;
    for j in 0..npts {
        for r in 0..n {
            let mut acc = dudt.values[r * npts + j] - nl.values[r * npts + j];
            for q in 0..n {
                acc += ux[q][j] * spec.a_entry(r, q) + u.values[q * npts + j] * spec.e_entry(r, q);
            }
            sup = sup.max(acc.norm());
        }
    }
    Ok(sup)
}

/// Reloadable snapshot of an expansion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnsatzDump {
    pub spec: SystemSpec,
    pub params: NlsParams,
    pub record: SolveRecord,
    pub level: AnsatzLevel,
    pub eps: f64,
    pub envelope: EnvelopeTrajectory,
    /// Branch amplitudes at `t = 0`.
    pub initial_branches: Vec<BranchEnvelope>,
}

pub fn dump_ansatz(expansion: &AnsatzExpansion) -> Result<String> {
    let d = AnsatzDump {
        spec: expansion.carrier.spec.clone(),
        params: expansion.params,
        record: expansion.record.clone(),
        level: expansion.level,
        eps: expansion.eps,
        envelope: expansion.envelope.clone(),
        initial_branches: expansion.envelopes_at(0.0)?,
    };
    serde_json::to_string(&d).map_err(|e| Error::Io(e.to_string()))
}

pub fn load_ansatz(text: &str) -> Result<AnsatzExpansion> {
    let d: AnsatzDump = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    let data = carrier_dispersion(&d.spec, d.params.k0)?;
    let carrier = Carrier::new(&d.spec, &data, d.params.n0, d.params.k0, 3)?;
    AnsatzExpansion::new(carrier, d.level, d.eps, d.envelope)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::packet_grid;
    use crate::system::{build_wavepacket_ic, builtin_example2, builtin_klein_gordon, without_nonlinearity, WavePacketIC};

    fn gaussian(g: &PeriodicGrid, amp: f64) -> Vec<Complex64> {
        g.points().iter().map(|&x| Complex64::new(amp * (-x * x).exp(), 0.0)).collect()
    }

    fn kg_expansion(level: AnsatzLevel, eps: f64, amp: f64) -> (SystemSpec, PeriodicGrid, AnsatzExpansion) {
        let kg = builtin_klein_gordon();
        let k0 = 1.0;
        let data = carrier_dispersion(&kg, k0).unwrap();
        let grid = packet_grid(k0, eps, 20.0, 16).unwrap();
        let slow = grid.scaled(eps);
        let ex = AnsatzExpansion::build(&kg, &data, 0, k0, level, eps, &slow, &gaussian(&slow, amp), 0.2, 1e-3).unwrap();
        (kg, grid, ex)
    }

    #[test]
    fn zero_envelope_gives_zero_field_and_residual() {
        let (kg, grid, ex) = kg_expansion(AnsatzLevel::FirstCorrection, 0.2, 0.0);
        assert_eq!(assemble_ansatz(&ex, 1.0, &grid).unwrap().sup_norm(), 0.0);
        assert_eq!(residual_norm(&kg, &ex, 1.0, &grid).unwrap(), 0.0);
        let a = vec![ZERO; grid.n];
        let z = close_algebraic_modes(&ex.carrier, &grid.scaled(0.2), &a, 2, 0).unwrap();
        assert!(z.iter().all(|v| *v == ZERO));
    }

    #[test]
    fn carrier_level_matches_initial_condition_builder() {
        let (kg, grid, ex) = kg_expansion(AnsatzLevel::Carrier, 0.1, 1.0);
        let u = assemble_ansatz(&ex, 0.0, &grid).unwrap();
        let slow = grid.scaled(0.1);
        let a = gaussian(&slow, 1.0);
        let ic = WavePacketIC {
            envelope: ex.carrier.s.iter().map(|&sc| a.iter().map(|z| z * sc).collect()).collect(),
            k0: 1.0,
            eps: 0.1,
        };
        let v = build_wavepacket_ic(&kg, &ic, &grid).unwrap();
        assert!(crate::grid::sup_distance(&u, &v).unwrap() < 1e-14);
    }

    #[test]
    fn assembled_field_is_real_and_banded() {
        let (_, grid, ex) = kg_expansion(AnsatzLevel::FirstCorrection, 0.05, 1.0);
        let u = assemble_ansatz(&ex, 3.0, &grid).unwrap();
        assert!(u.imag_sup() < 1e-10 * u.sup_norm());
        let fft = Spectral::new(grid.n);
        let mut near = 0.0;
        let mut far = 0.0;
        for c in u.spectrum(&fft) {
            for (i, z) in c.iter().enumerate() {
                let k = grid.wavenumber(i).abs();
                let d = (0..=3).map(|m| (k - m as f64).abs()).fold(f64::INFINITY, f64::min);
                if d < 0.5 {
                    near += z.norm_sqr();
                } else {
                    far += z.norm_sqr();
                }
            }
        }
        assert!(far < 1e-12 * near);
    }

    #[test]
    fn exact_linear_plane_wave_has_tiny_residual() {
        let lin = without_nonlinearity(&builtin_example2(0.0, 1.0));
        let k0 = 1.0;
        let eps = 0.1;
        let data = carrier_dispersion(&lin, k0).unwrap();
        let grid = packet_grid(k0, eps, 20.0, 16).unwrap();
        let slow = grid.scaled(eps);
        let ex = AnsatzExpansion::build(&lin, &data, 0, k0, AnsatzLevel::Carrier, eps, &slow, &vec![Complex64::new(1.0, 0.0); grid.n], 0.1, 1e-3).unwrap();
        assert!(residual_norm(&lin, &ex, 2.0, &grid).unwrap() < 1e-8);
    }

    #[test]
    fn second_harmonic_closure() {
        let kg = builtin_klein_gordon();
        let k0 = 3f64.sqrt();
        let data = carrier_dispersion(&kg, k0).unwrap();
        let car = Carrier::new(&kg, &data, 0, k0, 3).unwrap();
        assert!((car.divisor(0, 2).abs() - (13f64.sqrt() - 4.0).abs()).abs() < 1e-10);
        let g = PeriodicGrid::centered(20.0, 64).unwrap();
        let a = gaussian(&g, 0.5);
        let a2: Vec<Complex64> = a.iter().map(|z| z * 2.0).collect();
        let m1 = close_algebraic_modes(&car, &g, &a, 2, 0).unwrap();
        let m2 = close_algebraic_modes(&car, &g, &a2, 2, 0).unwrap();
        for (x, y) in m1.iter().zip(&m2) {
            assert!((y - x * 4.0).norm() < 1e-14);
        }
        // the inert branch gets nothing
        assert!(close_algebraic_modes(&car, &g, &a, 2, 1).unwrap().iter().all(|z| *z == ZERO));
    }

    #[test]
    fn residual_slopes_for_klein_gordon() {
        let eps_list = [0.2, 0.1, 0.05];
        let slope = |level: AnsatzLevel| {
            let r: Vec<f64> = eps_list
                .iter()
                .map(|&eps| {
                    let (kg, grid, ex) = kg_expansion(level, eps, 1.0);
                    residual_norm(&kg, &ex, 0.1 / (eps * eps), &grid).unwrap()
                })
                .collect();
            let x: Vec<f64> = eps_list.iter().map(|e| e.ln()).collect();
            let y: Vec<f64> = r.iter().map(|e| e.ln()).collect();
            let mx = x.iter().sum::<f64>() / 3.0;
            let my = y.iter().sum::<f64>() / 3.0;
            let num: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
            let den: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
            num / den
        };
        let s0 = slope(AnsatzLevel::Leading);
        let s1 = slope(AnsatzLevel::FirstCorrection);
        assert!(s0 >= 2.7, "leading slope {s0}");
        assert!(s1 >= s0 + 0.7, "first-correction slope {s1} vs {s0}");
    }

    #[test]
    fn dump_roundtrip_reproduces_field() {
        let (_, grid, ex) = kg_expansion(AnsatzLevel::Leading, 0.2, 1.0);
        let text = dump_ansatz(&ex).unwrap();
        let back = load_ansatz(&text).unwrap();
        let a = assemble_ansatz(&ex, 2.0, &grid).unwrap();
        let b = assemble_ansatz(&back, 2.0, &grid).unwrap();
        assert!(crate::grid::sup_distance(&a, &b).unwrap() < 1e-12);
        assert_eq!(ex.beta_table()[0][4], 1);
        assert_eq!(ex.beta_table()[0][3], 2);
    }

    #[test]
    fn time_out_of_range() {
        let (kg, grid, ex) = kg_expansion(AnsatzLevel::Leading, 0.2, 1.0);
        assert!(matches!(assemble_ansatz(&ex, 100.0, &grid), Err(Error::TimeOutOfRange { .. })));
        assert!(matches!(residual_norm(&kg, &ex, -1.0, &grid), Err(Error::TimeOutOfRange { .. })));
    }
}
