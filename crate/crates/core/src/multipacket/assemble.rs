use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{group_velocity, phase_prefactor, Anchor, MixedTerms, ShiftField};
use crate::ansatz::{add_terms, AnsatzExpansion, AnsatzLevel, Shapes};
use crate::dispersion::DispersionData;
use crate::error::{Error, Result};
use crate::grid::{PeriodicGrid, Spectral, StateField};
use crate::system::SystemSpec;

/// Initial envelope `A_{n,1,0}(X, 0)` of one packet on the slow grid, and its depth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PacketConfig {
    pub branch: usize,
    pub envelope: Vec<Complex64>,
    pub level: AnsatzLevel,
}

#[derive(Debug, Clone)]
pub struct Packet {
    pub config: PacketConfig,
    pub expansion: AnsatzExpansion,
    pub velocity: f64,
    /// Centre of `|A|^2` at `t = 0`, slow units.
    pub centre: f64,
}

/// Which interaction corrections enter the assembled field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corrections {
    pub phase: bool,
    pub envelope: bool,
    pub mixed: bool,
}

impl Corrections {
    pub const NONE: Corrections = Corrections {
        phase: false,
        envelope: false,
        mixed: false,
    };
    pub const ALL: Corrections = Corrections {
        phase: true,
        envelope: true,
        mixed: true,
    };
}

#[derive(Debug, Clone)]
pub struct MultiPacket {
    pub k0: f64,
    pub eps: f64,
    pub slow: PeriodicGrid,
    pub packets: Vec<Packet>,
    /// Phase prefactors `Omega_nj / int |A_j|^2`.
    pub prefactors: Vec<Vec<f64>>,
    /// Envelope-shift constants `C_nj` (zero when unused).
    pub envelope_constants: Vec<Vec<f64>>,
    pub anchors: Vec<Vec<Anchor>>,
    pub mixed: MixedTerms,
    fft: Spectral,
}

fn centre(grid: &PeriodicGrid, a: &[Complex64]) -> f64 {
    let w: Vec<f64> = a.iter().map(|z| z.norm_sqr()).collect();
    let total: f64 = w.iter().sum();
    if total == 0.0 {
        return 0.0;
    }
    (0..grid.n).map(|j| grid.x(j) * w[j]).sum::<f64>() / total
}

impl MultiPacket {
    /// Solve every packet's NLS up to `t0` (slow time) and prepare the couplings.
    #[allow(clippy::too_many_arguments)]
    pub fn build(spec: &SystemSpec, data: &DispersionData, configs: &[PacketConfig], k0: f64, eps: f64, slow: &PeriodicGrid, t0: f64, dt: f64) -> Result<Self> {
        let mut packets = Vec::new();
        for cfg in configs {
            let expansion = AnsatzExpansion::build(spec, data, cfg.branch, k0, cfg.level, eps, slow, &cfg.envelope, t0, dt)?;
            packets.push(Packet {
                velocity: group_velocity(data, cfg.branch, k0)?,
                centre: centre(slow, &cfg.envelope),
                config: cfg.clone(),
                expansion,
            });
        }
        let p = packets.len();
        let mut prefactors = vec![vec![0.0; p]; p];
        let mut anchors = vec![vec![Anchor::Left; p]; p];
        for n in 0..p {
            for j in 0..p {
                if n == j {
                    continue;
                }
                prefactors[n][j] = phase_prefactor(data, spec, configs[n].branch, configs[j].branch, k0)?;
                if packets[n].centre > packets[j].centre {
                    anchors[n][j] = Anchor::Right;
                }
            }
        }
        let branches: Vec<usize> = configs.iter().map(|c| c.branch).collect();
        let mixed = super::mixed_terms(data, spec, &branches, k0, true)?;
        Ok(Self {
            k0,
            eps,
            slow: *slow,
            packets,
            prefactors,
            envelope_constants: vec![vec![0.0; p]; p],
            anchors,
            mixed,
            fft: Spectral::new(slow.n),
        })
    }

    /// Running mass integral of partner `j` at time `t`, evaluated at the lab points.
    pub fn partner_integral(&self, n: usize, j: usize, t: f64, prefactor: f64) -> Result<Vec<f64>> {
        let pj = &self.packets[j].expansion;
        let a = pj.envelope.at(self.eps * self.eps * t)?;
        let field = ShiftField {
            prefactor,
            anchor: self.anchors[n][j],
            kernel: super::cumulative(&self.slow, &a.iter().map(|z| z.norm_sqr()).collect::<Vec<_>>()),
            mass: a.iter().map(|z| z.norm_sqr()).sum::<f64>() * self.slow.dx(),
        };
        Ok(field.translated(&self.slow, &self.fft, self.eps * self.packets[j].velocity * t))
    }

    /// Predicted total phase shift `eps Omega_nj(+inf)` of packet `n` after passing `j`.
    pub fn predicted_phase_shift(&self, n: usize, j: usize) -> Result<f64> {
        let a = &self.packets[j].config.envelope;
        let mass = a.iter().map(|z| z.norm_sqr()).sum::<f64>() * self.slow.dx();
        let sign = match self.anchors[n][j] {
            Anchor::Left => 1.0,
            Anchor::Right => -1.0,
        };
        Ok(self.eps * self.prefactors[n][j] * mass * sign)
    }
}

/// The field `eps Psi` at time `t`: every packet's own expansion with shifted phase and
/// envelope argument, plus the cross products.
pub fn assemble_multipacket(mp: &MultiPacket, t: f64, grid: &PeriodicGrid, corr: Corrections) -> Result<StateField> {
    let slow = grid.scaled(mp.eps);
    if slow.n != mp.slow.n || (slow.length - mp.slow.length).abs() > 1e-9 * slow.length || (slow.origin - mp.slow.origin).abs() > 1e-9 * slow.length {
        return Err(Error::GridMismatch);
    }
    let npts = grid.n;
    let eps = mp.eps;
    let dim = mp.packets.first().map(|p| p.expansion.carrier.dim()).unwrap_or(0);
    let mut out = StateField::zeros(*grid, dim);
    let mut shapes: Vec<Shapes> = Vec::new();
    let mut thetas: Vec<Vec<f64>> = Vec::new();
    for (n, p) in mp.packets.iter().enumerate() {
        let ex = &p.expansion;
        let mut sh = ex.shapes_at(t)?;
        let w0 = ex.params.omega0;
        let mut theta: Vec<f64> = (0..npts).map(|j| mp.k0 * grid.x(j) - w0 * t).collect();
        let mut disp = vec![0.0; npts];
        for j in 0..mp.packets.len() {
            if j == n {
                continue;
            }
            if corr.phase {
                let om = mp.partner_integral(n, j, t, mp.prefactors[n][j])?;
                theta.iter_mut().zip(&om).for_each(|(th, o)| *th += eps * o);
            }
            if corr.envelope && mp.envelope_constants[n][j] != 0.0 {
                let ps = mp.partner_integral(n, j, t, mp.envelope_constants[n][j])?;
                disp.iter_mut().zip(&ps).for_each(|(d, v)| *d += eps * eps * v);
            }
        }
        if disp.iter().any(|d| *d != 0.0) {
            sh = sh.displaced(&disp);
        }
        add_terms(ex, &sh, &theta, &mut out);
        shapes.push(sh);
        thetas.push(theta);
    }
    if corr.mixed {
        for term in &mp.mixed.terms {
            let amp = eps.powi(term.order as i32);
            for x in 0..npts {
                let mut f = Complex64::new(amp, 0.0);
                let mut phase = 0.0;
                for &(p, r) in &term.waves {
                    let a = shapes[p].a[x];
                    f *= if r > 0 { a } else { a.conj() };
                    phase += r as f64 * thetas[p][x];
                }
                let f = f * Complex64::from_polar(1.0, phase);
                for c in 0..dim {
                    // the conjugate product is enumerated too, so the real part is the whole term
                    out.values[c * npts + x] += Complex64::new((term.vector[c] * f).re, 0.0);
                }
            }
        }
    }
    Ok(out)
}
