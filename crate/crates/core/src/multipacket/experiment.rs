//! Two packets on different branches pass through each other; the full solution is
//! compared with the assembled multi-packet field and the carrier phase of each packet
//! is read off after the collision.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::assemble::{assemble_multipacket, Corrections, MultiPacket, PacketConfig};
use super::{group_velocity, ShiftConstant};
use crate::ansatz::AnsatzLevel;
use crate::audit::{check_weakened_quotient_all, Thresholds};
use crate::dispersion::{carrier_dispersion, eigendecompose, BranchPolicy, DispersionData};
use crate::error::{Error, Result};
use crate::grid::{packet_grid, sup_distance, PeriodicGrid, Spectral, StateField};
use crate::solver::{simulate_with, Propagator, SimOptions};
use crate::system::SystemSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionSetup {
    pub k0: f64,
    pub branches: [usize; 2],
    /// Peak amplitudes of the Gaussian envelopes.
    pub amplitudes: [f64; 2],
    /// Gaussian width in slow units.
    pub width: f64,
    pub eps: f64,
    /// Slow horizon: the run covers `t in [0, t0 / eps^2]`.
    pub t0: f64,
    pub level: AnsatzLevel,
    pub envelope_constant: ShiftConstant,
    /// Number of comparison times.
    pub samples: usize,
    /// Empty slow distance kept on both sides of the packet paths.
    pub margin: f64,
    pub points_per_wavelength: usize,
    /// Slow time step of the envelope equations.
    pub nls_dt: f64,
}

impl InteractionSetup {
    pub fn new(k0: f64, branches: [usize; 2], eps: f64, t0: f64) -> Self {
        Self {
            k0,
            branches,
            amplitudes: [1.0, 1.0],
            width: 1.0,
            eps,
            t0,
            level: AnsatzLevel::Leading,
            envelope_constant: ShiftConstant::Fitted,
            samples: 40,
            margin: 10.0,
            points_per_wavelength: 8,
            nls_dt: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PacketMeasurement {
    pub branch: usize,
    pub velocity: f64,
    pub mass: f64,
    /// `eps Omega(+inf)` from the partner.
    pub predicted_shift: f64,
    /// Carrier phase relative to the unshifted prediction after the collision.
    pub measured_shift: f64,
    /// `|measured - predicted| / |predicted|`.
    pub relative_deviation: f64,
    /// Centre of the measured envelope minus the unshifted prediction, slow units.
    pub displacement: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionReport {
    pub setup: InteractionSetup,
    pub grid_points: usize,
    pub grid_length: f64,
    pub steps: usize,
    pub dt: f64,
    pub prefactors: [f64; 2],
    pub packets: Vec<PacketMeasurement>,
    pub envelope_constant: f64,
    /// Why the envelope constant fell back to zero, if it did.
    pub envelope_fit_failure: Option<String>,
    pub times: Vec<f64>,
    pub error_no_shift: Vec<f64>,
    pub error_phase_shift: Vec<f64>,
    pub error_all_shifts: Vec<f64>,
    pub max_error_no_shift: f64,
    pub max_error_phase_shift: f64,
    pub max_error_all_shifts: f64,
}

/// Least-squares `C` in `d = -C m` from `(m, d)` pairs; fails above 20% misfit.
pub fn fit_envelope_constant(samples: &[(f64, f64)]) -> Result<f64> {
    let mm: f64 = samples.iter().map(|(m, _)| m * m).sum();
    if samples.is_empty() || mm == 0.0 {
        return Err(Error::FitFailed { residual: f64::INFINITY });
    }
    let c = -samples.iter().map(|(m, d)| m * d).sum::<f64>() / mm;
    let res: f64 = samples.iter().map(|(m, d)| (d + c * m).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = samples.iter().map(|(_, d)| d * d).sum::<f64>().sqrt();
    if scale > 0.0 && res > 0.2 * scale {
        return Err(Error::FitFailed { residual: res / scale });
    }
    Ok(c)
}

struct Geometry {
    grid: PeriodicGrid,
    centres: [f64; 2],
}

/// Start the faster packet on the left, half the relative travel apart, so that both
/// meet at `t0 / 2` and are as far apart again at the end.
fn geometry(setup: &InteractionSetup, v: [f64; 2]) -> Result<Geometry> {
    let eps = setup.eps;
    let travel = (v[0] - v[1]).abs() * setup.t0 / eps;
    if travel < 20.0 * setup.width {
        return Err(Error::NoCollision);
    }
    let sgn = (v[0] - v[1]).signum();
    let x0 = [-sgn * travel / 4.0, sgn * travel / 4.0];
    let mut pts = Vec::new();
    for n in 0..2 {
        let j = 1 - n;
        pts.push(x0[n]);
        pts.push(x0[n] + v[n] * setup.t0 / eps);
        pts.push(x0[n] + (v[n] - v[j]) * setup.t0 / eps);
    }
    let lo = pts.iter().copied().fold(f64::INFINITY, f64::min) - setup.margin;
    let hi = pts.iter().copied().fold(f64::NEG_INFINITY, f64::max) + setup.margin;
    let grid = packet_grid(setup.k0, eps, hi - lo, setup.points_per_wavelength)?;
    let mid = 0.5 * (lo + hi);
    Ok(Geometry {
        grid,
        centres: [x0[0] - mid, x0[1] - mid],
    })
}

fn gaussian(slow: &PeriodicGrid, amp: f64, centre: f64, width: f64) -> Vec<Complex64> {
    (0..slow.n)
        .map(|j| Complex64::new(amp * (-((slow.x(j) - centre) / width).powi(2)).exp(), 0.0))
        .collect()
}

/// Complex envelope of branch `label` near `+k0`, demodulated by the unshifted carrier.
fn demodulate(fast: &DispersionData, u: &StateField, fft: &Spectral, label: usize, k0: f64, w0: f64, t: f64, eps: f64) -> Result<Vec<Complex64>> {
    let grid = u.grid;
    let diag = fast.to_diagonal_spectra(&grid, &u.spectrum(fft))?;
    let mut buf = diag[label].clone();
    for (i, z) in buf.iter_mut().enumerate() {
        let k = grid.wavenumber(i);
        if !(k > 0.5 * k0 && k < 1.5 * k0) {
            *z = Complex64::new(0.0, 0.0);
        }
    }
    fft.inverse(&mut buf);
    Ok((0..grid.n)
        .map(|j| buf[j] * Complex64::from_polar(1.0 / eps, -(k0 * grid.x(j) - w0 * t)))
        .collect())
}

/// Label of the solver data whose frequency at `k0` matches branch `n` of the carrier data.
fn solver_label(fast: &DispersionData, carrier: &DispersionData, n: usize, k0: f64) -> Result<usize> {
    let target = carrier.omega_at(n, k0)?;
    let i = fast.node_index(k0)?;
    (0..fast.dim())
        .min_by(|&a, &b| (fast.omega[a][i] - target).abs().total_cmp(&(fast.omega[b][i] - target).abs()))
        .ok_or(Error::InvalidSystem("empty system".into()))
}

fn centroid(grid: &PeriodicGrid, w: &[f64]) -> f64 {
    let total: f64 = w.iter().sum();
    (0..grid.n).map(|j| grid.x(j) * w[j]).sum::<f64>() / total
}

pub fn interaction_experiment(spec: &SystemSpec, setup: &InteractionSetup) -> Result<InteractionReport> {
    let k0 = setup.k0;
    let eps = setup.eps;
    let data = carrier_dispersion(spec, k0)?;
    if spec.has_quadratic() {
        let active: Vec<usize> = setup.branches.to_vec();
        let nr3a = check_weakened_quotient_all(&data, spec, &active, k0, 1e6, &Thresholds::default())?;
        if !nr3a.pass {
            return Err(Error::AuditFailed("NR3a".into()));
        }
    }
    let v = [group_velocity(&data, setup.branches[0], k0)?, group_velocity(&data, setup.branches[1], k0)?];
    let geo = geometry(setup, v)?;
    let grid = geo.grid;
    let slow = grid.scaled(eps);
    let configs: Vec<PacketConfig> = (0..2)
        .map(|n| PacketConfig {
            branch: setup.branches[n],
            envelope: gaussian(&slow, setup.amplitudes[n], geo.centres[n], setup.width),
            level: setup.level,
        })
        .collect();
    let mut mp = MultiPacket::build(spec, &data, &configs, k0, eps, &slow, setup.t0, setup.nls_dt)?;

    let fast = eigendecompose(spec, &grid.sorted_wavenumbers(), BranchPolicy::for_carrier(k0))?;
    let t_end = setup.t0 / (eps * eps);
    let dt = Propagator::new(&fast, &grid)?.default_dt();
    let steps = (t_end / dt).ceil() as usize;
    let mut opts = SimOptions::new(t_end);
    opts.sample_every = (steps / setup.samples.max(1)).max(1);
    let init = assemble_multipacket(&mp, 0.0, &grid, Corrections { envelope: false, ..Corrections::ALL })?;
    let mut snaps: Vec<(f64, StateField)> = Vec::new();
    let stats = simulate_with(spec, &fast, &init, &opts, |t, u| {
        snaps.push((t, u.clone()));
        Ok(())
    })?;

    // phases and positions after the collision
    let fft = Spectral::new(grid.n);
    let (t_f, u_f) = snaps.last().cloned().expect("the final time is always sampled");
    let mut packets = Vec::new();
    let mut calib = Vec::new();
    for n in 0..2 {
        let j = 1 - n;
        let p = &mp.packets[n];
        let label = solver_label(&fast, &data, setup.branches[n], k0)?;
        let z = demodulate(&fast, &u_f, &fft, label, k0, p.expansion.params.omega0, t_f, eps)?;
        let pred = p.expansion.shapes_at(t_f)?.a;
        let peak = pred.iter().map(|a| a.norm()).fold(0.0, f64::max);
        let mut acc = Complex64::new(0.0, 0.0);
        for x in 0..grid.n {
            if pred[x].norm() > 0.5 * peak {
                acc += z[x] * pred[x].conj();
            }
        }
        let measured = acc.arg();
        let predicted = mp.predicted_phase_shift(n, j)?;
        let displacement = centroid(&slow, &z.iter().map(|c| c.norm_sqr()).collect::<Vec<_>>())
            - centroid(&slow, &pred.iter().map(|c| c.norm_sqr()).collect::<Vec<_>>());
        let mass = configs[j].envelope.iter().map(|a| a.norm_sqr()).sum::<f64>() * slow.dx();
        let sign = if predicted * mp.prefactors[n][j] >= 0.0 { 1.0 } else { -1.0 };
        calib.push((eps * eps * sign * mass, displacement));
        packets.push(PacketMeasurement {
            branch: setup.branches[n],
            velocity: v[n],
            mass: configs[n].envelope.iter().map(|a| a.norm_sqr()).sum::<f64>() * slow.dx(),
            predicted_shift: predicted,
            measured_shift: measured,
            relative_deviation: if predicted != 0.0 { (measured - predicted).abs() / predicted.abs() } else { measured.abs() },
            displacement,
        });
    }
    let (c, envelope_fit_failure) = match setup.envelope_constant {
        ShiftConstant::Off => (0.0, None),
        ShiftConstant::Supplied(c) => (c, None),
        ShiftConstant::Fitted => match fit_envelope_constant(&calib) {
            Ok(c) => (c, None),
            Err(e) => (0.0, Some(e.to_string())),
        },
    };
    mp.envelope_constants = vec![vec![0.0, c], vec![c, 0.0]];

    let mut times = Vec::new();
    let (mut e0, mut e1, mut e2) = (Vec::new(), Vec::new(), Vec::new());
    for (t, u) in &snaps {
        times.push(*t);
        let none = Corrections { mixed: true, ..Corrections::NONE };
        e0.push(sup_distance(u, &assemble_multipacket(&mp, *t, &grid, none)?)?);
        e1.push(sup_distance(u, &assemble_multipacket(&mp, *t, &grid, Corrections { envelope: false, ..Corrections::ALL })?)?);
        e2.push(sup_distance(u, &assemble_multipacket(&mp, *t, &grid, Corrections::ALL)?)?);
    }
    let max = |v: &[f64]| v.iter().copied().fold(0.0, f64::max);
    Ok(InteractionReport {
        setup: setup.clone(),
        grid_points: grid.n,
        grid_length: grid.length,
        steps: stats.steps,
        dt: stats.dt,
        prefactors: [mp.prefactors[0][1], mp.prefactors[1][0]],
        packets,
        envelope_constant: c,
        envelope_fit_failure,
        max_error_no_shift: max(&e0),
        max_error_phase_shift: max(&e1),
        max_error_all_shifts: max(&e2),
        times,
        error_no_shift: e0,
        error_phase_shift: e1,
        error_all_shifts: e2,
    })
}
