//! Epsilon sweeps, order fits and the JSON reports built from them.

mod config;
mod fit;

pub use config::{ExperimentConfig, CONFIG_VERSION};
pub use fit::{fit_order, OrderFit};

use std::time::{Instant, SystemTime, UNIX_EPOCH};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ansatz::{assemble_ansatz, residual_norm, AnsatzExpansion};
use crate::audit::{audit, AuditOptions, ResonanceReport, Theorem};
use crate::dispersion::{carrier_dispersion, eigendecompose, BranchPolicy, DispersionData};
use crate::error::{Error, Result};
use crate::grid::{packet_grid, sup_distance, PeriodicGrid};
use crate::solver::{simulate_with, RunStats, SimOptions};
use crate::system::SystemSpec;

pub const CODE_VERSION: &str = concat!("wavepack ", env!("CARGO_PKG_VERSION"));

/// Errors below this fraction of the initial amplitude count as roundoff.
const ROUNDOFF: f64 = 1e-12;

/// Wall-clock data, kept apart so the rest of a report is reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub timestamp_unix: u64,
    pub runtimes_s: Vec<f64>,
}

impl Timing {
    fn now(runtimes_s: Vec<f64>) -> Self {
        Self {
            timestamp_unix: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
            runtimes_s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergencePoint {
    pub eps: f64,
    pub grid_points: usize,
    pub grid_length: f64,
    pub stats: RunStats,
    pub times: Vec<f64>,
    pub errors: Vec<f64>,
    pub max_error: f64,
    /// `max_error / eps`: the error relative to the packet amplitude.
    pub relative_error: f64,
    pub residual_final: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub version: String,
    pub config: ExperimentConfig,
    pub system: String,
    pub points: Vec<ConvergencePoint>,
    /// Only with three or more points.
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
    /// Reported whenever a fit exists (two or more points).
    pub r_squared: Option<f64>,
    /// Every error at roundoff level: no meaningful order.
    pub degenerate: bool,
    pub target_slope: f64,
    pub slope_window: [f64; 2],
    /// Distance of the slope inside the window (negative when outside).
    pub margin: Option<f64>,
    pub pass: bool,
    pub timing: Timing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualRow {
    pub eps: f64,
    pub times: [f64; 3],
    pub residuals: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub version: String,
    pub config: ExperimentConfig,
    pub system: String,
    /// Fractions of the horizon `t0 / eps^2` at which the residual is taken.
    pub fractions: [f64; 3],
    pub rows: Vec<ResidualRow>,
    /// One fit per time fraction (two or more eps values).
    pub fits: Vec<Option<OrderFit>>,
    pub timing: Timing,
}

/// Pretty JSON without the `timing` block: identical configs give identical text.
pub fn canonical_json<T: Serialize>(report: &T) -> Result<String> {
    let mut v = serde_json::to_value(report).map_err(|e| Error::Io(e.to_string()))?;
    if let Some(obj) = v.as_object_mut() {
        obj.remove("timing");
    }
    serde_json::to_string_pretty(&v).map_err(|e| Error::Io(e.to_string()))
}

pub fn to_json<T: Serialize>(report: &T) -> Result<String> {
    serde_json::to_string_pretty(report).map_err(|e| Error::Io(e.to_string()))
}

/// Run the audit the single-packet result needs; `AuditFailed` lists what failed.
/// Linear systems have nothing to resonate and are never refused.
pub fn audit_gate(spec: &SystemSpec, data: &DispersionData, cfg: &ExperimentConfig) -> Result<ResonanceReport> {
    let mut opts = AuditOptions::new(cfg.n0, cfg.k0);
    opts.m_star = cfg.level.m_star();
    opts.theorem = Theorem::SinglePacket;
    opts.tail_k_max = cfg.tail_k_max;
    let report = audit(spec, data, &opts)?;
    if !report.pass() && !spec.is_linear() {
        let names: Vec<&str> = report.failures().iter().map(|c| c.name()).collect();
        return Err(Error::AuditFailed(names.join(", ")));
    }
    Ok(report)
}

struct Member {
    grid: PeriodicGrid,
    expansion: AnsatzExpansion,
}

fn member(spec: &SystemSpec, data: &DispersionData, cfg: &ExperimentConfig, eps: f64) -> Result<Member> {
    let grid = packet_grid(cfg.k0, eps, cfg.slow_window, cfg.points_per_wavelength)?;
    let slow = grid.scaled(eps);
    let a0: Vec<Complex64> = (0..slow.n)
        .map(|j| Complex64::new(cfg.amplitude * (-(slow.x(j) / cfg.width).powi(2)).exp(), 0.0))
        .collect();
    let expansion = AnsatzExpansion::build(spec, data, cfg.n0, cfg.k0, cfg.level, eps, &slow, &a0, cfg.t0, cfg.nls_dt)?;
    Ok(Member { grid, expansion })
}

fn converge_one(spec: &SystemSpec, data: &DispersionData, cfg: &ExperimentConfig, eps: f64) -> Result<(ConvergencePoint, f64)> {
    let clock = Instant::now();
    let Member { grid, expansion } = member(spec, data, cfg, eps)?;
    let fast = eigendecompose(spec, &grid.sorted_wavenumbers(), BranchPolicy::for_carrier(cfg.k0))?;
    let init = assemble_ansatz(&expansion, 0.0, &grid)?;
    let t_end = cfg.t0 / (eps * eps);
    let mut opts = SimOptions::new(t_end);
    opts.dt = cfg.dt;
    let dt = match cfg.dt {
        Some(dt) => dt,
        None => crate::solver::Propagator::new(&fast, &grid)?.default_dt(),
    };
    let steps = (t_end / dt).ceil() as usize;
    opts.sample_every = (steps / cfg.samples.max(1)).max(1);
    let mut times = Vec::new();
    let mut errors = Vec::new();
    let stats = simulate_with(spec, &fast, &init, &opts, |t, u| {
        // the envelope is stored up to t0 exactly; guard the last step's rounding
        let t_eval = t.min(t_end);
        errors.push(sup_distance(u, &assemble_ansatz(&expansion, t_eval, &grid)?)?);
        times.push(t);
        Ok(())
    })?;
    let max_error = errors.iter().cloned().fold(0.0, f64::max);
    let residual_final = residual_norm(spec, &expansion, t_end, &grid)?;
    let point = ConvergencePoint {
        eps,
        grid_points: grid.n,
        grid_length: grid.length,
        stats,
        times,
        errors,
        max_error,
        relative_error: max_error / eps,
        residual_final,
    };
    Ok((point, clock.elapsed().as_secs_f64()))
}

/// Full solver against the ansatz for each `eps`, then a log-log fit of the sup error.
pub fn run_convergence(cfg: &ExperimentConfig) -> Result<ConvergenceReport> {
    cfg.validate()?;
    let spec = cfg.resolve_system()?;
    let data = carrier_dispersion(&spec, cfg.k0)?;
    audit_gate(&spec, &data, cfg)?;
    let results: Vec<Result<(ConvergencePoint, f64)>> = cfg.eps.par_iter().map(|&eps| converge_one(&spec, &data, cfg, eps)).collect();
    let mut points = Vec::new();
    let mut runtimes = Vec::new();
    for r in results {
        let (p, secs) = r?;
        points.push(p);
        runtimes.push(secs);
    }
    let degenerate = points.iter().all(|p| p.max_error <= ROUNDOFF * cfg.amplitude.max(1.0));
    let pairs: Vec<(f64, f64)> = points.iter().map(|p| (p.eps, p.max_error)).collect();
    let fit = if degenerate || pairs.len() < 2 { None } else { Some(fit_order(&pairs)?) };
    let slope = fit.filter(|_| pairs.len() >= 3).map(|f| f.slope);
    let [lo, hi] = cfg.slope_window;
    let margin = slope.map(|s| (s - lo).min(hi - s));
    Ok(ConvergenceReport {
        version: CODE_VERSION.into(),
        config: cfg.clone(),
        system: spec.label.clone(),
        points,
        slope,
        intercept: fit.filter(|_| pairs.len() >= 3).map(|f| f.intercept),
        r_squared: fit.map(|f| f.r_squared),
        degenerate,
        target_slope: cfg.target_slope,
        slope_window: cfg.slope_window,
        margin,
        pass: margin.is_some_and(|m| m >= 0.0),
        timing: Timing::now(runtimes),
    })
}

pub const RESIDUAL_FRACTIONS: [f64; 3] = [0.0, 0.5, 1.0];

/// Residual of the ansatz at the start, middle and end of the horizon for each `eps`.
pub fn run_residual_sweep(cfg: &ExperimentConfig) -> Result<ResidualReport> {
    cfg.validate()?;
    let spec = cfg.resolve_system()?;
    let data = carrier_dispersion(&spec, cfg.k0)?;
    let results: Vec<Result<(ResidualRow, f64)>> = cfg
        .eps
        .par_iter()
        .map(|&eps| {
            let clock = Instant::now();
            let m = member(&spec, &data, cfg, eps)?;
            let horizon = cfg.t0 / (eps * eps);
            let times = RESIDUAL_FRACTIONS.map(|f| f * horizon);
            let mut residuals = [0.0; 3];
            for (r, &t) in residuals.iter_mut().zip(&times) {
                *r = residual_norm(&spec, &m.expansion, t, &m.grid)?;
            }
            Ok((ResidualRow { eps, times, residuals }, clock.elapsed().as_secs_f64()))
        })
        .collect();
    let mut rows = Vec::new();
    let mut runtimes = Vec::new();
    for r in results {
        let (row, secs) = r?;
        rows.push(row);
        runtimes.push(secs);
    }
    let fits = (0..3)
        .map(|i| {
            let pairs: Vec<(f64, f64)> = rows.iter().map(|r| (r.eps, r.residuals[i])).collect();
            fit_order(&pairs).ok()
        })
        .collect();
    Ok(ResidualReport {
        version: CODE_VERSION.into(),
        config: cfg.clone(),
        system: spec.label.clone(),
        fractions: RESIDUAL_FRACTIONS,
        rows,
        fits,
        timing: Timing::now(runtimes),
    })
}
