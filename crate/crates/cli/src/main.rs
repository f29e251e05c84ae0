use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use num_complex::Complex64;
use wavepack::ansatz::{assemble_ansatz, dump_ansatz, AnsatzExpansion, AnsatzLevel};
use wavepack::audit::{audit, AuditOptions, Theorem};
use wavepack::dispersion::{audit_grid, carrier_dispersion, eigendecompose, BranchPolicy};
use wavepack::grid::packet_grid;
use wavepack::harness::{self, ExperimentConfig};
use wavepack::multipacket::{interaction_experiment, InteractionSetup};
use wavepack::solver::{simulate, Propagator, SimOptions};
use wavepack::Error;

/// Environment variable naming the default output root.
const OUT_ENV: &str = "WAVEPACK_OUT";

#[derive(Parser, Debug)]
#[command(name = "wavepack", version, about = "Modulated wave packets in dispersive hyperbolic systems", arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Non-resonance table for one carrier.
    Audit(AuditArgs),
    /// Run the full system from ansatz initial data.
    Simulate(Common),
    /// Derive the envelope equation and dump the ansatz.
    Approximate(Common),
    /// Error sweep over eps with an order fit.
    Converge(Common),
    /// Two-packet collision: predicted against measured phase shifts.
    Interact(InteractArgs),
    /// Ansatz residual at the start, middle and end of the horizon.
    Residual(Common),
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Experiment file (TOML); flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in name (kg, kg-linear, example2, example2-cubic, transport) or system file.
    #[arg(long)]
    system: Option<String>,
    #[arg(long)]
    k0: Option<f64>,
    #[arg(long)]
    n0: Option<usize>,
    /// Comma-separated, strictly decreasing.
    #[arg(long, value_delimiter = ',')]
    eps: Option<Vec<f64>>,
    #[arg(long)]
    t0: Option<f64>,
    /// carrier | leading | first-correction
    #[arg(long)]
    level: Option<String>,
    #[arg(long)]
    amplitude: Option<f64>,
    #[arg(long)]
    width: Option<f64>,
    #[arg(long)]
    ppw: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    dt: Option<f64>,
    /// Output directory (default: $WAVEPACK_OUT, else ./wavepack-out).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for sweeps and scans.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args, Debug)]
struct AuditArgs {
    #[command(flatten)]
    common: Common,
    /// Audit for the two-packet result instead of the single-packet one.
    #[arg(long)]
    multi: bool,
    /// Half-width of the k grid (default 4|k0| + 1).
    #[arg(long)]
    k_max: Option<f64>,
    #[arg(long, default_value_t = 0.01)]
    dk: f64,
}

#[derive(Args, Debug)]
struct InteractArgs {
    #[command(flatten)]
    common: Common,
    /// Branch of each packet.
    #[arg(long, value_delimiter = ',', default_value = "0,1")]
    branches: Vec<usize>,
    /// Peak amplitude of the second packet.
    #[arg(long, default_value_t = 1.0)]
    partner_amplitude: f64,
}

impl Common {
    fn resolve(&self) -> Result<ExperimentConfig, Error> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(v) = &self.system {
            cfg.system = v.clone();
        }
        if let Some(v) = self.k0 {
            cfg.k0 = v;
        }
        if let Some(v) = self.n0 {
            cfg.n0 = v;
        }
        if let Some(v) = &self.eps {
            cfg.eps = v.clone();
        }
        if let Some(v) = self.t0 {
            cfg.t0 = v;
        }
        if let Some(v) = &self.level {
            cfg.level = AnsatzLevel::parse(v)?;
        }
        if let Some(v) = self.amplitude {
            cfg.amplitude = v;
        }
        if let Some(v) = self.width {
            cfg.width = v;
        }
        if let Some(v) = self.ppw {
            cfg.points_per_wavelength = v;
        }
        if let Some(v) = self.samples {
            cfg.samples = v;
        }
        if self.dt.is_some() {
            cfg.dt = self.dt;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn out_dir(&self) -> Result<PathBuf, Error> {
        let dir = self
            .out
            .clone()
            .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("wavepack-out"));
        std::fs::create_dir_all(&dir)?;
        Ok(dir)
    }
}

fn write(dir: &Path, name: &str, text: &str) -> Result<(), Error> {
    let path = dir.join(name);
    std::fs::write(&path, text)?;
    println!("wrote {}", path.display());
    Ok(())
}

/// Exit status of a finished command.
enum Verdict {
    Pass,
    AuditFailed,
}

fn run_audit(args: &AuditArgs) -> Result<Verdict, Error> {
    let cfg = args.common.resolve()?;
    let spec = cfg.resolve_system()?;
    let data = match args.k_max {
        Some(k_max) => eigendecompose(&spec, &audit_grid(cfg.k0, k_max, args.dk), BranchPolicy::for_carrier(cfg.k0))?,
        None if args.dk == 0.01 => carrier_dispersion(&spec, cfg.k0)?,
        None => eigendecompose(&spec, &audit_grid(cfg.k0, 4.0 * cfg.k0.abs() + 1.0, args.dk), BranchPolicy::for_carrier(cfg.k0))?,
    };
    let mut opts = AuditOptions::new(cfg.n0, cfg.k0);
    opts.m_star = cfg.level.m_star();
    opts.tail_k_max = cfg.tail_k_max;
    if args.multi {
        opts.theorem = Theorem::MultiPacket;
    }
    let report = audit(&spec, &data, &opts)?;
    print!("{}", report.table());
    write(&args.common.out_dir()?, "audit.json", &report.to_json()?)?;
    Ok(if report.pass() { Verdict::Pass } else { Verdict::AuditFailed })
}

fn expansion(common: &Common) -> Result<(ExperimentConfig, wavepack::SystemSpec, wavepack::PeriodicGrid, AnsatzExpansion), Error> {
    let cfg = common.resolve()?;
    let spec = cfg.resolve_system()?;
    let data = carrier_dispersion(&spec, cfg.k0)?;
    let eps = cfg.eps[0];
    let grid = packet_grid(cfg.k0, eps, cfg.slow_window, cfg.points_per_wavelength)?;
    let slow = grid.scaled(eps);
    let a0: Vec<_> = (0..slow.n)
        .map(|j| Complex64::new(cfg.amplitude * (-(slow.x(j) / cfg.width).powi(2)).exp(), 0.0))
        .collect();
    let ex = AnsatzExpansion::build(&spec, &data, cfg.n0, cfg.k0, cfg.level, eps, &slow, &a0, cfg.t0, cfg.nls_dt)?;
    Ok((cfg, spec, grid, ex))
}

fn run_simulate(common: &Common) -> Result<Verdict, Error> {
    let (cfg, spec, grid, ex) = expansion(common)?;
    let eps = cfg.eps[0];
    let fast = eigendecompose(&spec, &grid.sorted_wavenumbers(), BranchPolicy::for_carrier(cfg.k0))?;
    let init = assemble_ansatz(&ex, 0.0, &grid)?;
    let mut opts = SimOptions::new(cfg.t0 / (eps * eps));
    opts.dt = cfg.dt;
    let dt = match cfg.dt {
        Some(dt) => dt,
        None => Propagator::new(&fast, &grid)?.default_dt(),
    };
    let steps = (opts.t_end / dt).ceil() as usize;
    opts.sample_every = (steps / cfg.samples.max(1)).max(1);
    let tr = simulate(&spec, &fast, &init, &opts)?;
    println!("{} steps of dt = {:.4e} on {} points; max sup {:.4e}", tr.stats.steps, tr.stats.dt, grid.n, tr.stats.max_sup);
    let dir = common.out_dir()?;
    write(&dir, "trajectory.json", &tr.to_json())?;
    write(&dir, "trajectory.dat", &tr.to_columns())?;
    Ok(Verdict::Pass)
}

fn run_approximate(common: &Common) -> Result<Verdict, Error> {
    let (_, _, _, ex) = expansion(common)?;
    let p = &ex.params;
    println!("omega0 = {:.12}  c = {:.12}", p.omega0, p.c);
    println!("nu1 = {:.12} {:+.12}i  nu2 = {:.12} {:+.12}i", p.nu1.re, p.nu1.im, p.nu2.re, p.nu2.im);
    write(&common.out_dir()?, "ansatz.json", &dump_ansatz(&ex)?)?;
    Ok(Verdict::Pass)
}

fn run_converge(common: &Common) -> Result<Verdict, Error> {
    let report = harness::run_convergence(&common.resolve()?)?;
    for p in &report.points {
        println!("eps {:<8} error {:.4e}", p.eps, p.max_error);
    }
    match report.slope {
        Some(s) => println!("slope {s:.4} (R^2 {:.5}), window {:?}: {}", report.r_squared.unwrap_or(f64::NAN), report.slope_window, if report.pass { "inside" } else { "outside" }),
        None if report.degenerate => println!("errors at roundoff level: slope degenerate"),
        None => println!("fewer than three eps values: no slope"),
    }
    let dir = common.out_dir()?;
    write(&dir, "converge.json", &harness::to_json(&report)?)?;
    let cols: String = report.points.iter().map(|p| format!("{:.12e} {:.12e}\n", p.eps, p.max_error)).collect();
    write(&dir, "converge.dat", &cols)?;
    Ok(Verdict::Pass)
}

fn run_residual(common: &Common) -> Result<Verdict, Error> {
    let report = harness::run_residual_sweep(&common.resolve()?)?;
    for r in &report.rows {
        println!("eps {:<8} residual {:.4e} {:.4e} {:.4e}", r.eps, r.residuals[0], r.residuals[1], r.residuals[2]);
    }
    for (frac, fit) in report.fractions.iter().zip(&report.fits) {
        if let Some(f) = fit {
            println!("t = {frac} T0/eps^2: slope {:.4}", f.slope);
        }
    }
    write(&common.out_dir()?, "residual.json", &harness::to_json(&report)?)?;
    Ok(Verdict::Pass)
}

fn run_interact(args: &InteractArgs) -> Result<Verdict, Error> {
    let mut common = args.common.clone();
    if common.system.is_none() && common.config.is_none() {
        common.system = Some("example2-cubic".into());
    }
    let cfg = common.resolve()?;
    let spec = cfg.resolve_system()?;
    let [b0, b1] = <[usize; 2]>::try_from(args.branches.as_slice()).map_err(|_| Error::Config("--branches takes exactly two values".into()))?;
    let mut setup = InteractionSetup::new(cfg.k0, [b0, b1], cfg.eps[0], common.t0.unwrap_or(2.0));
    setup.amplitudes = [cfg.amplitude, args.partner_amplitude];
    setup.width = cfg.width;
    setup.level = cfg.level;
    if let Some(ppw) = common.ppw {
        setup.points_per_wavelength = ppw;
    }
    let report = interaction_experiment(&spec, &setup)?;
    for p in &report.packets {
        println!(
            "branch {}: shift measured {:.5} predicted {:.5} ({:.1}%)",
            p.branch,
            p.measured_shift,
            p.predicted_shift,
            100.0 * p.relative_deviation
        );
    }
    println!(
        "max error: no shift {:.4e}, phase shift {:.4e}, all shifts {:.4e}",
        report.max_error_no_shift, report.max_error_phase_shift, report.max_error_all_shifts
    );
    let dir = common.out_dir()?;
    write(&dir, "interaction.json", &harness::to_json(&report)?)?;
    let cols: String = (0..report.times.len())
        .map(|i| format!("{:.12e} {:.12e} {:.12e} {:.12e}\n", report.times[i], report.error_no_shift[i], report.error_phase_shift[i], report.error_all_shifts[i]))
        .collect();
    write(&dir, "interaction.dat", &cols)?;
    Ok(Verdict::Pass)
}

fn threads(cmd: &Command) -> Option<usize> {
    match cmd {
        Command::Audit(a) => a.common.threads,
        Command::Interact(a) => a.common.threads,
        Command::Simulate(c) | Command::Approximate(c) | Command::Converge(c) | Command::Residual(c) => c.threads,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    if let Some(n) = threads(&cli.command) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match &cli.command {
        Command::Audit(a) => run_audit(a),
        Command::Simulate(c) => run_simulate(c),
        Command::Approximate(c) => run_approximate(c),
        Command::Converge(c) => run_converge(c),
        Command::Interact(a) => run_interact(a),
        Command::Residual(c) => run_residual(c),
    };
    match result {
        Ok(Verdict::Pass) => ExitCode::SUCCESS,
        Ok(Verdict::AuditFailed) => ExitCode::from(2),
        Err(Error::AuditFailed(names)) => {
            eprintln!("audit failed: {names}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
