use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use log::info;
use serde_json::json;

use twoscale::bvp::{accept_best, solve_elliptic, solve_homogenized, solve_maxwell, EllipticCoefficients};
use twoscale::cell::{solve_cell, tensor_field_over_macro, CellConfig, TensorDump};
use twoscale::coeff::sym_eigen_range;
use twoscale::mesh::snapshot::write_snapshot;
use twoscale::mesh::{curl, grad, norm_l2, DiscreteField, Location};
use twoscale::study::{
    check_suite, run_convergence_study, run_epsilon, source_field, CheckOptions, CheckScope, ExperimentConfig, Mode,
};

#[derive(Parser)]
#[command(name = "twoscale", version, about = "Two-scale homogenization: cell problems, correctors and rate studies")]
struct Cli {
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for reports and snapshots.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true, env = "TWOSCALE_WORKERS")]
    workers: Option<usize>,
    /// Fail on under-resolved or non-converged solves instead of warning.
    #[arg(long, global = true)]
    strict: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the cell problems for the configured coefficients and print the
    /// homogenized tensors.
    Cell {
        /// Cells per oscillating axis.
        #[arg(long, default_value_t = 64)]
        resolution: usize,
        /// Macroscopic point at which x-dependent coefficients are frozen.
        #[arg(long, value_delimiter = ',', num_args = 1..=3)]
        x: Option<Vec<f64>>,
    },
    /// Homogenized tensor field over the fine grid, with eigenvalue ranges.
    Tensors {
        #[arg(long, default_value_t = 32)]
        resolution: usize,
    },
    /// Homogenized solve, and the oscillatory solve when `--eps` is given.
    Solve {
        #[arg(long)]
        eps: Option<f64>,
    },
    /// Error of the first-order approximation at one epsilon.
    CorrectorError {
        /// Defaults to the smallest configured epsilon.
        #[arg(long)]
        eps: Option<f64>,
    },
    /// Full epsilon sweep with rate fits; writes CSV, JSON and data files.
    Sweep,
    /// Invariant checks; the configured models are checked too when
    /// `--config` is given.
    Check {
        #[arg(long, value_enum, value_delimiter = ',')]
        scope: Vec<ScopeArg>,
        #[arg(long, default_value_t = 32)]
        resolution: usize,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum ScopeArg {
    Mimetic,
    Identity,
    Cell,
    Bounds,
    Residual,
    Corrector,
}

impl From<ScopeArg> for CheckScope {
    fn from(s: ScopeArg) -> Self {
        match s {
            ScopeArg::Mimetic => CheckScope::Mimetic,
            ScopeArg::Identity => CheckScope::Identity,
            ScopeArg::Cell => CheckScope::Cell,
            ScopeArg::Bounds => CheckScope::Bounds,
            ScopeArg::Residual => CheckScope::Residual,
            ScopeArg::Corrector => CheckScope::Corrector,
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let path = cli.config.as_deref().context("--config is required for this command")?;
    let mut cfg = ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
    cfg.strict |= cli.strict;
    Ok(cfg)
}

fn workers(cli: &Cli) -> usize {
    cli.workers.unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)).max(1)
}

fn out_dir(cli: &Cli, cfg: Option<&ExperimentConfig>) -> PathBuf {
    cli.out.clone().or_else(|| cfg.and_then(|c| c.output.dir.clone())).unwrap_or_else(|| PathBuf::from("."))
}

fn print_json(v: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn write_json(dir: &Path, name: &str, v: &impl serde::Serialize) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(v)?)?;
    info!("wrote {}", path.display());
    Ok(())
}

fn snapshot(dir: &Path, name: &str, f: &DiscreteField) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(name);
    write_snapshot(f, BufWriter::new(File::create(&path)?))?;
    info!("wrote {}", path.display());
    Ok(())
}

fn cmd_cell(cli: &Cli, resolution: usize, x: Option<Vec<f64>>) -> Result<()> {
    let cfg = load_config(cli)?;
    let mut point = [0.0; 3];
    for (p, v) in point.iter_mut().zip(x.unwrap_or_default()) {
        *p = v;
    }
    let cell_cfg = CellConfig { resolution, solver: cfg.cell_solver, ..CellConfig::default() };
    let grid = cell_cfg.grid_for(cfg.mode.dims(), &cfg.models())?;
    let r = solve_cell(cfg.a_model(), cfg.b_model(), point, &grid, &cfg.cell_solver)?;
    let mut dumps = vec![TensorDump::new("b0", &r.b0, &grid, point, &[])];
    if let Some(a0) = r.a0 {
        dumps.push(TensorDump::new("a0", &a0, &grid, point, &[]));
    }
    print_json(&dumps)?;
    if cli.out.is_some() {
        write_json(&out_dir(cli, Some(&cfg)), "cell.json", &dumps)?;
    }
    Ok(())
}

fn cmd_tensors(cli: &Cli, resolution: usize) -> Result<()> {
    let cfg = load_config(cli)?;
    let grid = cfg.fine_grid(1)?;
    let cell_cfg = CellConfig { resolution, solver: cfg.cell_solver, ..CellConfig::default() };
    let t = tensor_field_over_macro(cfg.a_model(), cfg.b_model(), &grid, &cell_cfg)?;
    let d = cfg.mode.dims();
    let range = |s: &twoscale::coeff::SampledCoefficient| {
        (0..s.len())
            .map(|e| sym_eigen_range(&s.matrix(e), d))
            .fold((f64::INFINITY, 0.0f64), |acc, (lo, hi)| (acc.0.min(lo), acc.1.max(hi)))
    };
    let summary = json!({
        "cell_solves": t.cell_solves,
        "b0_base": t.b0_base,
        "a0_base": t.a0_base,
        "b0_eigen_range": range(&t.b0),
        "a0_eigen_range": t.a0.as_ref().map(range),
    });
    print_json(&summary)?;
    if cli.out.is_some() {
        write_json(&out_dir(cli, Some(&cfg)), "tensors.json", &summary)?;
    }
    Ok(())
}

fn cmd_solve(cli: &Cli, eps: Option<f64>) -> Result<()> {
    let cfg = load_config(cli)?;
    let grid = cfg.fine_grid(1)?;
    let cell_res = cfg.cell_resolution(&grid, eps.unwrap_or(cfg.epsilons[0]));
    let resolution = cell_res.iter().copied().max().unwrap_or(4);
    let cell_cfg = CellConfig { resolution, solver: cfg.cell_solver, ..CellConfig::default() };
    let tensors = tensor_field_over_macro(cfg.a_model(), cfg.b_model(), &grid, &cell_cfg)?;
    let f = source_field(&cfg, &grid);
    let (loc, deriv): (Location, fn(&DiscreteField) -> twoscale::Result<DiscreteField>) = match cfg.mode {
        Mode::Maxwell3d => (Location::Edge, curl),
        Mode::Elliptic2d => (Location::Node, grad),
    };
    let settle = |r| if cfg.strict { r } else { accept_best(r, &grid, loc) };
    let (u0, rep0) = settle(match cfg.mode {
        Mode::Maxwell3d => solve_homogenized(&tensors, &f, &cfg.solver),
        Mode::Elliptic2d => {
            solve_elliptic(EllipticCoefficients::Homogenized(&tensors), &grid, &f, &cfg.solver, cfg.strict)
        }
    })?;
    let mut summary = json!({
        "homogenized": {
            "iterations": rep0.iterations,
            "converged": rep0.converged,
            "relative_residual": rep0.relative_residual,
            "norm_l2": norm_l2(&u0),
            "norm_derivative": norm_l2(&deriv(&u0)?),
        }
    });
    let dir = out_dir(cli, Some(&cfg));
    if cli.out.is_some() {
        snapshot(&dir, "u0.snap", &u0)?;
    }
    if let Some(eps) = eps {
        let (u, rep) = settle(match cfg.mode {
            Mode::Maxwell3d => solve_maxwell(&cfg.model, cfg.b_model(), eps, &grid, &f, &cfg.solver, cfg.strict),
            Mode::Elliptic2d => solve_elliptic(
                EllipticCoefficients::Fine { model: &cfg.model, eps },
                &grid,
                &f,
                &cfg.solver,
                cfg.strict,
            ),
        })?;
        summary["oscillatory"] = json!({
            "epsilon": eps,
            "iterations": rep.iterations,
            "converged": rep.converged,
            "relative_residual": rep.relative_residual,
            "norm_l2": norm_l2(&u),
            "norm_derivative": norm_l2(&deriv(&u)?),
            "difference_l2": norm_l2(&u.sub(&u0)?),
        });
        if cli.out.is_some() {
            snapshot(&dir, "u_eps.snap", &u)?;
        }
    }
    print_json(&summary)?;
    if cli.out.is_some() {
        write_json(&dir, "solve.json", &summary)?;
    }
    Ok(())
}

fn cmd_corrector_error(cli: &Cli, eps: Option<f64>) -> Result<()> {
    let cfg = load_config(cli)?;
    let eps = eps.unwrap_or(*cfg.epsilons.last().unwrap());
    let grid = cfg.fine_grid(1)?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers(cli)).build()?;
    let row = pool.install(|| run_epsilon(&cfg, &grid, eps))?;
    print_json(&row)?;
    if cli.out.is_some() {
        write_json(&out_dir(cli, Some(&cfg)), "corrector_error.json", &row)?;
    }
    Ok(())
}

fn cmd_sweep(cli: &Cli) -> Result<bool> {
    let cfg = load_config(cli)?;
    let report = run_convergence_study(&cfg, workers(cli))?;
    let dir = out_dir(cli, Some(&cfg));
    for p in report.write(&dir, &cfg.output.name)? {
        info!("wrote {}", p.display());
    }
    print!("{}", report.csv_body());
    for (label, fit) in [("L2", &report.fit_l2), ("energy", &report.fit_hcurl)] {
        if let Some(f) = fit {
            eprintln!("{label} slope {:.3} (constant {:.3e}, log residual {:.2e})", f.slope, f.constant(), f.residual);
        }
    }
    if let Some(note) = &report.fit_note {
        eprintln!("fit: {note}");
    }
    if let Some(rc) = &report.resolution_control {
        eprintln!(
            "resolution control at eps = {}: changes {:.3} (L2), {:.3} (energy): {}",
            rc.epsilon,
            rc.change_l2,
            rc.change_h,
            if rc.passed { "resolved" } else { "UNRESOLVED" }
        );
    }
    for f in &report.failures {
        eprintln!("eps = {} (refinement {}): {}", f.epsilon, f.refinement, f.message);
    }
    let ok = report.is_complete() && (!cfg.strict || report.resolved());
    Ok(ok)
}

fn cmd_check(cli: &Cli, scope: &[ScopeArg], resolution: usize) -> Result<bool> {
    let mut opts = CheckOptions { cell_resolution: resolution, ..CheckOptions::default() };
    if !scope.is_empty() {
        opts.scopes = scope.iter().map(|&s| s.into()).collect();
    }
    if cli.config.is_some() {
        let cfg = load_config(cli)?;
        opts.extra_models.push(("config:model".into(), cfg.model.clone()));
        if let Some(b) = &cfg.model_b {
            opts.extra_models.push(("config:model_b".into(), b.clone()));
        }
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers(cli)).build()?;
    let report = pool.install(|| check_suite(&opts));
    for r in &report.results {
        let tag = if r.passed { "PASS" } else { "FAIL" };
        if r.detail.is_empty() {
            println!("[{tag}] {:?} {}: {:.3e} (threshold {:.1e})", r.scope, r.name, r.value, r.threshold);
        } else {
            println!("[{tag}] {:?} {}: {}", r.scope, r.name, r.detail);
        }
    }
    if cli.out.is_some() {
        write_json(&out_dir(cli, None), "check.json", &report)?;
    }
    Ok(report.passed())
}

fn run(cli: &Cli) -> Result<ExitCode> {
    match &cli.command {
        Command::Cell { resolution, x } => cmd_cell(cli, *resolution, x.clone())?,
        Command::Tensors { resolution } => cmd_tensors(cli, *resolution)?,
        Command::Solve { eps } => cmd_solve(cli, *eps)?,
        Command::CorrectorError { eps } => cmd_corrector_error(cli, *eps)?,
        Command::Sweep => {
            if !cmd_sweep(cli)? {
                bail!("sweep incomplete or unresolved");
            }
        }
        Command::Check { scope, resolution } => {
            if !cmd_check(cli, scope, *resolution)? {
                return Ok(ExitCode::from(2));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
