//! Epsilon sweeps, error norms, rate fits and the invariant check suite.

pub mod check;
mod config;
mod rate;

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;

pub use check::{check_suite, CheckOptions, CheckReport, CheckResult, CheckScope};
pub use config::{DomainSpec, ExperimentConfig, GridSpec, Mode, OutputSpec, Shape, Source, Variant};
pub use rate::{fit_rate, RateFit};

use crate::bvp::{accept_best, solve_elliptic, solve_homogenized, solve_maxwell, EllipticCoefficients, SolveReport};
use crate::cell::{solve_cell, HomogenizedTensors};
use crate::coeff::Mat3;
use crate::corrector::{
    averaged_first_order, averaged_first_order_elliptic, boundary_cutoff, build_partition, classical_first_order,
    classical_first_order_elliptic, local_averages, local_gradient_averages,
};
use crate::error::{Error, Result};
use crate::mesh::{build_grid, curl, grad, norm_l2, DiscreteField, Extent, GridRef, Location, Topology};

/// `e_l2 = |u - v|`, `e_deriv = |D u - Dv|` and `e_h = (e_l2^2 + e_deriv^2)^(1/2)`
/// where `D` is curl (edge fields) or grad (node fields).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorNorms {
    pub e_l2: f64,
    pub e_deriv: f64,
    pub e_h: f64,
}

impl ErrorNorms {
    fn new(e_l2: f64, e_deriv: f64) -> Self {
        ErrorNorms { e_l2, e_deriv, e_h: (e_l2 * e_l2 + e_deriv * e_deriv).sqrt() }
    }
}

/// Errors of an edge-field approximation given separately with its curl.
pub fn error_norms(
    u_fine: &DiscreteField,
    field_approx: &DiscreteField,
    curl_approx: &DiscreteField,
) -> Result<ErrorNorms> {
    u_fine.expect_location(Location::Edge)?;
    field_approx.expect_location(Location::Edge)?;
    curl_approx.expect_location(Location::Face)?;
    if !field_approx.compatible(u_fine) || !curl_approx.same_grid(u_fine.grid()) {
        return Err(Error::GridMismatch);
    }
    let e0 = norm_l2(&u_fine.sub(field_approx)?);
    let e1 = norm_l2(&curl(u_fine)?.sub(curl_approx)?);
    Ok(ErrorNorms::new(e0, e1))
}

/// Errors of a node-field approximation given separately with its gradient.
pub fn error_norms_elliptic(
    u_fine: &DiscreteField,
    approx: &DiscreteField,
    grad_approx: &DiscreteField,
) -> Result<ErrorNorms> {
    u_fine.expect_location(Location::Node)?;
    approx.expect_location(Location::Node)?;
    grad_approx.expect_location(Location::Edge)?;
    if !approx.compatible(u_fine) || !grad_approx.same_grid(u_fine.grid()) {
        return Err(Error::GridMismatch);
    }
    let e0 = norm_l2(&u_fine.sub(approx)?);
    let e1 = norm_l2(&grad(u_fine)?.sub(grad_approx)?);
    Ok(ErrorNorms::new(e0, e1))
}

/// Right-hand side of the sweep on `grid`.
pub fn source_field(cfg: &ExperimentConfig, grid: &GridRef) -> DiscreteField {
    let e = *grid.extent();
    let xi = move |x: [f64; 3]| -> [f64; 3] { std::array::from_fn(|j| (x[j] - e.lo[j]) / e.length(j)) };
    match (cfg.mode, cfg.source) {
        (Mode::Elliptic2d, Source::Unit) => DiscreteField::constant(grid, Location::Node, &[1.0]),
        (Mode::Maxwell3d, Source::Unit) => DiscreteField::constant(grid, Location::Edge, &[1.0; 3]),
        (Mode::Elliptic2d, Source::Smooth) => DiscreteField::from_fn(grid, Location::Node, |_, x| {
            let p = xi(x);
            (PI * p[0]).sin() * (PI * p[1]).sin()
        }),
        (Mode::Maxwell3d, Source::Smooth) => DiscreteField::from_fn(grid, Location::Edge, |c, x| {
            let p = xi(x);
            (PI * p[(c + 1) % 3]).sin() * (PI * p[(c + 2) % 3]).sin()
        }),
    }
}

#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct StageTimings {
    pub cell_s: f64,
    pub homogenized_s: f64,
    pub corrector_s: f64,
    pub fine_s: f64,
    pub norms_s: f64,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct PartitionInfo {
    pub delta: f64,
    pub t: f64,
    pub cubes: usize,
    /// `max |grad rho_i| * delta` over grid nodes.
    pub gradient_constant: f64,
}

/// Results at one epsilon.
#[derive(Debug, Clone, Serialize)]
pub struct EpsilonRow {
    pub epsilon: f64,
    pub e_l2: f64,
    /// H(curl) error in Maxwell mode, H^1 error in elliptic mode.
    pub e_hcurl: f64,
    pub e_deriv: f64,
    /// Norm of the fine solution in the same norm as `e_hcurl`.
    pub solution_norm: f64,
    pub fine_resolution: Vec<usize>,
    pub cell_resolution: Vec<usize>,
    pub b0: Mat3,
    pub a0: Option<Mat3>,
    pub homogenized_iterations: usize,
    pub homogenized_converged: bool,
    pub fine_iterations: usize,
    pub fine_converged: bool,
    pub partition: Option<PartitionInfo>,
    pub timings: StageTimings,
}

#[derive(Debug, Clone, Serialize)]
pub struct EpsilonFailure {
    pub epsilon: f64,
    pub refinement: usize,
    pub message: String,
}

/// Doubled-grid repeat of one epsilon.
#[derive(Debug, Clone, Serialize)]
pub struct ResolutionControl {
    pub epsilon: f64,
    pub base: ErrorNorms,
    pub refined: ErrorNorms,
    pub change_l2: f64,
    pub change_h: f64,
    pub passed: bool,
}

/// Relative change above which a resolution control fails.
pub const RESOLUTION_TOLERANCE: f64 = 0.2;

#[derive(Debug, Clone, Serialize)]
pub struct RateReport {
    pub version: String,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub rows: Vec<EpsilonRow>,
    pub failures: Vec<EpsilonFailure>,
    pub fit_l2: Option<RateFit>,
    pub fit_hcurl: Option<RateFit>,
    pub fit_note: Option<String>,
    /// Errors decrease with epsilon, allowing one inversion at the coarsest pair.
    pub monotone: bool,
    pub resolution_control: Option<ResolutionControl>,
    pub workers: usize,
    pub total_time_s: f64,
}

impl RateReport {
    pub fn is_complete(&self) -> bool {
        self.failures.is_empty()
    }

    /// Whether the resolution control ran and passed (vacuously true when disabled).
    pub fn resolved(&self) -> bool {
        !self.config.resolution_check || self.resolution_control.as_ref().is_some_and(|r| r.passed)
    }

    /// CSV with columns `epsilon,e_l2,e_hcurl`.
    pub fn csv_body(&self) -> String {
        let mut s = String::from("epsilon,e_l2,e_hcurl\n");
        for r in &self.rows {
            let _ = writeln!(s, "{:.12e},{:.12e},{:.12e}", r.epsilon, r.e_l2, r.e_hcurl);
        }
        s
    }

    /// Whitespace-separated columns for gnuplot.
    pub fn data_body(&self) -> String {
        let mut s = String::from("# epsilon e_l2 e_hcurl\n");
        for r in &self.rows {
            let _ = writeln!(s, "{:.12e} {:.12e} {:.12e}", r.epsilon, r.e_l2, r.e_hcurl);
        }
        s
    }

    /// Writes `<name>.csv`, `<name>.json` and `<name>.dat` into `dir`.
    pub fn write(&self, dir: &Path, name: &str) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let csv = dir.join(format!("{name}.csv"));
        let json = dir.join(format!("{name}.json"));
        let dat = dir.join(format!("{name}.dat"));
        std::fs::write(&csv, self.csv_body())?;
        std::fs::write(&dat, self.data_body())?;
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(&json, text)?;
        Ok(vec![csv, json, dat])
    }
}

fn elapsed(t: &mut Instant) -> f64 {
    let s = t.elapsed().as_secs_f64();
    *t = Instant::now();
    s
}

/// Full pipeline at one epsilon on `grid`.
/// Best-iterate fallback for non-converged solves unless `strict`.
fn settle(
    strict: bool,
    res: Result<(DiscreteField, SolveReport)>,
    grid: &GridRef,
    loc: Location,
) -> Result<(DiscreteField, SolveReport)> {
    if strict {
        res
    } else {
        accept_best(res, grid, loc)
    }
}

pub fn run_epsilon(cfg: &ExperimentConfig, grid: &GridRef, eps: f64) -> Result<EpsilonRow> {
    let mut timings = StageTimings::default();
    let mut clock = Instant::now();
    let d = cfg.mode.dims();

    let cell_res = cfg.cell_resolution(grid, eps);
    let cell_grid = build_grid(d, &cell_res, Topology::Periodic, Extent::unit(), None).map_err(|e| e.at("cell"))?;
    let a_base = cfg.a_model().map(|m| m.base());
    let b_base = cfg.b_model().base();
    let cell =
        solve_cell(a_base.as_ref(), &b_base, [0.0; 3], &cell_grid, &cfg.cell_solver).map_err(|e| e.at("cell"))?;
    let tensors =
        HomogenizedTensors::from_cell_result(&cell, cfg.a_model(), cfg.b_model(), grid).map_err(|e| e.at("tensors"))?;
    timings.cell_s = elapsed(&mut clock);

    let f = source_field(cfg, grid);
    let (u0, rep0) = match cfg.mode {
        Mode::Maxwell3d => settle(cfg.strict, solve_homogenized(&tensors, &f, &cfg.solver), grid, Location::Edge),
        Mode::Elliptic2d => settle(
            cfg.strict,
            solve_elliptic(EllipticCoefficients::Homogenized(&tensors), grid, &f, &cfg.solver, cfg.strict),
            grid,
            Location::Node,
        ),
    }
    .map_err(|e| e.at("homogenized solve"))?;
    timings.homogenized_s = elapsed(&mut clock);

    let mut partition_info = None;
    let mut partition = None;
    if cfg.corrector == Variant::Averaged {
        let (s, t) = cfg.s_and_t()?;
        let p = build_partition(grid, s, eps, t).map_err(|e| e.at("partition"))?;
        partition_info = Some(PartitionInfo {
            delta: p.delta(),
            t: p.exponent(),
            cubes: p.len(),
            gradient_constant: p.gradient_constant(grid),
        });
        partition = Some(p);
    }
    let cutoff = match (&partition, cfg.cutoff) {
        (Some(_), true) => Some(boundary_cutoff(grid, eps).map_err(|e| e.at("cutoff"))?),
        _ => None,
    };
    // approximation and its derivative, compared against the fine solution
    let (approx, d_approx) = (|| -> Result<(DiscreteField, DiscreteField)> {
        match (cfg.mode, &partition) {
            (Mode::Maxwell3d, None) => {
                let fo = classical_first_order(&u0, &cell.solution, eps, false)?;
                Ok((fo.field_approx, fo.curl_approx))
            }
            (Mode::Maxwell3d, Some(p)) => {
                let av = local_averages(&u0, &curl(&u0)?, p)?;
                let u1 = averaged_first_order(&u0, &cell.solution, p, &av, eps, cutoff.as_ref())?.pieces.assemble()?;
                let c = curl(&u1)?;
                Ok((u1, c))
            }
            (Mode::Elliptic2d, None) => {
                let fo = classical_first_order_elliptic(&u0, &cell.solution, eps, false)?;
                Ok((u0.clone(), fo.grad_approx))
            }
            (Mode::Elliptic2d, Some(p)) => {
                let av = local_gradient_averages(&u0, p)?;
                let u1 = averaged_first_order_elliptic(&u0, &cell.solution, p, &av, eps, cutoff.as_ref())?
                    .pieces
                    .assemble()?;
                let g = grad(&u1)?;
                Ok((u1, g))
            }
        }
    })()
    .map_err(|e| e.at("corrector"))?;
    timings.corrector_s = elapsed(&mut clock);

    let (u_fine, rep) = match cfg.mode {
        Mode::Maxwell3d => settle(
            cfg.strict,
            solve_maxwell(&cfg.model, cfg.b_model(), eps, grid, &f, &cfg.solver, cfg.strict),
            grid,
            Location::Edge,
        ),
        Mode::Elliptic2d => settle(
            cfg.strict,
            solve_elliptic(EllipticCoefficients::Fine { model: &cfg.model, eps }, grid, &f, &cfg.solver, cfg.strict),
            grid,
            Location::Node,
        ),
    }
    .map_err(|e| e.at("fine solve"))?;
    timings.fine_s = elapsed(&mut clock);

    let (norms, solution_norm) = match cfg.mode {
        Mode::Maxwell3d => {
            let z = ErrorNorms::new(norm_l2(&u_fine), norm_l2(&curl(&u_fine)?));
            (error_norms(&u_fine, &approx, &d_approx), z.e_h)
        }
        Mode::Elliptic2d => {
            let z = ErrorNorms::new(norm_l2(&u_fine), norm_l2(&grad(&u_fine)?));
            (error_norms_elliptic(&u_fine, &approx, &d_approx), z.e_h)
        }
    };
    let norms = norms.map_err(|e| e.at("error norms"))?;
    timings.norms_s = elapsed(&mut clock);
    info!("eps = {eps:.5}: e_l2 = {:.4e}, e_h = {:.4e}", norms.e_l2, norms.e_h);

    Ok(EpsilonRow {
        epsilon: eps,
        e_l2: norms.e_l2,
        e_hcurl: norms.e_h,
        e_deriv: norms.e_deriv,
        solution_norm,
        fine_resolution: grid.resolution()[..d].to_vec(),
        cell_resolution: cell_res,
        b0: cell.b0,
        a0: cell.a0,
        homogenized_iterations: rep0.iterations,
        homogenized_converged: rep0.converged,
        fine_iterations: rep.iterations,
        fine_converged: rep.converged,
        partition: partition_info,
        timings,
    })
}

fn monotone(errors: &[f64]) -> bool {
    errors.windows(2).skip(1).all(|w| w[1] < w[0])
}

/// Runs every epsilon (and the resolution control) on a pool of
/// `workers` threads and fits rates. Per-epsilon failures are recorded in
/// the report rather than returned.
pub fn run_convergence_study(cfg: &ExperimentConfig, workers: usize) -> Result<RateReport> {
    cfg.validate()?;
    let start = Instant::now();
    let workers = workers.max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let base = cfg.fine_grid(1)?;
    let eps_min = *cfg.epsilons.last().unwrap();
    let mut jobs: Vec<(f64, usize)> = cfg.epsilons.iter().map(|&e| (e, 1)).collect();
    if cfg.resolution_check {
        jobs.push((eps_min, 2));
    }
    let outcomes: Vec<(f64, usize, Result<EpsilonRow>)> = pool.install(|| {
        jobs.par_iter()
            .map(|&(eps, factor)| {
                let res = if factor == 1 {
                    run_epsilon(cfg, &base, eps)
                } else {
                    cfg.fine_grid(factor).and_then(|g| run_epsilon(cfg, &g, eps))
                };
                (eps, factor, res)
            })
            .collect()
    });

    let mut rows = vec![];
    let mut failures = vec![];
    let mut control_row = None;
    for (eps, factor, res) in outcomes {
        match res {
            Ok(row) if factor == 1 => rows.push(row),
            Ok(row) => control_row = Some(row),
            Err(e) => {
                warn!("eps = {eps}, refinement {factor}: {e}");
                failures.push(EpsilonFailure { epsilon: eps, refinement: factor, message: e.to_string() });
            }
        }
    }

    let resolution_control = match (control_row, rows.iter().find(|r| r.epsilon == eps_min)) {
        (Some(fine), Some(coarse)) => {
            let base = ErrorNorms { e_l2: coarse.e_l2, e_deriv: coarse.e_deriv, e_h: coarse.e_hcurl };
            let refined = ErrorNorms { e_l2: fine.e_l2, e_deriv: fine.e_deriv, e_h: fine.e_hcurl };
            let change_l2 = (refined.e_l2 - base.e_l2).abs() / base.e_l2;
            let change_h = (refined.e_h - base.e_h).abs() / base.e_h;
            let passed = change_l2 < RESOLUTION_TOLERANCE && change_h < RESOLUTION_TOLERANCE;
            if !passed {
                warn!("resolution control failed: changes {change_l2:.3} (L2), {change_h:.3} (energy)");
            }
            Some(ResolutionControl { epsilon: eps_min, base, refined, change_l2, change_h, passed })
        }
        _ => None,
    };

    let eps: Vec<f64> = rows.iter().map(|r| r.epsilon).collect();
    let e_l2: Vec<f64> = rows.iter().map(|r| r.e_l2).collect();
    let e_h: Vec<f64> = rows.iter().map(|r| r.e_hcurl).collect();
    let degenerate = rows.iter().all(|r| r.e_hcurl <= 10.0 * cfg.solver.tol * r.solution_norm.max(f64::MIN_POSITIVE));
    let (fit_l2, fit_hcurl, fit_note) = if rows.len() < 3 {
        (None, None, Some(format!("{} successful epsilons, at least 3 needed", rows.len())))
    } else if degenerate {
        (None, None, Some("degenerate: errors at solver tolerance".into()))
    } else {
        match (fit_rate(&eps, &e_l2), fit_rate(&eps, &e_h)) {
            (Ok(a), Ok(b)) => (Some(a), Some(b), None),
            (a, b) => {
                let note = a.err().or(b.err()).map(|e| e.to_string());
                (None, None, note)
            }
        }
    };
    Ok(RateReport {
        version: env!("CARGO_PKG_VERSION").into(),
        config_hash: cfg.hash()?,
        config: cfg.clone(),
        monotone: monotone(&e_h),
        rows,
        failures,
        fit_l2,
        fit_hcurl,
        fit_note,
        resolution_control,
        workers,
        total_time_s: start.elapsed().as_secs_f64(),
    })
}
