//! Invariant battery over built-in models and seeded random fields.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bvp::SolverConfig;
use crate::cell::{residual_fields, solve_cell, CellConfig, CellResult};
use crate::coeff::{sample_on_cell, sym_eigen_range, CoefficientModel, Mat3, Storage};
use crate::corrector::{
    apply_cutoff, averaged_first_order, boundary_cutoff, build_partition, classical_first_order, local_averages,
};
use crate::error::Result;
use crate::mesh::{
    build_grid, curl, curl_star, div, div_star, grad, inner_product, spectral_identity_check, BoundaryMask,
    DiscreteField, Extent, GridRef, Location, Topology,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckScope {
    Mimetic,
    Identity,
    Cell,
    Bounds,
    Residual,
    Corrector,
}

impl CheckScope {
    pub const ALL: [CheckScope; 6] = [
        CheckScope::Mimetic,
        CheckScope::Identity,
        CheckScope::Cell,
        CheckScope::Bounds,
        CheckScope::Residual,
        CheckScope::Corrector,
    ];
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckOptions {
    pub scopes: Vec<CheckScope>,
    /// Cells per oscillating axis of the cell grids.
    pub cell_resolution: usize,
    /// Cell-solver tolerance.
    pub solver_tol: f64,
    pub seed: u64,
    /// Extra models checked alongside the built-in ones.
    pub extra_models: Vec<(String, CoefficientModel)>,
}

impl Default for CheckOptions {
    fn default() -> Self {
        CheckOptions {
            scopes: CheckScope::ALL.to_vec(),
            cell_resolution: 32,
            solver_tol: 1e-11,
            seed: 20,
            extra_models: vec![],
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub scope: CheckScope,
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub threshold: f64,
    pub detail: String,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct CheckReport {
    pub results: Vec<CheckResult>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.results.iter().filter(|r| !r.passed)
    }

    fn le(&mut self, scope: CheckScope, name: impl Into<String>, value: f64, threshold: f64) {
        self.results.push(CheckResult {
            scope,
            name: name.into(),
            passed: value <= threshold,
            value,
            threshold,
            detail: String::new(),
        });
    }

    fn error(&mut self, scope: CheckScope, name: impl Into<String>, err: impl std::fmt::Display) {
        self.results.push(CheckResult {
            scope,
            name: name.into(),
            passed: false,
            value: f64::NAN,
            threshold: f64::NAN,
            detail: err.to_string(),
        });
    }
}

/// Models exercised by the suite.
pub fn builtin_models() -> Vec<(String, CoefficientModel)> {
    vec![
        ("constant".into(), CoefficientModel::constant_scalar(2.0)),
        ("laminate".into(), CoefficientModel::laminate(0, [1.0, 4.0])),
        ("trig".into(), CoefficientModel::trig(2.0, 1.0, vec![0])),
        ("trig-xy".into(), CoefficientModel::trig(3.0, 1.0, vec![0, 1])),
        ("checkerboard".into(), CoefficientModel::checkerboard([1.0, 5.0])),
    ]
}

fn random_field(g: &GridRef, loc: Location, rng: &mut ChaCha8Rng) -> DiscreteField {
    let v = (0..g.entity_count(loc)).map(|_| rng.gen_range(-1.0..1.0)).collect();
    DiscreteField::from_values(g, loc, v).expect("finite values")
}

fn rel_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / (1.0 + a.abs().max(b.abs()))
}

fn mimetic(report: &mut CheckReport, seed: u64) -> Result<()> {
    let s = CheckScope::Mimetic;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grids = [
        ("periodic", build_grid(3, &[6, 5, 7], Topology::Periodic, Extent::unit(), None)?),
        ("bounded", build_grid(3, &[5, 6, 4], Topology::Bounded, Extent::unit(), None)?),
    ];
    for (name, g) in &grids {
        let scale = g.spacing().iter().map(|h| 1.0 / h).fold(0.0, f64::max).powi(2);
        let mut phi = random_field(g, Location::Node, &mut rng);
        let mut u = random_field(g, Location::Edge, &mut rng);
        BoundaryMask::dirichlet(g).apply(&mut phi)?;
        BoundaryMask::pec(g).apply(&mut u)?;
        let f = random_field(g, Location::Face, &mut rng);
        report.le(s, format!("curl grad = 0 ({name})"), curl(&grad(&phi)?)?.max_abs() / scale, 1e-13);
        report.le(s, format!("div curl = 0 ({name})"), div(&curl(&u)?)?.max_abs() / scale, 1e-13);
        let lhs = inner_product(&grad(&phi)?, &u)?;
        let rhs = -inner_product(&phi, &div_star(&u)?)?;
        report.le(s, format!("grad adjoint ({name})"), rel_gap(lhs, rhs), 1e-12);
        let lhs = inner_product(&curl(&u)?, &f)?;
        let rhs = inner_product(&u, &curl_star(&f)?)?;
        report.le(s, format!("curl adjoint ({name})"), rel_gap(lhs, rhs), 1e-12);
    }
    Ok(())
}

fn identity(report: &mut CheckReport, seed: u64) -> Result<()> {
    let s = CheckScope::Identity;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let g = build_grid(3, &[8, 8, 8], Topology::Periodic, Extent::unit(), None)?;
    let mut worst: f64 = 0.0;
    for k in 0..20 {
        let loc = if k % 2 == 0 { Location::Edge } else { Location::Face };
        let mut psi = random_field(&g, loc, &mut rng);
        psi.remove_component_means();
        worst = worst.max(spectral_identity_check(&psi)?.residual);
    }
    report.le(s, "gradient identity, 20 random fields", worst, 1e-10);
    let psi = DiscreteField::from_fn(&g, Location::Edge, |c, y| if c == 0 { (2.0 * PI * y[1]).sin() } else { 0.0 });
    let chk = spectral_identity_check(&psi)?;
    let target = 2.0 * PI * PI;
    report.le(s, "gradient identity, sin(2 pi y2) e1: lhs", (chk.lhs - target).abs() / target, 1e-10);
    report.le(s, "gradient identity, sin(2 pi y2) e1: rhs", (chk.rhs - target).abs() / target, 1e-10);
    Ok(())
}

fn cell_for(model: &CoefficientModel, dims: usize, opts: &CheckOptions) -> Result<CellResult> {
    let cfg = CellConfig {
        resolution: opts.cell_resolution,
        solver: SolverConfig { tol: opts.solver_tol, max_iter: 20000, preconditioner: None },
        reduce_flat_axes: true,
    };
    let grid = cfg.grid_for(dims, &[model])?;
    let a = if dims == 3 { Some(model) } else { None };
    solve_cell(a, model, [0.0; 3], &grid, &cfg.solver)
}

fn max_asymmetry(m: &Mat3) -> f64 {
    let mut w: f64 = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            w = w.max((m[i][j] - m[j][i]).abs());
        }
    }
    w
}

fn mean_matrix(model: &CoefficientModel, grid: &GridRef, loc: Location) -> Result<(Mat3, f64)> {
    let s = sample_on_cell(model, &[0.0; 3], grid, loc)?;
    let mut mean = [[0.0; 3]; 3];
    let mut asym: f64 = 0.0;
    let n = s.len();
    for e in 0..n {
        let m = s.matrix(e);
        asym = asym.max(max_asymmetry(&m));
        for i in 0..3 {
            for j in 0..3 {
                mean[i][j] += m[i][j] / n as f64;
            }
        }
    }
    if let Storage::Uniform(m) = s.storage() {
        return Ok((*m, max_asymmetry(m)));
    }
    Ok((mean, asym))
}

fn sub(a: &Mat3, b: &Mat3) -> Mat3 {
    std::array::from_fn(|i| std::array::from_fn(|j| a[i][j] - b[i][j]))
}

fn identity_times(c: f64) -> Mat3 {
    std::array::from_fn(|i| std::array::from_fn(|j| if i == j { c } else { 0.0 }))
}

fn cell_checks(report: &mut CheckReport, opts: &CheckOptions) -> Result<()> {
    let s = CheckScope::Cell;
    let m = CoefficientModel::constant_scalar(2.0);
    let r = cell_for(&m, 3, opts)?;
    let zero = r.solution.w.iter().chain(&r.solution.n).map(|f| f.max_abs()).fold(0.0, f64::max);
    report.le(s, "constant: correctors vanish", zero, opts.solver_tol);
    report.le(s, "constant: b0 = b", max_abs_diff(&r.b0, &identity_times(2.0)), opts.solver_tol);
    report.le(s, "constant: a0 = a", max_abs_diff(&r.a0.unwrap(), &identity_times(2.0)), opts.solver_tol);
    let lam = CoefficientModel::laminate(0, [1.0, 4.0]);
    let r = cell_for(&lam, 3, opts)?;
    let b_exact = [1.6, 2.5, 2.5];
    let a_exact = [2.5, 1.6, 1.6];
    let a0 = r.a0.unwrap();
    let gap = (0..3)
        .map(|i| ((r.b0[i][i] - b_exact[i]) / b_exact[i]).abs().max(((a0[i][i] - a_exact[i]) / a_exact[i]).abs()))
        .fold(0.0, f64::max);
    report.le(s, "laminate {1,4}: harmonic/arithmetic means", gap, 1e-3);
    let trig = CoefficientModel::trig(2.0, 1.0, vec![0]);
    let r = cell_for(&trig, 2, opts)?;
    report.le(s, "trig: b0_11 = sqrt 3", (r.b0[0][0] - 3f64.sqrt()).abs() / 3f64.sqrt(), 1e-3);
    Ok(())
}

fn max_abs_diff(a: &Mat3, b: &Mat3) -> f64 {
    let d = sub(a, b);
    d.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
}

fn models(opts: &CheckOptions) -> Vec<(String, CoefficientModel)> {
    let mut all = builtin_models();
    all.extend(opts.extra_models.iter().cloned());
    all
}

fn bounds_checks(report: &mut CheckReport, opts: &CheckOptions) {
    let s = CheckScope::Bounds;
    for (name, model) in models(opts) {
        let grid = match CellConfig::with_resolution(opts.cell_resolution).grid_for(3, &[&model]) {
            Ok(g) => g,
            Err(e) => {
                report.error(s, format!("{name}: grid"), e);
                continue;
            }
        };
        match mean_matrix(&model, &grid, Location::Edge) {
            Ok((_, asym)) => report.le(s, format!("{name}: coefficient symmetric"), asym, 0.0),
            Err(e) => report.error(s, format!("{name}: coefficient symmetric"), e),
        }
        let r = match cell_for(&model, 3, opts) {
            Ok(r) => r,
            Err(e) => {
                report.error(s, format!("{name}: cell solve"), e);
                continue;
            }
        };
        let (c1, _) = model.declared_bounds();
        for (label, t, loc) in [("b0", Some(r.b0), Location::Edge), ("a0", r.a0, Location::Face)] {
            let Some(t) = t else { continue };
            let scale = t.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
            report.le(s, format!("{name}: {label} symmetric"), max_asymmetry(&t) / scale, 1e-10);
            let (lo, _) = sym_eigen_range(&sub(&t, &identity_times(c1)), 3);
            report.le(s, format!("{name}: {label} >= c1 I"), -lo / scale, 1e-10);
            match mean_matrix(&model, &grid, loc) {
                Ok((mean, _)) => {
                    let (lo, _) = sym_eigen_range(&sub(&mean, &t), 3);
                    report.le(s, format!("{name}: {label} <= arithmetic mean"), -lo / scale, 1e-10);
                }
                Err(e) => report.error(s, format!("{name}: {label} <= arithmetic mean"), e),
            }
        }
    }
}

fn residual_checks(report: &mut CheckReport, opts: &CheckOptions) {
    let s = CheckScope::Residual;
    for name in ["laminate", "trig"] {
        let model = match name {
            "laminate" => CoefficientModel::laminate(0, [1.0, 4.0]),
            _ => CoefficientModel::trig(2.0, 1.0, vec![0]),
        };
        let res = cell_for(&model, 3, opts).and_then(|r| {
            residual_fields(
                Some((r.a.as_ref().unwrap(), &r.solution.n, r.a0.as_ref().unwrap())),
                (&r.b, &r.solution.w, &r.b0),
                true,
            )
        });
        let fields = match res {
            Ok(f) => f,
            Err(e) => {
                report.error(s, format!("{name}: residual fields"), e);
                continue;
            }
        };
        let worst = |d: &[crate::cell::ResidualDiagnostic], f: fn(&crate::cell::ResidualDiagnostic) -> f64| {
            d.iter().map(f).fold(0.0, f64::max)
        };
        report.le(s, format!("{name}: curl_y G_r = 0"), worst(&fields.big_g_diag, |d| d.derivative_relative), 1e-8);
        report.le(s, format!("{name}: mean G_r = 0"), worst(&fields.big_g_diag, |d| d.mean_abs), 1e-10);
        report.le(s, format!("{name}: div_y g_r = 0"), worst(&fields.small_g_diag, |d| d.derivative_relative), 1e-8);
        report.le(s, format!("{name}: mean g_r = 0"), worst(&fields.small_g_diag, |d| d.mean_abs), 1e-10);
        // components that vanish identically have no meaningful relative mismatch
        let mismatch = |d: &[crate::cell::ResidualDiagnostic]| {
            d.iter()
                .filter(|d| d.norm > 1e-9)
                .map(|d| d.potential_mismatch.unwrap_or(f64::INFINITY))
                .fold(0.0, f64::max)
        };
        report.le(s, format!("{name}: dual grad potential reproduces G_r"), mismatch(&fields.big_g_diag), 1e-8);
        report.le(s, format!("{name}: curl* potential reproduces g_r"), mismatch(&fields.small_g_diag), 1e-8);
    }
}

fn corrector_checks(report: &mut CheckReport, opts: &CheckOptions) -> Result<()> {
    let s = CheckScope::Corrector;
    let g = build_grid(3, &[16, 16, 16], Topology::Bounded, Extent::unit(), None)?;
    let model = CoefficientModel::trig(2.0, 1.0, vec![0]);
    let cell_grid = build_grid(3, &[8, 4, 4], Topology::Periodic, Extent::unit(), None)?;
    let cfg = SolverConfig { tol: opts.solver_tol, max_iter: 20000, preconditioner: None };
    let cell = solve_cell(Some(&model), &model, [0.0; 3], &cell_grid, &cfg)?.solution;
    let eps = 0.5;
    let u0 = DiscreteField::constant(&g, Location::Edge, &[0.3, -1.2, 0.7]);
    let classical = classical_first_order(&u0, &cell, eps, true)?.pieces.assemble()?;
    let p = build_partition(&g, 1.0, eps, None)?;
    let (defect, _) = p.normalization_defect(&g);
    report.le(s, "partition sums to one", defect, 1e-12);
    let av = local_averages(&u0, &curl(&u0)?, &p)?;
    let averaged = averaged_first_order(&u0, &cell, &p, &av, eps, None)?;
    report.le(s, "averaged = classical for constant u0", averaged.pieces.assemble()?.sub(&classical)?.max_abs(), 1e-10);
    let ct = boundary_cutoff(&g, 0.25)?;
    let w1 = apply_cutoff(&averaged.pieces, &ct)?.assemble()?;
    let trace = g.boundary_entities(Location::Edge).iter().map(|&i| w1.values()[i].abs()).fold(0.0, f64::max);
    report.le(s, "cutoff corrector tangential trace", trace, 0.0);
    report.le(s, "eps |grad tau| bounded", ct.scaled_gradient_max(), 2.0);
    Ok(())
}

/// Runs the selected checks. Failures (including solver or construction
/// errors) are reported as results.
pub fn check_suite(opts: &CheckOptions) -> CheckReport {
    let mut report = CheckReport::default();
    for scope in &opts.scopes {
        let outcome = match scope {
            CheckScope::Mimetic => mimetic(&mut report, opts.seed),
            CheckScope::Identity => identity(&mut report, opts.seed),
            CheckScope::Cell => cell_checks(&mut report, opts),
            CheckScope::Bounds => {
                bounds_checks(&mut report, opts);
                Ok(())
            }
            CheckScope::Residual => {
                residual_checks(&mut report, opts);
                Ok(())
            }
            CheckScope::Corrector => corrector_checks(&mut report, opts),
        };
        if let Err(e) = outcome {
            report.error(*scope, format!("{scope:?} checks"), e);
        }
    }
    report
}
