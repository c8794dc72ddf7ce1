//! Periodic cell problems, homogenized tensors and residual fields.

use std::collections::HashMap;
use std::sync::Mutex;

use log::debug;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bvp::cg::{
    cg_solve, IdentityPreconditioner, Jacobi, LinearOperator, Preconditioner, PreconditionerKind, Projector,
    SolveReport, SolverConfig,
};
use crate::coeff::{sample_on_cell, CoefficientModel, Mat3, SampledCoefficient};
use crate::error::{Error, Result};
use crate::mesh::ops::{curl_into, curl_t_into, curl_t_sq_add, grad_into, grad_t_into, grad_t_sq_add};
use crate::mesh::spectral::{dual_scalar_potential, face_vector_potential, HelmholtzProjector, PeriodicLaplacian};
use crate::mesh::{
    build_grid, curl, curl_star, div_star, dual_grad, grad, inner_product, norm_l2, DiscreteField, Extent, GridRef,
    Location, Topology,
};

/// Cell-solve settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CellConfig {
    /// Cells per axis along oscillating directions.
    pub resolution: usize,
    pub solver: SolverConfig,
    /// Use 4 cells along axes where the coefficient does not depend on `y`.
    /// The discrete solution is translation invariant there, so this is exact.
    pub reduce_flat_axes: bool,
}

impl Default for CellConfig {
    fn default() -> Self {
        CellConfig {
            resolution: 64,
            solver: SolverConfig { tol: 1e-10, max_iter: 5000, preconditioner: None },
            reduce_flat_axes: true,
        }
    }
}

impl CellConfig {
    pub fn with_resolution(resolution: usize) -> Self {
        CellConfig { resolution, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.resolution < 2 {
            return Err(Error::Config("cell resolution must be at least 2".into()));
        }
        self.solver.validate()
    }

    /// Periodic unit-cell grid suited to `models`.
    pub fn grid_for(&self, dims: usize, models: &[&CoefficientModel]) -> Result<GridRef> {
        let mut res = vec![self.resolution; dims];
        if self.reduce_flat_axes {
            let osc: Vec<usize> = models.iter().flat_map(|m| m.oscillation_axes()).collect();
            for (j, r) in res.iter_mut().enumerate() {
                if !osc.contains(&j) {
                    *r = self.resolution.min(4);
                }
            }
        }
        build_grid(dims, &res, Topology::Periodic, Extent::unit(), None)
    }
}

fn unit_edge_field(grid: &GridRef, r: usize) -> Vec<f64> {
    let mut e = vec![0.0; grid.entity_count(Location::Edge)];
    let off = grid.component_offset(Location::Edge, r);
    e[off..off + grid.component_len(Location::Edge, r)].fill(1.0);
    e
}

fn unit_face_field(grid: &GridRef, r: usize) -> Vec<f64> {
    let mut f = vec![0.0; grid.entity_count(Location::Face)];
    let off = grid.component_offset(Location::Face, r);
    f[off..off + grid.component_len(Location::Face, r)].fill(1.0);
    f
}

fn expect_periodic(c: &SampledCoefficient, loc: Location) -> Result<()> {
    if !c.grid().is_periodic() {
        return Err(Error::NotPeriodic);
    }
    if c.location() != loc {
        return Err(Error::WrongLocation { expected: loc, found: c.location() });
    }
    Ok(())
}

/// `w -> grad^T(b grad w)` on a periodic grid.
struct ScalarCellOperator<'a> {
    grid: &'a GridRef,
    b: &'a [f64],
}

impl LinearOperator for ScalarCellOperator<'_> {
    fn len(&self) -> usize {
        self.grid.entity_count(Location::Node)
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let mut e = vec![0.0; self.b.len()];
        grad_into(self.grid, x, &mut e);
        for (v, w) in e.iter_mut().zip(self.b) {
            *v *= w;
        }
        grad_t_into(self.grid, &e, y);
    }
}

/// `N -> curl^T(a curl N)` on a periodic grid.
struct CurlCellOperator<'a> {
    grid: &'a GridRef,
    a: &'a [f64],
}

impl LinearOperator for CurlCellOperator<'_> {
    fn len(&self) -> usize {
        self.grid.entity_count(Location::Edge)
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let mut f = vec![0.0; self.a.len()];
        curl_into(self.grid, x, &mut f);
        for (v, w) in f.iter_mut().zip(self.a) {
            *v *= w;
        }
        curl_t_into(self.grid, &f, y);
    }
}

struct MeanProjector;

impl Projector for MeanProjector {
    fn project(&self, x: &mut [f64]) {
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        x.iter_mut().for_each(|v| *v -= mean);
    }
}

struct HelmholtzGauge(HelmholtzProjector);

impl Projector for HelmholtzGauge {
    fn project(&self, x: &mut [f64]) {
        self.0.project(x);
    }
}

struct ScaledInverseLaplacian {
    lap: PeriodicLaplacian,
    components: Vec<(usize, usize)>,
    project: Option<HelmholtzProjector>,
}

impl Preconditioner for ScaledInverseLaplacian {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        z.copy_from_slice(r);
        if let Some(p) = &self.project {
            p.project(z);
        }
        for &(off, len) in &self.components {
            self.lap.solve_in_place(&mut z[off..off + len], 1.0);
        }
        if let Some(p) = &self.project {
            p.project(z);
        }
    }
}

fn component_ranges(grid: &GridRef, loc: Location) -> Vec<(usize, usize)> {
    (0..grid.components(loc)).map(|c| (grid.component_offset(loc, c), grid.component_len(loc, c))).collect()
}

fn pc_name(kind: PreconditionerKind) -> &'static str {
    match kind {
        PreconditionerKind::None => "none",
        PreconditionerKind::Jacobi => "jacobi",
        PreconditionerKind::SpectralConstant => "spectral-constant",
        PreconditionerKind::Multigrid => "multigrid",
    }
}

/// Zero-mean node field `w^r` with `<b(e_r + grad w), grad psi> = 0` for all `psi`.
pub fn solve_scalar_cell(
    b: &SampledCoefficient,
    r: usize,
    config: &SolverConfig,
) -> Result<(DiscreteField, SolveReport)> {
    config.validate()?;
    expect_periodic(b, Location::Edge)?;
    let g = b.grid().clone();
    if r >= g.dims() {
        return Err(Error::Config(format!("direction {r} outside a {}-D cell", g.dims())));
    }
    let bw = b.operator_weights()?;
    let op = ScalarCellOperator { grid: &g, b: &bw };
    let mut flux = unit_edge_field(&g, r);
    for (v, w) in flux.iter_mut().zip(&bw) {
        *v *= w;
    }
    let mut rhs = vec![0.0; op.len()];
    grad_t_into(&g, &flux, &mut rhs);
    rhs.iter_mut().for_each(|v| *v = -*v);

    let kind = config.preconditioner.unwrap_or(PreconditionerKind::SpectralConstant);
    let pc: Box<dyn Preconditioner> = match kind {
        PreconditionerKind::None => Box::new(IdentityPreconditioner),
        PreconditionerKind::Jacobi => {
            let mut d = vec![0.0; op.len()];
            grad_t_sq_add(&g, &bw, &mut d);
            Box::new(Jacobi::new(&d))
        }
        PreconditionerKind::SpectralConstant => Box::new(ScaledInverseLaplacian {
            lap: PeriodicLaplacian::weighted(&g, b.mean_weights()?)?,
            components: component_ranges(&g, Location::Node),
            project: None,
        }),
        PreconditionerKind::Multigrid => {
            return Err(Error::Config("multigrid is not available for periodic cell problems".into()))
        }
    };
    let (mut x, report) =
        cg_solve(&op, &rhs, None, pc.as_ref(), Some(&MeanProjector), config.tol, config.max_iter, pc_name(kind))
            .map_err(Error::Solve)?;
    MeanProjector.project(&mut x);
    Ok((DiscreteField::from_values(&g, Location::Node, x)?, report))
}

/// Divergence-free zero-mean edge field `N^r` with
/// `<a(e_r + curl N), curl v> = 0` for all `v`.
pub fn solve_curl_cell(
    a: &SampledCoefficient,
    r: usize,
    config: &SolverConfig,
) -> Result<(DiscreteField, SolveReport)> {
    config.validate()?;
    expect_periodic(a, Location::Face)?;
    let g = a.grid().clone();
    if g.dims() != 3 {
        return Err(Error::NotThreeDimensional);
    }
    if r >= 3 {
        return Err(Error::Config(format!("direction {r} outside a 3-D cell")));
    }
    let aw = a.operator_weights()?;
    let op = CurlCellOperator { grid: &g, a: &aw };
    let mut flux = unit_face_field(&g, r);
    for (v, w) in flux.iter_mut().zip(&aw) {
        *v *= w;
    }
    let mut rhs = vec![0.0; op.len()];
    curl_t_into(&g, &flux, &mut rhs);
    rhs.iter_mut().for_each(|v| *v = -*v);
    let gauge = HelmholtzGauge(HelmholtzProjector::new(&g)?);

    let kind = config.preconditioner.unwrap_or(PreconditionerKind::SpectralConstant);
    let pc: Box<dyn Preconditioner> = match kind {
        PreconditionerKind::None => Box::new(IdentityPreconditioner),
        PreconditionerKind::Jacobi => {
            let mut d = vec![0.0; op.len()];
            curl_t_sq_add(&g, &aw, &mut d);
            Box::new(Jacobi::new(&d))
        }
        PreconditionerKind::SpectralConstant => {
            let m = a.mean_weights()?;
            let abar = (m[0] + m[1] + m[2]) / 3.0;
            Box::new(ScaledInverseLaplacian {
                lap: PeriodicLaplacian::weighted(&g, [abar; 3])?,
                components: component_ranges(&g, Location::Edge),
                project: Some(HelmholtzProjector::new(&g)?),
            })
        }
        PreconditionerKind::Multigrid => {
            return Err(Error::Config("multigrid is not available for periodic cell problems".into()))
        }
    };
    let (mut x, report) =
        cg_solve(&op, &rhs, None, pc.as_ref(), Some(&gauge), config.tol, config.max_iter, pc_name(kind))
            .map_err(Error::Solve)?;
    gauge.project(&mut x);
    Ok((DiscreteField::from_values(&g, Location::Edge, x)?, report))
}

/// `coef (e_r + d)` with `d` an edge or face field and `coef` matching weights.
fn flux_field(coef: &[f64], r: usize, d: &DiscreteField) -> DiscreteField {
    let g = d.grid();
    let loc = d.location();
    let off = g.component_offset(loc, r);
    let len = g.component_len(loc, r);
    let v = d
        .values()
        .iter()
        .enumerate()
        .map(|(i, x)| coef[i] * (x + if i >= off && i < off + len { 1.0 } else { 0.0 }))
        .collect();
    DiscreteField::from_raw(g, loc, v)
}

fn shifted(r: usize, d: &DiscreteField) -> DiscreteField {
    let g = d.grid();
    let loc = d.location();
    let off = g.component_offset(loc, r);
    let len = g.component_len(loc, r);
    let mut out = d.clone();
    out.values_mut()[off..off + len].iter_mut().for_each(|v| *v += 1.0);
    out
}

fn energy_matrix(coef: &[f64], fields: &[DiscreteField], dims: usize) -> Result<Mat3> {
    let vol = fields[0].grid().domain_volume();
    let mut m = [[0.0; 3]; 3];
    for j in 0..dims {
        let q = flux_field(coef, j, &fields[j]);
        for i in 0..dims {
            m[i][j] = inner_product(&q, &shifted(i, &fields[i]))? / vol;
        }
    }
    for i in 0..dims {
        for j in 0..i {
            let s = 0.5 * (m[i][j] + m[j][i]);
            m[i][j] = s;
            m[j][i] = s;
        }
    }
    Ok(m)
}

/// `b0_ij = <b(e_j + grad w^j), e_i + grad w^i> / |Y|`, symmetrized.
pub fn homogenized_b(b: &SampledCoefficient, w: &[DiscreteField]) -> Result<Mat3> {
    expect_periodic(b, Location::Edge)?;
    let dims = b.grid().dims();
    if w.len() != dims {
        return Err(Error::Config(format!("need {dims} scalar cell solutions")));
    }
    let grads = w.iter().map(grad).collect::<Result<Vec<_>>>()?;
    energy_matrix(&b.operator_weights()?, &grads, dims)
}

/// `a0_ij = <a(e_j + curl N^j), e_i + curl N^i> / |Y|`, symmetrized.
pub fn homogenized_a(a: &SampledCoefficient, n: &[DiscreteField]) -> Result<Mat3> {
    expect_periodic(a, Location::Face)?;
    if n.len() != 3 {
        return Err(Error::Config("need 3 curl cell solutions".into()));
    }
    let curls = n.iter().map(curl).collect::<Result<Vec<_>>>()?;
    energy_matrix(&a.operator_weights()?, &curls, 3)
}

/// Cell solutions at one macro point.
#[derive(Debug, Clone)]
pub struct CellSolution {
    pub x: [f64; 3],
    pub w: Vec<DiscreteField>,
    pub n: Vec<DiscreteField>,
    pub w_reports: Vec<SolveReport>,
    pub n_reports: Vec<SolveReport>,
}

/// Cell solutions with their samples and tensors.
#[derive(Debug, Clone)]
pub struct CellResult {
    pub solution: CellSolution,
    pub a: Option<SampledCoefficient>,
    pub b: SampledCoefficient,
    pub a0: Option<Mat3>,
    pub b0: Mat3,
}

/// Solves both cell problems at `x` (the curl problem only when `a` is given)
/// and assembles the tensors.
pub fn solve_cell(
    a: Option<&CoefficientModel>,
    b: &CoefficientModel,
    x: [f64; 3],
    cell: &GridRef,
    config: &SolverConfig,
) -> Result<CellResult> {
    let dims = cell.dims();
    let bs = sample_on_cell(b, &x, cell, Location::Edge)?;
    let mut w = vec![];
    let mut w_reports = vec![];
    for r in 0..dims {
        let (f, rep) = solve_scalar_cell(&bs, r, config).map_err(|e| e.at("scalar cell"))?;
        w.push(f);
        w_reports.push(rep);
    }
    let b0 = homogenized_b(&bs, &w)?;
    let (mut n, mut n_reports, mut a_s, mut a0) = (vec![], vec![], None, None);
    if let Some(a) = a {
        let as_ = sample_on_cell(a, &x, cell, Location::Face)?;
        for r in 0..3 {
            let (f, rep) = solve_curl_cell(&as_, r, config).map_err(|e| e.at("curl cell"))?;
            n.push(f);
            n_reports.push(rep);
        }
        a0 = Some(homogenized_a(&as_, &n)?);
        a_s = Some(as_);
    }
    Ok(CellResult { solution: CellSolution { x, w, n, w_reports, n_reports }, a: a_s, b: bs, a0, b0 })
}

/// Structural diagnostics of one residual field.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct ResidualDiagnostic {
    pub norm: f64,
    /// `|curl* G_r|` for faces, `|div* g_r|` for edges.
    pub derivative_norm: f64,
    /// Derivative norm relative to that of the coefficient flux `coef e_r`,
    /// the quantity the cell solve drives to its tolerance.
    pub derivative_relative: f64,
    pub mean_abs: f64,
    /// Potential reconstruction mismatch relative to `norm`, if requested.
    pub potential_mismatch: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ResidualFields {
    pub big_g: Vec<DiscreteField>,
    pub small_g: Vec<DiscreteField>,
    pub big_g_diag: Vec<ResidualDiagnostic>,
    pub small_g_diag: Vec<ResidualDiagnostic>,
    pub big_g_potential: Vec<DiscreteField>,
    pub small_g_potential: Vec<DiscreteField>,
}

fn mean_abs(f: &DiscreteField) -> f64 {
    f.component_means().iter().fold(0.0, |m, v| m.max(v.abs()))
}

fn residual_field(coef: &[f64], r: usize, d: &DiscreteField, t: &Mat3) -> DiscreteField {
    let mut q = flux_field(coef, r, d);
    let g = q.grid().clone();
    let loc = q.location();
    for i in 0..g.components(loc) {
        q.component_mut(i).iter_mut().for_each(|v| *v -= t[i][r]);
    }
    q
}

/// `G_r = a(e_r + curl N^r) - a0 e_r` on faces and
/// `g_r = b(e_r + grad w^r) - b0 e_r` on edges, with structure diagnostics
/// and optional potentials (`dual_grad Gt_r = G_r`, `curl* gt_r = g_r`).
pub fn residual_fields(
    a: Option<(&SampledCoefficient, &[DiscreteField], &Mat3)>,
    b: (&SampledCoefficient, &[DiscreteField], &Mat3),
    potentials: bool,
) -> Result<ResidualFields> {
    let mut out = ResidualFields {
        big_g: vec![],
        small_g: vec![],
        big_g_diag: vec![],
        small_g_diag: vec![],
        big_g_potential: vec![],
        small_g_potential: vec![],
    };
    let (bs, w, b0) = b;
    expect_periodic(bs, Location::Edge)?;
    if w.is_empty() {
        return Err(Error::Config("missing scalar cell solutions".into()));
    }
    let bw = bs.operator_weights()?;
    let g = bs.grid().clone();
    for (r, wr) in w.iter().enumerate() {
        let field = residual_field(&bw, r, &grad(wr)?, b0);
        let d = norm_l2(&div_star(&field)?);
        let scale = {
            let mut e = unit_edge_field(&g, r);
            e.iter_mut().zip(&bw).for_each(|(v, c)| *v *= c);
            norm_l2(&div_star(&DiscreteField::from_raw(&g, Location::Edge, e))?)
        };
        let norm = norm_l2(&field);
        let mut diag = ResidualDiagnostic {
            norm,
            derivative_norm: d,
            derivative_relative: if scale > 0.0 { d / scale } else { d },
            mean_abs: mean_abs(&field),
            potential_mismatch: None,
        };
        if potentials && g.dims() == 3 {
            let p = face_vector_potential(&field)?;
            let back = curl_star(&p)?;
            let mis = norm_l2(&back.sub(&field)?);
            diag.potential_mismatch = Some(if norm > 0.0 { mis / norm } else { mis });
            out.small_g_potential.push(p);
        }
        out.small_g.push(field);
        out.small_g_diag.push(diag);
    }
    if let Some((as_, n, a0)) = a {
        expect_periodic(as_, Location::Face)?;
        if **as_.grid() != *g {
            return Err(Error::GridMismatch);
        }
        let aw = as_.operator_weights()?;
        for (r, nr) in n.iter().enumerate() {
            let field = residual_field(&aw, r, &curl(nr)?, a0);
            let d = norm_l2(&curl_star(&field)?);
            let scale = {
                let mut f = unit_face_field(&g, r);
                f.iter_mut().zip(&aw).for_each(|(v, c)| *v *= c);
                norm_l2(&curl_star(&DiscreteField::from_raw(&g, Location::Face, f))?)
            };
            let norm = norm_l2(&field);
            let mut diag = ResidualDiagnostic {
                norm,
                derivative_norm: d,
                derivative_relative: if scale > 0.0 { d / scale } else { d },
                mean_abs: mean_abs(&field),
                potential_mismatch: None,
            };
            if potentials {
                let p = dual_scalar_potential(&field)?;
                let back = dual_grad(&p)?;
                let mis = norm_l2(&back.sub(&field)?);
                diag.potential_mismatch = Some(if norm > 0.0 { mis / norm } else { mis });
                out.big_g_potential.push(p);
            }
            out.big_g.push(field);
            out.big_g_diag.push(diag);
        }
    }
    Ok(out)
}

/// Homogenized coefficients sampled where the homogenized solver needs
/// them: `a0` on macro faces, `b0` on macro edges.
#[derive(Debug, Clone)]
pub struct HomogenizedTensors {
    pub macro_grid: GridRef,
    pub a0: Option<SampledCoefficient>,
    pub b0: SampledCoefficient,
    /// Tensors of the `y`-periodic base when they do not depend on `x`
    /// beyond a scalar modulation.
    pub a0_base: Option<Mat3>,
    pub b0_base: Option<Mat3>,
    /// Number of distinct cell solves performed.
    pub cell_solves: usize,
}

impl HomogenizedTensors {
    /// Tensor fields over `macro_grid` from one cell result computed for the
    /// `y`-periodic bases of `a` and `b`. Only models that are independent of
    /// `x` or scalar-modulated in `x` are accepted.
    pub fn from_cell_result(
        result: &CellResult,
        a: Option<&CoefficientModel>,
        b: &CoefficientModel,
        macro_grid: &GridRef,
    ) -> Result<Self> {
        fn lift(model: &CoefficientModel, m: Mat3, grid: &GridRef, loc: Location) -> Result<SampledCoefficient> {
            let uniform = SampledCoefficient::uniform(grid, loc, m);
            match model.modulation() {
                Some((offset, slope)) => {
                    Ok(uniform.modulated(|x| offset + slope[0] * x[0] + slope[1] * x[1] + slope[2] * x[2]))
                }
                None if model.is_x_dependent() => {
                    Err(Error::Config("coefficient depends on x beyond a scalar modulation".into()))
                }
                None => Ok(uniform),
            }
        }
        let b0 = lift(b, result.b0, macro_grid, Location::Edge)?;
        let a0 = match (a, result.a0) {
            (Some(a), Some(m)) => Some(lift(a, m, macro_grid, Location::Face)?),
            (None, _) => None,
            (Some(_), None) => return Err(Error::Config("cell result carries no a0".into())),
        };
        Ok(HomogenizedTensors {
            macro_grid: macro_grid.clone(),
            a0,
            b0,
            a0_base: result.a0,
            b0_base: Some(result.b0),
            cell_solves: 1,
        })
    }
}

/// Insert-once cache of cell tensors keyed by the macro point.
#[derive(Default)]
pub struct TensorCache {
    map: Mutex<HashMap<[u64; 3], Mat3>>,
}

impl TensorCache {
    pub fn len(&self) -> usize {
        self.map.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn get_or_insert(&self, x: [f64; 3], f: impl FnOnce() -> Result<Mat3>) -> Result<Mat3> {
        let key = x.map(f64::to_bits);
        if let Some(m) = self.map.lock().unwrap().get(&key) {
            return Ok(*m);
        }
        let m = f()?;
        Ok(*self.map.lock().unwrap().entry(key).or_insert(m))
    }
}

#[derive(Clone, Copy)]
enum Kind {
    A,
    B,
}

fn point_tensor(model: &CoefficientModel, kind: Kind, x: [f64; 3], cell: &GridRef, cfg: &SolverConfig) -> Result<Mat3> {
    match kind {
        Kind::B => {
            let bs = sample_on_cell(model, &x, cell, Location::Edge)?;
            let w =
                (0..cell.dims()).map(|r| solve_scalar_cell(&bs, r, cfg).map(|s| s.0)).collect::<Result<Vec<_>>>()?;
            homogenized_b(&bs, &w)
        }
        Kind::A => {
            let as_ = sample_on_cell(model, &x, cell, Location::Face)?;
            let n = (0..3).map(|r| solve_curl_cell(&as_, r, cfg).map(|s| s.0)).collect::<Result<Vec<_>>>()?;
            homogenized_a(&as_, &n)
        }
    }
}

/// Solves the cell problem at every macro entity of `loc` (deduplicated
/// through `cache`) and returns full per-entity tensors.
pub fn tensor_field_pointwise(
    model: &CoefficientModel,
    a_kind: bool,
    macro_grid: &GridRef,
    loc: Location,
    cell: &CellConfig,
    cache: &TensorCache,
) -> Result<SampledCoefficient> {
    let g = macro_grid;
    let cell_grid = cell.grid_for(g.dims(), &[model])?;
    let kind = if a_kind { Kind::A } else { Kind::B };
    let n = g.entity_count(loc);
    let mats = (0..n)
        .into_par_iter()
        .map(|e| {
            let (_, x) = g.entity_position(loc, e);
            cache
                .get_or_insert(x, || point_tensor(model, kind, x, &cell_grid, &cell.solver))
                .map_err(|err| Error::Stage { stage: format!("cell solve at x = {x:?}"), source: Box::new(err) })
        })
        .collect::<Result<Vec<_>>>()?;
    SampledCoefficient::from_storage(g, loc, crate::coeff::Storage::Full(mats))
}

fn macro_tensor(
    model: &CoefficientModel,
    kind: Kind,
    macro_grid: &GridRef,
    loc: Location,
    cell: &CellConfig,
    solves: &mut usize,
) -> Result<(SampledCoefficient, Option<Mat3>)> {
    let cell_grid = cell.grid_for(macro_grid.dims(), &[model])?;
    if !model.is_x_dependent() {
        let x = model.domain.map(|d| d.center()).unwrap_or(macro_grid.extent().center());
        let m = point_tensor(model, kind, x, &cell_grid, &cell.solver)?;
        *solves += 1;
        debug!("cell tensor {m:?}");
        return Ok((SampledCoefficient::uniform(macro_grid, loc, m), Some(m)));
    }
    if let Some((offset, slope)) = model.modulation() {
        let base = model.base();
        let m = point_tensor(&base, kind, [0.0; 3], &cell_grid, &cell.solver)?;
        *solves += 1;
        let check = model.domain;
        let dims = macro_grid.dims();
        if let Some(d) = check {
            let e = macro_grid.extent();
            if !d.contains(&e.lo, dims, 1e-12) || !d.contains(&e.hi, dims, 1e-12) {
                return Err(Error::Coefficient("macro grid extends beyond the model domain".into()));
            }
        }
        let sampled = SampledCoefficient::uniform(macro_grid, loc, m)
            .modulated(|x| offset + slope[0] * x[0] + slope[1] * x[1] + slope[2] * x[2]);
        return Ok((sampled, Some(m)));
    }
    let cache = TensorCache::default();
    let s = tensor_field_pointwise(model, matches!(kind, Kind::A), macro_grid, loc, cell, &cache)?;
    *solves += cache.len();
    Ok((s, None))
}

/// Homogenized tensor field over a macro grid: `a0` (3-D only, when `a` is
/// given) on faces and `b0` on edges.
pub fn tensor_field_over_macro(
    a: Option<&CoefficientModel>,
    b: &CoefficientModel,
    macro_grid: &GridRef,
    cell: &CellConfig,
) -> Result<HomogenizedTensors> {
    cell.validate()?;
    let mut solves = 0;
    let (b0, b0_base) = macro_tensor(b, Kind::B, macro_grid, Location::Edge, cell, &mut solves)?;
    let (a0, a0_base) = match a {
        Some(a) => {
            if macro_grid.dims() != 3 {
                return Err(Error::NotThreeDimensional);
            }
            let (s, m) = macro_tensor(a, Kind::A, macro_grid, Location::Face, cell, &mut solves)?;
            (Some(s), m)
        }
        None => (None, None),
    };
    Ok(HomogenizedTensors { macro_grid: macro_grid.clone(), a0, b0, a0_base, b0_base, cell_solves: solves })
}

/// Row-major 3x3 tensor with metadata, for JSON dumps.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorDump {
    pub name: String,
    pub entries: [f64; 9],
    pub dims: usize,
    pub cell_resolution: [usize; 3],
    pub x: [f64; 3],
    pub iterations: Vec<usize>,
}

impl TensorDump {
    pub fn new(name: &str, m: &Mat3, cell: &GridRef, x: [f64; 3], reports: &[SolveReport]) -> Self {
        let mut entries = [0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                entries[3 * i + j] = m[i][j];
            }
        }
        TensorDump {
            name: name.into(),
            entries,
            dims: cell.dims(),
            cell_resolution: cell.resolution(),
            x,
            iterations: reports.iter().map(|r| r.iterations).collect(),
        }
    }
}
