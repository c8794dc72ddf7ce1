//! First-order two-scale approximations: the classical corrector with a
//! boundary cutoff and the partition-of-unity averaged corrector.

use rayon::prelude::*;
use serde::Serialize;

use crate::cell::CellSolution;
use crate::error::{Error, Result};
use crate::mesh::grid::unravel;
use crate::mesh::interp::{restagger, sample_clamped, sample_periodic};
use crate::mesh::{curl, grad, DiscreteField, Extent, GridRef, Location, Region};

/// Evaluates `f(component, position)` at every entity in parallel, zeroing
/// inactive entities when `masked`.
fn eval_field(
    grid: &GridRef,
    loc: Location,
    masked: bool,
    f: impl Fn(usize, &[f64; 3]) -> f64 + Sync,
) -> DiscreteField {
    let active = grid.active(loc);
    let values: Vec<f64> = (0..grid.entity_count(loc))
        .into_par_iter()
        .map(|flat| {
            if masked && !active[flat] {
                return 0.0;
            }
            let (c, x) = grid.entity_position(loc, flat);
            f(c, &x)
        })
        .collect();
    DiscreteField::from_raw(grid, loc, values)
}

fn mask_inactive(field: &mut DiscreteField) {
    let g = field.grid().clone();
    let loc = field.location();
    for (v, &on) in field.values_mut().iter_mut().zip(g.active(loc)) {
        if !on {
            *v = 0.0;
        }
    }
}

fn scaled(x: &[f64; 3], eps: f64) -> [f64; 3] {
    [x[0] / eps, x[1] / eps, x[2] / eps]
}

/// Boundary cutoff `tau`: a clamped linear ramp of the distance to the
/// boundary over width `eps`.
#[derive(Debug, Clone)]
pub struct Cutoff {
    tau: DiscreteField,
    eps: f64,
}

impl Cutoff {
    pub fn tau(&self) -> &DiscreteField {
        &self.tau
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    /// Ramp averaged onto edge midpoints.
    pub fn edge_values(&self) -> DiscreteField {
        let g = self.tau.grid();
        let mut vals = Vec::with_capacity(g.entity_count(Location::Edge));
        for k in 0..g.components(Location::Edge) {
            vals.extend(restagger(&self.tau, 0, Location::Edge, k));
        }
        DiscreteField::from_raw(g, Location::Edge, vals)
    }

    /// `max |eps grad tau|` over edges.
    pub fn scaled_gradient_max(&self) -> f64 {
        let gt = grad(&self.tau).expect("node field");
        gt.max_abs() * self.eps
    }
}

pub fn boundary_cutoff(grid: &GridRef, eps: f64) -> Result<Cutoff> {
    if grid.is_periodic() {
        return Err(Error::NotBounded);
    }
    let h = grid.spacing()[..grid.dims()].iter().cloned().fold(0.0, f64::max);
    if !(eps.is_finite() && eps >= h) {
        return Err(Error::Unresolvable {
            what: "cutoff",
            detail: format!("width {eps} is below the grid spacing {h}"),
        });
    }
    let tau = eval_field(grid, Location::Node, true, |_, x| (grid.distance_to_boundary(x) / eps).clamp(0.0, 1.0));
    Ok(Cutoff { tau, eps })
}

/// The separately stored terms of `u_1 = u0 + n_term + grad(scalar)`
/// (edge fields) or `u_1 = u0 + scalar` (node fields).
#[derive(Debug, Clone)]
pub struct CorrectorPieces {
    pub u0: DiscreteField,
    /// `eps N^r(x/eps) C_r(x)` on edges; absent for node problems.
    pub n_term: Option<DiscreteField>,
    /// `eps w^r(x/eps) V_r(x)` on nodes.
    pub scalar: DiscreteField,
    cutoff_applied: bool,
}

impl CorrectorPieces {
    pub fn cutoff_applied(&self) -> bool {
        self.cutoff_applied
    }

    pub fn assemble(&self) -> Result<DiscreteField> {
        let mut out = self.u0.clone();
        match self.u0.location() {
            Location::Edge => {
                if let Some(n) = &self.n_term {
                    out.axpy(1.0, n)?;
                }
                out.axpy(1.0, &grad(&self.scalar)?)?;
            }
            Location::Node => out.axpy(1.0, &self.scalar)?,
            found => return Err(Error::WrongLocation { expected: Location::Edge, found }),
        }
        if self.cutoff_applied {
            mask_inactive(&mut out);
        }
        Ok(out)
    }
}

/// Multiplies both corrector terms by the cutoff. The result has zero
/// tangential trace (edges) or zero boundary values (nodes).
pub fn apply_cutoff(pieces: &CorrectorPieces, cutoff: &Cutoff) -> Result<CorrectorPieces> {
    if !pieces.u0.same_grid(cutoff.tau.grid()) {
        return Err(Error::GridMismatch);
    }
    if pieces.cutoff_applied {
        return Ok(pieces.clone());
    }
    let mut scalar = pieces.scalar.clone();
    for (v, t) in scalar.values_mut().iter_mut().zip(cutoff.tau.values()) {
        *v *= t;
    }
    let n_term = pieces.n_term.as_ref().map(|n| {
        let te = cutoff.edge_values();
        let mut n = n.clone();
        for (v, t) in n.values_mut().iter_mut().zip(te.values()) {
            *v *= t;
        }
        mask_inactive(&mut n);
        n
    });
    Ok(CorrectorPieces { u0: pieces.u0.clone(), n_term, scalar, cutoff_applied: true })
}

/// Output of the Maxwell constructions.
#[derive(Debug, Clone)]
pub struct FirstOrder {
    /// `u0 + grad_y w^r(x/eps) V_r` on edges.
    pub field_approx: DiscreteField,
    /// `curl u0 + curl_y N^r(x/eps) C_r` on faces.
    pub curl_approx: DiscreteField,
    pub pieces: CorrectorPieces,
}

/// Output of the scalar (node) constructions.
#[derive(Debug, Clone)]
pub struct EllipticFirstOrder {
    /// `grad u0 + grad_y w^r(x/eps) G_r` on edges.
    pub grad_approx: DiscreteField,
    pub pieces: CorrectorPieces,
}

/// Cell fields and their `y`-derivatives on the cell grid.
struct CellFields {
    w: Vec<DiscreteField>,
    grad_w: Vec<DiscreteField>,
    n: Vec<DiscreteField>,
    curl_n: Vec<DiscreteField>,
}

impl CellFields {
    fn new(cell: &CellSolution, domain: &GridRef, need_n: bool) -> Result<Self> {
        let d = domain.dims();
        if cell.w.len() != d {
            return Err(Error::GridMismatch);
        }
        for f in cell.w.iter().chain(&cell.n) {
            let g = f.grid();
            if !g.is_periodic() || g.dims() != d {
                return Err(Error::GridMismatch);
            }
        }
        if need_n && cell.n.len() != 3 {
            return Err(Error::Config("cell solution carries no curl-cell fields".into()));
        }
        let grad_w = cell.w.iter().map(grad).collect::<Result<Vec<_>>>()?;
        let curl_n = if need_n { cell.n.iter().map(curl).collect::<Result<Vec<_>>>()? } else { vec![] };
        Ok(CellFields { w: cell.w.clone(), grad_w, n: if need_n { cell.n.clone() } else { vec![] }, curl_n })
    }
}

/// Builds the Maxwell approximations given the macroscopic multipliers
/// `v(r, x)` (for `w^r`) and `c(r, x)` (for `N^r`).
fn maxwell_first_order(
    u0: &DiscreteField,
    curl_u0: &DiscreteField,
    cf: &CellFields,
    eps: f64,
    with_epsilon_terms: bool,
    v: &(dyn Fn(usize, &[f64; 3]) -> f64 + Sync),
    c: &(dyn Fn(usize, &[f64; 3]) -> f64 + Sync),
) -> FirstOrder {
    let g = u0.grid();
    let mut field_approx = eval_field(g, Location::Edge, true, |k, x| {
        let y = scaled(x, eps);
        (0..3).map(|r| sample_periodic(&cf.grad_w[r], k, &y) * v(r, x)).sum()
    });
    field_approx.axpy(1.0, u0).expect("same grid");
    let mut curl_approx = eval_field(g, Location::Face, true, |k, x| {
        let y = scaled(x, eps);
        (0..3).map(|r| sample_periodic(&cf.curl_n[r], k, &y) * c(r, x)).sum()
    });
    curl_approx.axpy(1.0, curl_u0).expect("same grid");
    let (n_term, scalar) = if with_epsilon_terms {
        let n_term = eval_field(g, Location::Edge, false, |k, x| {
            let y = scaled(x, eps);
            eps * (0..3).map(|r| sample_periodic(&cf.n[r], k, &y) * c(r, x)).sum::<f64>()
        });
        let scalar = eval_field(g, Location::Node, false, |_, x| {
            let y = scaled(x, eps);
            eps * (0..3).map(|r| sample_periodic(&cf.w[r], 0, &y) * v(r, x)).sum::<f64>()
        });
        (n_term, scalar)
    } else {
        (DiscreteField::zeros(g, Location::Edge), DiscreteField::zeros(g, Location::Node))
    };
    FirstOrder {
        field_approx,
        curl_approx,
        pieces: CorrectorPieces { u0: u0.clone(), n_term: Some(n_term), scalar, cutoff_applied: false },
    }
}

fn elliptic_first_order(
    u0: &DiscreteField,
    grad_u0: &DiscreteField,
    cf: &CellFields,
    eps: f64,
    with_epsilon_terms: bool,
    gm: &(dyn Fn(usize, &[f64; 3]) -> f64 + Sync),
) -> EllipticFirstOrder {
    let g = u0.grid();
    let d = g.dims();
    let mut grad_approx = eval_field(g, Location::Edge, true, |k, x| {
        let y = scaled(x, eps);
        (0..d).map(|r| sample_periodic(&cf.grad_w[r], k, &y) * gm(r, x)).sum()
    });
    grad_approx.axpy(1.0, grad_u0).expect("same grid");
    let scalar = if with_epsilon_terms {
        eval_field(g, Location::Node, false, |_, x| {
            let y = scaled(x, eps);
            eps * (0..d).map(|r| sample_periodic(&cf.w[r], 0, &y) * gm(r, x)).sum::<f64>()
        })
    } else {
        DiscreteField::zeros(g, Location::Node)
    };
    EllipticFirstOrder {
        grad_approx,
        pieces: CorrectorPieces { u0: u0.clone(), n_term: None, scalar, cutoff_applied: false },
    }
}

fn check_eps(grid: &GridRef, eps: f64) -> Result<()> {
    if !(eps.is_finite() && eps > 0.0) {
        return Err(Error::Config(format!("epsilon must be positive, got {eps}")));
    }
    let h = grid.spacing()[..grid.dims()].iter().cloned().fold(0.0, f64::max);
    if eps < h {
        return Err(Error::Unresolvable { what: "corrector", detail: format!("epsilon {eps} below grid spacing {h}") });
    }
    Ok(())
}

/// Classical corrector for an edge field `u0` on a 3-D grid.
pub fn classical_first_order(
    u0: &DiscreteField,
    cell: &CellSolution,
    eps: f64,
    with_epsilon_terms: bool,
) -> Result<FirstOrder> {
    u0.expect_location(Location::Edge)?;
    let g = u0.grid();
    check_eps(g, eps)?;
    let cf = CellFields::new(cell, g, true)?;
    let cu = curl(u0)?;
    let v = |r: usize, x: &[f64; 3]| sample_clamped(u0, r, x);
    let c = |r: usize, x: &[f64; 3]| sample_clamped(&cu, r, x);
    Ok(maxwell_first_order(u0, &cu, &cf, eps, with_epsilon_terms, &v, &c))
}

/// Classical corrector for a node field `u0` of a scalar problem.
pub fn classical_first_order_elliptic(
    u0: &DiscreteField,
    cell: &CellSolution,
    eps: f64,
    with_epsilon_terms: bool,
) -> Result<EllipticFirstOrder> {
    u0.expect_location(Location::Node)?;
    let g = u0.grid();
    check_eps(g, eps)?;
    let cf = CellFields::new(cell, g, false)?;
    let gu = grad(u0)?;
    let gm = |r: usize, x: &[f64; 3]| sample_clamped(&gu, r, x);
    Ok(elliptic_first_order(u0, &gu, &cf, eps, with_epsilon_terms, &gm))
}

// smoothstep S(u) with S(u) + S(1 - u) = 1
fn smoothstep(u: f64) -> f64 {
    if u <= 0.0 {
        0.0
    } else if u < 0.5 {
        2.0 * u * u
    } else if u < 1.0 {
        1.0 - 2.0 * (1.0 - u) * (1.0 - u)
    } else {
        1.0
    }
}

fn smoothstep_derivative(u: f64) -> f64 {
    if u <= 0.0 || u >= 1.0 {
        0.0
    } else if u < 0.5 {
        4.0 * u
    } else {
        4.0 * (1.0 - u)
    }
}

/// Overlapping lattice of cubes of side `delta = eps^t` with centers at
/// stride `delta / 2` and normalized tensor-product bumps.
#[derive(Debug, Clone, Serialize)]
pub struct PartitionOfUnity {
    extent: Extent,
    dims: usize,
    s: f64,
    t: f64,
    eps: f64,
    delta: f64,
    /// Cubes per axis; 1 along unused axes.
    counts: [usize; 3],
    global: bool,
}

impl PartitionOfUnity {
    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn exponent(&self) -> f64 {
        self.t
    }

    pub fn regularity(&self) -> f64 {
        self.s
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn is_global(&self) -> bool {
        self.global
    }

    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn stride(&self) -> f64 {
        self.delta / 2.0
    }

    /// Center and half side of cube `i`.
    pub fn cube(&self, i: usize) -> ([f64; 3], [f64; 3]) {
        let idx = unravel(&self.counts, i);
        let mut c = [0.0; 3];
        let mut half = [0.0; 3];
        for j in 0..3 {
            if j >= self.dims {
                continue;
            }
            if self.global {
                c[j] = 0.5 * (self.extent.lo[j] + self.extent.hi[j]);
                half[j] = 0.5 * self.extent.length(j);
            } else {
                c[j] = self.extent.lo[j] + (idx[j] as f64 - 1.0) * self.stride();
                half[j] = 0.5 * self.delta;
            }
        }
        (c, half)
    }

    // (lattice index, bump value, bump derivative) for cubes whose axis
    // projection covers x
    fn axis_terms(&self, axis: usize, x: f64) -> Vec<(usize, f64, f64)> {
        let u = (x - self.extent.lo[axis]) / self.stride();
        let base = u.floor() as isize;
        let mut out = Vec::with_capacity(3);
        for k in base - 1..=base + 1 {
            let idx = k + 1;
            if idx < 0 || idx as usize >= self.counts[axis] {
                continue;
            }
            let xi = u - k as f64;
            if xi.abs() >= 1.0 {
                continue;
            }
            let phi = smoothstep(1.0 - xi.abs());
            if phi == 0.0 {
                continue;
            }
            let dphi = -xi.signum() * smoothstep_derivative(1.0 - xi.abs()) / self.stride();
            out.push((idx as usize, phi, dphi));
        }
        out
    }

    /// Nonzero weights `(cube, rho, grad rho)` at `x`.
    pub fn weights_with_gradient(&self, x: &[f64; 3]) -> Vec<(usize, f64, [f64; 3])> {
        if self.global {
            return vec![(0, 1.0, [0.0; 3])];
        }
        let axes: Vec<Vec<(usize, f64, f64)>> =
            (0..3).map(|j| if j < self.dims { self.axis_terms(j, x[j]) } else { vec![(0, 1.0, 0.0)] }).collect();
        let mut raw = Vec::with_capacity(8);
        for &(k, pk, dk) in &axes[2] {
            for &(j, pj, dj) in &axes[1] {
                for &(i, pi, di) in &axes[0] {
                    let p = pi * pj * pk;
                    let dp = [di * pj * pk, pi * dj * pk, pi * pj * dk];
                    let flat = i + self.counts[0] * (j + self.counts[1] * k);
                    raw.push((flat, p, dp));
                }
            }
        }
        let s: f64 = raw.iter().map(|r| r.1).sum();
        let mut ds = [0.0; 3];
        for r in &raw {
            for a in 0..3 {
                ds[a] += r.2[a];
            }
        }
        if s <= 0.0 {
            return vec![];
        }
        raw.into_iter()
            .map(|(i, p, dp)| (i, p / s, std::array::from_fn(|a| (dp[a] * s - p * ds[a]) / (s * s))))
            .collect()
    }

    pub fn weights(&self, x: &[f64; 3]) -> Vec<(usize, f64)> {
        self.weights_with_gradient(x).into_iter().map(|(i, r, _)| (i, r)).collect()
    }

    /// `sum_j values_j rho_j(x)`.
    pub fn blend(&self, values: &[[f64; 3]], x: &[f64; 3]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for (i, r) in self.weights(x) {
            for a in 0..3 {
                out[a] += values[i][a] * r;
            }
        }
        out
    }

    /// `max |grad rho_i| * delta` over the nodes of `grid`.
    pub fn gradient_constant(&self, grid: &GridRef) -> f64 {
        (0..grid.entity_count(Location::Node))
            .into_par_iter()
            .map(|flat| {
                let (_, x) = grid.entity_position(Location::Node, flat);
                self.weights_with_gradient(&x)
                    .iter()
                    .map(|(_, _, g)| (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt())
                    .fold(0.0, f64::max)
            })
            .reduce(|| 0.0, f64::max)
            * self.delta
    }

    /// `max |1 - sum_i rho_i|` and the largest number of covering cubes
    /// over the nodes of `grid`.
    pub fn normalization_defect(&self, grid: &GridRef) -> (f64, usize) {
        (0..grid.entity_count(Location::Node))
            .into_par_iter()
            .map(|flat| {
                let (_, x) = grid.entity_position(Location::Node, flat);
                let w = self.weights(&x);
                ((1.0 - w.iter().map(|p| p.1).sum::<f64>()).abs(), w.len())
            })
            .reduce(|| (0.0, 0), |a, b| (a.0.max(b.0), a.1.max(b.1)))
    }
}

/// Partition adapted to `grid` with `delta = eps^t`, `t = 1/(1+s)` unless
/// overridden. `t = 0` yields one global cube.
pub fn build_partition(grid: &GridRef, s: f64, eps: f64, t_override: Option<f64>) -> Result<PartitionOfUnity> {
    if !(s > 0.0 && s <= 1.0) {
        return Err(Error::Config(format!("regularity s must lie in (0, 1], got {s}")));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::Config(format!("epsilon must lie in (0, 1), got {eps}")));
    }
    let t = t_override.unwrap_or(1.0 / (1.0 + s));
    if !(t.is_finite() && t >= 0.0) {
        return Err(Error::Config(format!("cube exponent must be non-negative, got {t}")));
    }
    let dims = grid.dims();
    let extent = *grid.extent();
    if t == 0.0 {
        return Ok(PartitionOfUnity { extent, dims, s, t, eps, delta: 1.0, counts: [1; 3], global: true });
    }
    let delta = eps.powf(t);
    let h = grid.spacing()[..dims].iter().cloned().fold(0.0, f64::max);
    if delta < 4.0 * h {
        return Err(Error::Unresolvable {
            what: "partition",
            detail: format!("cube size {delta:.4e} is below four grid cells ({:.4e})", 4.0 * h),
        });
    }
    let mut counts = [1; 3];
    for (j, c) in counts.iter_mut().enumerate().take(dims) {
        let k = (extent.length(j) / (delta / 2.0) - 1e-9).ceil() as usize + 1;
        // lattice indices -1..=k shifted by one
        *c = k + 2;
    }
    Ok(PartitionOfUnity { extent, dims, s, t, eps, delta, counts, global: false })
}

fn fold_axis(x: f64, lo: f64, hi: f64) -> f64 {
    let l = hi - lo;
    let mut t = (x - lo).rem_euclid(2.0 * l);
    if t > l {
        t = 2.0 * l - t;
    }
    lo + t
}

/// Even reflection of `x` into the occupied region of `grid`.
pub fn reflect_into(grid: &GridRef, x: &[f64; 3]) -> [f64; 3] {
    if grid.is_periodic() {
        return *x;
    }
    let e = grid.extent();
    let mut y = *x;
    for j in 0..grid.dims() {
        y[j] = fold_axis(x[j], e.lo[j], e.hi[j]);
    }
    if grid.region() == Region::LShape {
        let mid = e.center();
        if y[0] > mid[0] && y[1] > mid[1] {
            if y[0] - mid[0] < y[1] - mid[1] {
                y[0] = 2.0 * mid[0] - y[0];
            } else {
                y[1] = 2.0 * mid[1] - y[1];
            }
        }
    }
    y
}

/// Midpoint-rule averages of every component of `field` over each cube,
/// with the field extended by reflection.
pub fn cube_averages(field: &DiscreteField, partition: &PartitionOfUnity) -> Result<Vec<[f64; 3]>> {
    let g = field.grid();
    if g.dims() != partition.dims {
        return Err(Error::GridMismatch);
    }
    let comps = g.components(field.location());
    let h = g.spacing();
    let dims = g.dims();
    let averages = (0..partition.len())
        .into_par_iter()
        .map(|i| {
            let (c, half) = partition.cube(i);
            let mut m = [1usize; 3];
            for j in 0..dims {
                m[j] = ((2.0 * half[j] / h[j]).ceil() as usize).max(1);
            }
            let mut acc = [0.0; 3];
            for k in 0..m[2] {
                for jj in 0..m[1] {
                    for ii in 0..m[0] {
                        let sub = [ii, jj, k];
                        let mut x = [0.0; 3];
                        for a in 0..dims {
                            x[a] = c[a] - half[a] + (sub[a] as f64 + 0.5) * 2.0 * half[a] / m[a] as f64;
                        }
                        let y = reflect_into(g, &x);
                        for (r, slot) in acc.iter_mut().enumerate().take(comps) {
                            *slot += sample_clamped(field, r, &y);
                        }
                    }
                }
            }
            let n = (m[0] * m[1] * m[2]) as f64;
            acc.map(|v| v / n)
        })
        .collect::<Vec<_>>();
    if averages.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("cube averages"));
    }
    Ok(averages)
}

/// Per-cube averages `U_i` and `V_i`.
#[derive(Debug, Clone, Serialize)]
pub struct LocalAverages {
    /// Averages of the field entering the `N^r` term (curl u0), or of
    /// `grad u0` for scalar problems.
    pub u: Vec<[f64; 3]>,
    /// Averages of the field entering the `w^r` term (u0).
    pub v: Vec<[f64; 3]>,
}

pub fn local_averages(
    u0: &DiscreteField,
    curl_u0: &DiscreteField,
    partition: &PartitionOfUnity,
) -> Result<LocalAverages> {
    u0.expect_location(Location::Edge)?;
    curl_u0.expect_location(Location::Face)?;
    if !curl_u0.same_grid(u0.grid()) {
        return Err(Error::GridMismatch);
    }
    Ok(LocalAverages { u: cube_averages(curl_u0, partition)?, v: cube_averages(u0, partition)? })
}

/// Averages of `grad u0` (in `u`) and of `u0` (in `v[.][0]`) for a node field.
pub fn local_gradient_averages(u0: &DiscreteField, partition: &PartitionOfUnity) -> Result<LocalAverages> {
    u0.expect_location(Location::Node)?;
    let gu = grad(u0)?;
    Ok(LocalAverages { u: cube_averages(&gu, partition)?, v: cube_averages(u0, partition)? })
}

fn check_averages(partition: &PartitionOfUnity, averages: &LocalAverages, grid: &GridRef) -> Result<()> {
    if averages.u.len() != partition.len() || averages.v.len() != partition.len() {
        return Err(Error::Config(format!(
            "averages cover {} / {} cubes, partition has {}",
            averages.u.len(),
            averages.v.len(),
            partition.len()
        )));
    }
    if partition.dims != grid.dims() || partition.extent != *grid.extent() {
        return Err(Error::GridMismatch);
    }
    Ok(())
}

/// Averaged corrector for an edge field `u0`, with optional cutoff.
pub fn averaged_first_order(
    u0: &DiscreteField,
    cell: &CellSolution,
    partition: &PartitionOfUnity,
    averages: &LocalAverages,
    eps: f64,
    cutoff: Option<&Cutoff>,
) -> Result<FirstOrder> {
    u0.expect_location(Location::Edge)?;
    let g = u0.grid();
    check_eps(g, eps)?;
    check_averages(partition, averages, g)?;
    let cf = CellFields::new(cell, g, true)?;
    let cu = curl(u0)?;
    let v = |r: usize, x: &[f64; 3]| partition.blend(&averages.v, x)[r];
    let c = |r: usize, x: &[f64; 3]| partition.blend(&averages.u, x)[r];
    let mut out = maxwell_first_order(u0, &cu, &cf, eps, true, &v, &c);
    if let Some(ct) = cutoff {
        out.pieces = apply_cutoff(&out.pieces, ct)?;
    }
    Ok(out)
}

/// Averaged corrector for a node field `u0`: `u0 + eps w^r(x/eps) U_j^r rho_j`.
pub fn averaged_first_order_elliptic(
    u0: &DiscreteField,
    cell: &CellSolution,
    partition: &PartitionOfUnity,
    averages: &LocalAverages,
    eps: f64,
    cutoff: Option<&Cutoff>,
) -> Result<EllipticFirstOrder> {
    u0.expect_location(Location::Node)?;
    let g = u0.grid();
    check_eps(g, eps)?;
    check_averages(partition, averages, g)?;
    let cf = CellFields::new(cell, g, false)?;
    let gu = grad(u0)?;
    let gm = |r: usize, x: &[f64; 3]| partition.blend(&averages.u, x)[r];
    let mut out = elliptic_first_order(u0, &gu, &cf, eps, true, &gm);
    if let Some(ct) = cutoff {
        out.pieces = apply_cutoff(&out.pieces, ct)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
