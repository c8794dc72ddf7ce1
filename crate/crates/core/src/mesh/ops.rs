//! Mimetic difference operators on the staggered grid.
//!
//! Every operator is assembled from one primitive, a forward difference
//! along an axis from a primal-aligned array to a dual-aligned one, and
//! its exact transpose. All entities carry the same quadrature weight, so
//! plain transposes are the discrete adjoints.

use super::field::DiscreteField;
use super::grid::{Location, StaggeredGrid};
use crate::error::{Error, Result};

/// Compensated (Neumaier) summation.
#[derive(Debug, Default, Clone, Copy)]
pub struct Neumaier {
    sum: f64,
    comp: f64,
}

impl Neumaier {
    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn sum(&self) -> f64 {
        self.sum + self.comp
    }
}

#[inline]
fn row(shape: &[usize; 3], i1: usize, i2: usize) -> usize {
    shape[0] * (i1 + shape[1] * i2)
}

/// `dst[i] += c * (src[i + e_axis] - src[i])`, wrapping when the source has
/// no extra layer along `axis` (periodic).
pub(crate) fn diff_add(src: &[f64], ss: [usize; 3], dst: &mut [f64], ds: [usize; 3], axis: usize, c: f64) {
    debug_assert!((0..3).all(|j| j == axis || ss[j] == ds[j]));
    for i2 in 0..ds[2] {
        for i1 in 0..ds[1] {
            let d0 = row(&ds, i1, i2);
            let s0 = row(&ss, i1, i2);
            let n = ds[0];
            let drow = &mut dst[d0..d0 + n];
            match axis {
                0 => {
                    let srow = &src[s0..s0 + ss[0]];
                    if ss[0] > n {
                        for i in 0..n {
                            drow[i] += c * (srow[i + 1] - srow[i]);
                        }
                    } else {
                        for i in 0..n - 1 {
                            drow[i] += c * (srow[i + 1] - srow[i]);
                        }
                        drow[n - 1] += c * (srow[0] - srow[n - 1]);
                    }
                }
                1 => {
                    let j = if i1 + 1 < ss[1] { i1 + 1 } else { 0 };
                    let s1 = row(&ss, j, i2);
                    let (a, b) = (&src[s0..s0 + n], &src[s1..s1 + n]);
                    for i in 0..n {
                        drow[i] += c * (b[i] - a[i]);
                    }
                }
                _ => {
                    let k = if i2 + 1 < ss[2] { i2 + 1 } else { 0 };
                    let s1 = row(&ss, i1, k);
                    let (a, b) = (&src[s0..s0 + n], &src[s1..s1 + n]);
                    for i in 0..n {
                        drow[i] += c * (b[i] - a[i]);
                    }
                }
            }
        }
    }
}

/// Transpose of [`diff_add`]: `out[p] += c * (d[p - e_axis] - d[p])` over the
/// indices that exist.
pub(crate) fn diff_t_add(d: &[f64], ds: [usize; 3], out: &mut [f64], ss: [usize; 3], axis: usize, c: f64) {
    stencil_t(d, ds, out, ss, axis, c, -1.0);
}

/// Squared-coefficient transpose: `out[p] += c * (d[p - e_axis] + d[p])`.
/// With `d` a coefficient array and `c = 1/h^2` this accumulates the
/// diagonal of `D^T diag(d) D`.
pub(crate) fn diff_t_sq_add(d: &[f64], ds: [usize; 3], out: &mut [f64], ss: [usize; 3], axis: usize, c: f64) {
    stencil_t(d, ds, out, ss, axis, c, 1.0);
}

fn stencil_t(d: &[f64], ds: [usize; 3], out: &mut [f64], ss: [usize; 3], axis: usize, c: f64, cur_sign: f64) {
    debug_assert!((0..3).all(|j| j == axis || ss[j] == ds[j]));
    let periodic = ss[axis] == ds[axis];
    for i2 in 0..ss[2] {
        for i1 in 0..ss[1] {
            let o0 = row(&ss, i1, i2);
            let n = ss[0];
            let orow = &mut out[o0..o0 + n];
            match axis {
                0 => {
                    let dn = ds[0];
                    let d0 = row(&ds, i1, i2);
                    let drow = &d[d0..d0 + dn];
                    // p = 0
                    let mut v = cur_sign * drow[0];
                    if periodic {
                        v += drow[dn - 1];
                    }
                    orow[0] += c * v;
                    for p in 1..dn {
                        orow[p] += c * (drow[p - 1] + cur_sign * drow[p]);
                    }
                    if !periodic {
                        orow[dn] += c * drow[dn - 1];
                    }
                }
                1 => {
                    let cur = (i1 < ds[1]).then(|| row(&ds, i1, i2));
                    let prev = if i1 >= 1 {
                        Some(row(&ds, i1 - 1, i2))
                    } else if periodic {
                        Some(row(&ds, ds[1] - 1, i2))
                    } else {
                        None
                    };
                    accumulate(orow, d, cur, prev, c, cur_sign);
                }
                _ => {
                    let cur = (i2 < ds[2]).then(|| row(&ds, i1, i2));
                    let prev = if i2 >= 1 {
                        Some(row(&ds, i1, i2 - 1))
                    } else if periodic {
                        Some(row(&ds, i1, ds[2] - 1))
                    } else {
                        None
                    };
                    accumulate(orow, d, cur, prev, c, cur_sign);
                }
            }
        }
    }
}

#[inline]
fn accumulate(orow: &mut [f64], d: &[f64], cur: Option<usize>, prev: Option<usize>, c: f64, s: f64) {
    let n = orow.len();
    match (prev, cur) {
        (Some(p), Some(q)) => {
            let (a, b) = (&d[p..p + n], &d[q..q + n]);
            for i in 0..n {
                orow[i] += c * (a[i] + s * b[i]);
            }
        }
        (Some(p), None) => {
            let a = &d[p..p + n];
            for i in 0..n {
                orow[i] += c * a[i];
            }
        }
        (None, Some(q)) => {
            let b = &d[q..q + n];
            for i in 0..n {
                orow[i] += c * s * b[i];
            }
        }
        (None, None) => {}
    }
}

/// Curl as a list of `(face component, edge component, axis, sign)` terms:
/// `(curl u)_k = d_j u_l - d_l u_j` for cyclic `(k, j, l)`.
pub(crate) const CURL_TERMS: [(usize, usize, usize, f64); 6] =
    [(0, 2, 1, 1.0), (0, 1, 2, -1.0), (1, 0, 2, 1.0), (1, 2, 0, -1.0), (2, 1, 0, 1.0), (2, 0, 1, -1.0)];

fn split<'a>(g: &StaggeredGrid, loc: Location, v: &'a [f64]) -> Vec<&'a [f64]> {
    let mut out = Vec::with_capacity(3);
    let mut off = 0;
    for c in 0..g.components(loc) {
        let len = g.component_len(loc, c);
        out.push(&v[off..off + len]);
        off += len;
    }
    out
}

fn split_mut<'a>(g: &StaggeredGrid, loc: Location, v: &'a mut [f64]) -> Vec<&'a mut [f64]> {
    let mut out = Vec::with_capacity(3);
    let mut rest = v;
    for c in 0..g.components(loc) {
        let (head, tail) = rest.split_at_mut(g.component_len(loc, c));
        out.push(head);
        rest = tail;
    }
    out
}

/// Node values to edge differences. Overwrites `out`.
pub(crate) fn grad_into(g: &StaggeredGrid, x: &[f64], out: &mut [f64]) {
    out.fill(0.0);
    let ns = g.shape(Location::Node, 0);
    let h = g.spacing();
    for (k, comp) in split_mut(g, Location::Edge, out).into_iter().enumerate() {
        diff_add(x, ns, comp, g.shape(Location::Edge, k), k, 1.0 / h[k]);
    }
}

/// Transpose of [`grad_into`], edges to nodes. Overwrites `out`.
pub(crate) fn grad_t_into(g: &StaggeredGrid, e: &[f64], out: &mut [f64]) {
    out.fill(0.0);
    let ns = g.shape(Location::Node, 0);
    let h = g.spacing();
    for (k, comp) in split(g, Location::Edge, e).into_iter().enumerate() {
        diff_t_add(comp, g.shape(Location::Edge, k), out, ns, k, 1.0 / h[k]);
    }
}

/// Diagonal of `grad^T diag(b) grad`, accumulated into `out`.
pub(crate) fn grad_t_sq_add(g: &StaggeredGrid, b: &[f64], out: &mut [f64]) {
    let ns = g.shape(Location::Node, 0);
    let h = g.spacing();
    for (k, comp) in split(g, Location::Edge, b).into_iter().enumerate() {
        diff_t_sq_add(comp, g.shape(Location::Edge, k), out, ns, k, 1.0 / (h[k] * h[k]));
    }
}

/// Edge circulations to faces (3-D only). Overwrites `out`.
pub(crate) fn curl_into(g: &StaggeredGrid, e: &[f64], out: &mut [f64]) {
    debug_assert_eq!(g.dims(), 3);
    out.fill(0.0);
    let h = g.spacing();
    let src = split(g, Location::Edge, e);
    let mut dst = split_mut(g, Location::Face, out);
    for &(k, l, axis, s) in &CURL_TERMS {
        diff_add(src[l], g.shape(Location::Edge, l), dst[k], g.shape(Location::Face, k), axis, s / h[axis]);
    }
}

/// Transpose of [`curl_into`], faces to edges. Overwrites `out`.
pub(crate) fn curl_t_into(g: &StaggeredGrid, f: &[f64], out: &mut [f64]) {
    debug_assert_eq!(g.dims(), 3);
    out.fill(0.0);
    let h = g.spacing();
    let src = split(g, Location::Face, f);
    let mut dst = split_mut(g, Location::Edge, out);
    for &(k, l, axis, s) in &CURL_TERMS {
        diff_t_add(src[k], g.shape(Location::Face, k), dst[l], g.shape(Location::Edge, l), axis, s / h[axis]);
    }
}

/// Diagonal of `curl^T diag(a) curl`, accumulated into `out`.
pub(crate) fn curl_t_sq_add(g: &StaggeredGrid, a: &[f64], out: &mut [f64]) {
    let h = g.spacing();
    let src = split(g, Location::Face, a);
    let mut dst = split_mut(g, Location::Edge, out);
    for &(k, l, axis, _) in &CURL_TERMS {
        diff_t_sq_add(
            src[k],
            g.shape(Location::Face, k),
            dst[l],
            g.shape(Location::Edge, l),
            axis,
            1.0 / (h[axis] * h[axis]),
        );
    }
}

/// Face fluxes to cells. Overwrites `out`.
pub(crate) fn div_into(g: &StaggeredGrid, f: &[f64], out: &mut [f64]) {
    out.fill(0.0);
    let cs = g.shape(Location::Cell, 0);
    let h = g.spacing();
    for (k, comp) in split(g, Location::Face, f).into_iter().enumerate() {
        diff_add(comp, g.shape(Location::Face, k), out, cs, k, 1.0 / h[k]);
    }
}

/// Transpose of [`div_into`], cells to faces. Overwrites `out`.
pub(crate) fn div_t_into(g: &StaggeredGrid, c: &[f64], out: &mut [f64]) {
    out.fill(0.0);
    let cs = g.shape(Location::Cell, 0);
    let h = g.spacing();
    for (k, comp) in split_mut(g, Location::Face, out).into_iter().enumerate() {
        diff_t_add(c, cs, comp, g.shape(Location::Face, k), k, 1.0 / h[k]);
    }
}

fn expect(field: &DiscreteField, loc: Location) -> Result<()> {
    field.expect_location(loc)
}

fn need_3d(g: &StaggeredGrid) -> Result<()> {
    if g.dims() == 3 {
        Ok(())
    } else {
        Err(Error::NotThreeDimensional)
    }
}

/// Discrete gradient, node field to edge field.
pub fn grad(phi: &DiscreteField) -> Result<DiscreteField> {
    expect(phi, Location::Node)?;
    let g = phi.grid();
    let mut out = vec![0.0; g.entity_count(Location::Edge)];
    grad_into(g, phi.values(), &mut out);
    Ok(DiscreteField::from_raw(g, Location::Edge, out))
}

/// Discrete curl, edge field to face field (3-D).
pub fn curl(u: &DiscreteField) -> Result<DiscreteField> {
    expect(u, Location::Edge)?;
    let g = u.grid();
    need_3d(g)?;
    let mut out = vec![0.0; g.entity_count(Location::Face)];
    curl_into(g, u.values(), &mut out);
    Ok(DiscreteField::from_raw(g, Location::Face, out))
}

/// Discrete divergence, face field to cell field.
pub fn div(f: &DiscreteField) -> Result<DiscreteField> {
    expect(f, Location::Face)?;
    let g = f.grid();
    let mut out = vec![0.0; g.entity_count(Location::Cell)];
    div_into(g, f.values(), &mut out);
    Ok(DiscreteField::from_raw(g, Location::Cell, out))
}

/// Adjoint divergence of an edge field, `div* = -grad^T`, on nodes.
pub fn div_star(u: &DiscreteField) -> Result<DiscreteField> {
    expect(u, Location::Edge)?;
    let g = u.grid();
    let mut out = vec![0.0; g.entity_count(Location::Node)];
    grad_t_into(g, u.values(), &mut out);
    out.iter_mut().for_each(|v| *v = -*v);
    Ok(DiscreteField::from_raw(g, Location::Node, out))
}

/// Adjoint curl of a face field, `curl* = curl^T`, on edges (3-D).
pub fn curl_star(f: &DiscreteField) -> Result<DiscreteField> {
    expect(f, Location::Face)?;
    let g = f.grid();
    need_3d(g)?;
    let mut out = vec![0.0; g.entity_count(Location::Edge)];
    curl_t_into(g, f.values(), &mut out);
    Ok(DiscreteField::from_raw(g, Location::Edge, out))
}

/// Gradient on the dual lattice, cell field to face field: `-div^T`.
pub fn dual_grad(c: &DiscreteField) -> Result<DiscreteField> {
    expect(c, Location::Cell)?;
    let g = c.grid();
    let mut out = vec![0.0; g.entity_count(Location::Face)];
    div_t_into(g, c.values(), &mut out);
    out.iter_mut().for_each(|v| *v = -*v);
    Ok(DiscreteField::from_raw(g, Location::Face, out))
}

/// Weighted sum over active entities with compensated accumulation.
pub fn inner_product(a: &DiscreteField, b: &DiscreteField) -> Result<f64> {
    if !a.compatible(b) {
        return Err(Error::GridMismatch);
    }
    let g = a.grid();
    let active = g.active(a.location());
    let mut acc = Neumaier::default();
    for ((x, y), &on) in a.values().iter().zip(b.values()).zip(active) {
        if on {
            acc.add(x * y);
        }
    }
    Ok(acc.sum() * g.cell_volume())
}

pub fn norm_l2(a: &DiscreteField) -> f64 {
    let g = a.grid();
    let active = g.active(a.location());
    let mut acc = Neumaier::default();
    for (x, &on) in a.values().iter().zip(active) {
        if on {
            acc.add(x * x);
        }
    }
    (acc.sum() * g.cell_volume()).sqrt()
}

/// `(|u|^2 + |curl u|^2)^(1/2)` for an edge field on a 3-D grid.
pub fn norm_hcurl(u: &DiscreteField) -> Result<f64> {
    let c = curl(u)?;
    Ok((norm_l2(u).powi(2) + norm_l2(&c).powi(2)).sqrt())
}

/// Plain Euclidean dot product, deterministic order.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let j = 4 * i;
        s[0] += a[j] * b[j];
        s[1] += a[j + 1] * b[j + 1];
        s[2] += a[j + 2] * b[j + 2];
        s[3] += a[j + 3] * b[j + 3];
    }
    let mut tail = 0.0;
    for j in 4 * chunks..a.len() {
        tail += a[j] * b[j];
    }
    (s[0] + s[1]) + (s[2] + s[3]) + tail
}
