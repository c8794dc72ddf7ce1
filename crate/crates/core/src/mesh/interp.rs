//! Multilinear interpolation of staggered fields at arbitrary points.

use super::field::DiscreteField;
use super::grid::{ravel, Location};

const SNAP: f64 = 1e-9;

#[derive(Clone, Copy)]
struct AxisStencil {
    lo: usize,
    hi: usize,
    w: f64,
}

fn snap(i: isize, f: f64) -> (isize, f64) {
    if f < SNAP {
        (i, 0.0)
    } else if f > 1.0 - SNAP {
        (i + 1, 0.0)
    } else {
        (i, f)
    }
}

#[inline]
fn combine(values: &[f64], shape: &[usize; 3], st: &[AxisStencil; 3]) -> f64 {
    let mut acc = 0.0;
    for (k, wk) in [(st[2].lo, 1.0 - st[2].w), (st[2].hi, st[2].w)] {
        if wk == 0.0 {
            continue;
        }
        for (j, wj) in [(st[1].lo, 1.0 - st[1].w), (st[1].hi, st[1].w)] {
            if wj == 0.0 {
                continue;
            }
            for (i, wi) in [(st[0].lo, 1.0 - st[0].w), (st[0].hi, st[0].w)] {
                if wi == 0.0 {
                    continue;
                }
                acc += wk * wj * wi * values[ravel(shape, [i, j, k])];
            }
        }
    }
    acc
}

/// Value of component `comp` of a periodic field at `y`, reduced modulo
/// the grid extent.
pub fn sample_periodic(field: &DiscreteField, comp: usize, y: &[f64; 3]) -> f64 {
    let g = field.grid();
    let shape = g.shape(field.location(), comp);
    let off = g.stagger(field.location(), comp);
    let h = g.spacing();
    let lo = g.extent().lo;
    let st: [AxisStencil; 3] = std::array::from_fn(|j| {
        let n = shape[j];
        if j >= g.dims() || n == 1 {
            return AxisStencil { lo: 0, hi: 0, w: 0.0 };
        }
        let t = (y[j] - lo[j]) / h[j] - off[j];
        let fl = t.floor();
        let (i, w) = snap(fl as isize, t - fl);
        let i = i.rem_euclid(n as isize) as usize;
        AxisStencil { lo: i, hi: (i + 1) % n, w }
    });
    combine(field.component(comp), &shape, &st)
}

/// Value of component `comp` at `x`, extended by constants beyond the
/// outermost samples along each axis.
pub fn sample_clamped(field: &DiscreteField, comp: usize, x: &[f64; 3]) -> f64 {
    let g = field.grid();
    let shape = g.shape(field.location(), comp);
    let off = g.stagger(field.location(), comp);
    let h = g.spacing();
    let lo = g.extent().lo;
    let st: [AxisStencil; 3] = std::array::from_fn(|j| {
        let n = shape[j];
        if j >= g.dims() || n == 1 {
            return AxisStencil { lo: 0, hi: 0, w: 0.0 };
        }
        if g.is_periodic() {
            let t = (x[j] - lo[j]) / h[j] - off[j];
            let fl = t.floor();
            let (i, w) = snap(fl as isize, t - fl);
            let i = i.rem_euclid(n as isize) as usize;
            return AxisStencil { lo: i, hi: (i + 1) % n, w };
        }
        let t = ((x[j] - lo[j]) / h[j] - off[j]).clamp(0.0, (n - 1) as f64);
        let fl = t.floor().min((n - 2) as f64);
        let (i, w) = snap(fl as isize, t - fl);
        let i = i as usize;
        if i >= n - 1 {
            AxisStencil { lo: n - 1, hi: n - 1, w: 0.0 }
        } else {
            AxisStencil { lo: i, hi: i + 1, w }
        }
    });
    combine(field.component(comp), &shape, &st)
}

/// Values of component `comp` of `field` at every entity of component
/// `target_comp` at `target` on the same grid.
pub fn restagger(field: &DiscreteField, comp: usize, target: Location, target_comp: usize) -> Vec<f64> {
    let g = field.grid();
    if target == field.location() && target_comp == comp {
        return field.component(comp).to_vec();
    }
    let shape = g.shape(target, target_comp);
    let len = g.component_len(target, target_comp);
    let mut out = Vec::with_capacity(len);
    for flat in 0..len {
        let idx = super::grid::unravel(&shape, flat);
        out.push(sample_clamped(field, comp, &g.position(target, target_comp, idx)));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_grid, Extent, Topology};

    #[test]
    fn periodic_exact_at_samples() {
        let g = build_grid(3, &[4, 5, 6], Topology::Periodic, Extent::unit(), None).unwrap();
        let f = DiscreteField::from_fn(&g, Location::Edge, |c, x| c as f64 + x[0] + 2.0 * x[1] * x[1]);
        let shape = g.shape(Location::Edge, 1);
        for flat in 0..g.component_len(Location::Edge, 1) {
            let idx = crate::mesh::grid::unravel(&shape, flat);
            let mut p = g.position(Location::Edge, 1, idx);
            p[2] += 3.0; // full periods away
            assert!((sample_periodic(&f, 1, &p) - f.component(1)[flat]).abs() < 1e-12);
        }
    }

    #[test]
    fn linear_reproduced_inside() {
        let g = build_grid(2, &[8, 8], Topology::Bounded, Extent::unit(), None).unwrap();
        let f = DiscreteField::from_fn(&g, Location::Node, |_, x| 1.0 + 2.0 * x[0] - x[1]);
        for &(a, b) in &[(0.13, 0.77), (0.5, 0.5), (0.999, 0.001)] {
            let v = sample_clamped(&f, 0, &[a, b, 0.0]);
            assert!((v - (1.0 + 2.0 * a - b)).abs() < 1e-12);
        }
        // constant extension outside
        let v = sample_clamped(&f, 0, &[1.5, 0.5, 0.0]);
        assert!((v - (1.0 + 2.0 - 0.5)).abs() < 1e-12);
    }

    #[test]
    fn restagger_averages_neighbours() {
        let g = build_grid(2, &[4, 4], Topology::Bounded, Extent::unit(), None).unwrap();
        let f = DiscreteField::from_fn(&g, Location::Node, |_, x| x[0] * x[0]);
        let on_x_edges = restagger(&f, 0, Location::Edge, 0);
        // x-edge (i, j) sits halfway between nodes i and i+1
        let h = 0.25f64;
        for (flat, v) in on_x_edges.iter().enumerate() {
            let i = flat % 4;
            let expected = 0.5 * ((i as f64 * h).powi(2) + ((i + 1) as f64 * h).powi(2));
            assert!((v - expected).abs() < 1e-14);
        }
    }
}
