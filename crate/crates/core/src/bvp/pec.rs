//! Exact inverses of constant-coefficient box operators with PEC/Dirichlet
//! conditions, diagonalized by sine and cosine transforms. On masked grids
//! they act on the enclosing box and the result is masked.

use std::sync::Arc;

use nalgebra::{Matrix3, Vector3};
use rustdct::{Dct2, Dct3, DctPlanner, Dst1};

use super::cg::Preconditioner;
use crate::error::{Error, Result};
use crate::mesh::grid::{ravel, unravel};
use crate::mesh::{GridRef, Location};

/// Sine analysis/synthesis on interior points `1..n` of a primal line.
struct SineAxis {
    n: usize,
    dst: Option<Arc<dyn Dst1<f64>>>,
}

impl SineAxis {
    fn new(planner: &mut DctPlanner<f64>, n: usize) -> Self {
        SineAxis { n, dst: (n > 1).then(|| planner.plan_dst1(n - 1)) }
    }

    /// `c_m = 2/n sum_i x_i sin(pi m i / n)` for `m = 1..n`, stored at `m - 1`.
    fn analyze(&self, x: &mut [f64]) {
        if let Some(p) = &self.dst {
            p.process_dst1(x);
            let s = 2.0 / self.n as f64;
            x.iter_mut().for_each(|v| *v *= s);
        }
    }

    fn synthesize(&self, c: &mut [f64]) {
        if let Some(p) = &self.dst {
            p.process_dst1(c);
        }
    }
}

/// Cosine analysis/synthesis on the `n` half points of a dual line.
struct CosineAxis {
    n: usize,
    dct2: Arc<dyn Dct2<f64>>,
    dct3: Arc<dyn Dct3<f64>>,
}

impl CosineAxis {
    fn new(planner: &mut DctPlanner<f64>, n: usize) -> Self {
        CosineAxis { n, dct2: planner.plan_dct2(n), dct3: planner.plan_dct3(n) }
    }

    /// `x_i = sum_m c_m cos(pi m (i + 1/2) / n)` inverted.
    fn analyze(&self, x: &mut [f64]) {
        self.dct2.process_dct2(x);
        let s = 2.0 / self.n as f64;
        x.iter_mut().for_each(|v| *v *= s);
        x[0] *= 0.5;
    }

    fn synthesize(&self, c: &mut [f64]) {
        c[0] *= 2.0;
        self.dct3.process_dct3(c);
    }
}

enum Axis {
    Sine(SineAxis),
    Cosine(CosineAxis),
}

impl Axis {
    fn len(&self) -> usize {
        match self {
            Axis::Sine(s) => s.n - 1,
            Axis::Cosine(c) => c.n,
        }
    }
}

/// Applies `f` to every line of `data` (shape `shape`) along `axis`.
fn for_lines(data: &mut [f64], shape: [usize; 3], axis: usize, f: &dyn Fn(&mut [f64])) {
    let len = shape[axis];
    if len == 0 {
        return;
    }
    let stride: usize = shape[..axis].iter().product();
    let mut line = vec![0.0; len];
    let mut other = shape;
    other[axis] = 1;
    for flat in 0..other.iter().product::<usize>() {
        let base = ravel(&shape, unravel(&other, flat));
        for (k, v) in line.iter_mut().enumerate() {
            *v = data[base + k * stride];
        }
        f(&mut line);
        for (k, v) in line.iter().enumerate() {
            data[base + k * stride] = *v;
        }
    }
}

/// `sigma_m = (2/h) sin(pi m / (2n))`, the symbol of a forward difference.
fn sigma(m: usize, n: usize, h: f64) -> f64 {
    2.0 / h * (std::f64::consts::PI * m as f64 / (2.0 * n as f64)).sin()
}

/// One vector component with its per-axis transforms.
struct Component {
    axes: Vec<Axis>,
    /// Reduced (interior) shape the transforms act on.
    shape: [usize; 3],
    /// Entity shape on the grid and the offset of index 0 of the reduced array.
    full: [usize; 3],
    first: [usize; 3],
}

impl Component {
    fn new(planner: &mut DctPlanner<f64>, grid: &GridRef, loc: Location, comp: usize) -> Self {
        let n = grid.resolution();
        let full = grid.shape(loc, comp);
        let mut axes = vec![];
        let mut shape = [1; 3];
        let mut first = [0; 3];
        for j in 0..grid.dims() {
            let ax = if grid.is_dual(loc, comp, j) {
                Axis::Cosine(CosineAxis::new(planner, n[j]))
            } else {
                first[j] = 1;
                Axis::Sine(SineAxis::new(planner, n[j]))
            };
            shape[j] = ax.len();
            axes.push(ax);
        }
        Component { axes, shape, full, first }
    }

    fn gather(&self, src: &[f64]) -> Vec<f64> {
        let len: usize = self.shape.iter().product();
        (0..len)
            .map(|r| {
                let i = unravel(&self.shape, r);
                src[ravel(&self.full, std::array::from_fn(|j| i[j] + self.first[j]))]
            })
            .collect()
    }

    fn scatter(&self, red: &[f64], dst: &mut [f64]) {
        dst.fill(0.0);
        for (r, v) in red.iter().enumerate() {
            let i = unravel(&self.shape, r);
            dst[ravel(&self.full, std::array::from_fn(|j| i[j] + self.first[j]))] = *v;
        }
    }

    fn analyze(&self, data: &mut [f64]) {
        for (j, ax) in self.axes.iter().enumerate() {
            match ax {
                Axis::Sine(s) => for_lines(data, self.shape, j, &|l| s.analyze(l)),
                Axis::Cosine(c) => for_lines(data, self.shape, j, &|l| c.analyze(l)),
            }
        }
    }

    fn synthesize(&self, data: &mut [f64]) {
        for (j, ax) in self.axes.iter().enumerate() {
            match ax {
                Axis::Sine(s) => for_lines(data, self.shape, j, &|l| s.synthesize(l)),
                Axis::Cosine(c) => for_lines(data, self.shape, j, &|l| c.synthesize(l)),
            }
        }
    }

    /// Reduced index of mode `m`, if this component carries it.
    fn mode_index(&self, m: [usize; 3], dims: usize) -> Option<usize> {
        let mut i = [0; 3];
        for j in 0..dims {
            match self.axes[j] {
                Axis::Sine(_) => {
                    if m[j] == 0 {
                        return None;
                    }
                    i[j] = m[j] - 1;
                }
                Axis::Cosine(_) => i[j] = m[j],
            }
        }
        Some(ravel(&self.shape, i))
    }
}

fn check_box(grid: &GridRef, dims: usize) -> Result<()> {
    if grid.is_periodic() {
        return Err(Error::NotBounded);
    }
    if grid.dims() != dims {
        return Err(if dims == 3 { Error::NotThreeDimensional } else { Error::NotTwoDimensional });
    }
    Ok(())
}

/// Inverse of `curl^T diag(a) curl + diag(b)` on the PEC box, `a` constant
/// per face component and `b` per edge component.
pub struct BoxSpectralMaxwell {
    grid: GridRef,
    comps: Vec<Component>,
    a: [f64; 3],
    b: [f64; 3],
    active: Vec<bool>,
}

impl BoxSpectralMaxwell {
    pub fn new(grid: &GridRef, a: [f64; 3], b: [f64; 3]) -> Result<Self> {
        check_box(grid, 3)?;
        if a.iter().chain(&b).any(|v| !(*v > 0.0)) {
            return Err(Error::Coefficient("spectral preconditioner needs positive means".into()));
        }
        let mut planner = DctPlanner::new();
        let comps = (0..3).map(|k| Component::new(&mut planner, grid, Location::Edge, k)).collect();
        Ok(BoxSpectralMaxwell { grid: grid.clone(), comps, a, b, active: grid.active(Location::Edge).to_vec() })
    }
}

impl Preconditioner for BoxSpectralMaxwell {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        let g = &self.grid;
        let n = g.resolution();
        let h = g.spacing();
        let mut coef: Vec<Vec<f64>> = (0..3)
            .map(|k| {
                let off = g.component_offset(Location::Edge, k);
                let mut c = self.comps[k].gather(&r[off..off + g.component_len(Location::Edge, k)]);
                self.comps[k].analyze(&mut c);
                c
            })
            .collect();
        let sig: Vec<Vec<f64>> = (0..3).map(|j| (0..n[j]).map(|m| sigma(m, n[j], h[j])).collect()).collect();
        for m2 in 0..n[2] {
            for m1 in 0..n[1] {
                for m0 in 0..n[0] {
                    let m = [m0, m1, m2];
                    let idx: Vec<Option<usize>> = (0..3).map(|k| self.comps[k].mode_index(m, 3)).collect();
                    let present = idx.iter().filter(|i| i.is_some()).count();
                    if present == 0 {
                        continue;
                    }
                    let s = [sig[0][m0], sig[1][m1], sig[2][m2]];
                    let kx = Matrix3::new(0.0, -s[2], s[1], s[2], 0.0, -s[0], -s[1], s[0], 0.0);
                    let mut mat = kx.transpose() * Matrix3::from_diagonal(&Vector3::from(self.a)) * kx;
                    for k in 0..3 {
                        mat[(k, k)] += self.b[k];
                    }
                    if present == 1 {
                        let k = idx.iter().position(|i| i.is_some()).unwrap();
                        let i = idx[k].unwrap();
                        coef[k][i] /= mat[(k, k)];
                    } else {
                        let rhs =
                            Vector3::new(coef[0][idx[0].unwrap()], coef[1][idx[1].unwrap()], coef[2][idx[2].unwrap()]);
                        let sol = mat.cholesky().expect("SPD mode block").solve(&rhs);
                        for k in 0..3 {
                            coef[k][idx[k].unwrap()] = sol[k];
                        }
                    }
                }
            }
        }
        for k in 0..3 {
            self.comps[k].synthesize(&mut coef[k]);
            let off = g.component_offset(Location::Edge, k);
            self.comps[k].scatter(&coef[k], &mut z[off..off + g.component_len(Location::Edge, k)]);
        }
        for (v, act) in z.iter_mut().zip(&self.active) {
            if !act {
                *v = 0.0;
            }
        }
    }
}

/// Inverse of `grad^T diag(b) grad` on Dirichlet nodes, `b` constant per
/// edge component.
pub struct BoxSpectralNodes {
    grid: GridRef,
    comp: Component,
    inv_symbol: Vec<f64>,
    active: Vec<bool>,
}

impl BoxSpectralNodes {
    pub fn new(grid: &GridRef, b: [f64; 3]) -> Result<Self> {
        if grid.is_periodic() {
            return Err(Error::NotBounded);
        }
        let dims = grid.dims();
        if b[..dims].iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Coefficient("spectral preconditioner needs positive means".into()));
        }
        let mut planner = DctPlanner::new();
        let comp = Component::new(&mut planner, grid, Location::Node, 0);
        let n = grid.resolution();
        let h = grid.spacing();
        let len: usize = comp.shape.iter().product();
        let inv_symbol = (0..len)
            .map(|r| {
                let i = unravel(&comp.shape, r);
                let lam: f64 = (0..dims).map(|j| b[j] * sigma(i[j] + 1, n[j], h[j]).powi(2)).sum();
                1.0 / lam
            })
            .collect();
        Ok(BoxSpectralNodes { grid: grid.clone(), comp, inv_symbol, active: grid.active(Location::Node).to_vec() })
    }
}

impl Preconditioner for BoxSpectralNodes {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        let _ = &self.grid;
        let mut c = self.comp.gather(r);
        self.comp.analyze(&mut c);
        for (v, s) in c.iter_mut().zip(&self.inv_symbol) {
            *v *= s;
        }
        self.comp.synthesize(&mut c);
        self.comp.scatter(&c, z);
        for (v, act) in z.iter_mut().zip(&self.active) {
            if !act {
                *v = 0.0;
            }
        }
    }
}
