//! Geometric V-cycle for the 2-D five-point operator `grad^T(b grad)` with
//! Dirichlet nodes, used as a CG preconditioner.
//!
//! Bilinear prolongation, restriction `P^T / 4`, rediscretized coarse
//! operators with series-harmonic / row-averaged edge coefficients, damped
//! Jacobi smoothing and a dense Cholesky solve on the coarsest level.

use nalgebra::{DMatrix, DVector};

use super::cg::Preconditioner;
use crate::error::{Error, Result};
use crate::mesh::GridRef;

const OMEGA: f64 = 0.8;
const SWEEPS: usize = 2;
const MAX_DIRECT_NODES: usize = 300;

struct Level {
    nx: usize,
    ny: usize,
    /// `b / h^2` on x-edges (`nx x (ny+1)`) and y-edges (`(nx+1) x ny`).
    cx: Vec<f64>,
    cy: Vec<f64>,
    active: Vec<bool>,
    inv_diag: Vec<f64>,
}

impl Level {
    fn new(nx: usize, ny: usize, cx: Vec<f64>, cy: Vec<f64>, active: Vec<bool>) -> Self {
        let mut l = Level { nx, ny, cx, cy, active, inv_diag: vec![] };
        let mut d = vec![0.0; (nx + 1) * (ny + 1)];
        for j in 0..=ny {
            for i in 0..nx {
                let c = l.cx[i + nx * j];
                d[l.node(i, j)] += c;
                d[l.node(i + 1, j)] += c;
            }
        }
        for j in 0..ny {
            for i in 0..=nx {
                let c = l.cy[i + (nx + 1) * j];
                d[l.node(i, j)] += c;
                d[l.node(i, j + 1)] += c;
            }
        }
        l.inv_diag = d.iter().zip(&l.active).map(|(v, a)| if *a && *v > 0.0 { 1.0 / v } else { 0.0 }).collect();
        l
    }

    #[inline]
    fn node(&self, i: usize, j: usize) -> usize {
        i + (self.nx + 1) * j
    }

    fn len(&self) -> usize {
        (self.nx + 1) * (self.ny + 1)
    }

    /// `y = A x` with inactive entries of `x` treated as zero.
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let (nx, ny) = (self.nx, self.ny);
        y.fill(0.0);
        let val = |p: usize| if self.active[p] { x[p] } else { 0.0 };
        for j in 0..=ny {
            for i in 0..nx {
                let c = self.cx[i + nx * j];
                if c == 0.0 {
                    continue;
                }
                let (p, q) = (self.node(i, j), self.node(i + 1, j));
                let flux = c * (val(p) - val(q));
                y[p] += flux;
                y[q] -= flux;
            }
        }
        for j in 0..ny {
            for i in 0..=nx {
                let c = self.cy[i + (nx + 1) * j];
                if c == 0.0 {
                    continue;
                }
                let (p, q) = (self.node(i, j), self.node(i, j + 1));
                let flux = c * (val(p) - val(q));
                y[p] += flux;
                y[q] -= flux;
            }
        }
        for (v, a) in y.iter_mut().zip(&self.active) {
            if !a {
                *v = 0.0;
            }
        }
    }

    fn coarsen(&self) -> Level {
        let (nx, ny) = (self.nx, self.ny);
        let (cnx, cny) = (nx / 2, ny / 2);
        let series = |a: f64, b: f64| if a > 0.0 && b > 0.0 { 2.0 * a * b / (a + b) } else { 0.0 };
        let weights = [(-1i64, 0.25), (0, 0.5), (1, 0.25)];
        // series along the edge, 1/4-1/2-1/4 average across; h doubles so b/h^2 gains 1/4
        let mut cx = vec![0.0; cnx * (cny + 1)];
        for jc in 0..=cny {
            for ic in 0..cnx {
                let (mut s, mut w) = (0.0, 0.0);
                for (dj, wt) in weights {
                    let j = 2 * jc as i64 + dj;
                    if j < 0 || j > ny as i64 {
                        continue;
                    }
                    let j = j as usize;
                    s += wt * series(self.cx[2 * ic + nx * j], self.cx[2 * ic + 1 + nx * j]);
                    w += wt;
                }
                cx[ic + cnx * jc] = 0.25 * s / w;
            }
        }
        let mut cy = vec![0.0; (cnx + 1) * cny];
        for jc in 0..cny {
            for ic in 0..=cnx {
                let (mut s, mut w) = (0.0, 0.0);
                for (di, wt) in weights {
                    let i = 2 * ic as i64 + di;
                    if i < 0 || i > nx as i64 {
                        continue;
                    }
                    let i = i as usize;
                    s += wt * series(self.cy[i + (nx + 1) * 2 * jc], self.cy[i + (nx + 1) * (2 * jc + 1)]);
                    w += wt;
                }
                cy[ic + (cnx + 1) * jc] = 0.25 * s / w;
            }
        }
        let active = (0..(cnx + 1) * (cny + 1))
            .map(|p| {
                let (ic, jc) = (p % (cnx + 1), p / (cnx + 1));
                self.active[self.node(2 * ic, 2 * jc)]
            })
            .collect();
        Level::new(cnx, cny, cx, cy, active)
    }

    /// Bilinear interpolation of coarse values, added to `x`.
    fn prolong_add(&self, coarse: &[f64], x: &mut [f64]) {
        let cnx = self.nx / 2;
        let c = |i: usize, j: usize| coarse[i + (cnx + 1) * j];
        for j in 0..=self.ny {
            for i in 0..=self.nx {
                let p = self.node(i, j);
                if !self.active[p] {
                    continue;
                }
                let (i0, i1) = (i / 2, i.div_ceil(2));
                let (j0, j1) = (j / 2, j.div_ceil(2));
                x[p] += 0.25 * (c(i0, j0) + c(i1, j0) + c(i0, j1) + c(i1, j1));
            }
        }
    }

    /// `P^T r / 4`.
    fn restrict(&self, r: &[f64], coarse: &mut [f64], coarse_active: &[bool]) {
        let cnx = self.nx / 2;
        coarse.fill(0.0);
        for j in 0..=self.ny {
            for i in 0..=self.nx {
                let v = 0.25 * 0.25 * r[self.node(i, j)];
                if v == 0.0 {
                    continue;
                }
                let (i0, i1) = (i / 2, i.div_ceil(2));
                let (j0, j1) = (j / 2, j.div_ceil(2));
                coarse[i0 + (cnx + 1) * j0] += v;
                coarse[i1 + (cnx + 1) * j0] += v;
                coarse[i0 + (cnx + 1) * j1] += v;
                coarse[i1 + (cnx + 1) * j1] += v;
            }
        }
        for (v, a) in coarse.iter_mut().zip(coarse_active) {
            if !a {
                *v = 0.0;
            }
        }
    }
}

struct Direct {
    index: Vec<usize>,
    chol: Option<nalgebra::Cholesky<f64, nalgebra::Dyn>>,
}

pub struct Multigrid {
    levels: Vec<Level>,
    direct: Direct,
}

impl Multigrid {
    /// 2-D bounded grids with even cell counts of at least 8 per axis.
    pub fn supported(grid: &GridRef) -> bool {
        let n = grid.resolution();
        grid.dims() == 2
            && !grid.is_periodic()
            && n[0].is_multiple_of(2)
            && n[1].is_multiple_of(2)
            && n[0] >= 8
            && n[1] >= 8
    }

    /// `weights`: edge coefficients in grid edge order, zero on inactive edges.
    pub fn new(grid: &GridRef, weights: &[f64]) -> Result<Self> {
        if !Self::supported(grid) {
            return Err(Error::Config("multigrid needs a 2-D bounded grid with even resolution >= 8".into()));
        }
        let [nx, ny, _] = grid.resolution();
        let h = grid.spacing();
        let nxe = nx * (ny + 1);
        let cx = weights[..nxe].iter().map(|b| b / (h[0] * h[0])).collect();
        let cy = weights[nxe..].iter().map(|b| b / (h[1] * h[1])).collect();
        let mut levels = vec![Level::new(nx, ny, cx, cy, grid.active(crate::mesh::Location::Node).to_vec())];
        loop {
            let l = levels.last().unwrap();
            if l.len() <= MAX_DIRECT_NODES || l.nx % 2 != 0 || l.ny % 2 != 0 || l.nx < 4 || l.ny < 4 {
                break;
            }
            let c = l.coarsen();
            levels.push(c);
        }
        let coarsest = levels.last().unwrap();
        let index: Vec<usize> = (0..coarsest.len()).filter(|&p| coarsest.active[p]).collect();
        let m = index.len();
        let mut dense = DMatrix::zeros(m, m);
        let mut e = vec![0.0; coarsest.len()];
        let mut col = vec![0.0; coarsest.len()];
        for (k, &p) in index.iter().enumerate() {
            e[p] = 1.0;
            coarsest.apply(&e, &mut col);
            e[p] = 0.0;
            for (r, &q) in index.iter().enumerate() {
                dense[(r, k)] = col[q];
            }
        }
        let chol = if m > 0 {
            Some(dense.cholesky().ok_or_else(|| Error::Config("coarse operator is not positive definite".into()))?)
        } else {
            None
        };
        Ok(Multigrid { levels, direct: Direct { index, chol } })
    }

    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    fn cycle(&self, l: usize, b: &[f64], x: &mut [f64]) {
        let lev = &self.levels[l];
        x.fill(0.0);
        if l + 1 == self.levels.len() {
            if let Some(ch) = &self.direct.chol {
                let rhs = DVector::from_iterator(self.direct.index.len(), self.direct.index.iter().map(|&p| b[p]));
                let sol = ch.solve(&rhs);
                for (k, &p) in self.direct.index.iter().enumerate() {
                    x[p] = sol[k];
                }
            }
            return;
        }
        let mut ax = vec![0.0; x.len()];
        let smooth = |x: &mut [f64], ax: &mut [f64]| {
            lev.apply(x, ax);
            for p in 0..x.len() {
                x[p] += OMEGA * lev.inv_diag[p] * (b[p] - ax[p]);
            }
        };
        for _ in 0..SWEEPS {
            smooth(x, &mut ax);
        }
        lev.apply(x, &mut ax);
        for p in 0..x.len() {
            ax[p] = if lev.active[p] { b[p] - ax[p] } else { 0.0 };
        }
        let coarse = &self.levels[l + 1];
        let mut cb = vec![0.0; coarse.len()];
        let mut cx = vec![0.0; coarse.len()];
        lev.restrict(&ax, &mut cb, &coarse.active);
        self.cycle(l + 1, &cb, &mut cx);
        lev.prolong_add(&cx, x);
        for _ in 0..SWEEPS {
            smooth(x, &mut ax);
        }
    }
}

impl Preconditioner for Multigrid {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        self.cycle(0, r, z);
    }
}
