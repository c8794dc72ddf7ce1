//! Fourier tools for periodic grids: Poisson inverses, the Helmholtz
//! projection used as the curl-problem gauge, and the Fourier-side check
//! of `|grad psi|^2 = |div psi|^2 + |curl psi|^2`.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::Serialize;

use super::field::DiscreteField;
use super::grid::{GridRef, Location, StaggeredGrid};
use super::ops::{self, Neumaier};
use crate::error::{Error, Result};

/// Complex FFT over the active axes of an `n0 x n1 x n2` array (axis 0 fastest).
pub struct PeriodicFft {
    shape: [usize; 3],
    forward: Vec<Option<Arc<dyn Fft<f64>>>>,
    inverse: Vec<Option<Arc<dyn Fft<f64>>>>,
}

impl PeriodicFft {
    pub fn new(shape: [usize; 3]) -> Self {
        let mut planner = FftPlanner::new();
        let mut forward = Vec::new();
        let mut inverse = Vec::new();
        for &n in &shape {
            if n > 1 {
                forward.push(Some(planner.plan_fft_forward(n)));
                inverse.push(Some(planner.plan_fft_inverse(n)));
            } else {
                forward.push(None);
                inverse.push(None);
            }
        }
        PeriodicFft { shape, forward, inverse }
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn along(&self, plan: &Arc<dyn Fft<f64>>, axis: usize, data: &mut [Complex64]) {
        let n = self.shape[axis];
        if axis == 0 {
            plan.process(data);
            return;
        }
        let stride: usize = self.shape[..axis].iter().product();
        let outer: usize = self.shape[axis + 1..].iter().product();
        let mut buf = vec![Complex64::new(0.0, 0.0); stride * n];
        for o in 0..outer {
            let base = o * stride * n;
            // gather lines into contiguous storage
            for s in 0..stride {
                for i in 0..n {
                    buf[s * n + i] = data[base + i * stride + s];
                }
            }
            plan.process(&mut buf);
            for s in 0..stride {
                for i in 0..n {
                    data[base + i * stride + s] = buf[s * n + i];
                }
            }
        }
    }

    pub fn forward(&self, data: &mut [Complex64]) {
        for axis in 0..3 {
            if let Some(p) = &self.forward[axis] {
                self.along(p, axis, data);
            }
        }
    }

    /// Inverse transform including the `1/N` normalization.
    pub fn inverse(&self, data: &mut [Complex64]) {
        for axis in 0..3 {
            if let Some(p) = &self.inverse[axis] {
                self.along(p, axis, data);
            }
        }
        let s = 1.0 / self.len() as f64;
        data.iter_mut().for_each(|v| *v *= s);
    }
}

/// Inverse of the periodic 7-point (5-point in 2-D) negative Laplacian on
/// one periodic array shape, mean mode sent to zero. The symbol is
/// `sum_j (2/h_j sin(pi m_j / n_j))^2` for every stagger location.
pub struct PeriodicLaplacian {
    fft: PeriodicFft,
    symbol: Vec<f64>,
}

impl PeriodicLaplacian {
    pub fn new(grid: &StaggeredGrid) -> Result<Self> {
        Self::weighted(grid, [1.0; 3])
    }

    /// Anisotropic variant with symbol `sum_j w_j (2/h_j sin(pi m_j / n_j))^2`.
    pub fn weighted(grid: &StaggeredGrid, w: [f64; 3]) -> Result<Self> {
        if !grid.is_periodic() {
            return Err(Error::NotPeriodic);
        }
        let shape = grid.shape(Location::Node, 0);
        let h = grid.spacing();
        let tables: Vec<Vec<f64>> = (0..3)
            .map(|j| {
                (0..shape[j])
                    .map(|m| {
                        if shape[j] == 1 {
                            0.0
                        } else {
                            let s = 2.0 / h[j] * (PI * m as f64 / shape[j] as f64).sin();
                            w[j] * s * s
                        }
                    })
                    .collect()
            })
            .collect();
        let mut symbol = Vec::with_capacity(shape.iter().product());
        for k in 0..shape[2] {
            for j in 0..shape[1] {
                for i in 0..shape[0] {
                    symbol.push(tables[0][i] + tables[1][j] + tables[2][k]);
                }
            }
        }
        Ok(PeriodicLaplacian { fft: PeriodicFft::new(shape), symbol })
    }

    pub fn len(&self) -> usize {
        self.symbol.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbol.is_empty()
    }

    /// Overwrites `x` with `scale * L^{-1} x` (zero-mean solution).
    pub fn solve_in_place(&self, x: &mut [f64], scale: f64) {
        let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.fft.forward(&mut buf);
        buf[0] = Complex64::new(0.0, 0.0);
        for (v, &l) in buf.iter_mut().zip(&self.symbol).skip(1) {
            *v *= scale / l;
        }
        self.fft.inverse(&mut buf);
        for (o, v) in x.iter_mut().zip(&buf) {
            *o = v.re;
        }
    }
}

/// Orthogonal projection of periodic edge fields onto the discretely
/// divergence-free, zero-mean subspace.
pub struct HelmholtzProjector {
    grid: GridRef,
    laplacian: PeriodicLaplacian,
}

impl HelmholtzProjector {
    pub fn new(grid: &GridRef) -> Result<Self> {
        Ok(HelmholtzProjector { grid: grid.clone(), laplacian: PeriodicLaplacian::new(grid)? })
    }

    pub fn project(&self, u: &mut [f64]) {
        let g = &*self.grid;
        let mut d = vec![0.0; g.entity_count(Location::Node)];
        ops::grad_t_into(g, u, &mut d);
        self.laplacian.solve_in_place(&mut d, 1.0);
        let mut gp = vec![0.0; u.len()];
        ops::grad_into(g, &d, &mut gp);
        let mut off = 0;
        for c in 0..g.components(Location::Edge) {
            let len = g.component_len(Location::Edge, c);
            let comp = &mut u[off..off + len];
            let mut acc = Neumaier::default();
            for (x, y) in comp.iter_mut().zip(&gp[off..off + len]) {
                *x -= y;
                acc.add(*x);
            }
            let mean = acc.sum() / len as f64;
            comp.iter_mut().for_each(|x| *x -= mean);
            off += len;
        }
    }
}

/// Removes the gradient part and the mean of a periodic edge field.
pub fn helmholtz_project(u: &DiscreteField) -> Result<DiscreteField> {
    u.expect_location(Location::Edge)?;
    let p = HelmholtzProjector::new(u.grid())?;
    let mut out = u.clone();
    p.project(out.values_mut());
    Ok(out)
}

/// Both sides of the Fourier norm identity for a zero-mean periodic field.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct IdentityCheck {
    /// `|grad psi|^2`
    pub lhs: f64,
    /// `|div psi|^2 + |curl psi|^2`
    pub rhs: f64,
    pub div_part: f64,
    pub curl_part: f64,
    /// `|lhs - rhs| / max(lhs, rhs)`
    pub residual: f64,
}

fn signed_wavenumber(m: usize, n: usize, length: f64) -> f64 {
    if n == 1 || (n.is_multiple_of(2) && m == n / 2) {
        return 0.0;
    }
    let ms = if m <= n / 2 { m as f64 } else { m as f64 - n as f64 };
    2.0 * PI * ms / length
}

/// Evaluates `|grad psi|^2` and `|div psi|^2 + |curl psi|^2` with exact
/// Fourier derivatives of the trigonometric interpolant of `psi` (edge or
/// face field). Stagger offsets are folded into the Fourier phases and the
/// mean mode is dropped; the Nyquist wavenumber is set to zero so every
/// mode carries a real derivative symbol.
pub fn spectral_identity_check(psi: &DiscreteField) -> Result<IdentityCheck> {
    let g = psi.grid();
    if !g.is_periodic() {
        return Err(Error::NotPeriodic);
    }
    let loc = psi.location();
    if !matches!(loc, Location::Edge | Location::Face) {
        return Err(Error::WrongLocation { expected: Location::Edge, found: loc });
    }
    let d = g.dims();
    let shape = g.shape(loc, 0);
    let fft = PeriodicFft::new(shape);
    let n_tot = fft.len() as f64;
    let h = g.spacing();
    let ext = g.extent();
    let lengths: [f64; 3] = std::array::from_fn(|j| ext.length(j));

    let mut coeffs: Vec<Vec<Complex64>> = Vec::with_capacity(d);
    for c in 0..d {
        let mut buf: Vec<Complex64> = psi.component(c).iter().map(|&v| Complex64::new(v, 0.0)).collect();
        fft.forward(&mut buf);
        let stagger = g.stagger(loc, c);
        for k in 0..shape[2] {
            for j in 0..shape[1] {
                for i in 0..shape[0] {
                    let idx = i + shape[0] * (j + shape[1] * k);
                    let m = [i, j, k];
                    let mut phase = 0.0;
                    for a in 0..d {
                        // offsets relative to the extent origin
                        let kw = signed_wavenumber(m[a], shape[a], lengths[a]);
                        phase -= kw * stagger[a] * h[a];
                    }
                    buf[idx] = buf[idx] / n_tot * Complex64::from_polar(1.0, phase);
                }
            }
        }
        coeffs.push(buf);
    }

    let mut lhs = Neumaier::default();
    let mut div_part = Neumaier::default();
    let mut curl_part = Neumaier::default();
    for k in 0..shape[2] {
        for j in 0..shape[1] {
            for i in 0..shape[0] {
                let idx = i + shape[0] * (j + shape[1] * k);
                if idx == 0 {
                    continue;
                }
                let m = [i, j, k];
                let kv: [f64; 3] =
                    std::array::from_fn(|a| if a < d { signed_wavenumber(m[a], shape[a], lengths[a]) } else { 0.0 });
                let c: Vec<Complex64> = (0..d).map(|a| coeffs[a][idx]).collect();
                let k2: f64 = kv.iter().map(|x| x * x).sum();
                let c2: f64 = c.iter().map(|z| z.norm_sqr()).sum();
                lhs.add(k2 * c2);
                let kc: Complex64 = (0..d).map(|a| c[a] * kv[a]).sum();
                div_part.add(kc.norm_sqr());
                if d == 3 {
                    let cr = [c[2] * kv[1] - c[1] * kv[2], c[0] * kv[2] - c[2] * kv[0], c[1] * kv[0] - c[0] * kv[1]];
                    curl_part.add(cr.iter().map(|z| z.norm_sqr()).sum());
                } else {
                    curl_part.add((c[1] * kv[0] - c[0] * kv[1]).norm_sqr());
                }
            }
        }
    }
    let vol: f64 = lengths[..d].iter().product();
    let lhs = lhs.sum() * vol;
    let div_part = div_part.sum() * vol;
    let curl_part = curl_part.sum() * vol;
    let rhs = div_part + curl_part;
    let scale = lhs.max(rhs);
    let residual = if scale > 0.0 { (lhs - rhs).abs() / scale } else { 0.0 };
    Ok(IdentityCheck { lhs, rhs, div_part, curl_part, residual })
}

/// Cell potential whose dual gradient reproduces a curl-free, zero-mean
/// periodic face field: solves `div dual_grad phi = div G`, mean zero.
pub fn dual_scalar_potential(face: &DiscreteField) -> Result<DiscreteField> {
    face.expect_location(Location::Face)?;
    let g = face.grid();
    let lap = PeriodicLaplacian::new(g)?;
    let mut d = ops::div(face)?.into_values();
    // div dual_grad = -L
    lap.solve_in_place(&mut d, -1.0);
    Ok(DiscreteField::from_raw(g, Location::Cell, d))
}

/// Divergence-free face potential `p` with `curl* p = g` for a periodic,
/// adjoint-divergence-free, zero-mean edge field `g` (3-D).
pub fn face_vector_potential(edge: &DiscreteField) -> Result<DiscreteField> {
    edge.expect_location(Location::Edge)?;
    let g = edge.grid();
    let lap = PeriodicLaplacian::new(g)?;
    let mut c = ops::curl(edge)?;
    for k in 0..3 {
        lap.solve_in_place(c.component_mut(k), 1.0);
    }
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_grid, ops::*, Extent, Topology};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(n: [usize; 3]) -> GridRef {
        build_grid(3, &n, Topology::Periodic, Extent::unit(), None).unwrap()
    }

    fn random(g: &GridRef, loc: Location, seed: u64) -> DiscreteField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = (0..g.entity_count(loc)).map(|_| rng.gen_range(-1.0..1.0)).collect();
        DiscreteField::from_values(g, loc, v).unwrap()
    }

    #[test]
    fn laplacian_inverse_matches_stencil() {
        let g = grid([6, 5, 4]);
        let lap = PeriodicLaplacian::new(&g).unwrap();
        let mut x = random(&g, Location::Node, 1);
        x.remove_component_means();
        let gx = grad(&x).unwrap();
        let lx = div_star(&gx).unwrap(); // = -L x
        let mut y = lx.values().to_vec();
        lap.solve_in_place(&mut y, -1.0);
        for (a, b) in y.iter().zip(x.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn projection_removes_gradients() {
        let g = grid([8, 8, 8]);
        let mut phi = random(&g, Location::Node, 2);
        phi.remove_component_means();
        let u = grad(&phi).unwrap();
        let p = helmholtz_project(&u).unwrap();
        assert!(norm_l2(&p) <= 1e-10 * norm_l2(&u));
    }

    #[test]
    fn projection_fixes_solenoidal_fields() {
        let g = grid([8, 8, 8]);
        let f = random(&g, Location::Face, 3);
        let u = curl_star(&f).unwrap();
        let p = helmholtz_project(&u).unwrap();
        assert!(norm_l2(&p.sub(&u).unwrap()) <= 1e-10 * norm_l2(&u));
    }

    #[test]
    fn projection_output_gauge() {
        let g = grid([8, 6, 4]);
        let u = random(&g, Location::Edge, 4);
        let p = helmholtz_project(&u).unwrap();
        let d = div_star(&p).unwrap();
        assert!(norm_l2(&d) <= 1e-10 * norm_l2(&div_star(&u).unwrap()));
        assert!(p.component_means().iter().all(|m| m.abs() <= 1e-12));
        let pp = helmholtz_project(&p).unwrap();
        assert!(norm_l2(&pp.sub(&p).unwrap()) <= 1e-10 * norm_l2(&p));
    }

    #[test]
    fn projection_self_adjoint() {
        let g = grid([6, 6, 6]);
        let u = random(&g, Location::Edge, 5);
        let v = random(&g, Location::Edge, 6);
        let a = inner_product(&helmholtz_project(&u).unwrap(), &v).unwrap();
        let b = inner_product(&u, &helmholtz_project(&v).unwrap()).unwrap();
        assert!((a - b).abs() <= 1e-10 * a.abs().max(1e-3));
    }

    #[test]
    fn identity_analytic_case() {
        let g = grid([16, 16, 16]);
        let psi = DiscreteField::from_fn(&g, Location::Edge, |c, x| if c == 0 { (2.0 * PI * x[1]).sin() } else { 0.0 });
        let chk = spectral_identity_check(&psi).unwrap();
        let target = 2.0 * PI * PI;
        assert!((chk.lhs - target).abs() < 1e-10 * target);
        assert!((chk.rhs - target).abs() < 1e-10 * target);
        assert!(chk.residual <= 1e-12);
        assert!(chk.div_part.abs() < 1e-10);
    }

    #[test]
    fn identity_staggered_phase() {
        // a field varying along its own stagger axis exercises the phase shift
        let g = grid([12, 8, 8]);
        let psi = DiscreteField::from_fn(&g, Location::Edge, |c, x| if c == 0 { (2.0 * PI * x[0]).cos() } else { 0.0 });
        let chk = spectral_identity_check(&psi).unwrap();
        let target = 2.0 * PI * PI;
        assert!((chk.lhs - target).abs() < 1e-10 * target);
        assert!((chk.div_part - target).abs() < 1e-10 * target);
        assert!(chk.curl_part.abs() < 1e-10);
    }

    #[test]
    fn identity_random_fields() {
        for seed in 0..5 {
            let g = grid([8, 6, 10]);
            let mut psi = random(&g, Location::Edge, seed);
            psi.remove_component_means();
            let chk = spectral_identity_check(&psi).unwrap();
            assert!(chk.residual <= 1e-10, "{}", chk.residual);
        }
    }

    #[test]
    fn identity_rejects_bounded() {
        let g = build_grid(3, &[4, 4, 4], Topology::Bounded, Extent::unit(), None).unwrap();
        let psi = DiscreteField::zeros(&g, Location::Edge);
        assert!(matches!(spectral_identity_check(&psi), Err(Error::NotPeriodic)));
    }

    #[test]
    fn potentials_reconstruct() {
        let g = grid([8, 8, 8]);
        let mut c = random(&g, Location::Cell, 7);
        c.remove_component_means();
        let gf = dual_grad(&c).unwrap();
        let pot = dual_scalar_potential(&gf).unwrap();
        let back = dual_grad(&pot).unwrap();
        assert!(norm_l2(&back.sub(&gf).unwrap()) <= 1e-10 * norm_l2(&gf));

        let f = random(&g, Location::Face, 8);
        let e = curl_star(&f).unwrap();
        let p = face_vector_potential(&e).unwrap();
        let back = curl_star(&p).unwrap();
        assert!(norm_l2(&back.sub(&e).unwrap()) <= 1e-10 * norm_l2(&e));
    }
}
