use std::cell::RefCell;

use log::warn;

use super::cg::{
    cg_solve, IdentityPreconditioner, Jacobi, LinearOperator, Preconditioner, PreconditionerKind, SolveReport,
    SolverConfig,
};
use super::maxwell::check_resolution;
use super::multigrid::Multigrid;
use super::pec::BoxSpectralNodes;
use crate::cell::HomogenizedTensors;
use crate::coeff::{sample_epsilon, CoefficientModel, SampledCoefficient};
use crate::error::{Error, Result};
use crate::mesh::ops::{grad_into, grad_t_into, grad_t_sq_add};
use crate::mesh::{BoundaryMask, DiscreteField, GridRef, Location};

/// `u -> P grad^T(b grad P u)` on node scalars with Dirichlet projection `P`.
pub struct EllipticOperator {
    grid: GridRef,
    b: Vec<f64>,
    active: Vec<bool>,
    node_buf: RefCell<Vec<f64>>,
    edge_buf: RefCell<Vec<f64>>,
}

impl EllipticOperator {
    pub fn new(b: &SampledCoefficient) -> Result<Self> {
        if b.location() != Location::Edge {
            return Err(Error::WrongLocation { expected: Location::Edge, found: b.location() });
        }
        let grid = b.grid().clone();
        let mut w = b.operator_weights()?;
        for (v, act) in w.iter_mut().zip(grid.active(Location::Edge)) {
            if !act && !grid.is_periodic() {
                *v = 0.0;
            }
        }
        let nn = grid.entity_count(Location::Node);
        Ok(EllipticOperator {
            active: grid.active(Location::Node).to_vec(),
            node_buf: RefCell::new(vec![0.0; nn]),
            edge_buf: RefCell::new(vec![0.0; w.len()]),
            b: w,
            grid,
        })
    }

    pub fn grid(&self) -> &GridRef {
        &self.grid
    }

    /// Edge weights, zero on inactive edges.
    pub fn weights(&self) -> &[f64] {
        &self.b
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.len()];
        grad_t_sq_add(&self.grid, &self.b, &mut d);
        for (v, act) in d.iter_mut().zip(&self.active) {
            if !act {
                *v = 0.0;
            }
        }
        d
    }
}

impl LinearOperator for EllipticOperator {
    fn len(&self) -> usize {
        self.active.len()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let mut xn = self.node_buf.borrow_mut();
        for ((d, s), act) in xn.iter_mut().zip(x).zip(&self.active) {
            *d = if *act { *s } else { 0.0 };
        }
        let mut e = self.edge_buf.borrow_mut();
        grad_into(&self.grid, &xn, &mut e);
        for (v, w) in e.iter_mut().zip(&self.b) {
            *v *= w;
        }
        grad_t_into(&self.grid, &e, y);
        for (v, act) in y.iter_mut().zip(&self.active) {
            if !act {
                *v = 0.0;
            }
        }
    }
}

/// Coefficient source for [`solve_elliptic`].
pub enum EllipticCoefficients<'a> {
    /// `a(x, x/eps)` sampled at edge midpoints.
    Fine { model: &'a CoefficientModel, eps: f64 },
    /// Homogenized tensor field at the same edge midpoints.
    Homogenized(&'a HomogenizedTensors),
}

fn preconditioner_name(kind: PreconditionerKind) -> &'static str {
    match kind {
        PreconditionerKind::None => "none",
        PreconditionerKind::Jacobi => "jacobi",
        PreconditionerKind::SpectralConstant => "spectral-constant",
        PreconditionerKind::Multigrid => "multigrid",
    }
}

/// Solves `-div(b grad u) = f` with homogeneous Dirichlet data.
pub fn solve_elliptic_sampled(
    b: &SampledCoefficient,
    f: &DiscreteField,
    config: &SolverConfig,
) -> Result<(DiscreteField, SolveReport)> {
    config.validate()?;
    f.expect_location(Location::Node)?;
    f.check_finite("right-hand side")?;
    let g = b.grid().clone();
    if g.is_periodic() {
        return Err(Error::NotBounded);
    }
    if !f.same_grid(&g) {
        return Err(Error::GridMismatch);
    }
    let op = EllipticOperator::new(b)?;
    let mut rhs = f.values().to_vec();
    BoundaryMask::dirichlet(&g).apply_slice(&mut rhs);
    let kind = config.preconditioner.unwrap_or(if Multigrid::supported(&g) {
        PreconditionerKind::Multigrid
    } else {
        PreconditionerKind::SpectralConstant
    });
    let pc: Box<dyn Preconditioner> = match kind {
        PreconditionerKind::None => Box::new(IdentityPreconditioner),
        PreconditionerKind::Jacobi => Box::new(Jacobi::new(&op.diagonal())),
        PreconditionerKind::SpectralConstant => Box::new(BoxSpectralNodes::new(&g, b.mean_weights()?)?),
        PreconditionerKind::Multigrid => Box::new(Multigrid::new(&g, op.weights())?),
    };
    let (x, report) =
        cg_solve(&op, &rhs, None, pc.as_ref(), None, config.tol, config.max_iter, preconditioner_name(kind))
            .map_err(Error::Solve)?;
    Ok((DiscreteField::from_values(&g, Location::Node, x)?, report))
}

/// Fine (`a^eps`) or homogenized (`a0`) elliptic solve on a bounded grid.
pub fn solve_elliptic(
    coefficients: EllipticCoefficients,
    grid: &GridRef,
    f: &DiscreteField,
    config: &SolverConfig,
    strict: bool,
) -> Result<(DiscreteField, SolveReport)> {
    match coefficients {
        EllipticCoefficients::Fine { model, eps } => {
            check_resolution(&[model], eps, grid, strict)?;
            let b = sample_epsilon(model, grid, eps, Location::Edge)?;
            solve_elliptic_sampled(&b, f, config)
        }
        EllipticCoefficients::Homogenized(t) => {
            if **t.b0.grid() != **grid {
                warn!("tensor grid differs from the solve grid");
                return Err(Error::GridMismatch);
            }
            solve_elliptic_sampled(&t.b0, f, config)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_grid, build_l_shape, Extent, Topology};
    use std::f64::consts::PI;

    fn manufactured_error(n: usize, kind: PreconditionerKind) -> (f64, SolveReport) {
        let g = build_grid(2, &[n, n], Topology::Bounded, Extent::unit(), None).unwrap();
        let u = |x: [f64; 3]| (PI * x[0]).sin() * (PI * x[1]).sin();
        let f = DiscreteField::from_fn(&g, Location::Node, |_, x| 2.0 * PI * PI * u(x));
        let cfg = SolverConfig { tol: 1e-12, max_iter: 5000, preconditioner: Some(kind) };
        let id = CoefficientModel::identity();
        let (sol, rep) =
            solve_elliptic(EllipticCoefficients::Fine { model: &id, eps: 1.0 }, &g, &f, &cfg, false).unwrap();
        let exact = DiscreteField::from_fn(&g, Location::Node, |_, x| u(x));
        (sol.sub(&exact).unwrap().max_abs(), rep)
    }

    #[test]
    fn manufactured_second_order() {
        let (e16, _) = manufactured_error(16, PreconditionerKind::Multigrid);
        let (e32, _) = manufactured_error(32, PreconditionerKind::Multigrid);
        // five-point error is pi^4 h^2 / 12 * |u|_max to leading order
        assert!(e32 < PI.powi(4) / 12.0 / (32.0 * 32.0) * 1.05, "{e32}");
        assert!((e16 / e32 - 4.0).abs() < 0.1);
    }

    #[test]
    fn preconditioners_agree() {
        let mut sols = vec![];
        for kind in [
            PreconditionerKind::None,
            PreconditionerKind::Jacobi,
            PreconditionerKind::SpectralConstant,
            PreconditionerKind::Multigrid,
        ] {
            let (e, rep) = manufactured_error(32, kind);
            assert!(rep.converged);
            sols.push(e);
        }
        for e in &sols[1..] {
            assert!((e - sols[0]).abs() < 1e-9);
        }
    }

    #[test]
    fn l_shape_positive() {
        let g = build_l_shape(2, &[32, 32], Extent::unit()).unwrap();
        let f = DiscreteField::constant(&g, Location::Node, &[1.0]);
        let m = CoefficientModel::trig(2.0, 1.0, vec![0, 1]);
        let (u, rep) =
            solve_elliptic(EllipticCoefficients::Fine { model: &m, eps: 0.5 }, &g, &f, &SolverConfig::default(), false)
                .unwrap();
        assert!(rep.converged);
        let act = g.active(Location::Node);
        for (v, a) in u.values().iter().zip(act) {
            assert!(*v >= -1e-10);
            assert_eq!(*v > 0.0, *a);
        }
    }

    #[test]
    fn constant_coefficient_fine_equals_homogenized_rhs_independent() {
        let g = build_grid(2, &[16, 16], Topology::Bounded, Extent::unit(), None).unwrap();
        let f = DiscreteField::from_fn(&g, Location::Node, |_, x| x[0] + 1.0);
        let m = CoefficientModel::constant_scalar(3.0);
        let cfg = SolverConfig::with_tol(1e-12);
        let (u1, _) = solve_elliptic(EllipticCoefficients::Fine { model: &m, eps: 0.1 }, &g, &f, &cfg, false).unwrap();
        let (u2, _) = solve_elliptic(EllipticCoefficients::Fine { model: &m, eps: 0.37 }, &g, &f, &cfg, false).unwrap();
        assert!(u1.sub(&u2).unwrap().max_abs() < 1e-12);
    }
}
