use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, SolveError};
use crate::mesh::ops::dot;

/// Matrix-free symmetric operator on flat vectors.
pub trait LinearOperator {
    fn len(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub trait Preconditioner {
    fn apply(&self, r: &[f64], z: &mut [f64]);
}

/// Orthogonal projection onto the subspace the iteration lives in.
pub trait Projector {
    fn project(&self, x: &mut [f64]);
}

pub struct IdentityPreconditioner;

impl Preconditioner for IdentityPreconditioner {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        z.copy_from_slice(r);
    }
}

/// Inverse diagonal; zero diagonal entries (masked unknowns) map to zero.
pub struct Jacobi {
    inv: Vec<f64>,
}

impl Jacobi {
    pub fn new(diagonal: &[f64]) -> Self {
        Jacobi { inv: diagonal.iter().map(|&d| if d > 0.0 { 1.0 / d } else { 0.0 }).collect() }
    }
}

impl Preconditioner for Jacobi {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        for ((z, r), d) in z.iter_mut().zip(r).zip(&self.inv) {
            *z = r * d;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PreconditionerKind {
    None,
    Jacobi,
    /// Exact inverse of a constant-coefficient version of the operator.
    SpectralConstant,
    /// Geometric V-cycle (2-D scalar problems).
    Multigrid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub preconditioner: Option<PreconditionerKind>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig { tol: 1e-9, max_iter: 5000, preconditioner: None }
    }
}

impl SolverConfig {
    pub fn with_tol(tol: f64) -> Self {
        SolverConfig { tol, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return Err(Error::Config(format!("solver tol must lie in (0, 1), got {}", self.tol)));
        }
        if self.max_iter < 1 {
            return Err(Error::Config("max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub relative_residual: f64,
    pub residual_history: Vec<f64>,
    pub wall_time_s: f64,
    pub operator_applications: usize,
    pub preconditioner: String,
    pub unknowns: usize,
    pub converged: bool,
}

/// Preconditioned conjugate gradients.
///
/// Stops when `|r| <= tol |b|`. With a projector, right-hand side, iterates
/// and residuals are kept in its range, which lets the method run on
/// operators that are only semidefinite.
pub fn cg_solve(
    op: &dyn LinearOperator,
    rhs: &[f64],
    x0: Option<&[f64]>,
    pc: &dyn Preconditioner,
    projector: Option<&dyn Projector>,
    tol: f64,
    max_iter: usize,
    pc_name: &str,
) -> Result<(Vec<f64>, SolveReport), SolveError> {
    let start = Instant::now();
    let n = op.len();
    assert_eq!(rhs.len(), n, "right-hand side length");
    let mut report = SolveReport { preconditioner: pc_name.to_string(), unknowns: n, ..Default::default() };

    let mut b = rhs.to_vec();
    if let Some(p) = projector {
        p.project(&mut b);
    }
    let bnorm = dot(&b, &b).sqrt();
    let mut x = match x0 {
        Some(v) => v.to_vec(),
        None => vec![0.0; n],
    };
    if let Some(p) = projector {
        p.project(&mut x);
    }
    if bnorm == 0.0 {
        report.converged = true;
        report.wall_time_s = start.elapsed().as_secs_f64();
        return Ok((vec![0.0; n], report));
    }

    let mut r = vec![0.0; n];
    op.apply(&x, &mut r);
    report.operator_applications += 1;
    for (ri, bi) in r.iter_mut().zip(&b) {
        *ri = bi - *ri;
    }
    if let Some(p) = projector {
        p.project(&mut r);
    }
    let mut rel = dot(&r, &r).sqrt() / bnorm;
    report.residual_history.push(rel);
    let mut best = (rel, x.clone());
    if rel <= tol {
        report.relative_residual = rel;
        report.converged = true;
        report.wall_time_s = start.elapsed().as_secs_f64();
        return Ok((x, report));
    }

    let mut z = vec![0.0; n];
    pc.apply(&r, &mut z);
    if let Some(p) = projector {
        p.project(&mut z);
    }
    let mut p_dir = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let mut last_improvement = 0usize;

    for it in 1..=max_iter {
        op.apply(&p_dir, &mut ap);
        report.operator_applications += 1;
        let pap = dot(&p_dir, &ap);
        if !(pap > 0.0) {
            return Err(SolveError::Indefinite { iteration: it, curvature: pap });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p_dir[i];
            r[i] -= alpha * ap[i];
        }
        if let Some(p) = projector {
            p.project(&mut r);
        }
        rel = dot(&r, &r).sqrt() / bnorm;
        report.iterations = it;
        report.residual_history.push(rel);
        if rel < best.0 {
            best.0 = rel;
            best.1.copy_from_slice(&x);
            last_improvement = it;
        }
        if rel <= tol {
            report.relative_residual = rel;
            report.converged = true;
            report.wall_time_s = start.elapsed().as_secs_f64();
            if let Some(p) = projector {
                p.project(&mut x);
            }
            return Ok((x, report));
        }
        if projector.is_some() && it - last_improvement > 200 {
            return Err(SolveError::Stalled { iteration: it, residual: best.0 });
        }
        pc.apply(&r, &mut z);
        if let Some(p) = projector {
            p.project(&mut z);
        }
        let rz_new = dot(&r, &z);
        if !rz_new.is_finite() {
            return Err(SolveError::Indefinite { iteration: it, curvature: rz_new });
        }
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p_dir[i] = z[i] + beta * p_dir[i];
        }
    }
    report.relative_residual = best.0;
    report.wall_time_s = start.elapsed().as_secs_f64();
    Err(SolveError::NotConverged { report, best: best.1 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    struct Dense(DMatrix<f64>);

    impl LinearOperator for Dense {
        fn len(&self) -> usize {
            self.0.nrows()
        }
        fn apply(&self, x: &[f64], y: &mut [f64]) {
            let v = &self.0 * DVector::from_column_slice(x);
            y.copy_from_slice(v.as_slice());
        }
    }

    fn run(m: DMatrix<f64>, b: &[f64]) -> (Vec<f64>, SolveReport) {
        cg_solve(&Dense(m), b, None, &IdentityPreconditioner, None, 1e-12, 100, "none").unwrap()
    }

    #[test]
    fn identity_one_iteration() {
        let b = [1.0, -2.0, 3.0];
        let (x, rep) = run(DMatrix::identity(3, 3), &b);
        assert_eq!(rep.iterations, 1);
        assert_eq!(x, b.to_vec());
    }

    #[test]
    fn scaled_identity() {
        let b = [1.0, -2.0, 3.0, 4.0];
        let (x, _) = run(DMatrix::identity(4, 4) * 2.0, &b);
        for (xi, bi) in x.iter().zip(&b) {
            assert!((xi - bi / 2.0).abs() < 1e-14);
        }
    }

    #[test]
    fn random_spd_matches_direct() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = DMatrix::from_fn(5, 5, |_, _| rng.gen_range(-1.0..1.0));
        let m = &a * a.transpose() + DMatrix::identity(5, 5);
        let b: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let direct = m.clone().lu().solve(&DVector::from_column_slice(&b)).unwrap();
        let (x, _) = run(m, &b);
        for (xi, di) in x.iter().zip(direct.iter()) {
            assert!((xi - di).abs() < 1e-9);
        }
    }

    #[test]
    fn indefinite_detected() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0]));
        let res = cg_solve(&Dense(m), &[1.0, 1.0], None, &IdentityPreconditioner, None, 1e-10, 10, "none");
        assert!(matches!(res, Err(SolveError::Indefinite { .. })));
    }

    #[test]
    fn budget_exhaustion_returns_best() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = DMatrix::from_fn(30, 30, |_, _| rng.gen_range(-1.0..1.0));
        let m = &a * a.transpose() + DMatrix::identity(30, 30) * 0.01;
        let b = vec![1.0; 30];
        match cg_solve(&Dense(m), &b, None, &IdentityPreconditioner, None, 1e-14, 3, "none") {
            Err(SolveError::NotConverged { report, best }) => {
                assert_eq!(report.iterations, 3);
                assert_eq!(best.len(), 30);
                assert!(!report.converged);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn jacobi_history_reaches_tolerance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = DMatrix::from_fn(40, 40, |_, _| rng.gen_range(-1.0..1.0));
        let d = DMatrix::from_diagonal(&DVector::from_fn(40, |i, _| 1.0 + i as f64));
        let m = &a * a.transpose() + d;
        let diag: Vec<f64> = (0..40).map(|i| m[(i, i)]).collect();
        let b: Vec<f64> = (0..40).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (x, rep) = cg_solve(&Dense(m.clone()), &b, None, &Jacobi::new(&diag), None, 1e-10, 200, "jacobi").unwrap();
        assert!(rep.converged && rep.relative_residual <= 1e-10);
        assert_eq!(rep.residual_history.len(), rep.iterations + 1);
        let r = DVector::from_column_slice(&b) - &m * DVector::from_vec(x);
        assert!(r.norm() <= 1e-9 * DVector::from_column_slice(&b).norm());
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig::with_tol(0.0).validate().is_err());
        assert!(SolverConfig::with_tol(1.5).validate().is_err());
        assert!(SolverConfig { max_iter: 0, ..Default::default() }.validate().is_err());
        assert!(SolverConfig::default().validate().is_ok());
    }
}
