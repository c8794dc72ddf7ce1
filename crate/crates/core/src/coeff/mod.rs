//! Two-scale coefficient models `a(x, y)`, `b(x, y)` and their samples at
//! stagger locations of cell grids and domain grids.

use nalgebra::{Matrix2, Matrix3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::grid::unravel;
use crate::mesh::{Extent, GridRef, Location};

pub type Mat3 = [[f64; 3]; 3];

const IDENTITY: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

/// A constant matrix given as a scalar, a diagonal or a full 3x3 array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    Scalar(f64),
    Diagonal(Vec<f64>),
    Full(Vec<Vec<f64>>),
}

impl MatrixSpec {
    fn to_mat(&self) -> Result<Mat3> {
        match self {
            MatrixSpec::Scalar(s) => Ok(scaled(&IDENTITY, *s)),
            MatrixSpec::Diagonal(d) => {
                if !(d.len() == 2 || d.len() == 3) {
                    return Err(Error::Coefficient("diagonal needs 2 or 3 entries".into()));
                }
                let mut m = [[0.0; 3]; 3];
                for k in 0..3 {
                    m[k][k] = *d.get(k).unwrap_or(&d[d.len() - 1]);
                }
                Ok(m)
            }
            MatrixSpec::Full(rows) => {
                if rows.len() != 3 || rows.iter().any(|r| r.len() != 3) {
                    return Err(Error::Coefficient("full matrix must be 3x3".into()));
                }
                Ok(std::array::from_fn(|i| std::array::from_fn(|j| rows[i][j])))
            }
        }
    }
}

fn scaled(m: &Mat3, s: f64) -> Mat3 {
    std::array::from_fn(|i| std::array::from_fn(|j| m[i][j] * s))
}

/// Built-in coefficient families. All are periodic in `y` with period 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum Family {
    Constant {
        value: MatrixSpec,
    },
    /// `beta(y_axis) I` with `beta = values[0]` on `[0, fraction)` and
    /// `values[1]` on `[fraction, 1)`.
    Laminate {
        #[serde(default)]
        axis: usize,
        values: [f64; 2],
        #[serde(default = "half")]
        fraction: f64,
    },
    /// `(mean + amplitude * sum_k sin(2 pi y_k)) I` over the listed axes.
    Trig {
        mean: f64,
        amplitude: f64,
        #[serde(default = "first_axis")]
        axes: Vec<usize>,
    },
    /// `values[0] I` on even sub-cubes of the 2-per-axis split, `values[1] I` on odd.
    Checkerboard {
        values: [f64; 2],
    },
    /// `s(x) * base(y)` with `s(x) = offset + slope . x`.
    Composite {
        base: Box<Family>,
        offset: f64,
        slope: [f64; 3],
    },
}

fn half() -> f64 {
    0.5
}

fn first_axis() -> Vec<usize> {
    vec![0]
}

/// Storage layout a family needs for its samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Structure {
    Scalar,
    Diagonal,
    Full,
}

/// Relative size below which off-diagonal entries count as zero.
pub const OFF_DIAGONAL_TOLERANCE: f64 = 1e-12;

/// Reduces a periodic coordinate to `[0, 1)`; values within `1e-10` below an
/// integer snap up to it.
#[inline]
pub fn reduce_periodic(q: f64) -> f64 {
    let y = q - (q + 1e-10).floor();
    y.max(0.0)
}

impl Family {
    fn structure(&self) -> Structure {
        match self {
            Family::Constant { value: MatrixSpec::Scalar(_) } => Structure::Scalar,
            Family::Constant { value: MatrixSpec::Diagonal(_) } => Structure::Diagonal,
            Family::Constant { value: MatrixSpec::Full(_) } => Structure::Full,
            Family::Laminate { .. } | Family::Trig { .. } | Family::Checkerboard { .. } => Structure::Scalar,
            Family::Composite { base, .. } => base.structure(),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Family::Constant { value } => {
                value.to_mat()?;
            }
            Family::Laminate { axis, values, fraction } => {
                if *axis > 2 || !(*fraction > 0.0 && *fraction < 1.0) {
                    return Err(Error::Coefficient("laminate needs axis <= 2 and 0 < fraction < 1".into()));
                }
                if values.iter().any(|v| !(*v > 0.0)) {
                    return Err(Error::Coefficient("laminate values must be positive".into()));
                }
            }
            Family::Trig { mean, amplitude, axes } => {
                if axes.is_empty() || axes.iter().any(|&a| a > 2) {
                    return Err(Error::Coefficient("trig needs axes in 0..=2".into()));
                }
                if !(*mean - amplitude.abs() * axes.len() as f64 > 0.0) {
                    return Err(Error::Coefficient("trig coefficient is not uniformly positive".into()));
                }
            }
            Family::Checkerboard { values } => {
                if values.iter().any(|v| !(*v > 0.0)) {
                    return Err(Error::Coefficient("checkerboard values must be positive".into()));
                }
            }
            Family::Composite { base, .. } => {
                if matches!(**base, Family::Composite { .. }) {
                    return Err(Error::Coefficient("nested composites are not supported".into()));
                }
                base.validate()?;
            }
        }
        Ok(())
    }

    /// Scalar value for isotropic families (`y` need not be reduced).
    fn scalar(&self, x: &[f64; 3], y: &[f64; 3]) -> f64 {
        match self {
            Family::Constant { value: MatrixSpec::Scalar(s) } => *s,
            Family::Laminate { axis, values, fraction } => {
                if reduce_periodic(y[*axis]) < fraction - 1e-10 {
                    values[0]
                } else {
                    values[1]
                }
            }
            Family::Trig { mean, amplitude, axes } => {
                mean + amplitude * axes.iter().map(|&k| (2.0 * std::f64::consts::PI * y[k]).sin()).sum::<f64>()
            }
            Family::Checkerboard { values } => {
                let parity: i64 = (0..3).map(|k| (2.0 * reduce_periodic(y[k]) + 1e-10).floor() as i64).sum();
                if parity % 2 == 0 {
                    values[0]
                } else {
                    values[1]
                }
            }
            Family::Composite { base, offset, slope } => {
                (offset + slope[0] * x[0] + slope[1] * x[1] + slope[2] * x[2]) * base.scalar(x, y)
            }
            Family::Constant { .. } => unreachable!("non-scalar constant"),
        }
    }

    fn matrix(&self, x: &[f64; 3], y: &[f64; 3]) -> Mat3 {
        match self {
            Family::Constant { value } => value.to_mat().expect("validated"),
            Family::Composite { base, offset, slope } => {
                let s = offset + slope[0] * x[0] + slope[1] * x[1] + slope[2] * x[2];
                scaled(&base.matrix(x, y), s)
            }
            _ => scaled(&IDENTITY, self.scalar(x, y)),
        }
    }

    fn base_bounds(&self) -> (f64, f64) {
        match self {
            Family::Constant { value } => {
                let m = value.to_mat().expect("validated");
                sym_eigen_range(&symmetric_part(&m), 3)
            }
            Family::Laminate { values, .. } | Family::Checkerboard { values } => {
                (values[0].min(values[1]), values[0].max(values[1]))
            }
            Family::Trig { mean, amplitude, axes } => {
                let a = amplitude.abs() * axes.len() as f64;
                (mean - a, mean + a)
            }
            Family::Composite { base, .. } => base.base_bounds(),
        }
    }

    fn oscillation_axes(&self) -> Vec<usize> {
        match self {
            Family::Constant { .. } => vec![],
            Family::Laminate { axis, .. } => vec![*axis],
            Family::Trig { axes, .. } => {
                let mut a = axes.clone();
                a.sort_unstable();
                a.dedup();
                a
            }
            Family::Checkerboard { .. } => vec![0, 1, 2],
            Family::Composite { base, .. } => base.oscillation_axes(),
        }
    }
}

fn symmetric_part(m: &Mat3) -> Mat3 {
    std::array::from_fn(|i| std::array::from_fn(|j| 0.5 * (m[i][j] + m[j][i])))
}

fn is_symmetric(m: &Mat3) -> bool {
    (0..3).all(|i| (0..3).all(|j| m[i][j] == m[j][i]))
}

/// Extreme eigenvalues of the leading `dims x dims` block of a symmetric matrix.
pub fn sym_eigen_range(m: &Mat3, dims: usize) -> (f64, f64) {
    let ev: Vec<f64> = if dims == 2 {
        let a = Matrix2::new(m[0][0], m[0][1], m[1][0], m[1][1]);
        a.symmetric_eigenvalues().iter().copied().collect()
    } else {
        let a = Matrix3::from_fn(|i, j| m[i][j]);
        a.symmetric_eigenvalues().iter().copied().collect()
    };
    let lo = ev.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = ev.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

/// A two-scale coefficient `a(x, y)` with declared bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientModel {
    #[serde(flatten)]
    pub family: Family,
    /// Macro region `D`; macro points outside it are rejected.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<Extent>,
    /// Whether samples must be exactly symmetric.
    #[serde(default = "yes")]
    pub symmetric: bool,
}

fn yes() -> bool {
    true
}

impl CoefficientModel {
    pub fn new(family: Family) -> Result<Self> {
        let m = CoefficientModel { family, domain: None, symmetric: true };
        m.validate()?;
        Ok(m)
    }

    pub fn with_domain(mut self, domain: Extent) -> Result<Self> {
        self.domain = Some(domain);
        self.validate()?;
        Ok(self)
    }

    pub fn identity() -> Self {
        Self::constant_scalar(1.0)
    }

    pub fn constant_scalar(v: f64) -> Self {
        CoefficientModel { family: Family::Constant { value: MatrixSpec::Scalar(v) }, domain: None, symmetric: true }
    }

    pub fn laminate(axis: usize, values: [f64; 2]) -> Self {
        CoefficientModel { family: Family::Laminate { axis, values, fraction: 0.5 }, domain: None, symmetric: true }
    }

    pub fn trig(mean: f64, amplitude: f64, axes: Vec<usize>) -> Self {
        CoefficientModel { family: Family::Trig { mean, amplitude, axes }, domain: None, symmetric: true }
    }

    pub fn checkerboard(values: [f64; 2]) -> Self {
        CoefficientModel { family: Family::Checkerboard { values }, domain: None, symmetric: true }
    }

    /// `(offset + slope . x) * base(y)`, restricted to `domain`.
    pub fn composite(base: CoefficientModel, offset: f64, slope: [f64; 3], domain: Extent) -> Result<Self> {
        let m = CoefficientModel {
            family: Family::Composite { base: Box::new(base.family), offset, slope },
            domain: Some(domain),
            symmetric: true,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        self.family.validate()?;
        if let Family::Composite { .. } = self.family {
            let d = self.domain.ok_or_else(|| Error::Coefficient("composite models need a domain".into()))?;
            let (lo, _) = self.modulation_range(&d);
            if !(lo > 0.0) {
                return Err(Error::Coefficient("modulation must stay positive on the domain".into()));
            }
        }
        let (c1, c2) = self.declared_bounds();
        if !(c1 > 0.0 && c2 >= c1 && c2.is_finite()) {
            return Err(Error::Coefficient(format!("declared bounds ({c1}, {c2}) are not admissible")));
        }
        Ok(())
    }

    fn modulation_range(&self, d: &Extent) -> (f64, f64) {
        match &self.family {
            Family::Composite { offset, slope, .. } => {
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                for corner in 0..8 {
                    let s = offset
                        + (0..3).map(|j| slope[j] * if corner >> j & 1 == 1 { d.hi[j] } else { d.lo[j] }).sum::<f64>();
                    lo = lo.min(s);
                    hi = hi.max(s);
                }
                (lo, hi)
            }
            _ => (1.0, 1.0),
        }
    }

    /// `(c1, c2)`: every sample `M` satisfies `c1 |xi|^2 <= M xi . xi <= c2 |xi|^2`.
    pub fn declared_bounds(&self) -> (f64, f64) {
        let (b1, b2) = self.family.base_bounds();
        match (&self.family, &self.domain) {
            (Family::Composite { .. }, Some(d)) => {
                let (s1, s2) = self.modulation_range(d);
                (b1 * s1, b2 * s2)
            }
            _ => (b1, b2),
        }
    }

    pub fn structure(&self) -> Structure {
        self.family.structure()
    }

    pub fn is_x_dependent(&self) -> bool {
        matches!(&self.family, Family::Composite { slope, .. } if slope.iter().any(|&s| s != 0.0))
    }

    /// Cell-independent factorization `a(x, y) = s(x) * base(y)`, if any.
    pub fn modulation(&self) -> Option<(f64, [f64; 3])> {
        match &self.family {
            Family::Composite { offset, slope, .. } => Some((*offset, *slope)),
            _ => None,
        }
    }

    /// The `y`-periodic part with the `x` modulation removed.
    pub fn base(&self) -> CoefficientModel {
        match &self.family {
            Family::Composite { base, .. } => {
                CoefficientModel { family: (**base).clone(), domain: None, symmetric: self.symmetric }
            }
            _ => self.clone(),
        }
    }

    /// Axes along which the coefficient depends on `y`.
    pub fn oscillation_axes(&self) -> Vec<usize> {
        self.family.oscillation_axes()
    }

    pub fn is_y_independent(&self) -> bool {
        self.oscillation_axes().is_empty()
    }

    pub fn matrix(&self, x: &[f64; 3], y: &[f64; 3]) -> Mat3 {
        self.family.matrix(x, y)
    }

    fn sample_at(&self, x: &[f64; 3], y: &[f64; 3]) -> Sample {
        match self.structure() {
            Structure::Scalar => Sample::Scalar(self.family.scalar(x, y)),
            Structure::Diagonal => {
                let m = self.family.matrix(x, y);
                Sample::Diagonal([m[0][0], m[1][1], m[2][2]])
            }
            Structure::Full => Sample::Full(self.family.matrix(x, y)),
        }
    }

    fn check_macro_point(&self, x: &[f64; 3], dims: usize) -> Result<()> {
        if let Some(d) = &self.domain {
            if !d.contains(x, dims, 1e-12) {
                return Err(Error::Coefficient(format!("macro point {:?} lies outside the model domain", &x[..dims])));
            }
        }
        Ok(())
    }
}

enum Sample {
    Scalar(f64),
    Diagonal([f64; 3]),
    Full(Mat3),
}

/// Coefficient samples, one matrix per entity of a stagger location.
#[derive(Debug, Clone)]
pub enum Storage {
    Uniform(Mat3),
    Scalar(Vec<f64>),
    Diagonal(Vec<[f64; 3]>),
    Full(Vec<Mat3>),
}

#[derive(Debug, Clone)]
pub struct SampledCoefficient {
    grid: GridRef,
    location: Location,
    storage: Storage,
    symmetric: bool,
}

impl SampledCoefficient {
    pub fn uniform(grid: &GridRef, location: Location, m: Mat3) -> Self {
        SampledCoefficient { grid: grid.clone(), location, storage: Storage::Uniform(m), symmetric: true }
    }

    pub fn from_storage(grid: &GridRef, location: Location, storage: Storage) -> Result<Self> {
        let n = grid.entity_count(location);
        let len = match &storage {
            Storage::Uniform(_) => n,
            Storage::Scalar(v) => v.len(),
            Storage::Diagonal(v) => v.len(),
            Storage::Full(v) => v.len(),
        };
        if len != n {
            return Err(Error::Coefficient(format!("{len} samples for {n} entities")));
        }
        Ok(SampledCoefficient { grid: grid.clone(), location, storage, symmetric: true })
    }

    pub fn grid(&self) -> &GridRef {
        &self.grid
    }

    pub fn location(&self) -> Location {
        self.location
    }

    pub fn storage(&self) -> &Storage {
        &self.storage
    }

    pub fn len(&self) -> usize {
        self.grid.entity_count(self.location)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn matrix(&self, e: usize) -> Mat3 {
        match &self.storage {
            Storage::Uniform(m) => *m,
            Storage::Scalar(v) => scaled(&IDENTITY, v[e]),
            Storage::Diagonal(v) => {
                let d = v[e];
                [[d[0], 0.0, 0.0], [0.0, d[1], 0.0], [0.0, 0.0, d[2]]]
            }
            Storage::Full(v) => v[e],
        }
    }

    /// Per-entity weight used by the staggered operators: the diagonal
    /// entry matching each entity's component. Off-diagonal couplings are
    /// not representable on the stagger and are rejected unless they are
    /// round-off relative to the diagonal.
    pub fn operator_weights(&self) -> Result<Vec<f64>> {
        let g = &self.grid;
        let check_diag = |m: &Mat3| -> Result<()> {
            let dims = g.dims();
            let scale = (0..dims).map(|i| m[i][i].abs()).fold(0.0, f64::max);
            for i in 0..dims {
                for j in 0..dims {
                    if i != j && m[i][j].abs() > OFF_DIAGONAL_TOLERANCE * scale {
                        return Err(Error::Coefficient("staggered operators need diagonal coefficient samples".into()));
                    }
                }
            }
            Ok(())
        };
        let mut out = Vec::with_capacity(self.len());
        let mut e = 0;
        for c in 0..g.components(self.location) {
            let len = g.component_len(self.location, c);
            match &self.storage {
                Storage::Uniform(m) => {
                    check_diag(m)?;
                    out.extend(std::iter::repeat_n(m[c][c], len));
                }
                Storage::Scalar(v) => out.extend_from_slice(&v[e..e + len]),
                Storage::Diagonal(v) => out.extend(v[e..e + len].iter().map(|d| d[c])),
                Storage::Full(v) => {
                    for m in &v[e..e + len] {
                        check_diag(m)?;
                        out.push(m[c][c]);
                    }
                }
            }
            e += len;
        }
        if out.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(Error::Coefficient("coefficient samples must be positive and finite".into()));
        }
        Ok(out)
    }

    /// Multiplies every sample by `s(position)`.
    pub fn modulated(&self, s: impl Fn([f64; 3]) -> f64) -> SampledCoefficient {
        let g = &self.grid;
        let mut scal = Vec::with_capacity(self.len());
        for c in 0..g.components(self.location) {
            let shape = g.shape(self.location, c);
            for flat in 0..g.component_len(self.location, c) {
                scal.push(s(g.position(self.location, c, unravel(&shape, flat))));
            }
        }
        let storage = match &self.storage {
            Storage::Uniform(m) => {
                if is_scalar_matrix(m) {
                    Storage::Scalar(scal.iter().map(|s| s * m[0][0]).collect())
                } else if is_diagonal(m) {
                    Storage::Diagonal(scal.iter().map(|s| [s * m[0][0], s * m[1][1], s * m[2][2]]).collect())
                } else {
                    Storage::Full(scal.iter().map(|s| scaled(m, *s)).collect())
                }
            }
            Storage::Scalar(v) => Storage::Scalar(v.iter().zip(&scal).map(|(a, s)| a * s).collect()),
            Storage::Diagonal(v) => {
                Storage::Diagonal(v.iter().zip(&scal).map(|(d, s)| [d[0] * s, d[1] * s, d[2] * s]).collect())
            }
            Storage::Full(v) => Storage::Full(v.iter().zip(&scal).map(|(m, s)| scaled(m, *s)).collect()),
        };
        SampledCoefficient { grid: g.clone(), location: self.location, storage, symmetric: self.symmetric }
    }

    /// Arithmetic mean of the samples over active entities, per component
    /// diagonal entry (used for constant-coefficient preconditioners).
    pub fn mean_weights(&self) -> Result<[f64; 3]> {
        let w = self.operator_weights()?;
        let g = &self.grid;
        let active = g.active(self.location);
        let mut out = [0.0; 3];
        let mut e = 0;
        for (c, o) in out.iter_mut().enumerate().take(g.components(self.location)) {
            let len = g.component_len(self.location, c);
            let (mut s, mut n) = (0.0, 0usize);
            for i in e..e + len {
                if active[i] {
                    s += w[i];
                    n += 1;
                }
            }
            *o = if n > 0 { s / n as f64 } else { 1.0 };
            e += len;
        }
        Ok(out)
    }
}

fn is_diagonal(m: &Mat3) -> bool {
    (0..3).all(|i| (0..3).all(|j| i == j || m[i][j] == 0.0))
}

fn is_scalar_matrix(m: &Mat3) -> bool {
    is_diagonal(m) && m[0][0] == m[1][1] && m[1][1] == m[2][2]
}

fn sample_with(
    model: &CoefficientModel,
    grid: &GridRef,
    location: Location,
    point: impl Fn([f64; 3]) -> ([f64; 3], [f64; 3]),
) -> SampledCoefficient {
    let n = grid.entity_count(location);
    let mut samples = Vec::with_capacity(n);
    for c in 0..grid.components(location) {
        let shape = grid.shape(location, c);
        for flat in 0..grid.component_len(location, c) {
            let pos = grid.position(location, c, unravel(&shape, flat));
            let (x, y) = point(pos);
            samples.push(model.sample_at(&x, &y));
        }
    }
    let storage = match model.structure() {
        Structure::Scalar => Storage::Scalar(
            samples.into_iter().map(|s| if let Sample::Scalar(v) = s { v } else { unreachable!() }).collect(),
        ),
        Structure::Diagonal => Storage::Diagonal(
            samples.into_iter().map(|s| if let Sample::Diagonal(v) = s { v } else { unreachable!() }).collect(),
        ),
        Structure::Full => Storage::Full(
            samples.into_iter().map(|s| if let Sample::Full(v) = s { v } else { unreachable!() }).collect(),
        ),
    };
    SampledCoefficient { grid: grid.clone(), location, storage, symmetric: model.symmetric }
}

/// Samples `y -> a(x, y)` at fixed macro point `x` on a periodic cell grid.
pub fn sample_on_cell(
    model: &CoefficientModel,
    x: &[f64; 3],
    cell: &GridRef,
    location: Location,
) -> Result<SampledCoefficient> {
    if !cell.is_periodic() {
        return Err(Error::NotPeriodic);
    }
    model.check_macro_point(x, cell.dims())?;
    let x = *x;
    Ok(sample_with(model, cell, location, |y| (x, y)))
}

/// Samples `a(x, x/eps)` on a domain grid.
pub fn sample_epsilon(
    model: &CoefficientModel,
    grid: &GridRef,
    eps: f64,
    location: Location,
) -> Result<SampledCoefficient> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::Coefficient(format!("epsilon must be positive, got {eps}")));
    }
    Ok(sample_with(model, grid, location, |x| {
        let y = std::array::from_fn(|j| reduce_periodic(x[j] / eps));
        (x, y)
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Bounds {
    pub c1: f64,
    pub c2: f64,
}

/// Extreme eigenvalues over all samples (leading `dims x dims` block).
pub fn estimate_bounds(samples: &SampledCoefficient) -> Result<Bounds> {
    let dims = samples.grid.dims();
    let mut c1 = f64::INFINITY;
    let mut c2 = f64::NEG_INFINITY;
    let mut visit = |m: &Mat3| -> Result<()> {
        if samples.symmetric && !is_symmetric(m) {
            return Err(Error::Coefficient("asymmetric sample in a model declared symmetric".into()));
        }
        let (lo, hi) = if is_diagonal(m) {
            let d = &[m[0][0], m[1][1], m[2][2]][..dims];
            (d.iter().copied().fold(f64::INFINITY, f64::min), d.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        } else {
            sym_eigen_range(&symmetric_part(m), dims)
        };
        c1 = c1.min(lo);
        c2 = c2.max(hi);
        Ok(())
    };
    match &samples.storage {
        Storage::Uniform(m) => visit(m)?,
        Storage::Scalar(v) => {
            for s in v {
                visit(&scaled(&IDENTITY, *s))?;
            }
        }
        Storage::Diagonal(v) => {
            for d in v {
                visit(&[[d[0], 0.0, 0.0], [0.0, d[1], 0.0], [0.0, 0.0, d[2]]])?;
            }
        }
        Storage::Full(v) => {
            for m in v {
                visit(m)?;
            }
        }
    }
    if samples.is_empty() {
        return Err(Error::Coefficient("no samples".into()));
    }
    Ok(Bounds { c1, c2 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_grid, Topology};
    use proptest::prelude::*;

    fn cell(n: usize) -> GridRef {
        build_grid(3, &[n, n, n], Topology::Periodic, Extent::unit(), None).unwrap()
    }

    #[test]
    fn identity_samples() {
        let g = cell(4);
        let s = sample_on_cell(&CoefficientModel::identity(), &[0.5; 3], &g, Location::Face).unwrap();
        assert!(s.operator_weights().unwrap().iter().all(|&w| w == 1.0));
        let b = estimate_bounds(&s).unwrap();
        assert_eq!((b.c1, b.c2), (1.0, 1.0));
    }

    #[test]
    fn laminate_alternates() {
        let n = 64;
        let g = cell(n);
        let s = sample_on_cell(&CoefficientModel::laminate(0, [1.0, 4.0]), &[0.0; 3], &g, Location::Edge).unwrap();
        let w = s.operator_weights().unwrap();
        // x-edges sit at (i + 1/2) h: first half 1, second half 4
        for (flat, v) in w[..n * n * n].iter().enumerate() {
            let i = flat % n;
            assert_eq!(*v, if i < n / 2 { 1.0 } else { 4.0 });
        }
        // y-edges sit at i h, including the interface at 1/2
        let off = n * n * n;
        for (flat, v) in w[off..2 * off].iter().enumerate() {
            let i = flat % n;
            assert_eq!(*v, if i < n / 2 { 1.0 } else { 4.0 });
        }
        let b = estimate_bounds(&s).unwrap();
        assert_eq!((b.c1, b.c2), (1.0, 4.0));
    }

    #[test]
    fn trig_range() {
        let g = cell(64);
        let s = sample_on_cell(&CoefficientModel::trig(2.0, 1.0, vec![0]), &[0.0; 3], &g, Location::Edge).unwrap();
        let b = estimate_bounds(&s).unwrap();
        // samples at i/64 and (i+1/2)/64 hit both sine extrema exactly
        assert!(b.c1 >= 1.0 && b.c1 <= 1.01);
        assert!(b.c2 >= 2.99 && b.c2 <= 3.0);
    }

    #[test]
    fn epsilon_consistency() {
        let g = build_grid(3, &[8, 8, 8], Topology::Bounded, Extent::unit(), None).unwrap();
        let c = cell(8);
        let m = CoefficientModel::trig(2.0, 0.5, vec![0, 1]);
        let a = sample_epsilon(&m, &g, 1.0, Location::Face).unwrap();
        // interior x-faces coincide with cell-grid x-faces
        let x = DiscreteFieldProbe::new(&g, Location::Face);
        for (e, pos) in x.positions.iter().enumerate().step_by(7) {
            let yc = std::array::from_fn(|j| reduce_periodic(pos[j]));
            let v = m.matrix(&[0.0; 3], &yc)[0][0];
            assert!((a.matrix(e)[0][0] - v).abs() < 1e-14);
        }
        let on_cell = sample_on_cell(&m, &[0.5; 3], &c, Location::Face).unwrap();
        assert_eq!(on_cell.len(), 3 * 512);
    }

    struct DiscreteFieldProbe {
        positions: Vec<[f64; 3]>,
    }

    impl DiscreteFieldProbe {
        fn new(g: &GridRef, loc: Location) -> Self {
            let mut positions = vec![];
            for c in 0..g.components(loc) {
                let shape = g.shape(loc, c);
                for f in 0..g.component_len(loc, c) {
                    positions.push(g.position(loc, c, unravel(&shape, f)));
                }
            }
            DiscreteFieldProbe { positions }
        }
    }

    #[test]
    fn epsilon_oscillation_count() {
        let n = 256;
        let g = build_grid(2, &[n, 4], Topology::Bounded, Extent::unit(), None).unwrap();
        let m = CoefficientModel::trig(2.0, 1.0, vec![0]);
        let s = sample_epsilon(&m, &g, 1.0 / 8.0, Location::Node).unwrap();
        let w = s.operator_weights().unwrap();
        let row: Vec<f64> = w[..n + 1].to_vec();
        let crossings = row.windows(2).filter(|p| (p[0] - 2.0) < 0.0 && (p[1] - 2.0) >= 0.0).count();
        assert_eq!(crossings, 8);
    }

    #[test]
    fn epsilon_rejects_nonpositive() {
        let g = cell(4);
        assert!(sample_epsilon(&CoefficientModel::identity(), &g, 0.0, Location::Edge).is_err());
        assert!(sample_epsilon(&CoefficientModel::identity(), &g, -1.0, Location::Edge).is_err());
    }

    #[test]
    fn macro_point_outside_domain() {
        let m = CoefficientModel::composite(
            CoefficientModel::laminate(0, [1.0, 4.0]),
            1.0,
            [0.5, 0.0, 0.0],
            Extent::unit(),
        )
        .unwrap();
        assert!(sample_on_cell(&m, &[1.5, 0.5, 0.5], &cell(4), Location::Face).is_err());
        assert!(sample_on_cell(&m, &[0.5, 0.5, 0.5], &cell(4), Location::Face).is_ok());
        let g = build_grid(3, &[4, 4, 4], Topology::Bounded, Extent::unit(), None).unwrap();
        assert!(sample_on_cell(&m, &[0.5; 3], &g, Location::Face).is_err());
    }

    #[test]
    fn asymmetric_detected() {
        let mut m = CoefficientModel::new(Family::Constant {
            value: MatrixSpec::Full(vec![vec![2.0, 0.5, 0.0], vec![0.0, 2.0, 0.0], vec![0.0, 0.0, 2.0]]),
        })
        .unwrap();
        let s = sample_on_cell(&m, &[0.0; 3], &cell(2), Location::Face).unwrap();
        assert!(estimate_bounds(&s).is_err());
        m.symmetric = false;
        let s = sample_on_cell(&m, &[0.0; 3], &cell(2), Location::Face).unwrap();
        assert!(estimate_bounds(&s).is_ok());
        assert!(s.operator_weights().is_err());
        let tiny = SampledCoefficient::uniform(
            &cell(2),
            Location::Edge,
            [[2.0, 1e-19, 0.0], [1e-19, 2.0, 0.0], [0.0, 0.0, 2.0]],
        );
        assert!(tiny.operator_weights().unwrap().iter().all(|&w| w == 2.0));
    }

    #[test]
    fn config_roundtrip() {
        let text = r#"
            family = "composite"
            offset = 1.0
            slope = [0.5, 0.0, 0.0]
            domain = { lo = [0.0, 0.0, 0.0], hi = [1.0, 1.0, 1.0] }
            [base]
            family = "laminate"
            values = [1.0, 4.0]
        "#;
        let m: CoefficientModel = toml::from_str(text).unwrap();
        m.validate().unwrap();
        assert!(m.is_x_dependent());
        assert_eq!(m.declared_bounds(), (1.0, 6.0));
        let t: CoefficientModel = toml::from_str("family = \"trig\"\nmean = 2.0\namplitude = 1.0").unwrap();
        assert_eq!(t.oscillation_axes(), vec![0]);
    }

    fn families() -> Vec<CoefficientModel> {
        vec![
            CoefficientModel::identity(),
            CoefficientModel::laminate(1, [1.0, 4.0]),
            CoefficientModel::trig(2.0, 1.0, vec![0]),
            CoefficientModel::trig(3.0, 0.5, vec![0, 1, 2]),
            CoefficientModel::checkerboard([1.0, 5.0]),
            CoefficientModel::composite(
                CoefficientModel::trig(2.0, 1.0, vec![2]),
                1.0,
                [0.5, 0.0, 0.0],
                Extent::unit(),
            )
            .unwrap(),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn bounds_within_declared(idx in 0usize..6, n in 2usize..10, inv_eps in 1usize..9) {
            let m = &families()[idx];
            let (c1, c2) = m.declared_bounds();
            let g = build_grid(3, &[n, n, n], Topology::Bounded, Extent::unit(), None).unwrap();
            for loc in [Location::Edge, Location::Face] {
                let s = sample_epsilon(m, &g, 1.0 / inv_eps as f64, loc).unwrap();
                let b = estimate_bounds(&s).unwrap();
                prop_assert!(b.c1 >= c1 - 1e-12 && b.c2 <= c2 + 1e-12);
            }
        }

        #[test]
        fn y_periodic(idx in 0usize..6, y0 in 0.0f64..1.0, y1 in 0.0f64..1.0, y2 in 0.0f64..1.0, k in 0usize..3) {
            let m = &families()[idx];
            let y = [y0, y1, y2];
            let mut ys = y;
            ys[k] += 1.0;
            let x = [0.3, 0.6, 0.2];
            let a = m.matrix(&x, &y);
            let b = m.matrix(&x, &ys);
            for i in 0..3 { for j in 0..3 {
                prop_assert!((a[i][j] - b[i][j]).abs() <= 1e-12 * a[i][j].abs().max(1.0));
            }}
        }

        #[test]
        fn epsilon_shift_invariance(idx in 1usize..5, inv_eps in 1usize..5) {
            // shifting by one period eps reproduces the samples
            let m = &families()[idx];
            let n = 8 * inv_eps;
            let eps = 1.0 / inv_eps as f64;
            let g = build_grid(2, &[2 * n, 4], Topology::Bounded, Extent::new([0.0; 3], [2.0, 1.0, 1.0]), None).unwrap();
            let s = sample_epsilon(m, &g, eps, Location::Node).unwrap();
            let w = s.operator_weights().unwrap();
            let shift = 8; // one period in nodes along axis 0
            let row = 2 * n + 1;
            for j in 0..5 {
                for i in 0..row - shift {
                    prop_assert!((w[j * row + i] - w[j * row + i + shift]).abs() <= 1e-12);
                }
            }
        }
    }
}
