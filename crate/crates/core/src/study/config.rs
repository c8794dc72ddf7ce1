use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bvp::{SolverConfig, MIN_CELLS_PER_PERIOD};
use crate::coeff::CoefficientModel;
use crate::error::{Error, Result};
use crate::mesh::{build_grid, build_l_shape, Extent, GridRef, Topology};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "maxwell3d")]
    Maxwell3d,
    #[serde(rename = "elliptic2d")]
    Elliptic2d,
}

impl Mode {
    pub fn dims(self) -> usize {
        match self {
            Mode::Maxwell3d => 3,
            Mode::Elliptic2d => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Shape {
    #[default]
    Box,
    LShape,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DomainSpec {
    pub shape: Shape,
    pub extent: Extent,
}

impl Default for DomainSpec {
    fn default() -> Self {
        DomainSpec { shape: Shape::Box, extent: Extent::unit() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    /// Cells per axis of the fine grid; the homogenized problem is solved
    /// on the same grid.
    pub fine: Vec<usize>,
    /// Cell-grid resolution along oscillating axes. When absent it is
    /// chosen per epsilon so that cell nodes coincide with fine nodes.
    #[serde(default)]
    pub cell: Option<usize>,
}

/// Right-hand side family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    /// `f = 1` (elliptic) or `f = (1, 1, 1)` (Maxwell).
    Unit,
    /// `sin(pi x1) sin(pi x2)` (elliptic) or the cyclic products
    /// `(sin pi x2 sin pi x3, sin pi x3 sin pi x1, sin pi x1 sin pi x2)`,
    /// in coordinates normalized to the domain extent.
    #[default]
    Smooth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    #[default]
    Classical,
    Averaged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSpec {
    pub dir: Option<PathBuf>,
    /// File stem of the CSV, JSON and data files.
    pub name: String,
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec { dir: None, name: "study".into() }
    }
}

fn default_true() -> bool {
    true
}

/// Sweep description, read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    /// `a` in Maxwell mode, the diffusion coefficient in elliptic mode.
    pub model: CoefficientModel,
    /// `b` in Maxwell mode; defaults to `model`.
    #[serde(default)]
    pub model_b: Option<CoefficientModel>,
    #[serde(default)]
    pub domain: DomainSpec,
    pub epsilons: Vec<f64>,
    /// Regularity index of the homogenized solution.
    #[serde(default)]
    pub s: Option<f64>,
    /// Cube exponent override; `1 / (1 + s)` when absent.
    #[serde(default)]
    pub t: Option<f64>,
    pub grid: GridSpec,
    #[serde(default = "fine_solver")]
    pub solver: SolverConfig,
    #[serde(default = "cell_solver")]
    pub cell_solver: SolverConfig,
    #[serde(default)]
    pub source: Source,
    #[serde(default)]
    pub corrector: Variant,
    /// Apply the boundary cutoff to the averaged corrector.
    #[serde(default = "default_true")]
    pub cutoff: bool,
    /// Repeat the smallest epsilon on a doubled grid and flag changes
    /// above 20 %.
    #[serde(default = "default_true")]
    pub resolution_check: bool,
    /// Treat under-resolved fine solves as errors.
    #[serde(default)]
    pub strict: bool,
    #[serde(default)]
    pub output: OutputSpec,
}

fn fine_solver() -> SolverConfig {
    SolverConfig { tol: 1e-8, max_iter: 20000, preconditioner: None }
}

fn cell_solver() -> SolverConfig {
    SolverConfig { tol: 1e-10, max_iter: 5000, preconditioner: None }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text).map_err(|e| e.at(format!("config {}", path.display())))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// SHA-256 of the canonical TOML serialization.
    pub fn hash(&self) -> Result<String> {
        let text = self.to_toml_string()?;
        let digest = Sha256::digest(text.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }

    pub fn a_model(&self) -> Option<&CoefficientModel> {
        match self.mode {
            Mode::Maxwell3d => Some(&self.model),
            Mode::Elliptic2d => None,
        }
    }

    pub fn b_model(&self) -> &CoefficientModel {
        match self.mode {
            Mode::Maxwell3d => self.model_b.as_ref().unwrap_or(&self.model),
            Mode::Elliptic2d => &self.model,
        }
    }

    pub fn models(&self) -> Vec<&CoefficientModel> {
        let mut out: Vec<&CoefficientModel> = self.a_model().into_iter().collect();
        out.push(self.b_model());
        out
    }

    /// Regularity index and cube exponent for the averaged corrector.
    pub fn s_and_t(&self) -> Result<(f64, Option<f64>)> {
        let s = self.s.ok_or_else(|| Error::Config("the averaged corrector needs s".into()))?;
        Ok((s, self.t))
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.mode.dims();
        if self.grid.fine.len() != d {
            return Err(Error::Config(format!("grid.fine needs {d} entries for this mode")));
        }
        if self.grid.fine.iter().any(|&n| n < 2) {
            return Err(Error::Config("grid.fine entries must be at least 2".into()));
        }
        if matches!(self.grid.cell, Some(n) if n < 2) {
            return Err(Error::Config("grid.cell must be at least 2".into()));
        }
        if self.mode == Mode::Elliptic2d && self.model_b.is_some() {
            return Err(Error::Config("model_b is only used in maxwell3d mode".into()));
        }
        if self.epsilons.is_empty() {
            return Err(Error::Config("epsilon list is empty".into()));
        }
        if self.epsilons.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
            return Err(Error::Config("every epsilon must be positive".into()));
        }
        if self.epsilons.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::Config("epsilons must be strictly decreasing".into()));
        }
        if let Some(s) = self.s {
            if !(s > 0.0 && s <= 1.0) {
                return Err(Error::Config(format!("s must lie in (0, 1], got {s}")));
            }
        }
        if self.corrector == Variant::Averaged {
            self.s_and_t()?;
        }
        if let Some(t) = self.t {
            if !(t.is_finite() && t >= 0.0) {
                return Err(Error::Config(format!("t must be non-negative, got {t}")));
            }
        }
        self.solver.validate()?;
        self.cell_solver.validate()?;
        let e = &self.domain.extent;
        for j in 0..d {
            if !(e.hi[j] > e.lo[j]) {
                return Err(Error::Config("domain extent must have positive length".into()));
            }
        }
        for m in self.models() {
            m.validate()?;
            if m.is_x_dependent() && m.modulation().is_none() {
                return Err(Error::Config("only scalar-modulated x dependence is supported in sweeps".into()));
            }
        }
        // every epsilon resolvable on the fine grid
        let eps_min = *self.epsilons.last().unwrap();
        for m in self.models() {
            for axis in m.oscillation_axes() {
                if axis >= d {
                    continue;
                }
                let h = e.length(axis) / self.grid.fine[axis] as f64;
                let cells = eps_min / h;
                if cells < MIN_CELLS_PER_PERIOD - 1e-9 {
                    return Err(Error::Unresolvable {
                        what: "epsilon",
                        detail: format!("{cells:.2} cells per period along axis {axis} at eps = {eps_min}"),
                    });
                }
            }
        }
        Ok(())
    }

    /// Fine grid, optionally refined by `factor`.
    pub fn fine_grid(&self, factor: usize) -> Result<GridRef> {
        let res: Vec<usize> = self.grid.fine.iter().map(|n| n * factor).collect();
        let d = self.mode.dims();
        match self.domain.shape {
            Shape::Box => build_grid(d, &res, Topology::Bounded, self.domain.extent, None),
            Shape::LShape => build_l_shape(d, &res, self.domain.extent),
        }
    }

    /// Cell-grid resolution per axis at `eps` on `fine`.
    pub fn cell_resolution(&self, fine: &GridRef, eps: f64) -> Vec<usize> {
        let d = self.mode.dims();
        let osc: Vec<usize> = self.models().iter().flat_map(|m| m.oscillation_axes()).collect();
        (0..d)
            .map(|j| {
                if !osc.contains(&j) {
                    return 4;
                }
                self.grid.cell.unwrap_or_else(|| ((eps / fine.spacing()[j]).round() as usize).max(4))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const ELLIPTIC: &str = r#"
mode = "elliptic2d"
epsilons = [0.125, 0.0625, 0.03125]
s = 0.6666666666666666
corrector = "averaged"
source = "unit"

[model]
family = "trig"
mean = 3.0
amplitude = 1.0
axes = [0, 1]

[domain]
shape = "l-shape"

[grid]
fine = [512, 512]
"#;

    #[test]
    fn parses_and_round_trips() {
        let cfg = ExperimentConfig::from_toml_str(ELLIPTIC).unwrap();
        assert_eq!(cfg.mode, Mode::Elliptic2d);
        assert_eq!(cfg.domain.shape, Shape::LShape);
        assert!(cfg.resolution_check);
        let back = ExperimentConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash().unwrap(), cfg.hash().unwrap());
        assert_eq!(cfg.hash().unwrap().len(), 64);
    }

    #[test]
    fn rejects_bad_epsilons() {
        let bad = ELLIPTIC.replace("[0.125, 0.0625, 0.03125]", "[0.0625, 0.125]");
        assert!(matches!(ExperimentConfig::from_toml_str(&bad), Err(Error::Config(_))));
        let bad = ELLIPTIC.replace("[0.125, 0.0625, 0.03125]", "[0.125, -0.1]");
        assert!(ExperimentConfig::from_toml_str(&bad).is_err());
        let bad = ELLIPTIC.replace("[0.125, 0.0625, 0.03125]", "[0.125, 0.01]");
        assert!(matches!(ExperimentConfig::from_toml_str(&bad), Err(Error::Unresolvable { .. })));
    }

    #[test]
    fn rejects_unknown_keys_and_missing_s() {
        let bad = ELLIPTIC.replace("source = \"unit\"", "source = \"unit\"\nbogus = 1");
        assert!(ExperimentConfig::from_toml_str(&bad).is_err());
        let bad = ELLIPTIC.replace("s = 0.6666666666666666\n", "");
        assert!(ExperimentConfig::from_toml_str(&bad).is_err());
        let bad = ELLIPTIC.replace("fine = [512, 512]", "fine = [512, 512, 4]");
        assert!(ExperimentConfig::from_toml_str(&bad).is_err());
    }

    #[test]
    fn aligned_cell_resolution() {
        let cfg = ExperimentConfig::from_toml_str(ELLIPTIC).unwrap();
        let g = cfg.fine_grid(1).unwrap();
        assert_eq!(cfg.cell_resolution(&g, 0.125), vec![64, 64]);
        assert_eq!(cfg.cell_resolution(&g, 0.03125), vec![16, 16]);
    }
}
