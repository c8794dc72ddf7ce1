use std::sync::Arc;

use super::grid::{unravel, GridRef, Location};
use crate::error::{Error, Result};

/// Values attached to one stagger location of a grid, components stored
/// back to back in canonical order.
#[derive(Debug, Clone)]
pub struct DiscreteField {
    grid: GridRef,
    location: Location,
    values: Vec<f64>,
}

impl DiscreteField {
    pub fn zeros(grid: &GridRef, location: Location) -> Self {
        DiscreteField { grid: grid.clone(), location, values: vec![0.0; grid.entity_count(location)] }
    }

    pub fn constant(grid: &GridRef, location: Location, per_component: &[f64]) -> Self {
        let mut f = Self::zeros(grid, location);
        for c in 0..grid.components(location) {
            f.component_mut(c).fill(per_component[c]);
        }
        f
    }

    /// Evaluates `f(component, position)` at every entity.
    pub fn from_fn(grid: &GridRef, location: Location, f: impl Fn(usize, [f64; 3]) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.entity_count(location));
        for c in 0..grid.components(location) {
            let shape = grid.shape(location, c);
            for flat in 0..grid.component_len(location, c) {
                values.push(f(c, grid.position(location, c, unravel(&shape, flat))));
            }
        }
        DiscreteField { grid: grid.clone(), location, values }
    }

    pub fn from_values(grid: &GridRef, location: Location, values: Vec<f64>) -> Result<Self> {
        let expected = grid.entity_count(location);
        if values.len() != expected {
            return Err(Error::InvalidGrid(format!(
                "{} values supplied, {location:?} location has {expected}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("field construction"));
        }
        Ok(DiscreteField { grid: grid.clone(), location, values })
    }

    pub(crate) fn from_raw(grid: &GridRef, location: Location, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.entity_count(location));
        DiscreteField { grid: grid.clone(), location, values }
    }

    pub fn grid(&self) -> &GridRef {
        &self.grid
    }

    pub fn location(&self) -> Location {
        self.location
    }

    pub fn components(&self) -> usize {
        self.grid.components(self.location)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn component(&self, c: usize) -> &[f64] {
        let off = self.grid.component_offset(self.location, c);
        &self.values[off..off + self.grid.component_len(self.location, c)]
    }

    pub fn component_mut(&mut self, c: usize) -> &mut [f64] {
        let off = self.grid.component_offset(self.location, c);
        let len = self.grid.component_len(self.location, c);
        &mut self.values[off..off + len]
    }

    pub fn same_grid(&self, grid: &GridRef) -> bool {
        Arc::ptr_eq(&self.grid, grid) || *self.grid == **grid
    }

    pub fn compatible(&self, other: &DiscreteField) -> bool {
        self.location == other.location && self.same_grid(&other.grid)
    }

    pub fn expect_location(&self, loc: Location) -> Result<()> {
        if self.location != loc {
            return Err(Error::WrongLocation { expected: loc, found: self.location });
        }
        Ok(())
    }

    pub fn check_finite(&self, what: &'static str) -> Result<()> {
        if self.values.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(what))
        }
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &DiscreteField) -> Result<()> {
        if !self.compatible(other) {
            return Err(Error::GridMismatch);
        }
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: f64) {
        self.values.iter_mut().for_each(|v| *v *= alpha);
    }

    pub fn sub(&self, other: &DiscreteField) -> Result<DiscreteField> {
        let mut out = self.clone();
        out.axpy(-1.0, other)?;
        Ok(out)
    }

    /// Mean of each component over the active entities.
    pub fn component_means(&self) -> Vec<f64> {
        let active = self.grid.active(self.location);
        let mut out = Vec::with_capacity(self.components());
        for c in 0..self.components() {
            let off = self.grid.component_offset(self.location, c);
            let vals = self.component(c);
            let mut acc = super::ops::Neumaier::default();
            let mut count = 0usize;
            for (i, v) in vals.iter().enumerate() {
                if active[off + i] {
                    acc.add(*v);
                    count += 1;
                }
            }
            out.push(if count == 0 { 0.0 } else { acc.sum() / count as f64 });
        }
        out
    }

    pub fn remove_component_means(&mut self) {
        let means = self.component_means();
        for (c, m) in means.into_iter().enumerate() {
            self.component_mut(c).iter_mut().for_each(|v| *v -= m);
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_grid, Extent, Topology};

    #[test]
    fn from_values_checks() {
        let g = build_grid(2, &[4, 4], Topology::Periodic, Extent::unit(), None).unwrap();
        assert!(DiscreteField::from_values(&g, Location::Node, vec![0.0; 15]).is_err());
        let mut v = vec![0.0; 16];
        v[3] = f64::NAN;
        assert!(DiscreteField::from_values(&g, Location::Node, v).is_err());
        assert!(DiscreteField::from_values(&g, Location::Node, vec![1.0; 16]).is_ok());
    }

    #[test]
    fn component_layout() {
        let g = build_grid(3, &[4, 3, 2], Topology::Bounded, Extent::unit(), None).unwrap();
        let f = DiscreteField::from_fn(&g, Location::Edge, |c, _| c as f64);
        for c in 0..3 {
            assert!(f.component(c).iter().all(|&v| v == c as f64));
        }
        // x-edges: 4 x 4 x 3 on a bounded 4x3x2 grid
        assert_eq!(f.component(0).len(), 4 * 4 * 3);
    }
}
