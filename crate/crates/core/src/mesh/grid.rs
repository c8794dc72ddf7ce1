use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Topology {
    Periodic,
    Bounded,
}

/// Stagger location of a discrete field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Location {
    Node,
    Edge,
    Face,
    Cell,
}

impl Location {
    pub const ALL: [Location; 4] = [Location::Node, Location::Edge, Location::Face, Location::Cell];

    pub(crate) fn index(self) -> usize {
        match self {
            Location::Node => 0,
            Location::Edge => 1,
            Location::Face => 2,
            Location::Cell => 3,
        }
    }

    pub fn code(self) -> u8 {
        self.index() as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }
}

/// Axis-aligned box `[lo, hi]`. Axes beyond the grid dimension are ignored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Extent {
    pub lo: [f64; 3],
    pub hi: [f64; 3],
}

impl Extent {
    pub fn unit() -> Self {
        Extent { lo: [0.0; 3], hi: [1.0; 3] }
    }

    pub fn new(lo: [f64; 3], hi: [f64; 3]) -> Self {
        Extent { lo, hi }
    }

    pub fn length(&self, axis: usize) -> f64 {
        self.hi[axis] - self.lo[axis]
    }

    pub fn center(&self) -> [f64; 3] {
        std::array::from_fn(|j| 0.5 * (self.lo[j] + self.hi[j]))
    }

    pub fn contains(&self, x: &[f64; 3], dims: usize, slack: f64) -> bool {
        (0..dims).all(|j| x[j] >= self.lo[j] - slack && x[j] <= self.hi[j] + slack)
    }
}

/// Shape of the region covered by the occupied cells of a bounded grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Region {
    Box,
    /// The extent minus the quadrant `x0 > mid0, x1 > mid1` (a prism in 3-D).
    LShape,
    /// Arbitrary user mask.
    Custom,
}

/// Uniform Cartesian grid with node, edge, face and cell stagger locations.
///
/// Entities are stored component by component; inside a component the
/// index runs fastest along axis 0. An entity is *dual* along an axis when
/// it sits half a cell off the node lattice in that direction: edges along
/// their own axis, faces along every axis except their normal, cells along
/// all axes.
#[derive(Debug, Clone)]
pub struct StaggeredGrid {
    dims: usize,
    resolution: [usize; 3],
    spacing: [f64; 3],
    topology: Topology,
    extent: Extent,
    region: Region,
    mask: Option<Vec<bool>>,
    active: [Vec<bool>; 4],
}

impl PartialEq for StaggeredGrid {
    fn eq(&self, other: &Self) -> bool {
        self.dims == other.dims
            && self.resolution == other.resolution
            && self.topology == other.topology
            && self.extent == other.extent
            && self.mask == other.mask
    }
}

pub type GridRef = Arc<StaggeredGrid>;

/// Builds a grid. `resolution` holds cells per axis (`dims` entries).
pub fn build_grid(
    dims: usize,
    resolution: &[usize],
    topology: Topology,
    extent: Extent,
    mask: Option<Vec<bool>>,
) -> Result<GridRef> {
    let region = if mask.is_some() { Region::Custom } else { Region::Box };
    StaggeredGrid::build(dims, resolution, topology, extent, mask, region).map(Arc::new)
}

/// Bounded grid on the L-shaped region obtained by removing the upper
/// quadrant (axes 0 and 1) of `extent`.
pub fn build_l_shape(dims: usize, resolution: &[usize], extent: Extent) -> Result<GridRef> {
    if dims < 2 || resolution.len() != dims {
        return Err(Error::InvalidGrid("L-shape needs dims >= 2 and one resolution per axis".into()));
    }
    let mask = l_shape_mask(dims, resolution, &extent);
    StaggeredGrid::build(dims, resolution, Topology::Bounded, extent, Some(mask), Region::LShape).map(Arc::new)
}

/// Cell occupancy for the L-shape: cells whose centre lies in the removed
/// quadrant are unoccupied.
pub fn l_shape_mask(dims: usize, resolution: &[usize], extent: &Extent) -> Vec<bool> {
    let n = pad(resolution, dims);
    let mid = extent.center();
    let mut mask = Vec::with_capacity(n[0] * n[1] * n[2]);
    for _k in 0..n[2] {
        for j in 0..n[1] {
            for i in 0..n[0] {
                let x = extent.lo[0] + (i as f64 + 0.5) * extent.length(0) / n[0] as f64;
                let y = extent.lo[1] + (j as f64 + 0.5) * extent.length(1) / n[1] as f64;
                mask.push(!(x > mid[0] && y > mid[1]));
            }
        }
    }
    mask
}

fn pad(resolution: &[usize], dims: usize) -> [usize; 3] {
    std::array::from_fn(|j| if j < dims { resolution[j] } else { 1 })
}

#[inline]
pub(crate) fn ravel(shape: &[usize; 3], i: [usize; 3]) -> usize {
    i[0] + shape[0] * (i[1] + shape[1] * i[2])
}

#[inline]
pub(crate) fn unravel(shape: &[usize; 3], flat: usize) -> [usize; 3] {
    let i0 = flat % shape[0];
    let rest = flat / shape[0];
    [i0, rest % shape[1], rest / shape[1]]
}

impl StaggeredGrid {
    fn build(
        dims: usize,
        resolution: &[usize],
        topology: Topology,
        extent: Extent,
        mask: Option<Vec<bool>>,
        region: Region,
    ) -> Result<Self> {
        if !(dims == 2 || dims == 3) {
            return Err(Error::InvalidGrid(format!("dims must be 2 or 3, got {dims}")));
        }
        if resolution.len() != dims {
            return Err(Error::InvalidGrid(format!("expected {dims} resolution entries, got {}", resolution.len())));
        }
        if let Some(&bad) = resolution.iter().find(|&&n| n < 2) {
            return Err(Error::InvalidGrid(format!("resolution must be >= 2 per axis, got {bad}")));
        }
        let n = pad(resolution, dims);
        let mut extent = extent;
        for j in dims..3 {
            extent.lo[j] = 0.0;
            extent.hi[j] = 1.0;
        }
        for j in 0..dims {
            let len = extent.length(j);
            if !(len > 0.0 && len.is_finite()) {
                return Err(Error::InvalidGrid(format!("extent along axis {j} must be positive")));
            }
        }
        let spacing = std::array::from_fn(|j| extent.length(j) / n[j] as f64);
        if let Some(m) = &mask {
            if topology == Topology::Periodic {
                return Err(Error::InvalidGrid("cell masks need a bounded topology".into()));
            }
            let cells = n[0] * n[1] * n[2];
            if m.len() != cells {
                return Err(Error::InvalidGrid(format!("mask has {} entries, grid has {cells} cells", m.len())));
            }
        }
        let mut grid =
            StaggeredGrid { dims, resolution: n, spacing, topology, extent, region, mask, active: Default::default() };
        for loc in Location::ALL {
            grid.active[loc.index()] = grid.classify(loc);
        }
        Ok(grid)
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    /// Cells per axis; unused axes report 1.
    pub fn resolution(&self) -> [usize; 3] {
        self.resolution
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn topology(&self) -> Topology {
        self.topology
    }

    pub fn is_periodic(&self) -> bool {
        self.topology == Topology::Periodic
    }

    pub fn extent(&self) -> &Extent {
        &self.extent
    }

    pub fn region(&self) -> Region {
        self.region
    }

    pub fn mask(&self) -> Option<&[bool]> {
        self.mask.as_deref()
    }

    /// Quadrature weight of a single entity (the cell volume).
    pub fn cell_volume(&self) -> f64 {
        self.spacing[..self.dims].iter().product()
    }

    pub fn domain_volume(&self) -> f64 {
        let cells = match &self.mask {
            Some(m) => m.iter().filter(|&&c| c).count(),
            None => self.resolution.iter().product(),
        };
        cells as f64 * self.cell_volume()
    }

    pub fn occupied_cells(&self) -> usize {
        self.active[Location::Cell.index()].iter().filter(|&&a| a).count()
    }

    pub fn components(&self, loc: Location) -> usize {
        match loc {
            Location::Node | Location::Cell => 1,
            Location::Edge | Location::Face => self.dims,
        }
    }

    /// Whether component `comp` at `loc` is offset by half a cell along `axis`.
    pub fn is_dual(&self, loc: Location, comp: usize, axis: usize) -> bool {
        if axis >= self.dims {
            return false;
        }
        match loc {
            Location::Node => false,
            Location::Cell => true,
            Location::Edge => axis == comp,
            Location::Face => axis != comp,
        }
    }

    pub fn shape(&self, loc: Location, comp: usize) -> [usize; 3] {
        std::array::from_fn(|j| {
            if j >= self.dims {
                1
            } else if self.is_periodic() || self.is_dual(loc, comp, j) {
                self.resolution[j]
            } else {
                self.resolution[j] + 1
            }
        })
    }

    pub fn component_len(&self, loc: Location, comp: usize) -> usize {
        self.shape(loc, comp).iter().product()
    }

    pub fn component_offset(&self, loc: Location, comp: usize) -> usize {
        (0..comp).map(|c| self.component_len(loc, c)).sum()
    }

    pub fn entity_count(&self, loc: Location) -> usize {
        (0..self.components(loc)).map(|c| self.component_len(loc, c)).sum()
    }

    /// Half-cell offsets of a component, in units of the spacing.
    pub fn stagger(&self, loc: Location, comp: usize) -> [f64; 3] {
        std::array::from_fn(|j| if self.is_dual(loc, comp, j) { 0.5 } else { 0.0 })
    }

    pub fn position(&self, loc: Location, comp: usize, idx: [usize; 3]) -> [f64; 3] {
        let off = self.stagger(loc, comp);
        std::array::from_fn(|j| {
            if j < self.dims {
                self.extent.lo[j] + (idx[j] as f64 + off[j]) * self.spacing[j]
            } else {
                0.0
            }
        })
    }

    /// Position of the entity with flat index `flat` (over all components).
    pub fn entity_position(&self, loc: Location, flat: usize) -> (usize, [f64; 3]) {
        let mut rest = flat;
        for c in 0..self.components(loc) {
            let len = self.component_len(loc, c);
            if rest < len {
                let shape = self.shape(loc, c);
                return (c, self.position(loc, c, unravel(&shape, rest)));
            }
            rest -= len;
        }
        panic!("entity index {flat} out of range for {loc:?}");
    }

    /// Activity flags of every entity at `loc`. Periodic grids are all active;
    /// on bounded grids an entity is active iff every cell touching it
    /// exists and is occupied.
    pub fn active(&self, loc: Location) -> &[bool] {
        &self.active[loc.index()]
    }

    pub fn active_count(&self, loc: Location) -> usize {
        self.active(loc).iter().filter(|&&a| a).count()
    }

    fn cell_occupied(&self, c: [isize; 3]) -> bool {
        let n = self.resolution;
        if (0..3).any(|j| c[j] < 0 || c[j] >= n[j] as isize) {
            return false;
        }
        match &self.mask {
            Some(m) => m[ravel(&n, [c[0] as usize, c[1] as usize, c[2] as usize])],
            None => true,
        }
    }

    /// Cells adjacent to an entity: the entity's own index along dual axes,
    /// the two neighbours along primal axes.
    fn touching_cells(&self, loc: Location, comp: usize, idx: [usize; 3]) -> Vec<[isize; 3]> {
        let mut cells = vec![[0isize; 3]];
        for j in 0..3 {
            let i = idx[j] as isize;
            if j >= self.dims || self.is_dual(loc, comp, j) {
                for c in cells.iter_mut() {
                    c[j] = i;
                }
            } else {
                let mut next = Vec::with_capacity(cells.len() * 2);
                for c in &cells {
                    let mut lo = *c;
                    lo[j] = i - 1;
                    let mut hi = *c;
                    hi[j] = i;
                    next.push(lo);
                    next.push(hi);
                }
                cells = next;
            }
        }
        cells
    }

    fn classify(&self, loc: Location) -> Vec<bool> {
        let total = self.entity_count(loc);
        if self.is_periodic() {
            return vec![true; total];
        }
        let mut out = Vec::with_capacity(total);
        for comp in 0..self.components(loc) {
            let shape = self.shape(loc, comp);
            for flat in 0..self.component_len(loc, comp) {
                let idx = unravel(&shape, flat);
                let ok = self.touching_cells(loc, comp, idx).iter().all(|&c| self.cell_occupied(c));
                out.push(ok);
            }
        }
        out
    }

    /// Inactive entities that touch at least one occupied cell: the
    /// discrete boundary. Empty on periodic grids.
    pub fn boundary_entities(&self, loc: Location) -> Vec<usize> {
        if self.is_periodic() {
            return Vec::new();
        }
        let mut out = Vec::new();
        let mut base = 0;
        for comp in 0..self.components(loc) {
            let shape = self.shape(loc, comp);
            for flat in 0..self.component_len(loc, comp) {
                if self.active[loc.index()][base + flat] {
                    continue;
                }
                let idx = unravel(&shape, flat);
                if self.touching_cells(loc, comp, idx).iter().any(|&c| self.cell_occupied(c)) {
                    out.push(base + flat);
                }
            }
            base += self.component_len(loc, comp);
        }
        out
    }

    /// Whether a point lies in the closure of the occupied region.
    pub fn contains_point(&self, x: &[f64; 3]) -> bool {
        if !self.extent.contains(x, self.dims, 1e-12) {
            return false;
        }
        match self.region {
            Region::Box => true,
            Region::LShape => {
                let mid = self.extent.center();
                !(x[0] > mid[0] + 1e-12 && x[1] > mid[1] + 1e-12)
            }
            Region::Custom => {
                // closed cells: a point on the boundary of an occupied cell counts
                let n = self.resolution;
                let mut lo = [0isize; 3];
                let mut hi = [0isize; 3];
                for j in 0..3 {
                    if j >= self.dims {
                        continue;
                    }
                    let t = (x[j] - self.extent.lo[j]) / self.spacing[j];
                    lo[j] = ((t - 1e-9).floor() as isize).clamp(0, n[j] as isize - 1);
                    hi[j] = ((t + 1e-9).floor() as isize).clamp(0, n[j] as isize - 1);
                }
                for k in lo[2]..=hi[2] {
                    for j in lo[1]..=hi[1] {
                        for i in lo[0]..=hi[0] {
                            if self.cell_occupied([i, j, k]) {
                                return true;
                            }
                        }
                    }
                }
                false
            }
        }
    }

    /// Euclidean distance from `x` (inside the region) to the region boundary.
    pub fn distance_to_boundary(&self, x: &[f64; 3]) -> f64 {
        let d = self.dims;
        let mut dist = f64::INFINITY;
        for j in 0..d {
            dist = dist.min(x[j] - self.extent.lo[j]).min(self.extent.hi[j] - x[j]);
        }
        match self.region {
            Region::Box => dist.max(0.0),
            Region::LShape => {
                let mid = self.extent.center();
                // the two re-entrant faces: {x0 = mid0, x1 >= mid1} and {x1 = mid1, x0 >= mid0}
                let d0 = {
                    let dx = x[0] - mid[0];
                    let dy = (mid[1] - x[1]).max(0.0);
                    (dx * dx + dy * dy).sqrt()
                };
                let d1 = {
                    let dy = x[1] - mid[1];
                    let dx = (mid[0] - x[0]).max(0.0);
                    (dx * dx + dy * dy).sqrt()
                };
                dist.min(d0).min(d1).max(0.0)
            }
            Region::Custom => self.custom_distance(x).min(dist.max(0.0)),
        }
    }

    // Brute force over boundary facets; only meant for small custom masks.
    fn custom_distance(&self, x: &[f64; 3]) -> f64 {
        let n = self.resolution;
        let h = self.spacing;
        let mut best = f64::INFINITY;
        for k in 0..n[2] {
            for j in 0..n[1] {
                for i in 0..n[0] {
                    let c = [i as isize, j as isize, k as isize];
                    if !self.cell_occupied(c) {
                        continue;
                    }
                    for axis in 0..self.dims {
                        for side in [-1isize, 1] {
                            let mut nb = c;
                            nb[axis] += side;
                            if self.cell_occupied(nb) {
                                continue;
                            }
                            // facet of cell c normal to `axis`
                            let mut dd = 0.0;
                            for m in 0..self.dims {
                                let lo = self.extent.lo[m] + c[m] as f64 * h[m];
                                let hi = lo + h[m];
                                let q = if m == axis {
                                    if side < 0 {
                                        lo
                                    } else {
                                        hi
                                    }
                                } else {
                                    x[m].clamp(lo, hi)
                                };
                                dd += (x[m] - q) * (x[m] - q);
                            }
                            best = best.min(dd.sqrt());
                        }
                    }
                }
            }
        }
        best
    }
}

/// Index set of entities forced to zero: tangential boundary edges for
/// the PEC condition, boundary nodes for Dirichlet problems.
#[derive(Debug, Clone)]
pub struct BoundaryMask {
    grid: GridRef,
    location: Location,
    zeroed: Vec<usize>,
}

impl BoundaryMask {
    /// Zeroes every inactive entity at `location`.
    pub fn new(grid: &GridRef, location: Location) -> Self {
        let zeroed = grid.active(location).iter().enumerate().filter_map(|(i, &a)| (!a).then_some(i)).collect();
        BoundaryMask { grid: grid.clone(), location, zeroed }
    }

    /// The perfect-conductor mask `u x n = 0`.
    pub fn pec(grid: &GridRef) -> Self {
        Self::new(grid, Location::Edge)
    }

    pub fn dirichlet(grid: &GridRef) -> Self {
        Self::new(grid, Location::Node)
    }

    pub fn grid(&self) -> &GridRef {
        &self.grid
    }

    pub fn location(&self) -> Location {
        self.location
    }

    pub fn zeroed(&self) -> &[usize] {
        &self.zeroed
    }

    pub fn apply_slice(&self, values: &mut [f64]) {
        for &i in &self.zeroed {
            values[i] = 0.0;
        }
    }

    pub fn apply(&self, field: &mut super::DiscreteField) -> Result<()> {
        if field.location() != self.location || !field.same_grid(&self.grid) {
            return Err(Error::GridMismatch);
        }
        self.apply_slice(field.values_mut());
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn periodic_counts() {
        let g = build_grid(3, &[16, 16, 16], Topology::Periodic, Extent::unit(), None).unwrap();
        for c in 0..3 {
            assert_eq!(g.component_len(Location::Edge, c), 16 * 16 * 16);
        }
        assert_eq!(g.entity_count(Location::Edge), 3 * 4096);
        assert!(g.boundary_entities(Location::Edge).is_empty());
    }

    #[test]
    fn l_shape_occupancy() {
        let g = build_l_shape(2, &[8, 8], Extent::unit()).unwrap();
        assert_eq!(g.occupied_cells(), 48);
        // the re-entrant corner node is on the boundary
        let shape = g.shape(Location::Node, 0);
        let corner = ravel(&shape, [4, 4, 0]);
        assert!(!g.active(Location::Node)[corner]);
        let inside = ravel(&shape, [3, 3, 0]);
        assert!(g.active(Location::Node)[inside]);
    }

    #[test]
    fn resolution_floor() {
        assert!(build_grid(3, &[1, 1, 1], Topology::Periodic, Extent::unit(), None).is_err());
        assert!(build_grid(2, &[0, 4], Topology::Bounded, Extent::unit(), None).is_err());
    }

    #[test]
    fn mask_errors() {
        let err = build_grid(2, &[4, 4], Topology::Bounded, Extent::unit(), Some(vec![true; 15]));
        assert!(err.is_err());
        let err = build_grid(2, &[4, 4], Topology::Periodic, Extent::unit(), Some(vec![true; 16]));
        assert!(err.is_err());
    }

    #[test]
    fn bounded_boundary_edges() {
        let g = build_grid(3, &[4, 4, 4], Topology::Bounded, Extent::unit(), None).unwrap();
        // x-edges: 4*5*5 total, interior ones have y,z index in 1..4
        let interior = 4 * 3 * 3;
        let total = 4 * 5 * 5;
        let active_x = g.active(Location::Edge)[..total].iter().filter(|&&a| a).count();
        assert_eq!(active_x, interior);
        assert_eq!(g.boundary_entities(Location::Edge).len(), 3 * (total - interior));
    }

    #[test]
    fn mask_classification_consistent() {
        // an edge is active only if all its adjacent cells are occupied
        let g = build_l_shape(3, &[4, 4, 2], Extent::unit()).unwrap();
        let m = g.mask().unwrap();
        assert_eq!(m.iter().filter(|&&c| c).count(), 24);
        for comp in 0..3 {
            let shape = g.shape(Location::Edge, comp);
            let off = g.component_offset(Location::Edge, comp);
            for flat in 0..g.component_len(Location::Edge, comp) {
                let idx = unravel(&shape, flat);
                let p = g.position(Location::Edge, comp, idx);
                if g.active(Location::Edge)[off + flat] {
                    assert!(g.contains_point(&p));
                    assert!(g.distance_to_boundary(&p) > 0.0);
                }
            }
        }
    }

    #[test]
    fn mask_idempotent() {
        let g = build_grid(2, &[4, 4], Topology::Bounded, Extent::unit(), None).unwrap();
        let mask = BoundaryMask::pec(&g);
        let mut f = super::super::DiscreteField::from_fn(&g, Location::Edge, |_, x| 1.0 + x[0]);
        mask.apply(&mut f).unwrap();
        let once = f.values().to_vec();
        mask.apply(&mut f).unwrap();
        assert_eq!(once, f.values());
    }

    #[test]
    fn l_shape_distance() {
        let g = build_l_shape(2, &[8, 8], Extent::unit()).unwrap();
        let d = g.distance_to_boundary(&[0.25, 0.25, 0.0]);
        assert!((d - 0.25).abs() < 1e-14);
        let d = g.distance_to_boundary(&[0.4, 0.4, 0.0]);
        let corner = (2.0f64 * 0.1 * 0.1).sqrt();
        assert!((d - corner).abs() < 1e-14);
        let d = g.distance_to_boundary(&[0.45, 0.8, 0.0]);
        assert!((d - 0.05).abs() < 1e-14);
    }
}
