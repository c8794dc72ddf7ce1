//! Staggered grids, discrete fields and mimetic operators.

mod field;
pub(crate) mod grid;
pub mod interp;
pub mod ops;
pub mod snapshot;
pub mod spectral;

pub use field::DiscreteField;
pub use grid::{
    build_grid, build_l_shape, l_shape_mask, BoundaryMask, Extent, GridRef, Location, Region, StaggeredGrid, Topology,
};
pub use ops::{curl, curl_star, div, div_star, dual_grad, grad, inner_product, norm_hcurl, norm_l2};
pub use spectral::{helmholtz_project, spectral_identity_check, IdentityCheck};
