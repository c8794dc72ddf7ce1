//! Matrix-free SPD solvers for the fine-scale, homogenized and elliptic problems.

pub mod cg;
pub mod elliptic;
pub mod maxwell;
pub mod multigrid;
pub mod pec;

pub use cg::*;
pub use elliptic::{solve_elliptic, solve_elliptic_sampled, EllipticCoefficients, EllipticOperator};
pub use maxwell::{
    accept_best, apply_maxwell_operator, check_resolution, solve_homogenized, solve_maxwell, solve_maxwell_sampled,
    MaxwellOperator, MIN_CELLS_PER_PERIOD,
};
