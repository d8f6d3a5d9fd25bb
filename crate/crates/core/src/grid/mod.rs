//! Lattice computations: rasterization, flood fill, harmonic solves, conditioned
//! walks and the half-strip exit density.

use thiserror::Error;

pub mod dirichlet;
pub mod io;
pub mod lattice;
pub mod mask;
pub mod strip;
pub mod walk;

pub use dirichlet::{
    solve_dirichlet, sup_over_circle, DirichletProblem, PoleCondition, ScalarField, SorParams,
};
pub use lattice::{Lattice, LogPolarLattice, Site, SquareLattice, StripLattice};
pub use mask::{
    disconnects, disconnects_with, flood_outside, free_components, rasterize, rasterize_square,
    reaches_boundary, FreeComponents, LatticeMask, Region, RegionLabels,
};
pub use strip::{strip_exit_density, strip_exit_experiment, strip_terms, StripComparison};
pub use walk::{h_transform_walk, h_walk_with, simple_walk_until, HWalk};

#[derive(Debug, Error)]
pub enum GridError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("geometry extends outside the grid")]
    OutsideGrid,
    #[error("point swallowed by sausage")]
    Swallowed,
    #[error("relaxation did not converge after {iterations} sweeps (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("no neighbour with positive h: malformed domain")]
    NoPositiveNeighbor,
    #[error("walk exceeded {0} steps")]
    WalkBudget(usize),
    #[error("malformed grid file: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
