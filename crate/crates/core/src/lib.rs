//! Monte Carlo laboratory for planar Brownian intersection and disconnection
//! exponents, the one-annulus transfer operator, and frontier dimensions.
//!
//! Numerical code is generic over [`Real`]; the aliases below fix `f64`.

// Guards are written `!(x > 0.0)` so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod exponents;
pub mod fractal;
pub mod grid;
pub mod operator;
pub mod paths;
pub mod rng;
pub mod scalar;
pub mod stats;

pub use rng::{StreamKey, DEFAULT_SEED};
pub use scalar::Real;

pub type Point = paths::Point2<f64>;
pub type Path = paths::PlanarPath<f64>;
pub type SquareMask = grid::LatticeMask<grid::SquareLattice<f64>>;
pub type SquareField = grid::ScalarField<grid::SquareLattice<f64>>;
