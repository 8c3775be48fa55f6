//! Finite-difference and quadrature solvers for singular problems driven by
//! the sum of the local and the fractional p-Laplacian, with tools for the
//! associated Sobolev-type extremal problem.

pub mod error;
pub mod grid;
pub mod kernels;
pub mod energy;
pub mod solver;
pub mod extremal;
pub mod verify;
pub mod cli;

pub use error::{Error, Result};
pub use grid::{DomainSpec, Grid, GridFunction, Shape};
