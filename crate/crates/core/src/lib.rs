//! Distributed persistent cohomology of lower-star filtrations on 3D grids.
//!
//! The pipeline splits the grid into blocks, reduces each block's interior
//! coboundary columns locally, ultrasparsifies them, redistributes all columns
//! by value across ranks, and finishes with a round-based global reduction.
//! Sequential oracles in [`diagram`] check the result.

pub mod cover;
pub mod diagram;
pub mod error;
pub mod filtration;
pub mod global;
pub mod io;
pub mod pipeline;
pub mod redistribution;
pub mod reduction;
pub mod runtime;

pub use error::{Error, Result};
pub use filtration::{Cell, CellKey, Grid, Shape};
