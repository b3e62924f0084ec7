//! Hybrid finite difference solver for the two dimensional Monge-Ampère
//! equation `det D²u = f` on the unit square with Dirichlet data.

pub mod diffops;
pub mod error;
pub mod grid;
pub mod hybrid;
pub mod linalg;
pub mod monotone;
pub mod poisson;
pub mod problems;
pub mod solver;

pub use error::{Error, Result};
pub use grid::{GridSpec, MeshFunction, NodeIndex, NodeSet};
pub use linalg::Mat2;
