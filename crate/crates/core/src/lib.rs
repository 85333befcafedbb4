//! Approximate geometric transportation in low dimension.
//!
//! Pipeline: [`quadtree`] builds a randomly shifted compressed quadtree,
//! [`spanner`] turns it into a sparse Steiner graph, [`solver`] computes a
//! min-cost flow part by part (with [`precond`] supplying the hierarchical
//! preconditioner), and [`recover`] converts the flow into a point-to-point
//! map using the trees in [`psplit`]. [`oracle`] is the exact reference.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod generate;
pub mod instance;
pub mod oracle;
pub mod pipeline;
pub mod precond;
pub mod psplit;
pub mod quadtree;
pub mod recover;
pub mod solver;
pub mod spanner;

pub use error::{Error, Result};
pub use instance::{MapEntry, TransportInstance, TransportationMap};
pub use pipeline::{solve_instance, Solution};
pub use solver::{Backend, SolverConfig};
