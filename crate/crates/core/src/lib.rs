//! Global camera position estimation from pairwise epipolar geometries and
//! feature tracks.
//!
//! Camera pairs seeing a shared scene point contribute a linear constraint
//! among camera centers in which the point itself has been eliminated; the
//! stacked constraints form a sparse homogeneous system solved on the unit
//! sphere either in the L2 sense (smallest singular vector) or robustly in
//! the L1 sense (linearized ADMM). The crate also includes EG-graph
//! filtering, a synthetic scene simulator, evaluation against ground truth,
//! and the dataset/report file formats used by the `transolve` CLI.

pub mod assembly;
pub mod config;
pub mod dataset;
pub mod evaluate;
pub mod geometry;
pub mod graph;
pub mod pairwise;
pub mod pipeline;
pub mod simulator;
pub mod solver;

pub use config::{Profile, RunConfig, SolverKind};
pub use geometry::{Rotation, UnitVector};
