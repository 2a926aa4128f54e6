//! Jacobi diagonalization of real symmetric matrices, framed as two games.
//!
//! The pivot game picks one Givens rotation at a time; the sweep game picks one of eight
//! cyclic orderings per sweep. Monte Carlo tree search with a size-invariant lattice-graph
//! network is used to find rotation schedules cheaper than the classical MaxElem rule and
//! fixed cyclic sweeps.
//!
//! Matrix kernels are generic over [`Scalar`] (`f32`/`f64`); the aliases below fix the
//! double-precision types used by search, training and benchmarking.

pub mod approximator;
pub mod bench;
pub mod env;
pub mod error;
pub mod io;
pub mod matrix;
pub mod mcts;
pub mod orderings;
pub mod scalar;
pub mod selfplay;

pub use error::{Error, Result};
pub use matrix::{GivensRotation, PivotAction, SymmetricMatrix};
pub use orderings::SweepOption;
pub use scalar::Scalar;

pub type Matrix = SymmetricMatrix<f64>;
pub type Matrix32 = SymmetricMatrix<f32>;
pub type Rotation = GivensRotation<f64>;
pub type MdpState = env::MdpState<f64>;
pub type SmdpState = env::SmdpState<f64>;
