//! Discrete-time stochastic integration against finite families of
//! continuous semimartingales, organised around the reproducing kernel
//! Hilbert spaces generated by their covariation kernels.
//!
//! Every numerical type is generic over a [`Real`] scalar (`f32` or `f64`);
//! the `*64` aliases below fix the scalar to `f64`, which is what the
//! experiment runner uses.

// `!(x >= 0)` style guards are written that way so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod finance;
pub mod grid;
pub mod hjm;
pub mod io;
pub mod integration;
pub mod linalg;
pub mod lp;
pub mod rkhs;
pub mod scalar;
pub mod simulation;
pub mod stats;
pub mod stoch_kernel;
pub mod tree;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Kernel64 = rkhs::Kernel<f64>;
pub type Mat64 = linalg::Mat<f64>;
pub type TimeGrid64 = grid::TimeGrid<f64>;
pub type IncrementFamily64 = stoch_kernel::IncrementFamily<f64>;
pub type StochasticAggregateKernel64 = stoch_kernel::StochasticAggregateKernel<f64>;
pub type SemimartingaleModel64 = simulation::SemimartingaleModel<f64>;
pub type PathEnsemble64 = simulation::PathEnsemble<f64>;
pub type HjmModel64 = hjm::HjmModel<f64>;
pub type TreeMarket64 = tree::TreeMarket<f64>;
pub type Tolerances64 = rkhs::Tolerances<f64>;
