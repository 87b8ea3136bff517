//! Simulator and analysis library for decentralized normalized stochastic
//! gradient descent (DNSGD) under relaxed `(L0, L1)`-smoothness.
//!
//! The numerical core is generic over the scalar type ([`Scalar`], implemented
//! for `f32` and `f64`); the `*64` aliases below fix it to `f64`, which is what
//! the experiment harness and CLI use.

pub mod analysis;
pub mod error;
pub mod gossip;
pub mod harness;
pub mod linalg;
pub mod optimizers;
pub mod problems;
pub mod scalar;
pub mod topology;

pub use error::{Error, Result};
pub use linalg::AgentMatrix;
pub use scalar::Scalar;

pub type AgentMatrix64 = linalg::AgentMatrix<f64>;
pub type MixingMatrix64 = topology::MixingMatrix<f64>;
pub type ProblemInstance64 = problems::ProblemInstance<f64>;
pub type HyperParams64 = optimizers::HyperParams<f64>;
pub type OptimizerState64 = optimizers::OptimizerState<f64>;
pub type Trajectory64 = optimizers::Trajectory<f64>;
pub type MetricsRow64 = analysis::MetricsRow<f64>;
pub type TheoreticalParams64 = analysis::TheoreticalParams<f64>;
