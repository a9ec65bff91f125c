//! Temporal knowledge graph forecasting with a graph-convolutional neural ODE.

// Negated comparisons reject NaN on purpose; index loops mirror the math.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod aggregator;
pub mod autodiff;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod jump;
pub mod model;
pub mod ode;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::Matrix;
