//! Differentiable building blocks, losses, metrics and complexity accounting
//! for lightweight infrared small target detection.

pub mod blocks;
pub mod complexity;
pub mod data;
pub mod detector;
pub mod error;
pub mod metrics;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Shape4, Tape, Tensor4, Var};
