//! Interpretable multi-variable LSTM forecasting.
//!
//! The crate provides the IMV-Full and IMV-Tensor recurrent cells, a mixture
//! attention head with a Gaussian component per input variable, and an
//! EM-style trainer that learns network weights together with a global
//! variable importance vector and per-variable temporal importance.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases at
//! the crate root fix the scalar to `f64`, which the trainer's tests and the
//! CLI use.

pub mod cell;
pub mod checkpoint;
pub mod dataio;
pub mod error;
pub mod evalx;
pub mod experiment;
pub mod mixture;
pub mod model;
pub mod ndtape;
pub mod scalar;
pub mod trainer;

pub use error::{ImvError, Result};
pub use scalar::Scalar;

pub type NdArrayF64 = ndtape::NdArray<f64>;
pub type NdArrayF32 = ndtape::NdArray<f32>;
pub type TapeF64 = ndtape::Tape<f64>;
pub type CellParamsF64 = cell::ImvCellParams<f64>;
pub type CellParamsF32 = cell::ImvCellParams<f32>;
pub type ModelF64 = model::ImvModel<f64>;
pub type ModelF32 = model::ImvModel<f32>;
