//! Multi-agent satellite relative-motion forecasting: Clohessy-Wiltshire
//! scenario generation, a weight-evolving graph-convolutional predictor,
//! physics-informed training and RMSE evaluation.
//!
//! The numeric kernels (matrices, the differentiation tape, orbital
//! dynamics, the model and its losses) are generic over [`scalar::Real`];
//! the dataset/training/CLI pipeline runs on the `f64` aliases below.

pub mod autodiff;
pub mod cli;
pub mod eval;
pub mod loss;
pub mod model;
pub mod error;
pub mod orbit;
pub mod plot;
pub mod scenario;
pub mod train;
pub mod rng;
pub mod scalar;

pub use error::{Error, Result};

/// Dense `f64` matrix, the pipeline's working type.
pub type Mat = autodiff::Matrix<f64>;
/// Recording tape over `f64`.
pub type TapeF64 = autodiff::Tape<f64>;
/// Relative LVLH state at `f64`.
pub type State = orbit::RelativeState<f64>;
/// Chief orbit at `f64`.
pub type Chief = orbit::ChiefOrbit<f64>;
