//! Fixed simplex-ETF classifiers, neural-collapse diagnostics, and a toy
//! few-shot class-incremental learning engine.
//!
//! Numerical code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the scalar to `f64`, which is what the command-line tools use.

pub mod error;
pub mod etf;
pub mod fscil;
pub mod layer_peeled;
pub mod linalg;
pub mod losses;
pub mod nc_metrics;
pub mod parallel;
pub mod rng;
pub mod scalar;
pub mod serialize;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Matrix = linalg::Matrix<f64>;
pub type Etf = etf::EtfPrototypes<f64>;
pub type EtfF32 = etf::EtfPrototypes<f32>;
pub type Problem = layer_peeled::LayerPeeledProblem<f64>;
pub type FeatureBank = layer_peeled::FeatureBank<f64>;
pub type FeatureDump = nc_metrics::FeatureDump<f64>;
pub type Dataset = fscil::SyntheticDataset<f64>;
pub type Model = fscil::FscilModel<f64>;
