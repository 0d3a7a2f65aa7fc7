//! Variance of linear stochastic models via the Lyapunov equation, Black
//! option pricing on top of it, and least-squares calibration to option
//! chains.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod data_io;
pub mod error;
pub mod lyapunov;
pub mod matrix;
pub mod model;
pub mod optimize;
pub mod pricing;
pub mod rng;

pub use calibration::{calibrate, CalibrationConfig, CalibrationResult, QuoteFit, QuoteRole, SurfacePoint};
pub use error::{Error, Result};
pub use lyapunov::{StateCovariance, VarianceMethod};
pub use matrix::Matrix;
pub use model::{GbmParams, LinearSde, LmrGwParams, ModelKind, ModelParams, OuParams, SchwartzParams};
pub use pricing::{OptionKind, OptionQuote, PricingConfig};
