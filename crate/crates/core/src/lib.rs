//! Long-horizon multivariate forecasting with multi-resolution periodic
//! pattern networks, linear baselines and an entropy-based predictability
//! estimator.

pub mod baselines;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod forecaster;
pub mod harness;
pub mod mppn;
pub mod period;
pub mod predictability;
pub mod synth;
pub mod tensor;

pub use config::{ModelKind, RunConfig};
pub use data::SeriesDataset;
pub use error::{Error, Result};
pub use forecaster::{Forecaster, ParamSet};
pub use mppn::{Mppn, MppnConfig};
pub use tensor::{Tape, Tensor, Var};
