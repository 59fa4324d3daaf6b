//! Temporal attention network for irregular clinical time series.
//!
//! A patient journey (features by visits, visit times, static codes) flows
//! through feature-wise stacked attention, then splits into a short-term
//! path (interval-aware strided convolution with feature attention) and a
//! long-term path (masked attention from each visit to all earlier ones).
//! Both are coupled per visit, pooled over time with attention and mapped to
//! a two-class probability. Everything runs on a small reverse-mode tape in
//! [`autodiff`].

pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod coupled;
pub mod data;
pub mod error;
pub mod export;
pub mod init;
pub mod long_term;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod run;
pub mod stacked;
pub mod tensor;
pub mod temporal;
pub mod train;

pub use autodiff::{Tape, Var};
pub use config::{Activation, ModelConfig, RunConfig, TrainConfig, Variant};
pub use data::PatientJourney;
pub use error::{Error, Result};
pub use model::{Model, ModelParams};
pub use tensor::{Tensor, TensorError};
