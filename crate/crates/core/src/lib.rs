//! Lean blowout transition detection from quasi-static pressure records.
//!
//! A next-step predictor (LSTM or RNN) or a Gaussian HMM forecaster is fit on
//! the blowout record of a reference protocol. Its prediction RMSE on every
//! other operating point forms a metric curve; the value at the annotated
//! transition becomes the threshold that labels unseen conditions healthy or
//! unhealthy. The delay-embedding translational error serves as a
//! model-free baseline, and [`bench`] times each detector's inference.

pub mod bench;
pub mod datagen;
pub mod detection;
pub mod dynamics;
pub mod error;
pub mod hmm;
pub mod io;
pub mod neural;
pub mod pipeline;
pub mod series;

pub use error::{Error, Result};
