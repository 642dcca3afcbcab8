//! Interval neural networks for uncertainty-aware system identification.
//!
//! The crate provides interval arithmetic, a small reverse-mode gradient
//! engine, interval LSTM and interval Neural-ODE models, their training
//! strategies, probabilistic baselines, metrics and parameter analysis.

pub mod analysis;
pub mod autodiff;
pub mod baselines;
pub mod dataio;
pub mod error;
pub mod interval;
pub mod model;
pub mod nets;
pub mod objectives;
pub mod pipeline;
pub mod rng;
pub mod training;

pub use error::{Error, ErrorClass, Result};
pub use interval::{Interval, IntervalMatrix};
