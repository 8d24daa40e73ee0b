//! Progressive unsupervised paraphrasing: text processing, metrics, reward
//! models, a small autodiff engine, LSTM sequence models and the training
//! loops built on them.

pub mod autodiff;
pub mod config;
pub mod decoding;
pub mod embed;
pub mod error;
pub mod eval;
pub mod lm;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod reward;
pub mod synth;
pub mod text;
pub mod trainer;
pub mod vae;

pub use error::{Error, Result};
