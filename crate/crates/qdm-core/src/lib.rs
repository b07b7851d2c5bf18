//! Quadruplet deep metric learning for imbalanced time-series fault
//! classification: windowed ingestion, an LSTM feature extractor trained
//! with a combined quadruplet + softmax objective, comparison baselines,
//! and per-class evaluation.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod loss;
pub mod metrics;
pub mod pairing;
pub mod network;
pub mod optim;
pub mod train;
pub mod rng;

pub use autodiff::{Gradients, Tape, Tensor, Var};
pub use error::{Error, Result};
