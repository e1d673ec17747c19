//! RNN-T inference with a factorized blank/non-blank joiner and
//! blank-thresholded beam search, plus the runtime counters and analytic
//! energy model used to evaluate it.

pub mod decoder;
pub mod error;
pub mod harness;
pub mod io;
pub mod math;
pub mod metrics;
pub mod model;
pub mod power;
pub mod suite;
pub mod synth;

pub use error::{Error, Result};
