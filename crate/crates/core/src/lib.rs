//! Toy-scale end-to-end speech translation: frozen audio encoders bridged to a
//! frozen causal decoder through a trainable window-level Q-Former and LoRA
//! adapters, with the warmup/cosine schedule, short/long length curriculum,
//! corpus BLEU, and chain-of-thought response parsing around it.
//!
//! Everything runs on synthetic data from [`datakit::synth_generate`].

pub mod datakit;
pub mod diagnostics;
pub mod error;
pub mod model;
pub mod numerics;
pub mod textkit;
pub mod training;

pub use error::{Error, Result};

/// Numeric type for every tensor. `f64` unless the `single-precision` feature is on.
#[cfg(not(feature = "single-precision"))]
pub type Real = f64;
#[cfg(feature = "single-precision")]
pub type Real = f32;
