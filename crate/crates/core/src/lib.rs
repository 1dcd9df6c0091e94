//! Dynamic-vocabulary sequence-to-sequence response generation.
//!
//! Each input message gets its own small decoding vocabulary, built from a
//! Bernoulli word predictor over the encoder's final state. The predictor and
//! the generator are trained jointly by Monte-Carlo estimation of a lower bound
//! on the response log-likelihood.

pub mod benchmark;
pub mod checkpoint;
pub mod corpus;
pub mod error;
pub mod inference;
pub mod metrics;
pub mod model;
pub mod numeric;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
