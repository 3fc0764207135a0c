//! Model-inversion privacy risk assessment pipeline.
//!
//! Reconstructs per-class training-data surrogates from a trained image
//! classifier via two attack families (feature visualization with a
//! generative prior, and latent-space generative model inversion),
//! interprets the reconstructions through pluggable caption / zero-shot
//! backends, computes four risk dimensions, and emits a weighted composite
//! risk report with low/medium/high binning and trial-level confidence
//! intervals.

pub mod attacks;
pub mod data;
pub mod digest;
pub mod error;
pub mod generative;
pub mod imgproc;
pub mod metrics;
pub mod modelzoo;
pub mod nn;
pub mod orchestrator;
pub mod riskcore;
pub mod synth;
pub mod vlm;

pub use error::{Error, Result};
