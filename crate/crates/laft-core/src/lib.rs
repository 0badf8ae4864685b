//! Latent-feature anomaly detection by diffusion reconstruction with
//! memory-bank feature editing.
//!
//! The pipeline ingests aggregated feature tensors, models their normal
//! distribution with a small diffusion denoiser, optionally edits query
//! features toward the normal manifold via nearest neighbors in a greedy
//! core set, reconstructs from a partially corrupted state, and scores
//! anomalies by smoothed reconstruction error. Pseudo-validation synthesis
//! and the two-stage hyperparameter sweep select tau and K without labels.

pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod diffusion;
pub mod error;
pub mod features;
pub mod membank;
pub mod metrics;
pub mod pipeline;
pub mod rng;
pub mod schedule;
pub mod scoring;
pub mod synth;
pub mod tensor;
pub mod tune;

pub use config::PipelineConfig;
pub use error::{Error, Result};
pub use tensor::Tensor;
