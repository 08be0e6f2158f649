//! Multi-perspective fusion.
//!
//! A target distribution of response features (for example sentiment) is
//! decomposed into a simplex-weighted mixture of the distributions produced
//! under several perspective system prompts. The weights then drive
//! generation: each answer is produced under a perspective drawn by weight,
//! optionally fusing several such samples into one response. Alignment is
//! measured with KL divergence and per-question calibration error.

pub mod domain;
pub mod generation;
pub mod metrics;
pub mod mitigator;
pub mod pipeline;
pub mod rng;
pub mod scoring;
