//! Distributional quality prediction for text-to-audio evaluation.
//!
//! The pipeline runs in five stages:
//!
//! 1. [`annotations`] parses multi-rater manifests, drops records that fail the
//!    repeat-presentation consistency probe, and turns each group of rater
//!    scores into a Gaussian-smoothed 10-bin target distribution.
//! 2. [`features`] reads and writes the AEVF binary file holding one fused
//!    (prompt, audio) embedding per clip.
//! 3. [`dataset`] splits clips into train/validation/test with whole systems
//!    held out.
//! 4. [`model`] trains ten linear-softmax heads, one per (dimension,
//!    perspective) pair, against a KL + mean-regression objective.
//! 5. [`metrics`] and [`report`] score predictions at the utterance and
//!    system level and render CSV, JSON, and SVG outputs.
//!
//! [`synth`] generates datasets with a known latent quality so the whole
//! pipeline can be checked end to end.

pub mod annotations;
pub mod dataset;
pub mod features;
pub mod heads;
pub mod metrics;
pub mod model;
pub mod report;
pub mod synth;

pub use heads::{Dimension, HeadKey, PerHead, Perspective, NUM_BINS, NUM_HEADS};
