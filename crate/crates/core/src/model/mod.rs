//! Ten linear-softmax heads over a shared feature vector.
//!
//! Each head maps a feature vector `x` to logits `z = W x + b` (10 x D
//! weights, 10 biases) and a distribution `softmax(z)` over scores 1..=10.
//! The predicted mean score is the expectation of that distribution.

mod io;
mod loss;
mod train;

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotations::distribution_mean;
use crate::features::{FeatureSet, FeatureVector};
use crate::heads::{HeadKey, PerHead, NUM_BINS};

pub use io::{read_history, read_model, write_history, write_model, MODEL_MAGIC, MODEL_VERSION};
pub use loss::{
    batch_loss, example_loss, gradient_norm, kl_divergence, loss, loss_gradient, LossConfig, LossMode,
    LossTerms,
};
pub use train::{select_best_epoch, train, EpochRecord, TrainConfig, TrainOutcome, Trainer};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("feature dimension {found} does not match model dimension {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("head sets differ: {0}")]
    KeyMismatch(String),
    #[error("{head}: predicted probability of bin {bin} is zero where the target has mass")]
    ZeroProbability { head: HeadKey, bin: usize },
    #[error("non-finite loss at epoch {epoch} ({context})")]
    NonFiniteLoss { epoch: usize, context: String },
    #[error("{0} set is empty")]
    EmptySet(&'static str),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("invalid model file: {0}")]
    Format(String),
    #[error("model I/O: {0}")]
    Io(#[from] std::io::Error),
}

/// Parameters of one head. `weights` is row-major, one row of length `dim`
/// per score bin.
#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    pub weights: Vec<f64>,
    pub bias: [f64; NUM_BINS],
}

impl Head {
    pub fn zeros(dim: usize) -> Self {
        Self {
            weights: vec![0.0; NUM_BINS * dim],
            bias: [0.0; NUM_BINS],
        }
    }

    pub fn row(&self, bin: usize, dim: usize) -> &[f64] {
        &self.weights[bin * dim..(bin + 1) * dim]
    }

    fn logits(&self, x: &[f64]) -> [f64; NUM_BINS] {
        let dim = x.len();
        std::array::from_fn(|k| {
            let row = self.row(k, dim);
            row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias[k]
        })
    }

    fn is_finite(&self) -> bool {
        self.weights.iter().chain(self.bias.iter()).all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeModel {
    pub dim: usize,
    pub heads: PerHead<Head>,
}

impl ProbeModel {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            heads: PerHead::from_fn(|_| Head::zeros(dim)),
        }
    }

    /// Weights uniform in `[-1/sqrt(dim), 1/sqrt(dim)]`, biases zero.
    pub fn init(dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::init_with(dim, &mut rng)
    }

    pub(crate) fn init_with(dim: usize, rng: &mut impl Rng) -> Self {
        let scale = 1.0 / (dim as f64).sqrt();
        let heads = PerHead::from_fn(|_| Head {
            weights: (0..NUM_BINS * dim)
                .map(|_| rng.random_range(-scale..=scale))
                .collect(),
            bias: [0.0; NUM_BINS],
        });
        Self { dim, heads }
    }

    pub fn is_finite(&self) -> bool {
        self.heads.0.iter().all(Head::is_finite)
    }

    pub fn num_parameters(&self) -> usize {
        self.heads.0.len() * NUM_BINS * (self.dim + 1)
    }

    fn check_dim(&self, found: usize) -> Result<(), ModelError> {
        if found == self.dim {
            Ok(())
        } else {
            Err(ModelError::DimensionMismatch {
                expected: self.dim,
                found,
            })
        }
    }
}

/// Softmax output of one head.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictedDistribution {
    pub probs: [f64; NUM_BINS],
    pub mean: f64,
}

impl PredictedDistribution {
    pub fn from_logits(logits: &[f64; NUM_BINS]) -> Self {
        let probs = softmax(logits);
        Self {
            mean: distribution_mean(&probs),
            probs,
        }
    }
}

/// Numerically stable softmax (the maximum logit is subtracted first).
pub fn softmax(logits: &[f64; NUM_BINS]) -> [f64; NUM_BINS] {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = logits.map(|z| (z - max).exp());
    let total: f64 = out.iter().sum();
    for p in &mut out {
        *p /= total;
    }
    out
}

pub type Prediction = PerHead<PredictedDistribution>;

pub(crate) fn forward_values(model: &ProbeModel, x: &[f64]) -> Prediction {
    model
        .heads
        .map(|_, head| PredictedDistribution::from_logits(&head.logits(x)))
}

/// Runs all ten heads on one feature vector.
pub fn forward(model: &ProbeModel, x: &FeatureVector) -> Result<Prediction, ModelError> {
    model.check_dim(x.dim())?;
    Ok(forward_values(model, &x.values))
}

/// Forward pass for every clip, keyed by clip id.
pub fn predict(
    model: &ProbeModel,
    features: &FeatureSet,
) -> Result<BTreeMap<String, Prediction>, ModelError> {
    if !features.is_empty() {
        model.check_dim(features.dim)?;
    }
    features
        .vectors
        .iter()
        .map(|v| Ok((v.clip_id.clone(), forward(model, v)?)))
        .collect()
}

/// Predicted mean score per clip and head.
pub fn predicted_means(predictions: &BTreeMap<String, Prediction>) -> BTreeMap<String, PerHead<f64>> {
    predictions
        .iter()
        .map(|(id, p)| (id.clone(), p.map(|_, d| d.mean)))
        .collect()
}
