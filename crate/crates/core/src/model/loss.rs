//! Training objective: per head, `alpha * KL(target || predicted)` plus
//! `lambda * (target mean - predicted mean)^2`, summed over the heads that
//! have a target and averaged over examples.
//!
//! The KL and squared-error parts are accumulated separately and only added
//! at the end, so `Full == KlOnly + RegressionOnly` holds bit for bit.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{forward_values, Head, ModelError, Prediction, PredictedDistribution, ProbeModel};
use crate::annotations::TargetDistribution;
use crate::features::{JoinedExample, TargetBundle};
use crate::heads::{HeadKey, NUM_BINS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// KL and mean regression.
    Full,
    /// Mean regression only ("+R").
    #[serde(alias = "r", alias = "+R", alias = "regression")]
    RegressionOnly,
    /// Distribution alignment only ("+KL").
    #[serde(alias = "kl", alias = "+KL")]
    KlOnly,
}

impl std::str::FromStr for LossMode {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        serde_json::from_value(serde_json::Value::String(s.to_owned()))
            .map_err(|_| ModelError::InvalidConfig(format!("unknown loss mode {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// Weight of the KL term.
    pub alpha: f64,
    /// Weight of the squared mean error.
    pub lambda: f64,
    pub mode: LossMode,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 0.8,
            lambda: 1.0,
            mode: LossMode::Full,
        }
    }
}

impl LossConfig {
    pub fn new(alpha: f64, lambda: f64, mode: LossMode) -> Self {
        Self {
            alpha,
            lambda,
            mode,
        }
    }

    /// Effective (KL, squared-error) weights after the mode zeroes one term.
    pub fn weights(&self) -> (f64, f64) {
        match self.mode {
            LossMode::Full => (self.alpha, self.lambda),
            LossMode::RegressionOnly => (0.0, self.lambda),
            LossMode::KlOnly => (self.alpha, 0.0),
        }
    }

    /// Weights must be finite and non-negative.
    pub fn validate_weights(&self) -> Result<(), ModelError> {
        for (name, w) in [("alpha", self.alpha), ("lambda", self.lambda)] {
            if !(w.is_finite() && w >= 0.0) {
                return Err(ModelError::InvalidConfig(format!(
                    "{name} must be finite and non-negative, got {w}"
                )));
            }
        }
        Ok(())
    }

    /// [`validate_weights`](Self::validate_weights), plus both weights
    /// positive in [`LossMode::Full`].
    pub fn validate(&self) -> Result<(), ModelError> {
        self.validate_weights()?;
        if self.mode == LossMode::Full && (self.alpha == 0.0 || self.lambda == 0.0) {
            return Err(ModelError::InvalidConfig(format!(
                "full mode needs alpha > 0 and lambda > 0, got alpha={} lambda={}",
                self.alpha, self.lambda
            )));
        }
        Ok(())
    }
}

/// Weighted loss components. `total()` is their sum.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub kl: f64,
    pub mse: f64,
}

impl LossTerms {
    pub fn total(&self) -> f64 {
        self.kl + self.mse
    }
}

// A zero weight yields exactly zero, even when the raw sum is not finite.
fn weigh(weight: f64, raw: f64) -> f64 {
    if weight == 0.0 {
        0.0
    } else {
        weight * raw
    }
}

/// `KL(target || predicted)` with `0 * ln(0 / q) = 0`. Returns the first
/// bin where `predicted` is zero but `target` is not.
pub fn kl_divergence(
    target: &[f64; NUM_BINS],
    predicted: &[f64; NUM_BINS],
) -> Result<f64, usize> {
    let mut total = 0.0;
    for (bin, (&p, &q)) in target.iter().zip(predicted).enumerate() {
        if p == 0.0 {
            continue;
        }
        if q <= 0.0 {
            return Err(bin);
        }
        total += p * (p / q).ln();
    }
    Ok(total)
}

fn head_terms(
    head: HeadKey,
    target: &TargetDistribution,
    pred: &PredictedDistribution,
) -> Result<(f64, f64), ModelError> {
    let kl = kl_divergence(&target.probs, &pred.probs)
        .map_err(|bin| ModelError::ZeroProbability { head, bin: bin + 1 })?;
    let diff = target.mean - pred.mean;
    Ok((kl, diff * diff))
}

// Unweighted (KL, squared error) sums over the heads that have a target.
fn raw_example_terms(pred: &Prediction, targets: &TargetBundle) -> Result<(f64, f64), ModelError> {
    let mut kl = 0.0;
    let mut se = 0.0;
    for (head, target) in targets.iter() {
        if let Some(target) = target {
            let (k, s) = head_terms(head, target, &pred[head])?;
            kl += k;
            se += s;
        }
    }
    Ok((kl, se))
}

/// Loss of one prediction against a (possibly partial) bundle of targets.
pub fn example_loss(
    pred: &Prediction,
    targets: &TargetBundle,
    cfg: &LossConfig,
) -> Result<LossTerms, ModelError> {
    let (w_kl, w_mse) = cfg.weights();
    let (kl, se) = raw_example_terms(pred, targets)?;
    Ok(LossTerms {
        kl: weigh(w_kl, kl),
        mse: weigh(w_mse, se),
    })
}

/// Loss over matching head sets. Errors when the two maps do not cover the
/// same heads.
pub fn loss(
    pred: &BTreeMap<HeadKey, PredictedDistribution>,
    target: &BTreeMap<HeadKey, TargetDistribution>,
    cfg: &LossConfig,
) -> Result<f64, ModelError> {
    if !pred.keys().eq(target.keys()) {
        let show = |keys: Vec<&HeadKey>| {
            keys.iter()
                .map(|k| k.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        return Err(ModelError::KeyMismatch(format!(
            "predicted [{}] vs target [{}]",
            show(pred.keys().collect()),
            show(target.keys().collect())
        )));
    }
    let (w_kl, w_mse) = cfg.weights();
    let mut kl = 0.0;
    let mut se = 0.0;
    for (head, t) in target {
        let (k, s) = head_terms(*head, t, &pred[head])?;
        kl += k;
        se += s;
    }
    Ok(LossTerms {
        kl: weigh(w_kl, kl),
        mse: weigh(w_mse, se),
    }
    .total())
}

fn check_example(model: &ProbeModel, example: &JoinedExample) -> Result<(), ModelError> {
    model.check_dim(example.features.dim())
}

/// Mean loss over `examples`.
pub fn batch_loss(
    model: &ProbeModel,
    examples: &[JoinedExample],
    cfg: &LossConfig,
) -> Result<LossTerms, ModelError> {
    let refs: Vec<&JoinedExample> = examples.iter().collect();
    mean_loss(model, &refs, cfg)
}

pub(crate) fn mean_loss(
    model: &ProbeModel,
    examples: &[&JoinedExample],
    cfg: &LossConfig,
) -> Result<LossTerms, ModelError> {
    if examples.is_empty() {
        return Err(ModelError::EmptySet("loss"));
    }
    let (w_kl, w_mse) = cfg.weights();
    let mut kl = 0.0;
    let mut se = 0.0;
    for ex in examples {
        check_example(model, ex)?;
        let pred = forward_values(model, &ex.features.values);
        let (k, s) = raw_example_terms(&pred, &ex.targets)?;
        kl += k;
        se += s;
    }
    let n = examples.len() as f64;
    Ok(LossTerms {
        kl: weigh(w_kl, kl) / n,
        mse: weigh(w_mse, se) / n,
    })
}

/// Batch-mean loss and its gradient with respect to every weight and bias.
/// The gradient has the same shape as the model.
pub fn loss_gradient(
    model: &ProbeModel,
    batch: &[JoinedExample],
    cfg: &LossConfig,
) -> Result<(LossTerms, ProbeModel), ModelError> {
    let refs: Vec<&JoinedExample> = batch.iter().collect();
    batch_gradient(model, &refs, cfg)
}

/// Gradient of one head's loss with respect to its logits.
///
/// With `p` the softmax output, `P` the target, `S = sum(P)`, and
/// `m = sum(k * p_k)` the predicted mean:
///
/// ```text
/// d KL / d z_j      = S * p_j - P_j
/// d (mu - m)^2/d z_j = -2 (mu - m) * p_j * (j - m)
/// ```
fn logit_gradient(
    target: &TargetDistribution,
    pred: &PredictedDistribution,
    w_kl: f64,
    w_mse: f64,
) -> [f64; NUM_BINS] {
    let mass: f64 = target.probs.iter().sum();
    let residual = target.mean - pred.mean;
    std::array::from_fn(|j| {
        let p = pred.probs[j];
        let kl = mass * p - target.probs[j];
        let mse = -2.0 * residual * p * ((j + 1) as f64 - pred.mean);
        weigh(w_kl, kl) + weigh(w_mse, mse)
    })
}

pub(crate) fn batch_gradient(
    model: &ProbeModel,
    batch: &[&JoinedExample],
    cfg: &LossConfig,
) -> Result<(LossTerms, ProbeModel), ModelError> {
    if batch.is_empty() {
        return Err(ModelError::EmptySet("batch"));
    }
    let dim = model.dim;
    let (w_kl, w_mse) = cfg.weights();
    let mut grad = ProbeModel::zeros(dim);
    let mut kl = 0.0;
    let mut se = 0.0;

    for ex in batch {
        check_example(model, ex)?;
        let x = &ex.features.values;
        let pred = forward_values(model, x);
        for (head, target) in ex.targets.iter() {
            let Some(target) = target else { continue };
            let p = &pred[head];
            let (k, s) = head_terms(head, target, p)?;
            kl += k;
            se += s;

            let g = logit_gradient(target, p, w_kl, w_mse);
            let acc: &mut Head = &mut grad.heads[head];
            for (bin, &gz) in g.iter().enumerate() {
                acc.bias[bin] += gz;
                let row = &mut acc.weights[bin * dim..(bin + 1) * dim];
                for (w, &xv) in row.iter_mut().zip(x) {
                    *w += gz * xv;
                }
            }
        }
    }

    let n = batch.len() as f64;
    for head in grad.heads.0.iter_mut() {
        for w in &mut head.weights {
            *w /= n;
        }
        for b in &mut head.bias {
            *b /= n;
        }
    }
    let terms = LossTerms {
        kl: weigh(w_kl, kl) / n,
        mse: weigh(w_mse, se) / n,
    };
    Ok((terms, grad))
}

/// Euclidean norm over all gradient entries.
pub fn gradient_norm(grad: &ProbeModel) -> f64 {
    grad.heads
        .0
        .iter()
        .flat_map(|h| h.weights.iter().chain(h.bias.iter()))
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt()
}
