//! Mini-batch gradient descent with best-validation snapshot selection.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{batch_gradient, mean_loss, LossConfig};
use super::{ModelError, ProbeModel};
use crate::features::JoinedExample;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Heavy-ball momentum coefficient; 0 is plain gradient descent.
    pub momentum: f64,
    /// Optimize on z-scored features (statistics from the training set) and
    /// fold the scaling back into the returned weights.
    pub standardize: bool,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            learning_rate: 0.05,
            batch_size: 32,
            seed: 0,
            momentum: 0.0,
            standardize: true,
            loss: LossConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.epochs == 0 {
            return Err(ModelError::InvalidConfig("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(ModelError::InvalidConfig("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(ModelError::InvalidConfig(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(ModelError::InvalidConfig(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        self.loss.validate_weights()
    }
}

/// Losses after one epoch. Epoch 0 is the initial model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation loss.
    pub model: ProbeModel,
    /// 1-based epoch the model was taken from.
    pub best_epoch: usize,
    /// One record per epoch, in order.
    pub history: Vec<EpochRecord>,
    /// Losses of the freshly initialized model.
    pub initial: EpochRecord,
}

/// Earliest 1-based epoch with the lowest loss.
pub fn select_best_epoch(val_losses: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &loss) in val_losses.iter().enumerate() {
        if best.is_none_or(|(_, b)| loss < b) {
            best = Some((i + 1, loss));
        }
    }
    best.map(|(epoch, _)| epoch)
}

/// Per-feature affine map `z = (x - mean) / scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    /// Mean and population standard deviation of each feature. Constant
    /// features keep a scale of 1.
    pub fn fit(examples: &[JoinedExample]) -> Self {
        let dim = examples.first().map_or(0, |e| e.features.dim());
        let n = examples.len() as f64;
        let mut mean = vec![0.0; dim];
        for e in examples {
            for (m, v) in mean.iter_mut().zip(&e.features.values) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for e in examples {
            for ((s, v), m) in var.iter_mut().zip(&e.features.values).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let scale = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 0.0 && sd.is_finite() {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, scale }
    }

    pub fn apply(&self, example: &JoinedExample) -> JoinedExample {
        let mut out = example.clone();
        for ((v, m), s) in out.features.values.iter_mut().zip(&self.mean).zip(&self.scale) {
            *v = (*v - m) / s;
        }
        out
    }

    /// Rewrites a model over standardized inputs as the equivalent model
    /// over raw inputs.
    pub fn fold(&self, model: &ProbeModel) -> ProbeModel {
        let mut out = model.clone();
        let dim = model.dim;
        for head in out.heads.0.iter_mut() {
            for k in 0..crate::NUM_BINS {
                let row = &mut head.weights[k * dim..(k + 1) * dim];
                let mut shift = 0.0;
                for ((w, m), s) in row.iter_mut().zip(&self.mean).zip(&self.scale) {
                    *w /= s;
                    shift += *w * m;
                }
                head.bias[k] -= shift;
            }
        }
        out
    }
}

/// Stepwise optimizer state. [`train`] drives one of these; it is public so
/// callers can inspect parameters between epochs.
pub struct Trainer {
    cfg: TrainConfig,
    examples: Vec<JoinedExample>,
    standardizer: Standardizer,
    model: ProbeModel,
    velocity: Option<ProbeModel>,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    epoch: usize,
}

impl Trainer {
    /// Initializes the model from `cfg.seed`. The same RNG stream then
    /// drives the per-epoch shuffles.
    pub fn new(examples: &[JoinedExample], cfg: TrainConfig) -> Result<Self, ModelError> {
        cfg.validate()?;
        let first = examples.first().ok_or(ModelError::EmptySet("training"))?;
        let dim = first.features.dim();
        if dim == 0 {
            return Err(ModelError::InvalidConfig("feature dimension is zero".into()));
        }
        check_dims(examples, dim)?;

        let standardizer = if cfg.standardize {
            Standardizer::fit(examples)
        } else {
            Standardizer::identity(dim)
        };
        let examples = if cfg.standardize {
            examples.iter().map(|e| standardizer.apply(e)).collect()
        } else {
            examples.to_vec()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let model = ProbeModel::init_with(dim, &mut rng);
        let velocity = (cfg.momentum > 0.0).then(|| ProbeModel::zeros(dim));
        let order = (0..examples.len()).collect();
        Ok(Self {
            cfg,
            examples,
            standardizer,
            model,
            velocity,
            rng,
            order,
            epoch: 0,
        })
    }

    /// Current parameters, expressed over raw features.
    pub fn model(&self) -> ProbeModel {
        if self.cfg.standardize {
            self.standardizer.fold(&self.model)
        } else {
            self.model.clone()
        }
    }

    pub fn standardizer(&self) -> &Standardizer {
        &self.standardizer
    }

    /// Number of completed epochs.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn run_epoch(&mut self) -> Result<(), ModelError> {
        self.epoch += 1;
        self.order.shuffle(&mut self.rng);
        let lr = self.cfg.learning_rate;
        let mut batch: Vec<&JoinedExample> = Vec::with_capacity(self.cfg.batch_size);

        for (batch_idx, chunk) in self.order.chunks(self.cfg.batch_size).enumerate() {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| &self.examples[i]));
            let (terms, grad) = batch_gradient(&self.model, &batch, &self.cfg.loss)?;
            if !terms.total().is_finite() {
                return Err(ModelError::NonFiniteLoss {
                    epoch: self.epoch,
                    context: format!("batch {}", batch_idx + 1),
                });
            }

            let step = match &mut self.velocity {
                Some(v) => {
                    for (vh, gh) in v.heads.0.iter_mut().zip(grad.heads.0.iter()) {
                        for (vw, gw) in vh.weights.iter_mut().zip(&gh.weights) {
                            *vw = self.cfg.momentum * *vw + gw;
                        }
                        for (vb, gb) in vh.bias.iter_mut().zip(&gh.bias) {
                            *vb = self.cfg.momentum * *vb + gb;
                        }
                    }
                    &*v
                }
                None => &grad,
            };
            for (mh, sh) in self.model.heads.0.iter_mut().zip(step.heads.0.iter()) {
                for (w, g) in mh.weights.iter_mut().zip(&sh.weights) {
                    *w -= lr * g;
                }
                for (b, g) in mh.bias.iter_mut().zip(&sh.bias) {
                    *b -= lr * g;
                }
            }
        }
        Ok(())
    }
}

fn check_dims(examples: &[JoinedExample], dim: usize) -> Result<(), ModelError> {
    match examples.iter().find(|e| e.features.dim() != dim) {
        Some(e) => Err(ModelError::DimensionMismatch {
            expected: dim,
            found: e.features.dim(),
        }),
        None => Ok(()),
    }
}

fn checked_loss(
    model: &ProbeModel,
    examples: &[&JoinedExample],
    cfg: &LossConfig,
    epoch: usize,
    which: &str,
) -> Result<f64, ModelError> {
    let total = mean_loss(model, examples, cfg)?.total();
    if total.is_finite() {
        Ok(total)
    } else {
        Err(ModelError::NonFiniteLoss {
            epoch,
            context: format!("{which} loss"),
        })
    }
}

/// Trains for `cfg.epochs` epochs and returns the snapshot with the lowest
/// validation loss (earliest on ties).
///
/// Runs on one thread with a fixed summation order, so identical inputs and
/// config give bit-identical results.
pub fn train(
    train_set: &[JoinedExample],
    val_set: &[JoinedExample],
    cfg: &TrainConfig,
) -> Result<TrainOutcome, ModelError> {
    if val_set.is_empty() {
        return Err(ModelError::EmptySet("validation"));
    }
    let mut trainer = Trainer::new(train_set, *cfg)?;
    check_dims(val_set, trainer.model.dim)?;
    // Losses are measured in the optimizer's input space; folding the
    // scaling back changes them only by rounding.
    let val_std: Vec<JoinedExample> = if cfg.standardize {
        val_set.iter().map(|e| trainer.standardizer.apply(e)).collect()
    } else {
        val_set.to_vec()
    };
    let train_std = trainer.examples.clone();
    let train_refs: Vec<&JoinedExample> = train_std.iter().collect();
    let val_refs: Vec<&JoinedExample> = val_std.iter().collect();

    let initial = EpochRecord {
        epoch: 0,
        train_loss: checked_loss(&trainer.model, &train_refs, &cfg.loss, 0, "training")?,
        val_loss: checked_loss(&trainer.model, &val_refs, &cfg.loss, 0, "validation")?,
    };

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, ProbeModel)> = None;
    for _ in 0..cfg.epochs {
        trainer.run_epoch()?;
        let epoch = trainer.epoch;
        let record = EpochRecord {
            epoch,
            train_loss: checked_loss(&trainer.model, &train_refs, &cfg.loss, epoch, "training")?,
            val_loss: checked_loss(&trainer.model, &val_refs, &cfg.loss, epoch, "validation")?,
        };
        if best.as_ref().is_none_or(|(_, b, _)| record.val_loss < *b) {
            best = Some((epoch, record.val_loss, trainer.model()));
        }
        history.push(record);
    }

    let (best_epoch, _, model) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        model,
        best_epoch,
        history,
        initial,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn best_epoch_is_lowest_then_earliest() {
        assert_eq!(select_best_epoch(&[3.0, 2.0, 2.5]), Some(2));
        assert_eq!(select_best_epoch(&[1.0, 2.0, 1.0]), Some(1));
        assert_eq!(select_best_epoch(&[4.0]), Some(1));
        assert_eq!(select_best_epoch(&[]), None);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = [
            TrainConfig {
                epochs: 0,
                ..TrainConfig::default()
            },
            TrainConfig {
                batch_size: 0,
                ..TrainConfig::default()
            },
            TrainConfig {
                learning_rate: 0.0,
                ..TrainConfig::default()
            },
            TrainConfig {
                momentum: 1.0,
                ..TrainConfig::default()
            },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
    }

    fn example(id: &str, values: Vec<f64>) -> JoinedExample {
        JoinedExample {
            features: crate::features::FeatureVector::new(id, values),
            targets: Default::default(),
        }
    }

    #[test]
    fn folded_model_matches_standardized_inputs() {
        let examples = vec![
            example("a", vec![1.0, 10.0, 3.0]),
            example("b", vec![2.0, -4.0, 3.0]),
            example("c", vec![7.0, 0.5, 3.0]),
        ];
        let std = Standardizer::fit(&examples);
        assert_eq!(std.scale[2], 1.0);
        let model = ProbeModel::init(3, 9);
        let folded = std.fold(&model);
        for e in &examples {
            let direct = super::super::forward_values(&model, &std.apply(e).features.values);
            let raw = super::super::forward_values(&folded, &e.features.values);
            for (k, d) in direct.iter() {
                for (p, q) in d.probs.iter().zip(&raw[k].probs) {
                    assert!((p - q).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn empty_sets_rejected() {
        let err = train(&[], &[], &TrainConfig::default()).unwrap_err();
        assert!(matches!(err, ModelError::EmptySet(_)));
    }
}
