//! Training loop behaviour: convergence, determinism, head independence,
//! and equivalence of the loss-mode ablations.

use aeval::annotations::TargetDistribution;
use aeval::features::{FeatureVector, JoinedExample};
use aeval::model::{
    batch_loss, loss_gradient, gradient_norm, train, LossConfig, LossMode, ProbeModel, TrainConfig,
    Trainer,
};
use aeval::{HeadKey, PerHead};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Kernel distribution centred on a real-valued score. Its logits are
/// `k*y - k^2/2`, so a linear head reproduces it exactly when `y` is linear
/// in the features.
fn kernel(y: f64) -> [f64; 10] {
    kernel_with_width(y, 1.0)
}

fn kernel_with_width(y: f64, sigma: f64) -> [f64; 10] {
    let mut p: [f64; 10] =
        std::array::from_fn(|k| (-(((k + 1) as f64 - y) / sigma).powi(2) / 2.0).exp());
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= s);
    p
}

/// Targets are deterministic functions of the features.
fn separable(n: usize, dim: usize, seed: u64) -> Vec<JoinedExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coef: Vec<[f64; 8]> = HeadKey::ALL
        .iter()
        .map(|_| std::array::from_fn(|_| rng.random_range(-0.6..0.6)))
        .collect();
    (0..n)
        .map(|i| {
            let id = format!("c{i:04}");
            let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let targets = PerHead::from_fn(|k: HeadKey| {
                let c = &coef[k.index()];
                let y = 5.5 + x.iter().zip(c).map(|(a, b)| a * b).sum::<f64>();
                Some(TargetDistribution::new(&id, k, kernel(y)))
            });
            JoinedExample {
                features: FeatureVector::new(id, x),
                targets,
            }
        })
        .collect()
}

#[test]
fn separable_data_is_learned() {
    let data = separable(4000, 6, 1);
    let (train_set, val_set) = data.split_at(3500);
    let cfg = TrainConfig::default();
    let out = train(train_set, val_set, &cfg).unwrap();
    assert_eq!(out.history.len(), 10);
    let last = out.history.last().unwrap().train_loss;
    assert!(
        last < 0.1 * out.initial.train_loss,
        "final {last} vs initial {}",
        out.initial.train_loss
    );
}

#[test]
fn single_example_fit_reaches_a_stationary_point() {
    // A wide kernel keeps every bin's mass well away from zero, so plain
    // gradient descent converges quickly.
    let mut data = separable(1, 3, 4);
    for (k, t) in data[0].targets.0.iter_mut().enumerate() {
        let t = t.as_mut().unwrap();
        *t = TargetDistribution::new(&t.clip_id, HeadKey::ALL[k], kernel_with_width(t.mean, 3.0));
    }
    let mut trainer = Trainer::new(
        &data,
        TrainConfig {
            batch_size: 1,
            learning_rate: 0.2,
            momentum: 0.9,
            standardize: false,
            ..TrainConfig::default()
        },
    )
    .unwrap();
    for _ in 0..4000 {
        trainer.run_epoch().unwrap();
    }
    let model = trainer.model();
    let (terms, grad) = loss_gradient(&model, &data, &LossConfig::default()).unwrap();
    assert!(terms.total() < 1e-8, "loss {}", terms.total());
    assert!(gradient_norm(&grad) < 1e-6, "gradient norm {}", gradient_norm(&grad));
}

#[test]
fn training_is_bitwise_deterministic() {
    let data = separable(200, 5, 2);
    let (a, b) = data.split_at(160);
    let cfg = TrainConfig {
        seed: 17,
        momentum: 0.5,
        ..TrainConfig::default()
    };
    let first = train(a, b, &cfg).unwrap();
    let second = train(a, b, &cfg).unwrap();
    assert_eq!(first.history, second.history);
    assert_eq!(first.model, second.model);
    assert_eq!(first.best_epoch, second.best_epoch);
    let other = train(a, b, &TrainConfig { seed: 18, ..cfg }).unwrap();
    assert_ne!(first.model, other.model);
}

#[test]
fn perturbing_one_head_leaves_the_others_alone() {
    let data = separable(120, 4, 3);
    let target_head = HeadKey::ALL[6];
    let mut perturbed = data.clone();
    for e in &mut perturbed {
        let t = e.targets[target_head].as_mut().unwrap();
        *t = TargetDistribution::new(&t.clip_id, target_head, kernel(9.0 - t.mean / 2.0));
    }
    let cfg = TrainConfig::default();
    let mut a = Trainer::new(&data, cfg).unwrap();
    let mut b = Trainer::new(&perturbed, cfg).unwrap();
    for _ in 0..3 {
        a.run_epoch().unwrap();
        b.run_epoch().unwrap();
    }
    let (ma, mb) = (a.model(), b.model());
    for key in HeadKey::ALL {
        if key == target_head {
            assert_ne!(ma.heads[key], mb.heads[key]);
        } else {
            assert_eq!(ma.heads[key], mb.heads[key], "{key}");
        }
    }
}

#[test]
fn regression_mode_equals_full_with_zero_alpha() {
    let data = separable(150, 4, 5);
    let (a, b) = data.split_at(120);
    let plus_r = TrainConfig {
        loss: LossConfig::new(0.8, 1.0, LossMode::RegressionOnly),
        ..TrainConfig::default()
    };
    let full_zero = TrainConfig {
        loss: LossConfig::new(0.0, 1.0, LossMode::Full),
        ..TrainConfig::default()
    };
    let x = train(a, b, &plus_r).unwrap();
    let y = train(a, b, &full_zero).unwrap();
    assert_eq!(x.history, y.history);
    assert_eq!(x.model, y.model);
}

#[test]
fn loss_decomposes_exactly_on_random_models() {
    let data = separable(40, 4, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..50 {
        let model = ProbeModel::init(4, rng.random());
        let (alpha, lambda) = (rng.random_range(0.0..3.0), rng.random_range(0.0..3.0));
        let total = |mode| batch_loss(&model, &data, &LossConfig::new(alpha, lambda, mode)).unwrap().total();
        assert_eq!(
            total(LossMode::Full),
            total(LossMode::KlOnly) + total(LossMode::RegressionOnly)
        );
    }
}

#[test]
fn one_epoch_returns_the_only_snapshot() {
    let data = separable(80, 3, 7);
    let (a, b) = data.split_at(60);
    let cfg = TrainConfig {
        epochs: 1,
        ..TrainConfig::default()
    };
    let out = train(a, b, &cfg).unwrap();
    assert_eq!(out.best_epoch, 1);
    let mut trainer = Trainer::new(a, cfg).unwrap();
    trainer.run_epoch().unwrap();
    assert_eq!(out.model, trainer.model());
}

#[test]
fn dimension_mismatch_between_sets_is_rejected() {
    let a = separable(10, 3, 8);
    let b = separable(10, 4, 8);
    assert!(train(&a, &b, &TrainConfig::default()).is_err());
}
