//! Synthetic datasets with a known latent quality.
//!
//! Each system gets a latent quality per dimension; clips scatter around it;
//! raters add a perspective bias and noise and round to the 1..=10 scale.
//! Features are a fixed random linear mix of the five clip qualities, so a
//! linear probe can in principle recover them.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotations::{RatingRecord, MAX_SCORE, MIN_SCORE};
use crate::dataset::ClipEntry;
use crate::features::{FeatureSet, FeatureVector};
use crate::heads::{Dimension, HeadKey, PerHead, Perspective};

/// Range of system latent qualities.
pub const LATENT_RANGE: (f64, f64) = (2.5, 8.5);
/// Spread of clip quality around its system latent.
pub const CLIP_SD: f64 = 0.75;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth config: {0}")]
    InvalidConfig(String),
    #[error("unknown clip {0:?}")]
    UnknownClip(String),
    #[error("ground-truth file: {0}")]
    Format(#[from] serde_json::Error),
    #[error("ground-truth I/O: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_systems: usize,
    pub clips_per_system: usize,
    pub feature_dim: usize,
    pub raters_per_perspective: usize,
    /// Standard deviation of rater noise, in score points.
    pub rater_noise_sd: f64,
    /// Offset added to clip quality before rounding, per head.
    pub perspective_bias: PerHead<f64>,
    pub feature_noise_sd: f64,
    /// Fraction of records that carry a repeat-presentation score.
    pub probe_rate: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        // Experts score complexity and enjoyment lower, quality and
        // alignment higher.
        let perspective_bias = PerHead::from_fn(|k| match (k.perspective, k.dimension) {
            (Perspective::Expert, Dimension::PC) => -0.5,
            (Perspective::Expert, Dimension::CE) => -0.3,
            (Perspective::Expert, Dimension::PQ) => 0.3,
            (Perspective::Expert, Dimension::TA) => 0.3,
            _ => 0.0,
        });
        Self {
            n_systems: 30,
            clips_per_system: 70,
            feature_dim: 64,
            raters_per_perspective: 3,
            rater_noise_sd: 1.0,
            perspective_bias,
            feature_noise_sd: 0.1,
            probe_rate: 0.1,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |msg: String| Err(SynthError::InvalidConfig(msg));
        for (name, value) in [
            ("n_systems", self.n_systems),
            ("clips_per_system", self.clips_per_system),
            ("feature_dim", self.feature_dim),
            ("raters_per_perspective", self.raters_per_perspective),
        ] {
            if value == 0 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        for (name, value) in [
            ("rater_noise_sd", self.rater_noise_sd),
            ("feature_noise_sd", self.feature_noise_sd),
        ] {
            if !(value.is_finite() && value >= 0.0) {
                return bad(format!("{name} must be a finite non-negative number, got {value}"));
            }
        }
        if !(0.0..=1.0).contains(&self.probe_rate) {
            return bad(format!("probe_rate must be in [0, 1], got {}", self.probe_rate));
        }
        if let Some((k, v)) = self.perspective_bias.iter().find(|(_, v)| !v.is_finite()) {
            return bad(format!("perspective_bias for {k} is {v}"));
        }
        Ok(())
    }

    pub fn num_clips(&self) -> usize {
        self.n_systems * self.clips_per_system
    }

    /// Records per clip: every head, every rater.
    pub fn num_records(&self) -> usize {
        self.num_clips() * crate::NUM_HEADS * self.raters_per_perspective
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthGroundTruth {
    /// Latent quality per system and dimension.
    pub system_latent: BTreeMap<String, [f64; 5]>,
    /// Noise-free quality per clip and dimension, clamped to [1, 10].
    pub clip_quality: BTreeMap<String, [f64; 5]>,
    /// One row of five mixing weights per feature.
    pub mixing: Vec<[f64; 5]>,
    pub perspective_bias: PerHead<f64>,
    pub clips: Vec<ClipEntry>,
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub clips: Vec<ClipEntry>,
    pub records: Vec<RatingRecord>,
    pub features: FeatureSet,
    pub truth: SynthGroundTruth,
}

const VOCAB: &[&str] = &[
    "a", "dog", "barking", "in", "the", "distance", "rain", "falling", "on", "tin", "roof",
    "crowd", "cheering", "at", "stadium", "car", "engine", "revving", "birds", "chirping",
    "forest", "piano", "melody", "with", "soft", "strings", "footsteps", "wooden", "floor",
    "thunder", "rumbling", "while", "wind", "howls", "people", "talking", "busy", "cafe",
];

/// One rater draw: quality plus bias plus noise, rounded half away from zero
/// and clamped to the score range.
pub fn draw_score(quality: f64, bias: f64, noise: &Normal<f64>, rng: &mut impl Rng) -> u8 {
    let raw = (quality + bias + noise.sample(rng)).round();
    raw.clamp(MIN_SCORE as f64, MAX_SCORE as f64) as u8
}

fn prompt(rng: &mut impl Rng) -> String {
    let len = rng.random_range(3..=24);
    (0..len)
        .map(|_| VOCAB[rng.random_range(0..VOCAB.len())])
        .collect::<Vec<_>>()
        .join(" ")
}

/// Generates clips, ratings, features, and the ground truth behind them.
/// Output is a pure function of the config.
pub fn generate(cfg: &SynthConfig) -> Result<SynthOutput, SynthError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let clip_noise = Normal::new(0.0, CLIP_SD).expect("positive sd");
    let rater_noise = Normal::new(0.0, cfg.rater_noise_sd).expect("validated sd");
    let feature_noise = Normal::new(0.0, cfg.feature_noise_sd).expect("validated sd");

    let mixing: Vec<[f64; 5]> = (0..cfg.feature_dim)
        .map(|_| std::array::from_fn(|_| rng.random_range(-1.0..=1.0)))
        .collect();

    let mut clips = Vec::with_capacity(cfg.num_clips());
    let mut system_latent = BTreeMap::new();
    let mut clip_quality = BTreeMap::new();
    let mut vectors = Vec::with_capacity(cfg.num_clips());
    let mut records = Vec::with_capacity(cfg.num_records());

    for s in 0..cfg.n_systems {
        let system_id = format!("sys{s:03}");
        let latent: [f64; 5] = std::array::from_fn(|_| rng.random_range(LATENT_RANGE.0..=LATENT_RANGE.1));
        for c in 0..cfg.clips_per_system {
            let clip_id = format!("{system_id}-clip{c:04}");
            let quality: [f64; 5] =
                std::array::from_fn(|d| (latent[d] + clip_noise.sample(&mut rng)).clamp(1.0, 10.0));
            let values = mixing
                .iter()
                .map(|row| {
                    row.iter().zip(&quality).map(|(m, q)| m * q).sum::<f64>()
                        + feature_noise.sample(&mut rng)
                })
                .collect();
            let prompt_text = prompt(&mut rng);

            for head in HeadKey::ALL {
                let q = quality[head.dimension.index()];
                let bias = cfg.perspective_bias[head];
                let prefix = match head.perspective {
                    Perspective::Expert => 'e',
                    Perspective::NonExpert => 'n',
                };
                for r in 1..=cfg.raters_per_perspective {
                    let score = draw_score(q, bias, &rater_noise, &mut rng);
                    let probe_score = (rng.random::<f64>() < cfg.probe_rate)
                        .then(|| draw_score(q, bias, &rater_noise, &mut rng));
                    records.push(RatingRecord {
                        clip_id: clip_id.clone(),
                        system_id: system_id.clone(),
                        dimension: head.dimension,
                        perspective: head.perspective,
                        rater_id: format!("{prefix}{r}"),
                        score,
                        probe_score,
                    });
                }
            }

            vectors.push(FeatureVector::new(clip_id.clone(), values));
            clip_quality.insert(clip_id.clone(), quality);
            clips.push(ClipEntry {
                clip_id,
                system_id: system_id.clone(),
                prompt_text,
            });
        }
        system_latent.insert(system_id, latent);
    }

    let features = FeatureSet::new(cfg.feature_dim, vectors).expect("generated ids are unique");
    let truth = SynthGroundTruth {
        system_latent,
        clip_quality,
        mixing,
        perspective_bias: cfg.perspective_bias,
        clips: clips.clone(),
    };
    Ok(SynthOutput {
        clips,
        records,
        features,
        truth,
    })
}

/// Noise-free expected rating: clip quality plus perspective bias.
pub fn oracle_scores(truth: &SynthGroundTruth, clip_id: &str) -> Result<PerHead<f64>, SynthError> {
    let quality = truth
        .clip_quality
        .get(clip_id)
        .ok_or_else(|| SynthError::UnknownClip(clip_id.to_owned()))?;
    Ok(PerHead::from_fn(|k| {
        quality[k.dimension.index()] + truth.perspective_bias[k]
    }))
}

pub fn write_truth<W: Write>(truth: &SynthGroundTruth, mut sink: W) -> Result<(), SynthError> {
    serde_json::to_writer_pretty(&mut sink, truth)?;
    sink.write_all(b"\n")?;
    Ok(())
}

pub fn read_truth<R: Read>(source: R) -> Result<SynthGroundTruth, SynthError> {
    Ok(serde_json::from_reader(source)?)
}
