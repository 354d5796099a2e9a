//! Train/validation/test splitting with whole generation systems held out.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{self, Read, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotations::RatingRecord;

#[derive(Debug, Error)]
pub enum SplitError {
    #[error("no clips to split")]
    Empty,
    #[error("system holdout needs at least 3 systems, found {0}")]
    TooFewSystems(usize),
    #[error("invalid split spec: {0}")]
    InvalidSpec(String),
    #[error("duplicate clip id {0}")]
    DuplicateClip(String),
    #[error("clip {0} has an empty system id")]
    EmptySystem(String),
    #[error("split file: {0}")]
    Format(#[from] serde_json::Error),
    #[error("split I/O: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipEntry {
    pub clip_id: String,
    pub system_id: String,
    #[serde(default)]
    pub prompt_text: String,
}

/// Distinct clips referenced by a manifest, in first-seen order. Prompt
/// text is left empty.
pub fn clips_from_records(records: &[RatingRecord]) -> Vec<ClipEntry> {
    let mut seen = BTreeSet::new();
    records
        .iter()
        .filter(|r| seen.insert(r.clip_id.as_str()))
        .map(|r| ClipEntry {
            clip_id: r.clip_id.clone(),
            system_id: r.system_id.clone(),
            prompt_text: String::new(),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    SystemHoldout,
    ClipRandom,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    /// Clip-count fractions for (train, val, test).
    pub ratios: [f64; 3],
    pub seed: u64,
    pub mode: SplitMode,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            ratios: [0.8, 0.1, 0.1],
            seed: 0,
            mode: SplitMode::SystemHoldout,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<(), SplitError> {
        if self.ratios.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(SplitError::InvalidSpec(format!(
                "ratios must be positive, got {:?}",
                self.ratios
            )));
        }
        let total: f64 = self.ratios.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(SplitError::InvalidSpec(format!(
                "ratios must sum to 1, got {total}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bucket {
    Train,
    Val,
    Test,
}

impl Bucket {
    pub const ALL: [Bucket; 3] = [Bucket::Train, Bucket::Val, Bucket::Test];
}

impl fmt::Display for Bucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Bucket::Train => "train",
            Bucket::Val => "val",
            Bucket::Test => "test",
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: BTreeSet<String>,
    pub val: BTreeSet<String>,
    pub test: BTreeSet<String>,
}

impl Split {
    pub fn bucket(&self, bucket: Bucket) -> &BTreeSet<String> {
        match bucket {
            Bucket::Train => &self.train,
            Bucket::Val => &self.val,
            Bucket::Test => &self.test,
        }
    }

    fn bucket_mut(&mut self, bucket: Bucket) -> &mut BTreeSet<String> {
        match bucket {
            Bucket::Train => &mut self.train,
            Bucket::Val => &mut self.val,
            Bucket::Test => &mut self.test,
        }
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn check_clips(clips: &[ClipEntry]) -> Result<(), SplitError> {
    if clips.is_empty() {
        return Err(SplitError::Empty);
    }
    let mut seen = BTreeSet::new();
    for c in clips {
        if c.system_id.is_empty() {
            return Err(SplitError::EmptySystem(c.clip_id.clone()));
        }
        if !seen.insert(c.clip_id.as_str()) {
            return Err(SplitError::DuplicateClip(c.clip_id.clone()));
        }
    }
    Ok(())
}

/// Splits clips into train/val/test. Deterministic in `(clips, spec)` and
/// independent of the order of `clips`.
///
/// In [`SplitMode::SystemHoldout`], systems are visited in a seed-shuffled
/// order and each whole system goes to the bucket whose clip count is
/// furthest below its target; ties go to the earlier bucket. The achieved
/// train fraction is then within one system's clip share of the requested
/// ratio. Val or test can end up empty when a few systems hold most clips.
///
/// In [`SplitMode::ClipRandom`], clips are shuffled and cut at the rounded
/// ratio boundaries.
pub fn split(clips: &[ClipEntry], spec: &SplitSpec) -> Result<Split, SplitError> {
    spec.validate()?;
    check_clips(clips)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    match spec.mode {
        SplitMode::SystemHoldout => {
            let mut systems: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
            for c in clips {
                systems
                    .entry(c.system_id.as_str())
                    .or_default()
                    .push(c.clip_id.as_str());
            }
            if systems.len() < 3 {
                return Err(SplitError::TooFewSystems(systems.len()));
            }

            let mut order: Vec<(&str, Vec<&str>)> = systems.into_iter().collect();
            order.shuffle(&mut rng);

            let total = clips.len() as f64;
            let targets = spec.ratios.map(|r| r * total);
            let mut filled = [0usize; 3];
            let mut out = Split::default();
            for (_, members) in order {
                let mut best = 0;
                for b in 1..3 {
                    let deficit = targets[b] - filled[b] as f64;
                    // Tolerance keeps ties exact despite ratio * total rounding.
                    if deficit > targets[best] - filled[best] as f64 + 1e-9 {
                        best = b;
                    }
                }
                filled[best] += members.len();
                out.bucket_mut(Bucket::ALL[best])
                    .extend(members.into_iter().map(str::to_owned));
            }
            Ok(out)
        }
        SplitMode::ClipRandom => {
            let mut ids: Vec<&str> = clips.iter().map(|c| c.clip_id.as_str()).collect();
            ids.sort_unstable();
            ids.shuffle(&mut rng);
            let n = ids.len();
            let n_train = ((spec.ratios[0] * n as f64).round() as usize).min(n);
            let n_val = ((spec.ratios[1] * n as f64).round() as usize).min(n - n_train);
            let mut out = Split::default();
            for (i, id) in ids.into_iter().enumerate() {
                let bucket = if i < n_train {
                    Bucket::Train
                } else if i < n_train + n_val {
                    Bucket::Val
                } else {
                    Bucket::Test
                };
                out.bucket_mut(bucket).insert(id.to_owned());
            }
            Ok(out)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SplitViolation {
    /// A clip sits in more than one bucket.
    Overlap { clip_id: String, buckets: Vec<Bucket> },
    /// A clip from the collection is in no bucket.
    Missing { clip_id: String },
    /// A bucket holds a clip that is not in the collection.
    Unknown { clip_id: String, bucket: Bucket },
    /// A system's clips are spread over several buckets.
    SystemLeak { system_id: String, buckets: Vec<Bucket> },
}

impl fmt::Display for SplitViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names = |bs: &[Bucket]| bs.iter().map(Bucket::to_string).collect::<Vec<_>>().join(", ");
        match self {
            SplitViolation::Overlap { clip_id, buckets } => {
                write!(f, "clip {clip_id} appears in several buckets: {}", names(buckets))
            }
            SplitViolation::Missing { clip_id } => write!(f, "clip {clip_id} is not assigned"),
            SplitViolation::Unknown { clip_id, bucket } => {
                write!(f, "clip {clip_id} in {bucket} is not in the collection")
            }
            SplitViolation::SystemLeak { system_id, buckets } => {
                write!(f, "system {system_id} leaks across {}", names(buckets))
            }
        }
    }
}

/// Lists every way `split` breaks the split invariants for `clips`. Empty
/// means valid.
pub fn verify_split(split: &Split, clips: &[ClipEntry], mode: SplitMode) -> Vec<SplitViolation> {
    let mut violations = Vec::new();
    let mut placement: BTreeMap<&str, Vec<Bucket>> = BTreeMap::new();
    for bucket in Bucket::ALL {
        for id in split.bucket(bucket) {
            placement.entry(id.as_str()).or_default().push(bucket);
        }
    }
    let system_of: BTreeMap<&str, &str> = clips
        .iter()
        .map(|c| (c.clip_id.as_str(), c.system_id.as_str()))
        .collect();

    for (&clip_id, buckets) in &placement {
        if buckets.len() > 1 {
            violations.push(SplitViolation::Overlap {
                clip_id: clip_id.to_owned(),
                buckets: buckets.clone(),
            });
        }
        if !system_of.contains_key(clip_id) {
            for &bucket in buckets {
                violations.push(SplitViolation::Unknown {
                    clip_id: clip_id.to_owned(),
                    bucket,
                });
            }
        }
    }
    for c in clips {
        if !placement.contains_key(c.clip_id.as_str()) {
            violations.push(SplitViolation::Missing {
                clip_id: c.clip_id.clone(),
            });
        }
    }

    if mode == SplitMode::SystemHoldout {
        let mut system_buckets: BTreeMap<&str, BTreeSet<Bucket>> = BTreeMap::new();
        for (&clip_id, buckets) in &placement {
            if let Some(&system) = system_of.get(clip_id) {
                system_buckets.entry(system).or_default().extend(buckets);
            }
        }
        for (system, buckets) in system_buckets {
            if buckets.len() > 1 {
                violations.push(SplitViolation::SystemLeak {
                    system_id: system.to_owned(),
                    buckets: buckets.into_iter().collect(),
                });
            }
        }
    }
    violations
}

/// A split together with the spec that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitFile {
    pub spec: SplitSpec,
    #[serde(flatten)]
    pub split: Split,
}

pub fn write_split<W: Write>(file: &SplitFile, mut sink: W) -> Result<(), SplitError> {
    serde_json::to_writer_pretty(&mut sink, file)?;
    sink.write_all(b"\n")?;
    Ok(())
}

pub fn read_split<R: Read>(source: R) -> Result<SplitFile, SplitError> {
    Ok(serde_json::from_reader(source)?)
}
