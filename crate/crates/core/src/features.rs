//! AEVF feature files: one fused (prompt, audio) embedding per clip.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! 0..4    magic "AEVF"
//! 4..8    version (u32) = 1
//! 8..12   dim (u32)
//! 12..16  count (u32)
//! then `count` records:
//!         clip_id byte length L (u32), L bytes UTF-8 clip_id,
//!         dim x f32 (IEEE-754, little-endian)
//! ```
//!
//! Values are stored as `f32` and widened to `f64` on read.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::{self, Read, Write};

use thiserror::Error;

use crate::annotations::TargetDistribution;
use crate::heads::PerHead;

pub const FEATURE_MAGIC: [u8; 4] = *b"AEVF";
pub const FEATURE_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 16;

/// Default ceiling on `count * dim` accepted from a file header.
pub const DEFAULT_MAX_VALUES: u64 = 1 << 28;

/// Longest clip id accepted by the reader.
const MAX_CLIP_ID_LEN: u32 = 1 << 16;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("bad magic {0:?}, expected \"AEVF\"")]
    BadMagic([u8; 4]),
    #[error("unsupported feature file version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated feature stream: {0}")]
    Truncated(String),
    #[error("header declares {declared} records but {trailing_bytes} bytes follow the last one")]
    CountMismatch { declared: u32, trailing_bytes: usize },
    #[error("non-finite value in clip {clip_id} at index {index}")]
    NonFinite { clip_id: String, index: usize },
    #[error("clip {clip_id} has dimension {found}, expected {expected}")]
    DimensionMismatch {
        clip_id: String,
        expected: usize,
        found: usize,
    },
    #[error("duplicate clip id {0}")]
    DuplicateClip(String),
    #[error("invalid feature file: {0}")]
    Invalid(String),
    #[error("header declares {count} x {dim} values, above the limit of {limit}")]
    TooLarge { count: u32, dim: u32, limit: u64 },
    #[error("feature I/O: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub clip_id: String,
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn new(clip_id: impl Into<String>, values: Vec<f64>) -> Self {
        Self {
            clip_id: clip_id.into(),
            values,
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureFileHeader {
    pub magic: [u8; 4],
    pub version: u32,
    pub dim: u32,
    pub count: u32,
}

impl FeatureFileHeader {
    fn to_bytes(self) -> [u8; HEADER_LEN] {
        let mut out = [0u8; HEADER_LEN];
        out[0..4].copy_from_slice(&self.magic);
        out[4..8].copy_from_slice(&self.version.to_le_bytes());
        out[8..12].copy_from_slice(&self.dim.to_le_bytes());
        out[12..16].copy_from_slice(&self.count.to_le_bytes());
        out
    }
}

/// Vectors of one shared dimension, in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub dim: usize,
    pub vectors: Vec<FeatureVector>,
}

impl FeatureSet {
    /// Checks that every vector has dimension `dim`, values are finite, and
    /// clip ids are unique.
    pub fn new(dim: usize, vectors: Vec<FeatureVector>) -> Result<Self, FeatureError> {
        if dim == 0 {
            return Err(FeatureError::Invalid("dimension must be at least 1".into()));
        }
        let mut seen = HashSet::with_capacity(vectors.len());
        for v in &vectors {
            if v.dim() != dim {
                return Err(FeatureError::DimensionMismatch {
                    clip_id: v.clip_id.clone(),
                    expected: dim,
                    found: v.dim(),
                });
            }
            if let Some(index) = v.values.iter().position(|x| !x.is_finite()) {
                return Err(FeatureError::NonFinite {
                    clip_id: v.clip_id.clone(),
                    index,
                });
            }
            if !seen.insert(v.clip_id.as_str()) {
                return Err(FeatureError::DuplicateClip(v.clip_id.clone()));
            }
        }
        Ok(Self { dim, vectors })
    }

    /// Builds a set taking the dimension from the first vector.
    pub fn from_vectors(vectors: Vec<FeatureVector>) -> Result<Self, FeatureError> {
        let dim = vectors
            .first()
            .map(FeatureVector::dim)
            .ok_or_else(|| FeatureError::Invalid("cannot infer dimension of an empty set".into()))?;
        Self::new(dim, vectors)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, clip_id: &str) -> Option<&FeatureVector> {
        self.vectors.iter().find(|v| v.clip_id == clip_id)
    }

    /// Keeps only clips in `ids`, preserving order.
    pub fn subset(&self, ids: &BTreeSet<String>) -> FeatureSet {
        FeatureSet {
            dim: self.dim,
            vectors: self
                .vectors
                .iter()
                .filter(|v| ids.contains(&v.clip_id))
                .cloned()
                .collect(),
        }
    }
}

/// Writes a feature file and returns the number of bytes written.
///
/// `dim` is declared even when `vectors` is empty.
pub fn write_features<W: Write>(
    dim: usize,
    vectors: &[FeatureVector],
    mut sink: W,
) -> Result<u64, FeatureError> {
    if dim == 0 || dim > u32::MAX as usize {
        return Err(FeatureError::Invalid(format!("unrepresentable dimension {dim}")));
    }
    let count = u32::try_from(vectors.len())
        .map_err(|_| FeatureError::Invalid("more than u32::MAX vectors".into()))?;
    let mut seen = HashSet::with_capacity(vectors.len());
    for v in vectors {
        if v.dim() != dim {
            return Err(FeatureError::DimensionMismatch {
                clip_id: v.clip_id.clone(),
                expected: dim,
                found: v.dim(),
            });
        }
        if !seen.insert(v.clip_id.as_str()) {
            return Err(FeatureError::DuplicateClip(v.clip_id.clone()));
        }
        if let Some(index) = v.values.iter().position(|x| !(*x as f32).is_finite()) {
            return Err(FeatureError::NonFinite {
                clip_id: v.clip_id.clone(),
                index,
            });
        }
    }

    let header = FeatureFileHeader {
        magic: FEATURE_MAGIC,
        version: FEATURE_VERSION,
        dim: dim as u32,
        count,
    };
    sink.write_all(&header.to_bytes())?;
    let mut written = HEADER_LEN as u64;

    let mut buf = Vec::with_capacity(4 * dim + 64);
    for v in vectors {
        buf.clear();
        let id = v.clip_id.as_bytes();
        let id_len = u32::try_from(id.len())
            .map_err(|_| FeatureError::Invalid(format!("clip id too long: {}", v.clip_id)))?;
        buf.extend_from_slice(&id_len.to_le_bytes());
        buf.extend_from_slice(id);
        for &x in &v.values {
            buf.extend_from_slice(&(x as f32).to_le_bytes());
        }
        sink.write_all(&buf)?;
        written += buf.len() as u64;
    }
    sink.flush()?;
    Ok(written)
}

pub fn write_feature_set<W: Write>(set: &FeatureSet, sink: W) -> Result<u64, FeatureError> {
    write_features(set.dim, &set.vectors, sink)
}

#[derive(Debug, Clone, Copy)]
pub struct ReadOptions {
    /// Upper bound on `count * dim` from the header.
    pub max_values: u64,
}

impl Default for ReadOptions {
    fn default() -> Self {
        Self {
            max_values: DEFAULT_MAX_VALUES,
        }
    }
}

fn read_exact_or<R: Read>(source: &mut R, buf: &mut [u8], what: &str) -> Result<(), FeatureError> {
    source.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => FeatureError::Truncated(what.to_string()),
        _ => FeatureError::Io(e),
    })
}

fn read_u32<R: Read>(source: &mut R, what: &str) -> Result<u32, FeatureError> {
    let mut b = [0u8; 4];
    read_exact_or(source, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_features<R: Read>(source: R) -> Result<FeatureSet, FeatureError> {
    read_features_with(source, ReadOptions::default())
}

pub fn read_features_with<R: Read>(
    mut source: R,
    options: ReadOptions,
) -> Result<FeatureSet, FeatureError> {
    let mut magic = [0u8; 4];
    read_exact_or(&mut source, &mut magic, "header")?;
    if magic != FEATURE_MAGIC {
        return Err(FeatureError::BadMagic(magic));
    }
    let version = read_u32(&mut source, "header")?;
    if version != FEATURE_VERSION {
        return Err(FeatureError::UnsupportedVersion(version));
    }
    let dim = read_u32(&mut source, "header")?;
    let count = read_u32(&mut source, "header")?;
    if dim == 0 {
        return Err(FeatureError::Invalid("dimension must be at least 1".into()));
    }
    if count as u64 * dim as u64 > options.max_values {
        return Err(FeatureError::TooLarge {
            count,
            dim,
            limit: options.max_values,
        });
    }

    let dim_usize = dim as usize;
    // Grow with the data instead of trusting the header for capacity.
    let initial = (count as usize).min(4096);
    let mut vectors = Vec::with_capacity(initial);
    let mut seen = HashSet::with_capacity(initial);
    let mut raw = vec![0u8; 4 * dim_usize];
    for i in 0..count {
        let id_len = match read_u32(&mut source, "") {
            Ok(n) => n,
            Err(FeatureError::Truncated(_)) => {
                return Err(FeatureError::Truncated(format!(
                    "header declares {count} records, stream ends after {i}"
                )))
            }
            Err(e) => return Err(e),
        };
        if id_len > MAX_CLIP_ID_LEN {
            return Err(FeatureError::Invalid(format!(
                "record {i}: clip id length {id_len} exceeds {MAX_CLIP_ID_LEN}"
            )));
        }
        let mut id = vec![0u8; id_len as usize];
        read_exact_or(&mut source, &mut id, &format!("record {i} clip id"))?;
        let clip_id = String::from_utf8(id)
            .map_err(|_| FeatureError::Invalid(format!("record {i}: clip id is not UTF-8")))?;
        read_exact_or(&mut source, &mut raw, &format!("record {i} ({clip_id}) values"))?;

        let mut values = Vec::with_capacity(dim_usize);
        for (index, chunk) in raw.chunks_exact(4).enumerate() {
            let x = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
            if !x.is_finite() {
                return Err(FeatureError::NonFinite { clip_id, index });
            }
            values.push(x as f64);
        }
        if !seen.insert(clip_id.clone()) {
            return Err(FeatureError::DuplicateClip(clip_id));
        }
        vectors.push(FeatureVector { clip_id, values });
    }

    let mut rest = Vec::new();
    source.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(FeatureError::CountMismatch {
            declared: count,
            trailing_bytes: rest.len(),
        });
    }
    Ok(FeatureSet {
        dim: dim_usize,
        vectors,
    })
}

/// Targets for one clip; heads without ratings are `None`.
pub type TargetBundle = PerHead<Option<TargetDistribution>>;

#[derive(Debug, Clone, PartialEq)]
pub struct JoinedExample {
    pub features: FeatureVector,
    pub targets: TargetBundle,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct JoinResult {
    /// Joined examples in feature-file order.
    pub examples: Vec<JoinedExample>,
    /// Clips with features but no targets.
    pub features_only: Vec<String>,
    /// Clips with targets but no features.
    pub targets_only: Vec<String>,
}

/// Groups targets into per-clip bundles. A later target for the same (clip,
/// head) replaces an earlier one.
pub fn bundle_targets(targets: &[TargetDistribution]) -> BTreeMap<String, TargetBundle> {
    let mut bundles: BTreeMap<String, TargetBundle> = BTreeMap::new();
    for t in targets {
        bundles.entry(t.clip_id.clone()).or_default()[t.head()] = Some(t.clone());
    }
    bundles
}

/// Inner join of features and targets on clip id.
pub fn join_features(features: &FeatureSet, targets: &[TargetDistribution]) -> JoinResult {
    let mut bundles = bundle_targets(targets);
    let mut out = JoinResult::default();
    for v in &features.vectors {
        match bundles.remove(&v.clip_id) {
            Some(bundle) => out.examples.push(JoinedExample {
                features: v.clone(),
                targets: bundle,
            }),
            None => out.features_only.push(v.clip_id.clone()),
        }
    }
    out.targets_only = bundles.into_keys().collect();
    out
}
