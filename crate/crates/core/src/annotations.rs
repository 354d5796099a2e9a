//! Rating manifests, the consistency probe, and Gaussian soft targets.
//!
//! A manifest is newline-delimited JSON, one [`RatingRecord`] per line:
//!
//! ```text
//! {"clip_id":"c1","system_id":"s1","dimension":"PQ","perspective":"expert","rater_id":"e1","score":7,"probe_score":6}
//! ```
//!
//! Each rater score `y` becomes a distribution over the ten bins with
//! `p(k) ∝ exp(-((y - k) / sigma)^2 / 2)`, normalized over `k = 1..=10`.
//! A group's target is the plain average of its raters' distributions.

use std::collections::{BTreeMap, HashMap};
use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::heads::{Dimension, HeadKey, Perspective, NUM_BINS};

pub const MIN_SCORE: u8 = 1;
pub const MAX_SCORE: u8 = 10;
pub const DEFAULT_PROBE_THRESHOLD: u8 = 2;
pub const DEFAULT_REQUIRED_RATERS: usize = 3;

const MANIFEST_FIELDS: [&str; 7] = [
    "clip_id",
    "system_id",
    "dimension",
    "perspective",
    "rater_id",
    "score",
    "probe_score",
];

#[derive(Debug, Error)]
pub enum AnnotationError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: {field} = {value} is outside 1..=10")]
    ScoreOutOfRange {
        line: usize,
        field: &'static str,
        value: i64,
    },
    #[error("line {line}: duplicate rating of clip {clip_id} ({head}) by rater {rater_id}, first seen on line {first_line}")]
    DuplicateRating {
        line: usize,
        first_line: usize,
        clip_id: String,
        head: HeadKey,
        rater_id: String,
    },
    #[error("clip {clip_id} ({head}) has {found} rating(s), {required} required")]
    IncompleteGroup {
        clip_id: String,
        head: HeadKey,
        found: usize,
        required: usize,
    },
    #[error("score {0} is outside 1..=10")]
    InvalidScore(i64),
    #[error("cannot build a target distribution from an empty score list")]
    EmptyScores,
    #[error("invalid soft-label config: {0}")]
    InvalidConfig(String),
    #[error("manifest I/O: {0}")]
    Io(#[from] io::Error),
}

/// One rater's score for one clip on one (dimension, perspective) pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingRecord {
    pub clip_id: String,
    pub system_id: String,
    pub dimension: Dimension,
    pub perspective: Perspective,
    pub rater_id: String,
    pub score: u8,
    /// Score the same rater gave on a repeat presentation of the clip.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe_score: Option<u8>,
}

impl RatingRecord {
    pub fn head(&self) -> HeadKey {
        HeadKey::new(self.dimension, self.perspective)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ParseOptions {
    /// Reject fields outside the manifest schema.
    pub strict: bool,
}

// Scores are read wide so out-of-range values get a range error rather than
// a generic type error.
#[derive(Deserialize)]
struct RawRecord {
    clip_id: String,
    system_id: String,
    dimension: String,
    perspective: String,
    rater_id: String,
    score: i64,
    #[serde(default)]
    probe_score: Option<i64>,
}

fn check_score(line: usize, field: &'static str, value: i64) -> Result<u8, AnnotationError> {
    if (MIN_SCORE as i64..=MAX_SCORE as i64).contains(&value) {
        Ok(value as u8)
    } else {
        Err(AnnotationError::ScoreOutOfRange { line, field, value })
    }
}

/// Parses a rating manifest. Blank lines are skipped; line numbers in errors
/// are 1-based.
pub fn parse_ratings<R: BufRead>(
    reader: R,
    options: ParseOptions,
) -> Result<Vec<RatingRecord>, AnnotationError> {
    let mut records = Vec::new();
    let mut seen: HashMap<(String, HeadKey, String), usize> = HashMap::new();

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |message: String| AnnotationError::Malformed {
            line: line_no,
            message,
        };

        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        let obj = value
            .as_object()
            .ok_or_else(|| malformed("expected a JSON object".into()))?;
        if options.strict {
            if let Some(unknown) = obj.keys().find(|k| !MANIFEST_FIELDS.contains(&k.as_str())) {
                return Err(malformed(format!("unknown field {unknown:?}")));
            }
        }
        let raw: RawRecord = serde_json::from_value(value).map_err(|e| malformed(e.to_string()))?;

        let dimension: Dimension = raw.dimension.parse().map_err(malformed)?;
        let perspective: Perspective = raw.perspective.parse().map_err(malformed)?;
        let score = check_score(line_no, "score", raw.score)?;
        let probe_score = raw
            .probe_score
            .map(|p| check_score(line_no, "probe_score", p))
            .transpose()?;

        let head = HeadKey::new(dimension, perspective);
        let key = (raw.clip_id.clone(), head, raw.rater_id.clone());
        if let Some(&first_line) = seen.get(&key) {
            return Err(AnnotationError::DuplicateRating {
                line: line_no,
                first_line,
                clip_id: raw.clip_id,
                head,
                rater_id: raw.rater_id,
            });
        }
        seen.insert(key, line_no);

        records.push(RatingRecord {
            clip_id: raw.clip_id,
            system_id: raw.system_id,
            dimension,
            perspective,
            rater_id: raw.rater_id,
            score,
            probe_score,
        });
    }
    Ok(records)
}

/// Writes records as a manifest, one JSON object per line.
pub fn write_ratings<W: Write>(records: &[RatingRecord], mut sink: W) -> io::Result<()> {
    for record in records {
        serde_json::to_writer(&mut sink, record)?;
        sink.write_all(b"\n")?;
    }
    Ok(())
}

/// Result of a filter: every input record lands in exactly one side, in
/// input order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Partition {
    pub kept: Vec<RatingRecord>,
    pub discarded: Vec<RatingRecord>,
}

/// Repeat-presentation probe: a record is discarded when its probe score
/// differs from its score by more than `threshold` points. Records without a
/// probe are kept.
pub fn consistency_filter(records: Vec<RatingRecord>, threshold: u8) -> Partition {
    let (kept, discarded) = records.into_iter().partition(|r| match r.probe_score {
        Some(probe) => r.score.abs_diff(probe) <= threshold,
        None => true,
    });
    Partition { kept, discarded }
}

/// Inter-rater variant of the probe: every record of a (clip, head) group is
/// discarded when the group's score range exceeds `threshold`.
pub fn spread_filter(records: Vec<RatingRecord>, threshold: u8) -> Partition {
    let mut ranges: HashMap<(&str, HeadKey), (u8, u8)> = HashMap::new();
    for r in &records {
        let entry = ranges
            .entry((r.clip_id.as_str(), r.head()))
            .or_insert((r.score, r.score));
        entry.0 = entry.0.min(r.score);
        entry.1 = entry.1.max(r.score);
    }
    let spread_ok: Vec<bool> = records
        .iter()
        .map(|r| {
            let (lo, hi) = ranges[&(r.clip_id.as_str(), r.head())];
            hi - lo <= threshold
        })
        .collect();

    let mut out = Partition::default();
    for (record, ok) in records.into_iter().zip(spread_ok) {
        if ok {
            out.kept.push(record);
        } else {
            out.discarded.push(record);
        }
    }
    out
}

/// Identifies one group of ratings: a clip on one head.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GroupKey {
    pub clip_id: String,
    pub head: HeadKey,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IncompleteGroup {
    pub key: GroupKey,
    pub found: usize,
}

#[derive(Debug, Clone, Default)]
pub struct Grouping {
    /// Scores per group in input order. Incomplete groups are included.
    pub groups: BTreeMap<GroupKey, Vec<u8>>,
    /// Groups with fewer than the required number of raters.
    pub incomplete: Vec<IncompleteGroup>,
}

/// Collects scores by (clip, head). With `strict`, the first group short of
/// `required_raters` is an error; otherwise short groups are listed in
/// [`Grouping::incomplete`].
pub fn group_ratings(
    records: &[RatingRecord],
    required_raters: usize,
    strict: bool,
) -> Result<Grouping, AnnotationError> {
    let mut groups: BTreeMap<GroupKey, Vec<u8>> = BTreeMap::new();
    for r in records {
        groups
            .entry(GroupKey {
                clip_id: r.clip_id.clone(),
                head: r.head(),
            })
            .or_default()
            .push(r.score);
    }

    let incomplete: Vec<IncompleteGroup> = groups
        .iter()
        .filter(|(_, scores)| scores.len() < required_raters)
        .map(|(key, scores)| IncompleteGroup {
            key: key.clone(),
            found: scores.len(),
        })
        .collect();

    if strict {
        if let Some(short) = incomplete.first() {
            return Err(AnnotationError::IncompleteGroup {
                clip_id: short.key.clip_id.clone(),
                head: short.key.head,
                found: short.found,
                required: required_raters,
            });
        }
    }
    Ok(Grouping { groups, incomplete })
}

/// Kernel settings for soft labels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SoftLabelConfig {
    /// Kernel width in score points.
    pub sigma: f64,
    #[serde(default = "default_num_bins")]
    pub num_bins: usize,
}

fn default_num_bins() -> usize {
    NUM_BINS
}

impl Default for SoftLabelConfig {
    fn default() -> Self {
        Self {
            sigma: 1.0,
            num_bins: NUM_BINS,
        }
    }
}

impl SoftLabelConfig {
    pub fn with_sigma(sigma: f64) -> Self {
        Self {
            sigma,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), AnnotationError> {
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(AnnotationError::InvalidConfig(format!(
                "sigma must be positive and finite, got {}",
                self.sigma
            )));
        }
        if self.num_bins != NUM_BINS {
            return Err(AnnotationError::InvalidConfig(format!(
                "num_bins must be {NUM_BINS}, got {}",
                self.num_bins
            )));
        }
        Ok(())
    }
}

/// Gaussian soft label for a single score.
pub fn soft_label(score: u8, cfg: &SoftLabelConfig) -> Result<[f64; NUM_BINS], AnnotationError> {
    cfg.validate()?;
    if !(MIN_SCORE..=MAX_SCORE).contains(&score) {
        return Err(AnnotationError::InvalidScore(score as i64));
    }
    Ok(kernel(score, cfg.sigma))
}

fn kernel(score: u8, sigma: f64) -> [f64; NUM_BINS] {
    let mut p = [0.0; NUM_BINS];
    for (i, slot) in p.iter_mut().enumerate() {
        let z = (score as f64 - (i + 1) as f64) / sigma;
        *slot = (-0.5 * z * z).exp();
    }
    // The bin at k = score always contributes exp(0) = 1, so the sum is >= 1.
    let total: f64 = p.iter().sum();
    for slot in &mut p {
        *slot /= total;
    }
    p
}

/// Average of the raters' soft labels.
///
/// Scores are tallied before summation, so the result does not depend on
/// the order of `scores`.
pub fn target_distribution(
    scores: &[u8],
    cfg: &SoftLabelConfig,
) -> Result<[f64; NUM_BINS], AnnotationError> {
    cfg.validate()?;
    if scores.is_empty() {
        return Err(AnnotationError::EmptyScores);
    }
    let mut tally = [0usize; NUM_BINS];
    for &s in scores {
        if !(MIN_SCORE..=MAX_SCORE).contains(&s) {
            return Err(AnnotationError::InvalidScore(s as i64));
        }
        tally[(s - 1) as usize] += 1;
    }

    let raters = scores.len() as f64;
    let mut probs = [0.0; NUM_BINS];
    for (bin, &count) in tally.iter().enumerate() {
        if count == 0 {
            continue;
        }
        let label = kernel(bin as u8 + 1, cfg.sigma);
        for (acc, p) in probs.iter_mut().zip(label) {
            *acc += count as f64 * p;
        }
    }
    for p in &mut probs {
        *p /= raters;
    }
    Ok(probs)
}

/// Expected score of a distribution over bins 1..=10.
pub fn distribution_mean(probs: &[f64; NUM_BINS]) -> f64 {
    probs
        .iter()
        .enumerate()
        .map(|(i, p)| (i + 1) as f64 * p)
        .sum()
}

/// Smoothed rating distribution for one clip on one head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetDistribution {
    pub clip_id: String,
    pub dimension: Dimension,
    pub perspective: Perspective,
    pub probs: [f64; NUM_BINS],
    pub mean: f64,
}

impl TargetDistribution {
    pub fn new(clip_id: impl Into<String>, head: HeadKey, probs: [f64; NUM_BINS]) -> Self {
        Self {
            clip_id: clip_id.into(),
            dimension: head.dimension,
            perspective: head.perspective,
            mean: distribution_mean(&probs),
            probs,
        }
    }

    pub fn head(&self) -> HeadKey {
        HeadKey::new(self.dimension, self.perspective)
    }
}

/// One target per group, in group-key order.
pub fn build_targets(
    grouping: &Grouping,
    cfg: &SoftLabelConfig,
) -> Result<Vec<TargetDistribution>, AnnotationError> {
    grouping
        .groups
        .iter()
        .map(|(key, scores)| {
            let probs = target_distribution(scores, cfg)?;
            Ok(TargetDistribution::new(key.clip_id.clone(), key.head, probs))
        })
        .collect()
}

pub fn write_targets<W: Write>(targets: &[TargetDistribution], mut sink: W) -> io::Result<()> {
    for t in targets {
        serde_json::to_writer(&mut sink, t)?;
        sink.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_targets<R: BufRead>(reader: R) -> Result<Vec<TargetDistribution>, AnnotationError> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let target = serde_json::from_str(&line).map_err(|e| AnnotationError::Malformed {
            line: idx + 1,
            message: e.to_string(),
        })?;
        out.push(target);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(rater: &str, persp: &str, score: i64) -> String {
        format!(
            r#"{{"clip_id":"c1","system_id":"s1","dimension":"PQ","perspective":"{persp}","rater_id":"{rater}","score":{score}}}"#
        )
    }

    fn six_line_fixture() -> String {
        let mut lines = Vec::new();
        for (i, s) in [6, 7, 5].iter().enumerate() {
            lines.push(record(&format!("e{i}"), "expert", *s));
        }
        for (i, s) in [4, 8, 6].iter().enumerate() {
            lines.push(record(&format!("n{i}"), "nonexpert", *s));
        }
        lines.join("\n") + "\n"
    }

    fn rec(score: u8, probe: Option<u8>) -> RatingRecord {
        RatingRecord {
            clip_id: "c".into(),
            system_id: "s".into(),
            dimension: Dimension::CE,
            perspective: Perspective::Expert,
            rater_id: "r".into(),
            score,
            probe_score: probe,
        }
    }

    #[test]
    fn parses_six_line_fixture() {
        let records = parse_ratings(six_line_fixture().as_bytes(), ParseOptions::default()).unwrap();
        assert_eq!(records.len(), 6);
        assert_eq!(records[0].rater_id, "e0");
        assert_eq!(records[0].score, 6);
        assert_eq!(records[0].perspective, Perspective::Expert);
        assert_eq!(records[4].rater_id, "n1");
        assert_eq!(records[4].score, 8);
        assert_eq!(records[4].perspective, Perspective::NonExpert);
        assert!(records.iter().all(|r| r.dimension == Dimension::PQ && r.probe_score.is_none()));
    }

    #[test]
    fn empty_stream_is_empty() {
        assert!(parse_ratings(&b""[..], ParseOptions::default()).unwrap().is_empty());
    }

    #[test]
    fn score_out_of_range_names_line() {
        let text = format!("{}\n{}\n", record("a", "expert", 5), record("b", "expert", 11));
        let err = parse_ratings(text.as_bytes(), ParseOptions::default()).unwrap_err();
        match err {
            AnnotationError::ScoreOutOfRange { line, value, field } => {
                assert_eq!((line, value, field), (2, 11, "score"));
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn probe_out_of_range_rejected() {
        let line = r#"{"clip_id":"c","system_id":"s","dimension":"TA","perspective":"expert","rater_id":"r","score":3,"probe_score":0}"#;
        let err = parse_ratings(line.as_bytes(), ParseOptions::default()).unwrap_err();
        assert!(matches!(err, AnnotationError::ScoreOutOfRange { field: "probe_score", .. }));
    }

    #[test]
    fn duplicate_key_rejected() {
        let text = format!("{}\n{}\n", record("a", "expert", 5), record("a", "expert", 6));
        let err = parse_ratings(text.as_bytes(), ParseOptions::default()).unwrap_err();
        assert!(matches!(
            err,
            AnnotationError::DuplicateRating { line: 2, first_line: 1, .. }
        ));
    }

    #[test]
    fn malformed_line_reports_number() {
        let text = format!("{}\nnot json\n", record("a", "expert", 5));
        let err = parse_ratings(text.as_bytes(), ParseOptions::default()).unwrap_err();
        assert!(matches!(err, AnnotationError::Malformed { line: 2, .. }));
        let bad_dim = r#"{"clip_id":"c","system_id":"s","dimension":"XX","perspective":"expert","rater_id":"r","score":3}"#;
        let err = parse_ratings(bad_dim.as_bytes(), ParseOptions::default()).unwrap_err();
        assert!(err.to_string().contains("unknown dimension"));
    }

    #[test]
    fn unknown_fields_only_rejected_when_strict() {
        let line = r#"{"clip_id":"c","system_id":"s","dimension":"TA","perspective":"expert","rater_id":"r","score":3,"note":"x"}"#;
        assert_eq!(parse_ratings(line.as_bytes(), ParseOptions::default()).unwrap().len(), 1);
        let err = parse_ratings(line.as_bytes(), ParseOptions { strict: true }).unwrap_err();
        assert!(err.to_string().contains("unknown field \"note\""));
    }

    #[test]
    fn write_then_parse_round_trip() {
        let records = vec![rec(3, Some(4)), rec(9, None)];
        let mut records = records;
        records[1].rater_id = "r2".into();
        let mut buf = Vec::new();
        write_ratings(&records, &mut buf).unwrap();
        assert_eq!(parse_ratings(&buf[..], ParseOptions { strict: true }).unwrap(), records);
    }

    #[test]
    fn probe_boundary() {
        let part = consistency_filter(vec![rec(5, Some(7)), rec(5, Some(8)), rec(5, None)], 2);
        assert_eq!(part.kept, vec![rec(5, Some(7)), rec(5, None)]);
        assert_eq!(part.discarded, vec![rec(5, Some(8))]);
    }

    #[test]
    fn spread_filter_drops_whole_group() {
        let mut a = rec(2, None);
        a.rater_id = "a".into();
        let mut b = rec(6, None);
        b.rater_id = "b".into();
        let mut other = rec(5, None);
        other.clip_id = "d".into();
        let part = spread_filter(vec![a.clone(), other.clone(), b.clone()], 2);
        assert_eq!(part.kept, vec![other]);
        assert_eq!(part.discarded, vec![a, b]);
    }

    #[test]
    fn groups_by_clip_and_head() {
        let records = parse_ratings(six_line_fixture().as_bytes(), ParseOptions::default()).unwrap();
        let grouping = group_ratings(&records, 3, true).unwrap();
        assert_eq!(grouping.groups.len(), 2);
        assert!(grouping.groups.values().all(|s| s.len() == 3));
        assert!(grouping.incomplete.is_empty());
        assert!(group_ratings(&[], 3, true).unwrap().groups.is_empty());
    }

    #[test]
    fn incomplete_group_strict_and_lenient() {
        let mut a = rec(4, None);
        a.rater_id = "a".into();
        let mut b = rec(5, None);
        b.rater_id = "b".into();
        let records = vec![a, b];
        let err = group_ratings(&records, 3, true).unwrap_err();
        match err {
            AnnotationError::IncompleteGroup { clip_id, head, found, required } => {
                assert_eq!(clip_id, "c");
                assert_eq!(head, HeadKey::new(Dimension::CE, Perspective::Expert));
                assert_eq!((found, required), (2, 3));
            }
            other => panic!("unexpected error {other}"),
        }
        let lenient = group_ratings(&records, 3, false).unwrap();
        assert_eq!(lenient.groups.len(), 1);
        assert_eq!(lenient.incomplete.len(), 1);
        assert_eq!(lenient.incomplete[0].found, 2);
    }

    // Kernel values evaluated independently with mpmath at 40 digits:
    //   w = [exp(-(5 - k)**2 / 2) for k in 1..=10]; p = w / sum(w)
    const SOFT_5_SIGMA_1: [f64; 10] = [
        0.0001338304256458433,
        0.004431855031086267,
        0.05399104715092176,
        0.24197108591239316,
        0.3989428762381707,
        0.24197108591239316,
        0.05399104715092176,
        0.004431855031086267,
        0.0001338304256458433,
        1.4867217352111677e-06,
    ];

    #[test]
    fn soft_label_matches_direct_evaluation() {
        let p = soft_label(5, &SoftLabelConfig::default()).unwrap();
        for (got, want) in p.iter().zip(SOFT_5_SIGMA_1) {
            assert!((got - want).abs() < 1e-15, "{got} vs {want}");
        }
        assert_eq!(p[3], p[5]);
        assert_eq!(p[2], p[6]);
    }

    #[test]
    fn soft_label_peaks_at_score() {
        for sigma in [0.01, 0.5, 1.0, 2.0, 5.0] {
            let cfg = SoftLabelConfig::with_sigma(sigma);
            for y in 1..=10u8 {
                let p = soft_label(y, &cfg).unwrap();
                let argmax = (0..10).max_by(|&a, &b| p[a].total_cmp(&p[b])).unwrap();
                assert_eq!(argmax + 1, y as usize);
            }
        }
        let tight = soft_label(5, &SoftLabelConfig::with_sigma(0.05)).unwrap();
        assert!(tight[4] > 1.0 - 1e-12);
    }

    #[test]
    fn soft_label_at_boundary_is_decreasing() {
        let p = soft_label(1, &SoftLabelConfig::default()).unwrap();
        assert!(p.windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn soft_label_rejects_bad_input() {
        assert!(matches!(
            soft_label(0, &SoftLabelConfig::default()),
            Err(AnnotationError::InvalidScore(0))
        ));
        assert!(soft_label(11, &SoftLabelConfig::default()).is_err());
        assert!(soft_label(5, &SoftLabelConfig::with_sigma(0.0)).is_err());
        let bins = SoftLabelConfig {
            sigma: 1.0,
            num_bins: 5,
        };
        assert!(soft_label(5, &bins).is_err());
    }

    #[test]
    fn target_of_identical_scores_is_the_soft_label() {
        let cfg = SoftLabelConfig::default();
        let single = soft_label(5, &cfg).unwrap();
        let target = target_distribution(&[5, 5, 5], &cfg).unwrap();
        for (a, b) in single.iter().zip(target) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn target_of_spread_scores_is_brute_force_average() {
        let cfg = SoftLabelConfig::default();
        let target = target_distribution(&[4, 5, 6], &cfg).unwrap();
        let labels: Vec<_> = [4, 5, 6].iter().map(|&y| soft_label(y, &cfg).unwrap()).collect();
        for k in 0..10 {
            let brute = (labels[0][k] + labels[1][k] + labels[2][k]) / 3.0;
            assert!((target[k] - brute).abs() < 1e-15);
        }
        assert!((target.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn target_of_extremes_is_bimodal() {
        let target = target_distribution(&[1, 10], &SoftLabelConfig::default()).unwrap();
        assert!(target[0] > target[1] && target[9] > target[8]);
        assert!(target[4] < target[0] && target[5] < target[9]);
    }

    #[test]
    fn target_rejects_empty() {
        assert!(matches!(
            target_distribution(&[], &SoftLabelConfig::default()),
            Err(AnnotationError::EmptyScores)
        ));
    }

    #[test]
    fn build_targets_computes_means() {
        let records = parse_ratings(six_line_fixture().as_bytes(), ParseOptions::default()).unwrap();
        let grouping = group_ratings(&records, 3, true).unwrap();
        let targets = build_targets(&grouping, &SoftLabelConfig::default()).unwrap();
        assert_eq!(targets.len(), 2);
        for t in &targets {
            assert!((t.mean - distribution_mean(&t.probs)).abs() < 1e-15);
            assert!((t.mean - 6.0).abs() < 0.25);
        }
        let mut buf = Vec::new();
        write_targets(&targets, &mut buf).unwrap();
        assert_eq!(read_targets(&buf[..]).unwrap(), targets);
    }
}
