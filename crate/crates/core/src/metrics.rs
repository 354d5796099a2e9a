//! Pearson correlation and mean squared error between predicted and human
//! mean scores, per clip (utterance level) and per system average (system
//! level).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::heads::{Dimension, HeadKey, PerHead, Perspective};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("series lengths differ: {x} vs {y}")]
    LengthMismatch { x: usize, y: usize },
    #[error("need at least {needed} points, got {found}")]
    TooFew { needed: usize, found: usize },
    #[error("zero variance in the {0} series; correlation is undefined")]
    ZeroVariance(&'static str),
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<MetricsError>,
    },
}

impl MetricsError {
    fn within(self, context: impl ToString) -> Self {
        MetricsError::Context {
            context: context.to_string(),
            source: Box::new(self),
        }
    }

    /// True when the underlying cause is a zero-variance series.
    pub fn is_degenerate(&self) -> bool {
        match self {
            MetricsError::ZeroVariance(_) => true,
            MetricsError::Context { source, .. } => source.is_degenerate(),
            _ => false,
        }
    }
}

/// Paired observations, e.g. predictions and ground truth per clip.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSeries {
    pub labels: Vec<String>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl PairedSeries {
    pub fn new(labels: Vec<String>, x: Vec<f64>, y: Vec<f64>) -> Result<Self, MetricsError> {
        if x.len() != y.len() || labels.len() != x.len() {
            return Err(MetricsError::LengthMismatch {
                x: x.len(),
                y: y.len(),
            });
        }
        check_finite(&x, &y)?;
        Ok(Self { labels, x, y })
    }

    /// Unlabelled series.
    pub fn from_values(x: Vec<f64>, y: Vec<f64>) -> Result<Self, MetricsError> {
        let labels = (0..x.len()).map(|i| i.to_string()).collect();
        Self::new(labels, x, y)
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

fn check_finite(x: &[f64], y: &[f64]) -> Result<(), MetricsError> {
    if x.len() != y.len() {
        return Err(MetricsError::LengthMismatch {
            x: x.len(),
            y: y.len(),
        });
    }
    match x.iter().zip(y).position(|(a, b)| !(a.is_finite() && b.is_finite())) {
        Some(i) => Err(MetricsError::NonFinite(i)),
        None => Ok(()),
    }
}

pub fn pcc(series: &PairedSeries) -> Result<f64, MetricsError> {
    pearson(&series.x, &series.y)
}

pub fn mse(series: &PairedSeries) -> Result<f64, MetricsError> {
    mean_squared_error(&series.x, &series.y)
}

/// Pearson's r, computed from mean-centred sums. Errors instead of
/// returning NaN when either series is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, MetricsError> {
    check_finite(x, y)?;
    if x.len() < 2 {
        return Err(MetricsError::TooFew {
            needed: 2,
            found: x.len(),
        });
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let dx = a - mx;
        let dy = b - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(MetricsError::ZeroVariance("first"));
    }
    if syy == 0.0 {
        return Err(MetricsError::ZeroVariance("second"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

pub fn mean_squared_error(x: &[f64], y: &[f64]) -> Result<f64, MetricsError> {
    check_finite(x, y)?;
    if x.is_empty() {
        return Err(MetricsError::TooFew { needed: 1, found: 0 });
    }
    let total: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(total / x.len() as f64)
}

/// Mean score per clip and head; `None` where a head has no value.
pub type ScoreTable = BTreeMap<String, PerHead<Option<f64>>>;

/// Lifts complete per-clip predictions into a [`ScoreTable`].
pub fn complete_table(means: &BTreeMap<String, PerHead<f64>>) -> ScoreTable {
    means
        .iter()
        .map(|(id, m)| (id.clone(), m.map(|_, v| Some(*v))))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelMetrics {
    pub pcc: f64,
    pub mse: f64,
    /// Number of points (clips or systems) the metrics were computed over.
    pub n: usize,
}

fn paired_for_head(pred: &ScoreTable, truth: &ScoreTable, head: HeadKey) -> PairedSeries {
    let mut out = PairedSeries {
        labels: Vec::new(),
        x: Vec::new(),
        y: Vec::new(),
    };
    for (id, p) in pred {
        if let (Some(pv), Some(tv)) = (p[head], truth.get(id).and_then(|t| t[head])) {
            out.labels.push(id.clone());
            out.x.push(pv);
            out.y.push(tv);
        }
    }
    out
}

fn level_metrics(series: &PairedSeries) -> Result<LevelMetrics, MetricsError> {
    Ok(LevelMetrics {
        pcc: pcc(series)?,
        mse: mse(series)?,
        n: series.len(),
    })
}

/// Per-head PCC and MSE over clips present in both tables.
pub fn utterance_eval(
    pred: &ScoreTable,
    truth: &ScoreTable,
) -> Result<PerHead<LevelMetrics>, MetricsError> {
    let mut out = Vec::with_capacity(crate::NUM_HEADS);
    for head in HeadKey::ALL {
        let series = paired_for_head(pred, truth, head);
        out.push(level_metrics(&series).map_err(|e| e.within(format!("{head} utterance level")))?);
    }
    Ok(PerHead(out.try_into().expect("one entry per head")))
}

/// Averages each series per system (unweighted over the system's clips).
/// Clips without a system are skipped.
pub fn system_average(
    series: &PairedSeries,
    systems: &BTreeMap<String, String>,
) -> PairedSeries {
    let mut sums: BTreeMap<&str, (f64, f64, usize)> = BTreeMap::new();
    for ((id, x), y) in series.labels.iter().zip(&series.x).zip(&series.y) {
        if let Some(system) = systems.get(id) {
            let slot = sums.entry(system.as_str()).or_insert((0.0, 0.0, 0));
            slot.0 += x;
            slot.1 += y;
            slot.2 += 1;
        }
    }
    let mut out = PairedSeries {
        labels: Vec::with_capacity(sums.len()),
        x: Vec::with_capacity(sums.len()),
        y: Vec::with_capacity(sums.len()),
    };
    for (system, (sx, sy, n)) in sums {
        out.labels.push(system.to_owned());
        out.x.push(sx / n as f64);
        out.y.push(sy / n as f64);
    }
    out
}

/// Per-head PCC and MSE over per-system averages.
pub fn system_eval(
    pred: &ScoreTable,
    truth: &ScoreTable,
    systems: &BTreeMap<String, String>,
) -> Result<PerHead<LevelMetrics>, MetricsError> {
    let mut out = Vec::with_capacity(crate::NUM_HEADS);
    for head in HeadKey::ALL {
        let averaged = system_average(&paired_for_head(pred, truth, head), systems);
        let metrics = if averaged.len() < 2 {
            Err(MetricsError::TooFew {
                needed: 2,
                found: averaged.len(),
            })
        } else {
            level_metrics(&averaged)
        };
        out.push(metrics.map_err(|e| e.within(format!("{head} system level")))?);
    }
    Ok(PerHead(out.try_into().expect("one entry per head")))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadEval {
    pub utterance_pcc: f64,
    pub utterance_mse: f64,
    pub system_pcc: f64,
    pub system_mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub heads: PerHead<HeadEval>,
    /// Clips with both a prediction and a ground-truth value on some head.
    pub n_utterances: usize,
    /// Systems among those clips.
    pub n_systems: usize,
}

impl EvalReport {
    pub fn mean_utterance_pcc(&self) -> f64 {
        self.heads.0.iter().map(|h| h.utterance_pcc).sum::<f64>() / crate::NUM_HEADS as f64
    }

    pub fn mean_system_pcc(&self) -> f64 {
        self.heads.0.iter().map(|h| h.system_pcc).sum::<f64>() / crate::NUM_HEADS as f64
    }
}

/// Utterance- and system-level metrics for every head.
pub fn evaluate(
    pred: &ScoreTable,
    truth: &ScoreTable,
    systems: &BTreeMap<String, String>,
) -> Result<EvalReport, MetricsError> {
    let utterance = utterance_eval(pred, truth)?;
    let system = system_eval(pred, truth, systems)?;
    let shared: Vec<&String> = pred
        .iter()
        .filter(|(id, p)| {
            truth
                .get(*id)
                .is_some_and(|t| HeadKey::ALL.iter().any(|&k| p[k].is_some() && t[k].is_some()))
        })
        .map(|(id, _)| id)
        .collect();
    let n_systems = shared
        .iter()
        .filter_map(|id| systems.get(*id))
        .collect::<std::collections::BTreeSet<_>>()
        .len();
    Ok(EvalReport {
        heads: PerHead::from_fn(|k| HeadEval {
            utterance_pcc: utterance[k].pcc,
            utterance_mse: utterance[k].mse,
            system_pcc: system[k].pcc,
            system_mse: system[k].mse,
        }),
        n_utterances: shared.len(),
        n_systems,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Clip,
    System,
}

/// Mean score per clip for each dimension, from one perspective.
pub type DimensionTable = BTreeMap<String, [Option<f64>; 5]>;

/// Splits a score table into (expert, non-expert) dimension tables.
pub fn split_perspectives(table: &ScoreTable) -> (DimensionTable, DimensionTable) {
    let pick = |v: Perspective| -> DimensionTable {
        table
            .iter()
            .map(|(id, row)| (id.clone(), Dimension::ALL.map(|d| row[HeadKey::new(d, v)])))
            .collect()
    };
    (pick(Perspective::Expert), pick(Perspective::NonExpert))
}

/// Per-dimension PCC between expert and non-expert mean scores, over clips
/// or over system averages.
pub fn cross_group_correlation(
    expert: &DimensionTable,
    nonexpert: &DimensionTable,
    level: Level,
    systems: &BTreeMap<String, String>,
) -> Result<[f64; 5], MetricsError> {
    let mut out = [0.0; 5];
    for d in Dimension::ALL {
        let mut series = PairedSeries {
            labels: Vec::new(),
            x: Vec::new(),
            y: Vec::new(),
        };
        for (id, e) in expert {
            if let (Some(ev), Some(nv)) = (e[d.index()], nonexpert.get(id).and_then(|n| n[d.index()])) {
                series.labels.push(id.clone());
                series.x.push(ev);
                series.y.push(nv);
            }
        }
        if level == Level::System {
            series = system_average(&series, systems);
        }
        out[d.index()] = pcc(&series).map_err(|e| e.within(format!("{d} {level:?} level")))?;
    }
    Ok(out)
}
