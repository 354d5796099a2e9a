//! Dataset statistics and evaluation output: histograms, cross-group
//! correlations, and CSV / JSON / SVG rendering.
//!
//! Rendering is a pure function of its input; no timestamps or environment
//! data end up in the output.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotations::RatingRecord;
use crate::dataset::ClipEntry;
use crate::heads::{Dimension, HeadKey, PerHead, Perspective};
use crate::metrics::EvalReport;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("unsupported format {0:?} (expected csv, json, or svg)")]
    UnsupportedFormat(String),
    #[error("bin width must be at least 1")]
    InvalidBinWidth,
    #[error("{0} format needs an evaluation report")]
    MissingEval(&'static str),
    #[error("CSV output: {0}")]
    Csv(#[from] csv::Error),
    #[error("JSON output: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub label: String,
    /// `counts.len() + 1` strictly increasing edges.
    pub bin_edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Ten unit bins centred on the scores 1..=10, one histogram per head.
pub fn score_histograms(records: &[RatingRecord]) -> PerHead<Histogram> {
    let mut hists = PerHead::from_fn(|k| Histogram {
        label: k.to_string(),
        bin_edges: (0..=10).map(|i| i as f64 + 0.5).collect(),
        counts: vec![0; 10],
    });
    for r in records {
        hists[r.head()].counts[usize::from(r.score) - 1] += 1;
    }
    hists
}

/// Whitespace token counts of prompts, in bins `[k*w, (k+1)*w)`. Bins run
/// from zero up to the one holding the longest prompt.
pub fn prompt_length_histogram(clips: &[ClipEntry], bin_width: usize) -> Result<Histogram, ReportError> {
    if bin_width == 0 {
        return Err(ReportError::InvalidBinWidth);
    }
    let lengths: Vec<usize> = clips
        .iter()
        .map(|c| c.prompt_text.split_whitespace().count())
        .collect();
    let n_bins = lengths.iter().max().map_or(1, |m| m / bin_width + 1);
    let mut counts = vec![0; n_bins];
    for len in lengths {
        counts[len / bin_width] += 1;
    }
    Ok(Histogram {
        label: "prompt length (words)".into(),
        bin_edges: (0..=n_bins).map(|k| (k * bin_width) as f64).collect(),
        counts,
    })
}

/// Expert vs non-expert PCC per dimension, indexed in [`Dimension::ALL`]
/// order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossGroupSummary {
    pub clip: [f64; 5],
    pub system: [f64; 5],
}

/// Everything a report can contain. Absent parts are left out of the output.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval: Option<EvalReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score_histograms: Option<PerHead<Histogram>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_lengths: Option<Histogram>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cross_group: Option<CrossGroupSummary>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
    Svg,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
            Format::Svg => "svg",
        }
    }
}

impl FromStr for Format {
    type Err = ReportError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            "svg" => Ok(Format::Svg),
            _ => Err(ReportError::UnsupportedFormat(s.to_owned())),
        }
    }
}

/// CSV holds the evaluation table (one row per head, level, and metric);
/// JSON holds the whole bundle; SVG draws one chart per present part.
pub fn render_report(bundle: &ReportBundle, format: Format) -> Result<Vec<u8>, ReportError> {
    match format {
        Format::Csv => eval_csv(bundle.eval.as_ref().ok_or(ReportError::MissingEval("CSV"))?),
        Format::Json => {
            let mut out = serde_json::to_vec_pretty(bundle)?;
            out.push(b'\n');
            Ok(out)
        }
        Format::Svg => Ok(render_svg(bundle).into_bytes()),
    }
}

/// Writes `dimension,perspective,level,metric,value` rows.
pub fn eval_csv(report: &EvalReport) -> Result<Vec<u8>, ReportError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["dimension", "perspective", "level", "metric", "value"])?;
    for (k, h) in report.heads.iter() {
        for (level, metric, value) in [
            ("utterance", "pcc", h.utterance_pcc),
            ("utterance", "mse", h.utterance_mse),
            ("system", "pcc", h.system_pcc),
            ("system", "mse", h.system_mse),
        ] {
            w.write_record([
                k.dimension.as_str(),
                k.perspective.as_str(),
                level,
                metric,
                &format_value(value),
            ])?;
        }
    }
    Ok(w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?)
}

/// Writes `label,lower,upper,count` rows for each histogram.
pub fn histogram_csv<'a>(hists: impl IntoIterator<Item = &'a Histogram>) -> Result<Vec<u8>, ReportError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["label", "lower", "upper", "count"])?;
    for h in hists {
        for (i, count) in h.counts.iter().enumerate() {
            w.write_record([
                h.label.as_str(),
                &format_value(h.bin_edges[i]),
                &format_value(h.bin_edges[i + 1]),
                &count.to_string(),
            ])?;
        }
    }
    Ok(w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?)
}

fn format_value(v: f64) -> String {
    // Shortest round-trip representation; stable across runs.
    format!("{v}")
}

const DIM_ORDER: [Dimension; 5] = [
    Dimension::CE,
    Dimension::CU,
    Dimension::PC,
    Dimension::PQ,
    Dimension::TA,
];

/// Utterance- and system-level PCC laid out as expert CE..TA followed by
/// non-expert CE..TA, one row per level.
pub fn pcc_table(report: &EvalReport) -> String {
    let mut out = String::new();
    let _ = write!(out, "{:<10}", "");
    let _ = write!(out, "| {:<34}", "Expert");
    let _ = writeln!(out, "| {:<34}", "Non-Expert");
    let _ = write!(out, "{:<10}", "Level");
    for _ in Perspective::ALL {
        out.push_str("| ");
        for d in DIM_ORDER {
            let _ = write!(out, "{:<7}", d.as_str());
        }
    }
    out.push('\n');
    for (name, system) in [("utterance", false), ("system", true)] {
        let _ = write!(out, "{name:<10}");
        for v in Perspective::ALL {
            out.push_str("| ");
            for d in DIM_ORDER {
                let h = report.heads[HeadKey::new(d, v)];
                let pcc = if system { h.system_pcc } else { h.utterance_pcc };
                let _ = write!(out, "{pcc:<7.3}");
            }
        }
        out.push('\n');
    }
    out
}

struct Series<'a> {
    name: &'a str,
    color: &'a str,
    values: Vec<f64>,
}

struct Chart<'a> {
    title: String,
    categories: Vec<String>,
    series: Vec<Series<'a>>,
    integer_axis: bool,
}

const PANEL_W: f64 = 720.0;
const PANEL_H: f64 = 260.0;
const MARGIN_L: f64 = 60.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 36.0;
const MARGIN_B: f64 = 48.0;
const TICKS: usize = 5;

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            _ => out.push(c),
        }
    }
    out
}

fn axis_range(chart: &Chart) -> (f64, f64) {
    let values = chart.series.iter().flat_map(|s| s.values.iter().copied());
    let (lo, hi) = values.fold((0.0f64, 0.0f64), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let hi = if hi <= lo { lo + 1.0 } else { hi };
    if chart.integer_axis {
        let step = ((hi - lo) / TICKS as f64).ceil().max(1.0);
        (lo.floor(), lo.floor() + step * TICKS as f64)
    } else {
        (lo, hi)
    }
}

fn draw_chart(out: &mut String, chart: &Chart, top: f64) {
    let (lo, hi) = axis_range(chart);
    let plot_w = PANEL_W - MARGIN_L - MARGIN_R;
    let plot_h = PANEL_H - MARGIN_T - MARGIN_B;
    let y_of = |v: f64| top + MARGIN_T + plot_h * (hi - v) / (hi - lo);
    let x0 = MARGIN_L;

    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" font-size="14" text-anchor="middle">{}</text>"#,
        PANEL_W / 2.0,
        top + 20.0,
        escape(&chart.title)
    );
    for i in 0..=TICKS {
        let v = lo + (hi - lo) * i as f64 / TICKS as f64;
        let y = y_of(v);
        let label = if chart.integer_axis {
            format!("{}", v.round() as i64)
        } else {
            format!("{v:.2}")
        };
        let _ = writeln!(
            out,
            r##"<line x1="{x0:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#ddd"/>"##,
            x0 + plot_w
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="end">{label}</text>"#,
            x0 - 6.0,
            y + 3.0
        );
    }

    let n_cat = chart.categories.len().max(1);
    let group_w = plot_w / n_cat as f64;
    let bar_w = group_w * 0.8 / chart.series.len().max(1) as f64;
    let zero = y_of(0.0f64.clamp(lo, hi));
    for (ci, cat) in chart.categories.iter().enumerate() {
        let gx = x0 + group_w * ci as f64 + group_w * 0.1;
        for (si, s) in chart.series.iter().enumerate() {
            let v = s.values.get(ci).copied().unwrap_or(0.0);
            let y = y_of(v);
            let _ = writeln!(
                out,
                r#"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="{}"><title>{} {}: {}</title></rect>"#,
                gx + bar_w * si as f64,
                y.min(zero),
                bar_w,
                (y - zero).abs(),
                s.color,
                escape(s.name),
                escape(cat),
                format_value(v)
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="middle">{}</text>"#,
            x0 + group_w * (ci as f64 + 0.5),
            top + PANEL_H - MARGIN_B + 14.0,
            escape(cat)
        );
    }
    let _ = writeln!(
        out,
        r#"<line x1="{x0:.1}" y1="{zero:.1}" x2="{:.1}" y2="{zero:.1}" stroke="black"/>"#,
        x0 + plot_w
    );
    let _ = writeln!(
        out,
        r#"<line x1="{x0:.1}" y1="{:.1}" x2="{x0:.1}" y2="{:.1}" stroke="black"/>"#,
        top + MARGIN_T,
        top + MARGIN_T + plot_h
    );
    for (si, s) in chart.series.iter().enumerate() {
        let lx = x0 + 10.0 + 130.0 * si as f64;
        let ly = top + PANEL_H - 14.0;
        let _ = writeln!(
            out,
            r#"<rect x="{lx:.1}" y="{:.1}" width="10" height="10" fill="{}"/>"#,
            ly - 9.0,
            s.color
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{ly:.1}" font-size="11">{}</text>"#,
            lx + 14.0,
            escape(s.name)
        );
    }
}

fn charts(bundle: &ReportBundle) -> Vec<Chart<'static>> {
    let mut charts = Vec::new();
    let head_labels: Vec<String> = HeadKey::ALL.iter().map(|k| k.to_string()).collect();
    if let Some(eval) = &bundle.eval {
        let pick = |f: fn(&crate::metrics::HeadEval) -> f64| eval.heads.0.iter().map(f).collect();
        charts.push(Chart {
            title: "PCC by head".into(),
            categories: head_labels.clone(),
            series: vec![
                Series {
                    name: "utterance",
                    color: "#4c72b0",
                    values: pick(|h| h.utterance_pcc),
                },
                Series {
                    name: "system",
                    color: "#dd8452",
                    values: pick(|h| h.system_pcc),
                },
            ],
            integer_axis: false,
        });
        charts.push(Chart {
            title: "MSE by head".into(),
            categories: head_labels,
            series: vec![
                Series {
                    name: "utterance",
                    color: "#4c72b0",
                    values: pick(|h| h.utterance_mse),
                },
                Series {
                    name: "system",
                    color: "#dd8452",
                    values: pick(|h| h.system_mse),
                },
            ],
            integer_axis: false,
        });
    }
    if let Some(hists) = &bundle.score_histograms {
        for d in Dimension::ALL {
            let counts = |v| {
                hists[HeadKey::new(d, v)]
                    .counts
                    .iter()
                    .map(|&c| c as f64)
                    .collect()
            };
            charts.push(Chart {
                title: format!("{d} score distribution"),
                categories: (1..=10).map(|s| s.to_string()).collect(),
                series: vec![
                    Series {
                        name: "expert",
                        color: "#55a868",
                        values: counts(Perspective::Expert),
                    },
                    Series {
                        name: "nonexpert",
                        color: "#c44e52",
                        values: counts(Perspective::NonExpert),
                    },
                ],
                integer_axis: true,
            });
        }
    }
    if let Some(h) = &bundle.prompt_lengths {
        charts.push(Chart {
            title: h.label.clone(),
            categories: h.bin_edges[..h.counts.len()]
                .iter()
                .map(|e| format_value(*e))
                .collect(),
            series: vec![Series {
                name: "prompts",
                color: "#8172b3",
                values: h.counts.iter().map(|&c| c as f64).collect(),
            }],
            integer_axis: true,
        });
    }
    if let Some(cg) = &bundle.cross_group {
        charts.push(Chart {
            title: "Expert vs non-expert PCC".into(),
            categories: Dimension::ALL.iter().map(|d| d.to_string()).collect(),
            series: vec![
                Series {
                    name: "clip",
                    color: "#4c72b0",
                    values: cg.clip.to_vec(),
                },
                Series {
                    name: "system",
                    color: "#dd8452",
                    values: cg.system.to_vec(),
                },
            ],
            integer_axis: false,
        });
    }
    charts
}

fn render_svg(bundle: &ReportBundle) -> String {
    let charts = charts(bundle);
    let height = PANEL_H * charts.len().max(1) as f64;
    let mut out = String::new();
    out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{PANEL_W:.0}" height="{height:.0}" viewBox="0 0 {PANEL_W:.0} {height:.0}" font-family="sans-serif">"#
    );
    let _ = writeln!(
        out,
        r#"<rect width="{PANEL_W:.0}" height="{height:.0}" fill="white"/>"#
    );
    if charts.is_empty() {
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" font-size="14" text-anchor="middle">empty report</text>"#,
            PANEL_W / 2.0,
            PANEL_H / 2.0
        );
    }
    for (i, chart) in charts.iter().enumerate() {
        draw_chart(&mut out, chart, PANEL_H * i as f64);
    }
    out.push_str("</svg>\n");
    out
}
