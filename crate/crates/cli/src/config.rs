//! Run configuration: a JSON document with defaults for every field, plus
//! dotted command-line overrides such as `--train.epochs 5`.

use std::path::{Path, PathBuf};

use aeval::annotations::{SoftLabelConfig, DEFAULT_PROBE_THRESHOLD, DEFAULT_REQUIRED_RATERS};
use aeval::dataset::SplitSpec;
use aeval::model::TrainConfig;
use aeval::synth::SynthConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Rating manifest, one JSON record per line.
    pub manifest: PathBuf,
    /// AEVF feature file.
    pub features: PathBuf,
    pub split: PathBuf,
    pub targets: PathBuf,
    pub model: PathBuf,
    pub history: PathBuf,
    /// Synthetic ground-truth sidecar; also a source of prompt text.
    pub truth: PathBuf,
    /// Optional clip list (JSON lines of clip_id, system_id, prompt_text).
    pub clips: Option<PathBuf>,
    pub output_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            manifest: "data/ratings.jsonl".into(),
            features: "data/features.aevf".into(),
            split: "data/split.json".into(),
            targets: "data/targets.jsonl".into(),
            model: "out/model.aevm".into(),
            history: "out/history.jsonl".into(),
            truth: "data/truth.json".into(),
            clips: None,
            output_dir: "out".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    /// Records whose repeat score differs by more than this are dropped.
    pub probe_threshold: u8,
    /// Optional cap on the distance from the group median.
    pub spread_threshold: Option<u8>,
    pub required_raters: usize,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            probe_threshold: DEFAULT_PROBE_THRESHOLD,
            spread_threshold: None,
            required_raters: DEFAULT_REQUIRED_RATERS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    pub prompt_bin_width: usize,
    pub svg: bool,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self {
            prompt_bin_width: 2,
            svg: true,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    pub soft_label: SoftLabelConfig,
    pub filter: FilterConfig,
    pub split: SplitSpec,
    pub train: TrainConfig,
    pub synth: SynthConfig,
    pub report: ReportConfig,
    /// Treat unknown manifest fields and incomplete rater groups as errors.
    pub strict: bool,
}

/// Pulls `--a.b value` and `--a.b=value` pairs out of the argument list.
/// Everything else is returned untouched for clap.
pub fn extract_overrides(args: Vec<String>) -> Result<(Vec<String>, Vec<(String, String)>), CliError> {
    let mut rest = Vec::with_capacity(args.len());
    let mut overrides = Vec::new();
    let mut iter = args.into_iter();
    while let Some(arg) = iter.next() {
        let Some(flag) = arg.strip_prefix("--") else {
            rest.push(arg);
            continue;
        };
        let (key, inline) = match flag.split_once('=') {
            Some((k, v)) => (k, Some(v.to_owned())),
            None => (flag, None),
        };
        if !key.contains('.') {
            rest.push(arg);
            continue;
        }
        let value = match inline {
            Some(v) => v,
            None => iter
                .next()
                .ok_or_else(|| CliError::Config(format!("--{key} needs a value")))?,
        };
        overrides.push((key.to_owned(), value));
    }
    Ok((rest, overrides))
}

fn set_dotted(tree: &mut Value, key: &str, raw: &str) -> Result<(), CliError> {
    let mut node = tree;
    for part in key.split('.') {
        node = node
            .as_object_mut()
            .and_then(|obj| obj.get_mut(part))
            .ok_or_else(|| CliError::Config(format!("unknown config key {key:?}")))?;
    }
    // Keep string fields verbatim so "7" stays a string; otherwise accept
    // any JSON literal, falling back to a bare string (e.g. "+R").
    *node = if node.is_string() {
        Value::String(raw.to_owned())
    } else {
        serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_owned()))
    };
    Ok(())
}

/// Loads the config file (or defaults), then applies the global seed and
/// dotted overrides, in that order.
pub fn load(
    path: Option<&Path>,
    seed: Option<u64>,
    strict: bool,
    overrides: &[(String, String)],
) -> Result<RunConfig, CliError> {
    let mut cfg: RunConfig = match path {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = seed {
        cfg.synth.seed = seed;
        cfg.split.seed = seed;
        cfg.train.seed = seed;
    }
    cfg.strict |= strict;
    if overrides.is_empty() {
        return Ok(cfg);
    }
    let mut tree = serde_json::to_value(&cfg).expect("config serializes");
    for (key, value) in overrides {
        set_dotted(&mut tree, key, value)?;
    }
    serde_json::from_value(tree).map_err(|e| CliError::Config(format!("override: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(list: &[&str]) -> Vec<String> {
        list.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn overrides_are_split_out() {
        let (rest, ov) = extract_overrides(args(&[
            "aeval",
            "--seed",
            "3",
            "train",
            "--train.epochs",
            "5",
            "--train.loss.mode=+R",
        ]))
        .unwrap();
        assert_eq!(rest, args(&["aeval", "--seed", "3", "train"]));
        assert_eq!(
            ov,
            vec![
                ("train.epochs".to_string(), "5".to_string()),
                ("train.loss.mode".to_string(), "+R".to_string())
            ]
        );
        assert!(extract_overrides(args(&["aeval", "--train.epochs"])).is_err());
    }

    #[test]
    fn overrides_apply_after_seed() {
        let ov = vec![
            ("train.seed".to_string(), "11".to_string()),
            ("train.loss.mode".to_string(), "+R".to_string()),
            ("paths.model".to_string(), "7".to_string()),
            ("synth.perspective_bias.PC/expert".to_string(), "0.25".to_string()),
        ];
        let cfg = load(None, Some(4), false, &ov).unwrap();
        assert_eq!(cfg.train.seed, 11);
        assert_eq!(cfg.split.seed, 4);
        assert_eq!(cfg.train.loss.mode, aeval::model::LossMode::RegressionOnly);
        assert_eq!(cfg.paths.model, PathBuf::from("7"));
        let key = "PC/expert".parse().unwrap();
        assert_eq!(cfg.synth.perspective_bias[key], 0.25);
    }

    #[test]
    fn bad_overrides_are_config_errors() {
        for (k, v) in [("train.nope", "1"), ("train.epochs", "\"x\""), ("a.b", "1")] {
            let err = load(None, None, false, &[(k.to_string(), v.to_string())]).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{k}");
        }
    }

    #[test]
    fn default_round_trips() {
        let text = serde_json::to_string(&RunConfig::default()).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, RunConfig::default());
    }
}
