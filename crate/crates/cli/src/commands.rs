use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use aeval::annotations::{
    build_targets, consistency_filter, group_ratings, parse_ratings, spread_filter, write_targets,
    AnnotationError, ParseOptions, RatingRecord, TargetDistribution,
};
use aeval::dataset::{
    clips_from_records, read_split, split, verify_split, write_split, Bucket, ClipEntry, SplitFile,
};
use aeval::features::{
    bundle_targets, join_features, read_features, write_feature_set, FeatureError, FeatureSet,
    JoinedExample,
};
use aeval::metrics::{
    complete_table, cross_group_correlation, evaluate, split_perspectives, Level, ScoreTable,
};
use aeval::model::{predict, predicted_means, read_model, train, write_history, write_model, ModelError};
use aeval::report::{
    histogram_csv, pcc_table, prompt_length_histogram, render_report, score_histograms,
    CrossGroupSummary, Format, ReportBundle,
};
use aeval::synth::{generate, read_truth, write_truth};
use aeval::Dimension;

use crate::config::RunConfig;
use crate::CliError;

fn require(path: &Path, what: &str) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Config(format!("{what} {} does not exist", path.display())))
    }
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::Io(format!("{}: {e}", parent.display())))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let mut w = create(path)?;
    w.write_all(bytes)
        .and_then(|_| w.flush())
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn annotation_error(path: &Path, e: AnnotationError) -> CliError {
    match e {
        AnnotationError::Io(e) => CliError::Io(format!("{}: {e}", path.display())),
        other => CliError::Validation(format!("{}: {other}", path.display())),
    }
}

fn feature_error(path: &Path, e: FeatureError) -> CliError {
    match e {
        FeatureError::Io(e) => CliError::Io(format!("{}: {e}", path.display())),
        other => CliError::Validation(format!("{}: {other}", path.display())),
    }
}

fn model_error(e: ModelError) -> CliError {
    match e {
        ModelError::Io(e) => CliError::Io(e.to_string()),
        ModelError::InvalidConfig(_) | ModelError::EmptySet(_) | ModelError::DimensionMismatch { .. } => {
            CliError::Validation(e.to_string())
        }
        other => CliError::Runtime(other.to_string()),
    }
}

/// Manifest records after filtering, plus the targets built from them.
struct Annotations {
    records: usize,
    clips: Vec<ClipEntry>,
    kept: Vec<RatingRecord>,
    discarded: usize,
    incomplete: usize,
    targets: Vec<TargetDistribution>,
}

fn load_annotations(cfg: &RunConfig) -> Result<Annotations, CliError> {
    let path = &cfg.paths.manifest;
    require(path, "manifest")?;
    cfg.soft_label
        .validate()
        .map_err(|e| CliError::Config(e.to_string()))?;
    let records = parse_ratings(open(path)?, ParseOptions { strict: cfg.strict })
        .map_err(|e| annotation_error(path, e))?;
    let clips = clips_from_records(&records);
    let total = records.len();
    let mut part = consistency_filter(records, cfg.filter.probe_threshold);
    if let Some(threshold) = cfg.filter.spread_threshold {
        let spread = spread_filter(part.kept, threshold);
        part.kept = spread.kept;
        part.discarded.extend(spread.discarded);
    }
    let grouping = group_ratings(&part.kept, cfg.filter.required_raters, cfg.strict)
        .map_err(|e| annotation_error(path, e))?;
    let targets = build_targets(&grouping, &cfg.soft_label).map_err(|e| annotation_error(path, e))?;
    Ok(Annotations {
        records: total,
        clips,
        discarded: part.discarded.len(),
        kept: part.kept,
        incomplete: grouping.incomplete.len(),
        targets,
    })
}

fn load_features(cfg: &RunConfig) -> Result<FeatureSet, CliError> {
    let path = &cfg.paths.features;
    require(path, "feature file")?;
    read_features(open(path)?).map_err(|e| feature_error(path, e))
}

/// Reads the split file and checks it against the manifest's clips.
fn load_split(cfg: &RunConfig, clips: &[ClipEntry]) -> Result<SplitFile, CliError> {
    let path = &cfg.paths.split;
    require(path, "split file")?;
    let file = read_split(open(path)?)
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    let violations = verify_split(&file.split, clips, file.spec.mode);
    if let Some(first) = violations.first() {
        return Err(CliError::Validation(format!(
            "{}: {first} ({} violation(s) in total)",
            path.display(),
            violations.len()
        )));
    }
    Ok(file)
}

fn system_map(clips: &[ClipEntry]) -> BTreeMap<String, String> {
    clips
        .iter()
        .map(|c| (c.clip_id.clone(), c.system_id.clone()))
        .collect()
}

fn truth_table(targets: &[TargetDistribution], ids: Option<&BTreeSet<String>>) -> ScoreTable {
    bundle_targets(targets)
        .into_iter()
        .filter(|(id, _)| ids.is_none_or(|set| set.contains(id)))
        .map(|(id, bundle)| (id, bundle.map(|_, t| t.as_ref().map(|t| t.mean))))
        .collect()
}

pub fn synth(cfg: &RunConfig, out: Option<&Path>) -> Result<(), CliError> {
    let (manifest, features, truth) = match out {
        Some(dir) => (
            dir.join("ratings.jsonl"),
            dir.join("features.aevf"),
            dir.join("truth.json"),
        ),
        None => (
            cfg.paths.manifest.clone(),
            cfg.paths.features.clone(),
            cfg.paths.truth.clone(),
        ),
    };
    let data = generate(&cfg.synth).map_err(|e| CliError::Config(e.to_string()))?;

    let mut w = create(&manifest)?;
    aeval::annotations::write_ratings(&data.records, &mut w)
        .and_then(|_| w.flush())
        .map_err(|e| CliError::Io(format!("{}: {e}", manifest.display())))?;
    let w = create(&features)?;
    write_feature_set(&data.features, w).map_err(|e| feature_error(&features, e))?;
    let mut w = create(&truth)?;
    write_truth(&data.truth, &mut w).map_err(|e| CliError::Io(format!("{}: {e}", truth.display())))?;
    w.flush().map_err(|e| CliError::Io(e.to_string()))?;

    let probes = data.records.iter().filter(|r| r.probe_score.is_some()).count();
    println!(
        "systems: {}\nclips: {}\nrecords: {}\nprobe records: {}\nfeature dim: {}",
        cfg.synth.n_systems,
        data.clips.len(),
        data.records.len(),
        probes,
        data.features.dim
    );
    println!(
        "wrote {}, {}, {}",
        manifest.display(),
        features.display(),
        truth.display()
    );
    Ok(())
}

pub fn validate(cfg: &RunConfig) -> Result<(), CliError> {
    let ann = load_annotations(cfg)?;
    println!("records: {}", ann.records);
    println!("kept: {}", ann.kept.len());
    println!("discarded: {}", ann.discarded);
    println!("clips: {}", ann.clips.len());
    println!("targets: {}", ann.targets.len());
    println!("incomplete groups: {}", ann.incomplete);

    if cfg.paths.features.exists() {
        let features = load_features(cfg)?;
        let joined = join_features(&features, &ann.targets);
        println!("feature vectors: {} (dim {})", features.len(), features.dim);
        println!("joined clips: {}", joined.examples.len());
        println!("features without targets: {}", joined.features_only.len());
        println!("targets without features: {}", joined.targets_only.len());
        if cfg.strict && !(joined.features_only.is_empty() && joined.targets_only.is_empty()) {
            return Err(CliError::Validation(
                "feature file and manifest cover different clips".into(),
            ));
        }
    }
    if cfg.paths.split.exists() {
        let file = load_split(cfg, &ann.clips)?;
        println!(
            "split: {} train, {} val, {} test (no violations)",
            file.split.train.len(),
            file.split.val.len(),
            file.split.test.len()
        );
    }
    Ok(())
}

pub fn make_split(cfg: &RunConfig) -> Result<(), CliError> {
    let ann = load_annotations(cfg)?;
    let result = split(&ann.clips, &cfg.split).map_err(|e| CliError::Validation(e.to_string()))?;
    let file = SplitFile {
        spec: cfg.split,
        split: result,
    };
    let mut w = create(&cfg.paths.split)?;
    write_split(&file, &mut w).map_err(|e| CliError::Io(e.to_string()))?;
    w.flush().map_err(|e| CliError::Io(e.to_string()))?;

    let systems = system_map(&ann.clips);
    for bucket in Bucket::ALL {
        let ids = file.split.bucket(bucket);
        let n_systems = ids.iter().filter_map(|id| systems.get(id)).collect::<BTreeSet<_>>().len();
        println!("{bucket:?}: {} clips, {n_systems} systems", ids.len());
    }
    println!("wrote {}", cfg.paths.split.display());
    Ok(())
}

pub fn targets(cfg: &RunConfig) -> Result<(), CliError> {
    let ann = load_annotations(cfg)?;
    let mut w = create(&cfg.paths.targets)?;
    write_targets(&ann.targets, &mut w)
        .and_then(|_| w.flush())
        .map_err(|e| CliError::Io(e.to_string()))?;
    println!("records kept: {} of {}", ann.kept.len(), ann.records);
    println!("targets: {}", ann.targets.len());
    println!("incomplete groups: {}", ann.incomplete);
    println!("wrote {}", cfg.paths.targets.display());
    Ok(())
}

fn examples_in(examples: &[JoinedExample], ids: &BTreeSet<String>) -> Vec<JoinedExample> {
    examples
        .iter()
        .filter(|e| ids.contains(&e.features.clip_id))
        .cloned()
        .collect()
}

pub fn train_cmd(cfg: &RunConfig) -> Result<(), CliError> {
    cfg.train.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let ann = load_annotations(cfg)?;
    let features = load_features(cfg)?;
    let file = load_split(cfg, &ann.clips)?;
    let joined = join_features(&features, &ann.targets);
    if !joined.features_only.is_empty() || !joined.targets_only.is_empty() {
        eprintln!(
            "note: {} clips have features but no targets, {} have targets but no features",
            joined.features_only.len(),
            joined.targets_only.len()
        );
    }
    let train_set = examples_in(&joined.examples, &file.split.train);
    let val_set = examples_in(&joined.examples, &file.split.val);
    println!("train examples: {}", train_set.len());
    println!("validation examples: {}", val_set.len());

    let outcome = train(&train_set, &val_set, &cfg.train).map_err(model_error)?;

    let w = create(&cfg.paths.model)?;
    write_model(&outcome.model, w).map_err(model_error)?;
    let mut w = create(&cfg.paths.history)?;
    write_history(&outcome.history, &mut w)
        .and_then(|_| w.flush())
        .map_err(|e| CliError::Io(e.to_string()))?;

    println!("epoch  train_loss  val_loss");
    println!(
        "{:>5}  {:>10.4}  {:>8.4}",
        0, outcome.initial.train_loss, outcome.initial.val_loss
    );
    for r in &outcome.history {
        println!("{:>5}  {:>10.4}  {:>8.4}", r.epoch, r.train_loss, r.val_loss);
    }
    println!("selected epoch: {}", outcome.best_epoch);
    println!("wrote {}, {}", cfg.paths.model.display(), cfg.paths.history.display());
    Ok(())
}

pub fn eval(cfg: &RunConfig, on: Bucket) -> Result<(), CliError> {
    require(&cfg.paths.model, "model file")?;
    let model = read_model(open(&cfg.paths.model)?).map_err(|e| match e {
        ModelError::Io(e) => CliError::Io(e.to_string()),
        other => CliError::Validation(format!("{}: {other}", cfg.paths.model.display())),
    })?;
    let ann = load_annotations(cfg)?;
    let features = load_features(cfg)?;
    let file = load_split(cfg, &ann.clips)?;
    let ids = file.split.bucket(on);
    if ids.is_empty() {
        return Err(CliError::Validation(format!("{on:?} split is empty")));
    }

    let subset = features.subset(ids);
    let preds = predicted_means(&predict(&model, &subset).map_err(model_error)?);
    let truth = truth_table(&ann.targets, Some(ids));
    let systems = system_map(&ann.clips);
    let report = evaluate(&complete_table(&preds), &truth, &systems).map_err(|e| {
        if e.is_degenerate() {
            CliError::Degenerate(e.to_string())
        } else {
            CliError::Validation(e.to_string())
        }
    })?;

    let stem = match on {
        Bucket::Test => "eval".to_string(),
        other => format!("eval-{}", format!("{other:?}").to_lowercase()),
    };
    let bundle = ReportBundle {
        eval: Some(report.clone()),
        ..Default::default()
    };
    let mut formats = vec![Format::Csv, Format::Json];
    if cfg.report.svg {
        formats.push(Format::Svg);
    }
    let mut written = Vec::new();
    for format in formats {
        let path = cfg.paths.output_dir.join(format!("{stem}.{}", format.extension()));
        let bytes = render_report(&bundle, format).map_err(|e| CliError::Runtime(e.to_string()))?;
        write_bytes(&path, &bytes)?;
        written.push(path);
    }

    println!(
        "{on:?} set: {} clips, {} systems",
        report.n_utterances, report.n_systems
    );
    print!("{}", pcc_table(&report));
    println!(
        "mean PCC: utterance {:.3}, system {:.3}",
        report.mean_utterance_pcc(),
        report.mean_system_pcc()
    );
    let names: Vec<String> = written.iter().map(|p| p.display().to_string()).collect();
    println!("wrote {}", names.join(", "));
    Ok(())
}

fn read_clip_list(path: &Path) -> Result<Vec<ClipEntry>, CliError> {
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| CliError::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| {
            CliError::Validation(format!("{} line {}: {e}", path.display(), i + 1))
        })?);
    }
    Ok(out)
}

pub fn report(cfg: &RunConfig) -> Result<(), CliError> {
    let ann = load_annotations(cfg)?;
    let hists = score_histograms(&ann.kept);

    let prompts: Option<Vec<ClipEntry>> = match &cfg.paths.clips {
        Some(path) => {
            require(path, "clip list")?;
            Some(read_clip_list(path)?)
        }
        None if cfg.paths.truth.is_file() => Some(
            read_truth(open(&cfg.paths.truth)?)
                .map_err(|e| CliError::Validation(format!("{}: {e}", cfg.paths.truth.display())))?
                .clips,
        ),
        None => None,
    };
    let prompt_lengths = prompts
        .map(|clips| prompt_length_histogram(&clips, cfg.report.prompt_bin_width))
        .transpose()
        .map_err(|e| CliError::Config(e.to_string()))?;

    let (expert, nonexpert) = split_perspectives(&truth_table(&ann.targets, None));
    let systems = system_map(&ann.clips);
    let cross = match (
        cross_group_correlation(&expert, &nonexpert, Level::Clip, &systems),
        cross_group_correlation(&expert, &nonexpert, Level::System, &systems),
    ) {
        (Ok(clip), Ok(system)) => Some(CrossGroupSummary { clip, system }),
        (Err(e), _) | (_, Err(e)) => {
            eprintln!("note: cross-group correlation skipped: {e}");
            None
        }
    };

    let bundle = ReportBundle {
        eval: None,
        score_histograms: Some(hists.clone()),
        prompt_lengths: prompt_lengths.clone(),
        cross_group: cross,
    };
    let dir = &cfg.paths.output_dir;
    let mut written: Vec<PathBuf> = Vec::new();
    let json = dir.join("report.json");
    write_bytes(
        &json,
        &render_report(&bundle, Format::Json).map_err(|e| CliError::Runtime(e.to_string()))?,
    )?;
    written.push(json);
    if cfg.report.svg {
        let svg = dir.join("report.svg");
        write_bytes(
            &svg,
            &render_report(&bundle, Format::Svg).map_err(|e| CliError::Runtime(e.to_string()))?,
        )?;
        written.push(svg);
    }
    let csv_path = dir.join("histograms.csv");
    let all = hists.0.iter().chain(prompt_lengths.as_ref());
    write_bytes(
        &csv_path,
        &histogram_csv(all).map_err(|e| CliError::Runtime(e.to_string()))?,
    )?;
    written.push(csv_path);

    println!("records: {} kept of {}", ann.kept.len(), ann.records);
    println!("mean score per head:");
    for (key, h) in hists.iter() {
        let n = h.total();
        let mean = if n == 0 {
            f64::NAN
        } else {
            h.counts
                .iter()
                .enumerate()
                .map(|(i, c)| (i + 1) as f64 * *c as f64)
                .sum::<f64>()
                / n as f64
        };
        println!("  {:<13} n={n:<6} mean={mean:.3}", key.to_string());
    }
    if let Some(c) = cross {
        println!("expert vs non-expert PCC:");
        for d in Dimension::ALL {
            println!(
                "  {d}  clip {:.3}  system {:.3}",
                c.clip[d.index()],
                c.system[d.index()]
            );
        }
    }
    let names: Vec<String> = written.iter().map(|p| p.display().to_string()).collect();
    println!("wrote {}", names.join(", "));
    Ok(())
}
