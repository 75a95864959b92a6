//! End-to-end experiment plumbing: dataset spec strings, the experiment
//! config file, and the train / eval / report pipeline the CLI and the
//! examples drive. Artifacts land in a fixed layout under the output
//! directory:
//!
//! ```text
//! out/
//!   checkpoints/  model_<mask>.ckpt
//!   predictions/  <tag>.mcpd + <tag>.labels (+ optional <tag>_probs.csv)
//!   reports/      training_log.csv, eval_<tag>.json, eval_<tag>_samples.csv,
//!                 curves_<tag>.{csv,svg}, referral_<tag>.{csv,svg},
//!                 convergence_<tag>.{csv,svg}, summary.json
//! ```
//!
//! Tags embed the data spec, mode, keep probability and pass count
//! (`digits-test-500-1_mc_p0.5_T100`), so distinct runs coexist and a rerun
//! of the same command overwrites its own files. Nothing here writes
//! timestamps or machine info: every artifact is a pure function of config
//! and seeds.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{self, digits, LabeledDataset};
use crate::error::{Error, Result};
use crate::eval::{
    convergence_curve, ks_two_sample, random_referral_baseline, referral_curve, sweep_curves,
};
use crate::inference::{mc_predict, probs_csv, write_labels_file, write_mcpd, McPredictive};
use crate::layers::NetworkSpec;
use crate::masks::{KeepProb, MaskConfig, MaskMode};
use crate::report::{
    self, convergence_csv, line_chart_svg, metric_curve_csv, per_sample_csv, referral_csv,
    vacuous_range, Series,
};
use crate::train::{train, Checkpoint, CheckpointMeta, TrainConfig};
use crate::uncertainty::{Measure, UncertaintyVector};

// ---------------------------------------------------------------------------
// Dataset specs
// ---------------------------------------------------------------------------

/// A parsed dataset spec string. Accepted forms:
///
/// - `idx:<images-path>:<labels-path>` — IDX file pair
/// - `digits:<train|test>[:count[:seed]]` — bundled digit corpus, expanded
///   to 28x28 (defaults: 2000 train / 500 test samples, seed 0)
/// - `gaussians:<classes>:<per-class>:<dim>:<separation>:<seed>` — synthetic
///   blobs for fast smoke runs
#[derive(Clone, Debug, PartialEq)]
pub enum DataSpec {
    Idx { images: PathBuf, labels: PathBuf },
    Digits { split: digits::Split, count: usize, seed: u64 },
    Gaussians { classes: usize, per_class: usize, dim: usize, separation: f64, seed: u64 },
}

fn num<T: std::str::FromStr>(what: &str, s: &str) -> Result<T> {
    s.parse().map_err(|_| Error::Config(format!("bad {what} '{s}' in data spec")))
}

impl DataSpec {
    pub fn parse(spec: &str) -> Result<DataSpec> {
        let parts: Vec<&str> = spec.split(':').collect();
        match parts.as_slice() {
            ["idx", images, labels] => {
                Ok(DataSpec::Idx { images: images.into(), labels: labels.into() })
            }
            ["digits", rest @ ..] if !rest.is_empty() => {
                let split = match rest[0] {
                    "train" => digits::Split::Train,
                    "test" => digits::Split::Test,
                    other => {
                        return Err(Error::Config(format!(
                            "digit split must be train or test, got '{other}'"
                        )))
                    }
                };
                let count = match rest.get(1) {
                    Some(s) => num("count", s)?,
                    None if split == digits::Split::Train => 2000,
                    None => 500,
                };
                let seed = match rest.get(2) {
                    Some(s) => num("seed", s)?,
                    None => 0,
                };
                if rest.len() > 3 {
                    return Err(Error::Config(format!("too many fields in data spec '{spec}'")));
                }
                Ok(DataSpec::Digits { split, count, seed })
            }
            ["gaussians", c, n, d, sep, seed] => Ok(DataSpec::Gaussians {
                classes: num("class count", c)?,
                per_class: num("per-class count", n)?,
                dim: num("dimension", d)?,
                separation: num("separation", sep)?,
                seed: num("seed", seed)?,
            }),
            _ => Err(Error::Config(format!(
                "unrecognized data spec '{spec}'; expected idx:<images>:<labels>, \
                 digits:<train|test>[:count[:seed]], or \
                 gaussians:<classes>:<per-class>:<dim>:<separation>:<seed>"
            ))),
        }
    }

    pub fn load(&self) -> Result<LabeledDataset> {
        match self {
            DataSpec::Idx { images, labels } => data::read_idx_dataset(images, labels),
            DataSpec::Digits { split, count, seed } => digits::expanded(*split, *count, *seed),
            DataSpec::Gaussians { classes, per_class, dim, separation, seed } => {
                data::make_synthetic_gaussians(*classes, *per_class, *dim, *separation, *seed)
            }
        }
    }

    /// The spec string with all defaults filled in (echoed into metadata).
    pub fn canonical(&self) -> String {
        match self {
            DataSpec::Idx { images, labels } => {
                format!("idx:{}:{}", images.display(), labels.display())
            }
            DataSpec::Digits { split, count, seed } => {
                let s = match split {
                    digits::Split::Train => "train",
                    digits::Split::Test => "test",
                };
                format!("digits:{s}:{count}:{seed}")
            }
            DataSpec::Gaussians { classes, per_class, dim, separation, seed } => {
                format!("gaussians:{classes}:{per_class}:{dim}:{separation}:{seed}")
            }
        }
    }

    /// Filename-safe identifier for this dataset.
    pub fn tag(&self) -> String {
        match self {
            DataSpec::Idx { images, .. } => {
                let stem = images.file_stem().map(|s| s.to_string_lossy().into_owned());
                sanitize_tag(&stem.unwrap_or_else(|| "idx".into()))
            }
            _ => sanitize_tag(&self.canonical()),
        }
    }
}

/// Parse and load in one step.
pub fn parse_data_spec(spec: &str) -> Result<LabeledDataset> {
    DataSpec::parse(spec)?.load()
}

/// Lowercase alphanumerics, everything else collapsed to single dashes.
fn sanitize_tag(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        if c.is_ascii_alphanumeric() || c == '.' {
            out.push(c.to_ascii_lowercase());
        } else if !out.ends_with('-') {
            out.push('-');
        }
    }
    out.trim_matches('-').to_string()
}

// ---------------------------------------------------------------------------
// Networks and output layout
// ---------------------------------------------------------------------------

/// "mlp" / "lenet-small" presets sized to the dataset, or a path to a
/// network spec JSON file.
pub fn resolve_network(name: &str, data: &LabeledDataset) -> Result<NetworkSpec> {
    match name {
        "mlp" | "lenet-small" => NetworkSpec::from_preset(
            name,
            data.inputs.sample_shape().to_vec(),
            data.class_count,
        ),
        path => {
            let p = Path::new(path);
            if !p.is_file() {
                return Err(Error::Config(format!(
                    "unknown network '{name}': not a preset (mlp, lenet-small) and no such file"
                )));
            }
            let spec: NetworkSpec = serde_json::from_str(&fs::read_to_string(p)?)
                .map_err(|e| Error::Config(format!("bad network spec {name}: {e}")))?;
            spec.validate()?;
            Ok(spec)
        }
    }
}

#[derive(Clone, Debug)]
pub struct OutputLayout {
    pub checkpoints: PathBuf,
    pub predictions: PathBuf,
    pub reports: PathBuf,
}

impl OutputLayout {
    pub fn new(root: &Path) -> OutputLayout {
        OutputLayout {
            checkpoints: root.join("checkpoints"),
            predictions: root.join("predictions"),
            reports: root.join("reports"),
        }
    }

    pub fn create(&self) -> Result<()> {
        for dir in [&self.checkpoints, &self.predictions, &self.reports] {
            fs::create_dir_all(dir)?;
        }
        Ok(())
    }
}

fn keep_prob_tag(mask: &MaskConfig) -> String {
    match (&mask.mode, &mask.keep_prob) {
        (MaskMode::None, _) => "1".into(), // maskless forward == keep everything
        (_, KeepProb::Shared(p)) => format!("{p}"),
        (_, KeepProb::PerLayer(_)) => "mix".into(),
    }
}

fn mask_tag(mask: &MaskConfig) -> String {
    match mask.mode {
        MaskMode::None => "none".into(),
        MaskMode::Dropout => format!("dropout_p{}", keep_prob_tag(mask)),
        MaskMode::Dropconnect => format!("dropconnect_p{}", keep_prob_tag(mask)),
    }
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// "mlp", "lenet-small", or a path to a network spec JSON file.
    pub network: String,
    /// Dataset spec string, e.g. "digits:train:2000:7".
    pub data: String,
    pub train: TrainConfig,
    pub out_dir: PathBuf,
}

pub fn load_experiment_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("bad experiment config {}: {e}", path.display())))
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub stats: Vec<crate::train::EpochStats>,
}

/// Train per the config and write `checkpoints/model_<mask>.ckpt` plus the
/// per-epoch log CSV. Rerunning with the same config reproduces the
/// checkpoint byte for byte.
pub fn run_train(config: &ExperimentConfig) -> Result<TrainOutput> {
    let spec_str = DataSpec::parse(&config.data)?;
    let dataset = spec_str.load()?;
    let network = resolve_network(&config.network, &dataset)?;
    let (params, stats) = train(&network, &dataset, &config.train)?;

    let layout = OutputLayout::new(&config.out_dir);
    layout.create()?;
    let meta = CheckpointMeta {
        epochs_trained: stats.len(),
        final_objective: stats.last().map(|s| s.mean_objective).unwrap_or(f64::INFINITY),
    };
    let ckpt = Checkpoint { spec: network, params, mask: config.train.mask.clone(), meta };
    let checkpoint = layout.checkpoints.join(format!("model_{}.ckpt", mask_tag(&ckpt.mask)));
    ckpt.save(&checkpoint)?;
    let log = layout.reports.join("training_log.csv");
    fs::write(&log, report::training_log_csv(&stats))?;
    Ok(TrainOutput { checkpoint, log, stats })
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    /// One deterministic maskless pass.
    Standard,
    /// `passes` mask-sampled passes.
    Mc,
}

impl std::str::FromStr for EvalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<EvalMode> {
        match s {
            "standard" => Ok(EvalMode::Standard),
            "mc" => Ok(EvalMode::Mc),
            other => Err(Error::Config(format!("mode must be standard or mc, got '{other}'"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct EvalOptions {
    pub checkpoint: PathBuf,
    pub data: String,
    pub mode: EvalMode,
    pub passes: usize,
    /// Override the checkpoint's shared keep probability.
    pub keep_prob: Option<f64>,
    /// Override the checkpoint's mask base seed.
    pub mask_seed: Option<u64>,
    /// Rotate inputs by a per-sample angle drawn from this range (degrees).
    pub rotate: Option<(f64, f64)>,
    /// Fill dark pixels with uniform noise up to this level.
    pub background: Option<f64>,
    pub ood_seed: u64,
    pub write_probs_csv: bool,
    pub out_dir: PathBuf,
}

impl EvalOptions {
    pub fn new(checkpoint: impl Into<PathBuf>, data: &str, out_dir: impl Into<PathBuf>) -> EvalOptions {
        EvalOptions {
            checkpoint: checkpoint.into(),
            data: data.into(),
            mode: EvalMode::Mc,
            passes: 100,
            keep_prob: None,
            mask_seed: None,
            rotate: None,
            background: None,
            ood_seed: 0,
            write_probs_csv: false,
            out_dir: out_dir.into(),
        }
    }
}

/// Everything needed to reproduce or post-process one eval run; written as
/// `reports/eval_<tag>.json` next to the prediction files.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalMetadata {
    pub tag: String,
    pub checkpoint: PathBuf,
    /// Canonical dataset spec with defaults filled in.
    pub data: String,
    pub rotate: Option<(f64, f64)>,
    pub background: Option<f64>,
    pub ood_seed: u64,
    pub mode: EvalMode,
    pub passes: usize,
    /// The mask config actually used (after any overrides).
    pub mask: MaskConfig,
    pub samples: usize,
    pub classes: usize,
    /// Error of the argmax of the predictive mean.
    pub error_rate: f64,
    pub predictions: PathBuf,
    pub labels: PathBuf,
}

#[derive(Clone, Debug)]
pub struct EvalOutput {
    pub metadata: EvalMetadata,
    pub metadata_path: PathBuf,
    pub samples_csv: PathBuf,
}

fn load_eval_dataset(o: &EvalOptions, spec: &DataSpec) -> Result<LabeledDataset> {
    let mut dataset = spec.load()?;
    if let Some(range) = o.rotate {
        dataset = data::make_rotated(&dataset, range, o.ood_seed)?;
    }
    if let Some(scale) = o.background {
        dataset = data::make_background(&dataset, scale, o.ood_seed.wrapping_add(1))?;
    }
    Ok(dataset)
}

fn eval_tag(o: &EvalOptions, spec: &DataSpec, mask: &MaskConfig) -> String {
    let mut tag = spec.tag();
    if let Some((lo, hi)) = o.rotate {
        tag.push_str(&sanitize_tag(&format!("-rot{lo}-{hi}")));
    }
    if let Some(scale) = o.background {
        tag.push_str(&sanitize_tag(&format!("-bg{scale}")));
    }
    match o.mode {
        EvalMode::Standard => format!("{tag}_standard"),
        EvalMode::Mc => format!("{tag}_mc_p{}_T{}", keep_prob_tag(mask), o.passes),
    }
}

/// Run the checkpoint over a dataset and write the prediction tensor, label
/// sidecar, per-sample uncertainty CSV and metadata JSON.
pub fn run_eval(o: &EvalOptions) -> Result<EvalOutput> {
    let ckpt = Checkpoint::load(&o.checkpoint)?;
    let data_spec = DataSpec::parse(&o.data)?;
    let dataset = load_eval_dataset(o, &data_spec)?;

    if dataset.inputs.sample_shape() != ckpt.spec.input_shape.as_slice() {
        return Err(Error::Input(format!(
            "dataset samples are {:?} but the network expects {:?}",
            dataset.inputs.sample_shape(),
            ckpt.spec.input_shape
        )));
    }
    let classes = ckpt.spec.class_count()?;
    if classes < dataset.class_count {
        return Err(Error::Input(format!(
            "network predicts {classes} classes but data has labels up to {}",
            dataset.class_count - 1
        )));
    }

    let (mc, mask, passes) = match o.mode {
        EvalMode::Standard => {
            let probs = crate::inference::standard_predict(&ckpt.spec, &ckpt.params, &dataset.inputs)?;
            let n = probs.shape()[0];
            let mc = McPredictive::new(probs.reshape(vec![1, n, classes])?, None)?;
            (mc, MaskConfig::none(), 1)
        }
        EvalMode::Mc => {
            let mut mask = ckpt.mask.clone();
            if let Some(p) = o.keep_prob {
                if !mask.is_stochastic() {
                    return Err(Error::Config(
                        "keep-prob override needs a mask-trained checkpoint (mask mode is none)"
                            .into(),
                    ));
                }
                mask = mask.with_keep_prob(p);
            }
            if let Some(seed) = o.mask_seed {
                mask.base_seed = seed;
            }
            let mc = mc_predict(&ckpt.spec, &ckpt.params, &mask, &dataset.inputs, o.passes)?;
            (mc, mask, o.passes)
        }
    };

    let report_vec = UncertaintyVector::from_mc(&mc);
    let error_rate = report_vec.error_rate(&dataset.labels);
    let tag = eval_tag(o, &data_spec, &mask);

    let layout = OutputLayout::new(&o.out_dir);
    layout.create()?;
    let predictions = layout.predictions.join(format!("{tag}.mcpd"));
    write_mcpd(&mc, &predictions)?;
    let labels_path = data::labels_sidecar(&predictions);
    write_labels_file(&dataset.labels, &labels_path)?;
    if o.write_probs_csv {
        fs::write(layout.predictions.join(format!("{tag}_probs.csv")), probs_csv(&mc))?;
    }
    let samples_csv = layout.reports.join(format!("eval_{tag}_samples.csv"));
    fs::write(&samples_csv, per_sample_csv(&report_vec, &dataset.labels)?)?;

    let metadata = EvalMetadata {
        tag: tag.clone(),
        checkpoint: o.checkpoint.clone(),
        data: data_spec.canonical(),
        rotate: o.rotate,
        background: o.background,
        ood_seed: o.ood_seed,
        mode: o.mode,
        passes,
        mask,
        samples: dataset.len(),
        classes,
        error_rate,
        predictions: predictions.clone(),
        labels: labels_path,
    };
    let metadata_path = layout.reports.join(format!("eval_{tag}.json"));
    fs::write(&metadata_path, pretty_json(&metadata)?)?;
    Ok(EvalOutput { metadata, metadata_path, samples_csv })
}

fn pretty_json<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value)
        .map_err(|e| Error::State(format!("unserializable value: {e}")))
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct ReportOptions {
    /// Output directory of earlier train/eval runs.
    pub from: PathBuf,
    pub referral: bool,
    pub convergence: bool,
    pub ks: bool,
    pub measure: Measure,
    pub grid: usize,
    pub referral_fractions: Vec<f64>,
    pub baseline_repetitions: usize,
    pub baseline_seed: u64,
    pub convergence_t_list: Vec<usize>,
    pub convergence_repetitions: usize,
    /// Convergence reruns the network many times; cap sample count for it.
    pub convergence_max_samples: usize,
    pub convergence_seed: u64,
}

impl ReportOptions {
    pub fn new(from: impl Into<PathBuf>) -> ReportOptions {
        ReportOptions {
            from: from.into(),
            referral: false,
            convergence: false,
            ks: false,
            measure: Measure::MutualInformation,
            grid: 101,
            referral_fractions: (1..=20).map(|i| i as f64 / 20.0).collect(),
            baseline_repetitions: 20,
            baseline_seed: 0xBA5E,
            convergence_t_list: vec![1, 2, 4, 8, 16, 32],
            convergence_repetitions: 3,
            convergence_max_samples: 256,
            convergence_seed: 0xC04E,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ReportOutput {
    pub summary_path: PathBuf,
    pub summary: serde_json::Value,
    pub written: Vec<PathBuf>,
}

fn write_artifact(path: PathBuf, content: String, written: &mut Vec<PathBuf>) -> Result<()> {
    fs::write(&path, content)?;
    written.push(path);
    Ok(())
}

/// Sweep metric curves (and optionally referral / convergence / KS analyses)
/// for every prediction tensor under `from/predictions`, writing CSVs, SVG
/// charts and a `summary.json` that echoes the resolved options. The
/// top-level AUCs come from the run with the most passes.
pub fn run_report(o: &ReportOptions) -> Result<ReportOutput> {
    if o.grid < 2 {
        return Err(Error::Config(format!("threshold grid needs >= 2 points, got {}", o.grid)));
    }
    let layout = OutputLayout::new(&o.from);
    let mut entries: Vec<PathBuf> = match fs::read_dir(&layout.predictions) {
        Ok(dir) => dir
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "mcpd"))
            .collect(),
        Err(e) => {
            return Err(Error::Input(format!(
                "no predictions directory under {} ({e}); run eval first",
                o.from.display()
            )))
        }
    };
    entries.sort();
    if entries.is_empty() {
        return Err(Error::Input(format!(
            "no .mcpd prediction files under {}; run eval first",
            layout.predictions.display()
        )));
    }
    fs::create_dir_all(&layout.reports)?;

    let mut written = Vec::new();
    let mut runs = Vec::new();
    let mut best: Option<(usize, usize)> = None; // (passes, runs index)

    for path in &entries {
        let tag = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let (mc, labels) = data::read_prediction_tensor(path)?;
        let report_vec = UncertaintyVector::from_mc(&mc);
        let u = report_vec.measure(o.measure);
        let predicted = &report_vec.predicted;

        let curves = sweep_curves(predicted, &labels, u, o.grid)?;
        write_artifact(
            layout.reports.join(format!("curves_{tag}.csv")),
            metric_curve_csv(&curves),
            &mut written,
        )?;
        let thresholds: Vec<f64> = curves.points.iter().map(|p| p.threshold).collect();
        let curve_series = vec![
            Series::new("NPV", zip_xy(&thresholds, curves.points.iter().map(|p| p.npv)), "#1f77b4"),
            Series::new("TPR", zip_xy(&thresholds, curves.points.iter().map(|p| p.tpr)), "#2ca02c"),
            Series::new("UA", zip_xy(&thresholds, curves.points.iter().map(|p| p.ua)), "#d62728"),
        ];
        write_artifact(
            layout.reports.join(format!("curves_{tag}.svg")),
            line_chart_svg(
                &format!("{tag}: metrics vs normalized {} threshold", o.measure.name()),
                "normalized uncertainty threshold",
                "metric value",
                &curve_series,
            )?,
            &mut written,
        )?;

        let metadata = read_eval_metadata(&layout, &tag);
        let mut run = serde_json::json!({
            "tag": tag,
            "samples": mc.sample_count(),
            "passes": mc.pass_count(),
            "error_rate": report_vec.error_rate(&labels),
            "auc_npv": curves.auc_npv,
            "auc_tpr": curves.auc_tpr,
            "auc_ua": curves.auc_ua,
            "npv_vacuous_thresholds": vacuous_range(&curves.points, |p| p.npv_vacuous),
            "tpr_vacuous_thresholds": vacuous_range(&curves.points, |p| p.tpr_vacuous),
            "eval": metadata,
        });

        if o.referral {
            let points = referral_curve(predicted, &labels, u, &o.referral_fractions)?;
            let baseline = random_referral_baseline(
                predicted,
                &labels,
                &o.referral_fractions,
                o.baseline_repetitions,
                o.baseline_seed,
            )?;
            write_artifact(
                layout.reports.join(format!("referral_{tag}.csv")),
                referral_csv(&points, Some(&baseline))?,
                &mut written,
            )?;
            let series = vec![
                Series::new(
                    "keep least uncertain",
                    points.iter().map(|p| (p.fraction, p.accuracy)).collect(),
                    "#1f77b4",
                ),
                Series::dashed(
                    "random referral",
                    baseline.iter().map(|p| (p.fraction, p.mean_accuracy)).collect(),
                    "#7f7f7f",
                ),
            ];
            write_artifact(
                layout.reports.join(format!("referral_{tag}.svg")),
                line_chart_svg(
                    &format!("{tag}: accuracy vs fraction retained"),
                    "fraction of samples retained",
                    "accuracy on retained samples",
                    &series,
                )?,
                &mut written,
            )?;
            run["referral"] = serde_json::json!({
                "fractions": o.referral_fractions,
                "accuracy": points.iter().map(|p| p.accuracy).collect::<Vec<_>>(),
                "baseline_mean": baseline.iter().map(|p| p.mean_accuracy).collect::<Vec<_>>(),
                "baseline_std": baseline.iter().map(|p| p.std_accuracy).collect::<Vec<_>>(),
            });
        }

        if o.ks {
            let correct: Vec<f64> = u
                .iter()
                .zip(predicted.iter().zip(&labels))
                .filter(|(_, (p, l))| p == l)
                .map(|(v, _)| *v)
                .collect();
            let incorrect: Vec<f64> = u
                .iter()
                .zip(predicted.iter().zip(&labels))
                .filter(|(_, (p, l))| p != l)
                .map(|(v, _)| *v)
                .collect();
            run["ks"] = if correct.is_empty() || incorrect.is_empty() {
                serde_json::json!({
                    "skipped": "needs both correct and incorrect predictions"
                })
            } else {
                serde_json::to_value(ks_two_sample(&correct, &incorrect)?)
                    .expect("plain struct serializes")
            };
        }

        if o.convergence {
            run["convergence"] = convergence_report(o, &layout, &tag, &metadata, &mut written)?;
        }

        let passes = mc.pass_count();
        if best.is_none_or(|(bp, _)| passes > bp) {
            best = Some((passes, runs.len()));
        }
        runs.push(run);
    }

    let (_, best_idx) = best.expect("at least one run");
    let summary = serde_json::json!({
        "measure": o.measure.name(),
        "grid": o.grid,
        "auc_npv": runs[best_idx]["auc_npv"],
        "auc_tpr": runs[best_idx]["auc_tpr"],
        "auc_ua": runs[best_idx]["auc_ua"],
        "primary_run": runs[best_idx]["tag"],
        "options": {
            "referral": o.referral,
            "convergence": o.convergence,
            "ks": o.ks,
            "referral_fractions": o.referral_fractions,
            "baseline_repetitions": o.baseline_repetitions,
            "baseline_seed": o.baseline_seed,
            "convergence_t_list": o.convergence_t_list,
            "convergence_repetitions": o.convergence_repetitions,
            "convergence_max_samples": o.convergence_max_samples,
            "convergence_seed": o.convergence_seed,
        },
        "runs": runs,
    });
    let summary_path = layout.reports.join("summary.json");
    fs::write(&summary_path, pretty_json(&summary)?)?;
    written.push(summary_path.clone());
    Ok(ReportOutput { summary_path, summary, written })
}

fn zip_xy(xs: &[f64], ys: impl Iterator<Item = f64>) -> Vec<(f64, f64)> {
    xs.iter().copied().zip(ys).collect()
}

fn read_eval_metadata(layout: &OutputLayout, tag: &str) -> Option<EvalMetadata> {
    let path = layout.reports.join(format!("eval_{tag}.json"));
    serde_json::from_str(&fs::read_to_string(path).ok()?).ok()
}

/// Recompute the error-vs-passes curve for one eval run. Needs the run's
/// metadata (checkpoint + dataset) and a stochastic mask; otherwise reports
/// why it was skipped instead of failing the whole report.
fn convergence_report(
    o: &ReportOptions,
    layout: &OutputLayout,
    tag: &str,
    metadata: &Option<EvalMetadata>,
    written: &mut Vec<PathBuf>,
) -> Result<serde_json::Value> {
    let Some(meta) = metadata else {
        return Ok(serde_json::json!({
            "skipped": "no eval metadata for this run (externally produced predictions?)"
        }));
    };
    if !meta.mask.is_stochastic() {
        return Ok(serde_json::json!({
            "skipped": "run used no masks, so more passes cannot change anything"
        }));
    }
    let ckpt = Checkpoint::load(&meta.checkpoint)?;
    let eval_opts = EvalOptions {
        rotate: meta.rotate,
        background: meta.background,
        ood_seed: meta.ood_seed,
        ..EvalOptions::new(&meta.checkpoint, &meta.data, &o.from)
    };
    let dataset = load_eval_dataset(&eval_opts, &DataSpec::parse(&meta.data)?)?;
    let dataset = dataset.take(o.convergence_max_samples)?;
    let curve = convergence_curve(
        &ckpt.spec,
        &ckpt.params,
        &meta.mask,
        &dataset,
        &o.convergence_t_list,
        o.convergence_repetitions,
        o.convergence_seed,
    )?;
    write_artifact(
        layout.reports.join(format!("convergence_{tag}.csv")),
        convergence_csv(&curve),
        written,
    )?;
    let ts: Vec<f64> = curve.points.iter().map(|p| p.passes as f64).collect();
    let series = vec![
        Series::new(
            "MC error (mean over reps)",
            zip_xy(&ts, curve.points.iter().map(|p| p.mean_error)),
            "#1f77b4",
        ),
        Series::dashed(
            "deterministic reference",
            vec![(ts[0], curve.reference_error), (*ts.last().unwrap(), curve.reference_error)],
            "#7f7f7f",
        ),
    ];
    write_artifact(
        layout.reports.join(format!("convergence_{tag}.svg")),
        line_chart_svg(
            &format!("{tag}: error vs MC passes"),
            "MC passes",
            "classification error",
            &series,
        )?,
        written,
    )?;
    Ok(serde_json::to_value(&curve).expect("plain struct serializes"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::read_mcpd;
    use tempfile::tempdir;

    fn smoke_config(out: &Path) -> ExperimentConfig {
        ExperimentConfig {
            network: "mlp".into(),
            data: "gaussians:3:40:2:8:11".into(),
            train: TrainConfig {
                learning_rate: 0.1,
                l2_lambda: 1e-4,
                batch_size: 16,
                epochs: 4,
                mask: MaskConfig::dropconnect(0.8, 5),
                init_seed: 1,
                shuffle_seed: 2,
                momentum: 0.0,
            },
            out_dir: out.to_path_buf(),
        }
    }

    #[test]
    fn data_specs_parse_load_and_echo() {
        let spec = DataSpec::parse("digits:test").unwrap();
        assert_eq!(spec, DataSpec::Digits { split: digits::Split::Test, count: 500, seed: 0 });
        assert_eq!(spec.canonical(), "digits:test:500:0");
        assert_eq!(spec.tag(), "digits-test-500-0");

        let spec = DataSpec::parse("gaussians:3:10:2:8.5:7").unwrap();
        let ds = spec.load().unwrap();
        assert_eq!(ds.len(), 30);
        assert_eq!(spec.canonical(), "gaussians:3:10:2:8.5:7");

        let spec = DataSpec::parse("digits:train:12:3").unwrap();
        let ds = spec.load().unwrap();
        assert_eq!(ds.len(), 12);
        assert_eq!(ds.inputs.sample_shape(), &[28, 28, 1]);

        for bad in [
            "digits",
            "digits:validation",
            "digits:train:xyz",
            "digits:train:1:2:3",
            "gaussians:3:10",
            "mystery:path",
            "idx:only-images",
        ] {
            assert!(
                matches!(DataSpec::parse(bad), Err(Error::Config(_))),
                "{bad} should be rejected"
            );
        }
    }

    #[test]
    fn tags_are_filename_safe() {
        assert_eq!(sanitize_tag("idx:/a b/c.bin"), "idx-a-b-c.bin");
        assert_eq!(sanitize_tag("--x--"), "x");
        let spec = DataSpec::parse("idx:/tmp/my images:/tmp/labels").unwrap();
        assert_eq!(spec.tag(), "my-images");
    }

    #[test]
    fn network_resolution() {
        let ds = DataSpec::parse("gaussians:3:5:4:8:1").unwrap().load().unwrap();
        let mlp = resolve_network("mlp", &ds).unwrap();
        assert_eq!(mlp.input_shape, vec![4]);
        assert_eq!(mlp.class_count().unwrap(), 3);
        assert!(matches!(resolve_network("resnet", &ds), Err(Error::Config(_))));

        let dir = tempdir().unwrap();
        let path = dir.path().join("net.json");
        fs::write(&path, serde_json::to_string(&mlp).unwrap()).unwrap();
        let from_file = resolve_network(path.to_str().unwrap(), &ds).unwrap();
        assert_eq!(from_file, mlp);

        fs::write(&path, "{not json").unwrap();
        assert!(matches!(
            resolve_network(path.to_str().unwrap(), &ds),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn train_writes_reproducible_checkpoint_and_log() {
        let dir = tempdir().unwrap();
        let config = smoke_config(dir.path());
        let out = run_train(&config).unwrap();
        assert!(out.checkpoint.ends_with("checkpoints/model_dropconnect_p0.8.ckpt"));
        let first = fs::read(&out.checkpoint).unwrap();
        let log = fs::read_to_string(&out.log).unwrap();
        assert_eq!(log.lines().count(), 1 + config.train.epochs);

        let out2 = run_train(&config).unwrap();
        assert_eq!(fs::read(&out2.checkpoint).unwrap(), first, "rerun must be byte-identical");
    }

    #[test]
    fn eval_standard_matches_mc_at_keep_prob_one() {
        let dir = tempdir().unwrap();
        let config = smoke_config(dir.path());
        let trained = run_train(&config).unwrap();

        let mut opts = EvalOptions::new(&trained.checkpoint, "gaussians:3:20:2:8:99", dir.path());
        opts.mode = EvalMode::Standard;
        let standard = run_eval(&opts).unwrap();

        let mut opts = EvalOptions::new(&trained.checkpoint, "gaussians:3:20:2:8:99", dir.path());
        opts.passes = 7;
        opts.keep_prob = Some(1.0);
        let mc = run_eval(&opts).unwrap();

        let a = read_mcpd(&standard.metadata.predictions).unwrap();
        let b = read_mcpd(&mc.metadata.predictions).unwrap();
        assert_eq!(a.pass_count(), 1);
        assert_eq!(b.pass_count(), 7);
        assert_eq!(a.predictive_mean().data(), b.predictive_mean().data(), "p=1 must be exact");
        assert_eq!(standard.metadata.error_rate, mc.metadata.error_rate);

        // per-sample CSV: one row per sample (3 classes x 20 each) + header
        let csv = fs::read_to_string(&mc.samples_csv).unwrap();
        assert_eq!(csv.trim_end().lines().count(), 61);

        // metadata round-trips through serde and echoes resolved values
        let meta: EvalMetadata =
            serde_json::from_str(&fs::read_to_string(&mc.metadata_path).unwrap()).unwrap();
        assert_eq!(meta.data, "gaussians:3:20:2:8:99");
        assert_eq!(meta.passes, 7);
        assert_eq!(meta.tag, mc.metadata.tag);
    }

    #[test]
    fn eval_rejects_bad_combinations() {
        let dir = tempdir().unwrap();
        let mut config = smoke_config(dir.path());
        config.train.mask = MaskConfig::none();
        let trained = run_train(&config).unwrap();

        // keep-prob override without a masked model
        let mut opts = EvalOptions::new(&trained.checkpoint, "gaussians:3:10:2:8:1", dir.path());
        opts.keep_prob = Some(0.5);
        assert!(matches!(run_eval(&opts), Err(Error::Config(_))));

        // wrong input shape
        let opts = EvalOptions::new(&trained.checkpoint, "digits:test:10:1", dir.path());
        assert!(matches!(run_eval(&opts), Err(Error::Input(_))));

        // missing checkpoint
        let opts = EvalOptions::new(dir.path().join("nope.ckpt"), "gaussians:3:10:2:8:1", dir.path());
        assert!(matches!(run_eval(&opts), Err(Error::Io(_))));
    }

    #[test]
    fn ood_flags_change_the_data_and_the_tag() {
        // rotate/background need image-shaped data, so train a tiny mlp on
        // the digit corpus instead of the gaussian blobs
        let dir = tempdir().unwrap();
        let mut config = smoke_config(dir.path());
        config.data = "digits:train:40:3".into();
        config.train.epochs = 1;
        let trained = run_train(&config).unwrap();
        let mut opts = EvalOptions::new(&trained.checkpoint, "digits:test:12:5", dir.path());
        opts.passes = 3;
        let clean = run_eval(&opts).unwrap();
        opts.background = Some(0.4);
        opts.rotate = Some((-30.0, 30.0));
        let noisy = run_eval(&opts).unwrap();
        assert_ne!(clean.metadata.tag, noisy.metadata.tag);
        assert!(noisy.metadata.tag.contains("bg0.4"), "{}", noisy.metadata.tag);
        assert!(noisy.metadata.tag.contains("rot"), "{}", noisy.metadata.tag);
        let a = read_mcpd(&clean.metadata.predictions).unwrap();
        let b = read_mcpd(&noisy.metadata.predictions).unwrap();
        assert_ne!(a.probs().data(), b.probs().data());
    }

    #[test]
    fn report_produces_curves_summary_and_optional_analyses() {
        let dir = tempdir().unwrap();
        let config = smoke_config(dir.path());
        let trained = run_train(&config).unwrap();
        let mut opts = EvalOptions::new(&trained.checkpoint, "gaussians:3:30:2:4:42", dir.path());
        opts.passes = 8;
        run_eval(&opts).unwrap();

        let mut ropts = ReportOptions::new(dir.path());
        ropts.referral = true;
        ropts.ks = true;
        ropts.convergence = true;
        ropts.grid = 21;
        ropts.convergence_t_list = vec![1, 4];
        ropts.convergence_repetitions = 2;
        ropts.convergence_max_samples = 30;
        let out = run_report(&ropts).unwrap();

        let summary = &out.summary;
        for key in ["auc_npv", "auc_tpr", "auc_ua"] {
            let v = summary[key].as_f64().unwrap();
            assert!((0.0..=1.0).contains(&v), "{key} = {v}");
        }
        assert_eq!(summary["grid"], 21);
        assert_eq!(summary["runs"].as_array().unwrap().len(), 1);
        let run = &summary["runs"][0];
        assert!(run["convergence"]["reference_error"].is_number());
        assert!(run["ks"]["statistic"].is_number() || run["ks"]["skipped"].is_string());
        assert!(run["eval"]["mask"]["mode"].is_string());

        let tag = run["tag"].as_str().unwrap();
        for name in [
            format!("curves_{tag}.csv"),
            format!("curves_{tag}.svg"),
            format!("referral_{tag}.csv"),
            format!("referral_{tag}.svg"),
            format!("convergence_{tag}.csv"),
            format!("convergence_{tag}.svg"),
            "summary.json".to_string(),
        ] {
            let p = dir.path().join("reports").join(&name);
            assert!(p.is_file(), "missing {name}");
        }
        let curves = fs::read_to_string(dir.path().join("reports").join(format!("curves_{tag}.csv"))).unwrap();
        assert_eq!(curves.trim_end().lines().count(), 22);
        let svg = fs::read_to_string(dir.path().join("reports").join(format!("curves_{tag}.svg"))).unwrap();
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn report_without_evals_fails() {
        let dir = tempdir().unwrap();
        assert!(matches!(run_report(&ReportOptions::new(dir.path())), Err(Error::Input(_))));
        fs::create_dir_all(dir.path().join("predictions")).unwrap();
        assert!(matches!(run_report(&ReportOptions::new(dir.path())), Err(Error::Input(_))));
    }

    #[test]
    fn experiment_config_round_trips() {
        let dir = tempdir().unwrap();
        let config = smoke_config(dir.path());
        let path = dir.path().join("config.json");
        fs::write(&path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
        let loaded = load_experiment_config(&path).unwrap();
        assert_eq!(loaded.network, config.network);
        assert_eq!(loaded.train, config.train);

        fs::write(&path, "{").unwrap();
        assert!(matches!(load_experiment_config(&path), Err(Error::Config(_))));
        assert!(matches!(
            load_experiment_config(&dir.path().join("missing.json")),
            Err(Error::Io(_))
        ));
    }
}
