//! Command-line front end: `signkit <command> [flags]`.
//!
//! Every command resolves its configuration as defaults, then the JSON file
//! given with `--config` (a bare object, or a previous report whose
//! `config` member is reused), then explicit flags. The resolved config and
//! the seed are embedded in the JSON report, which goes to stdout unless the
//! command writes it with `--out`. Logs and tables go to stderr.
//!
//! Exit codes: 0 success, 1 validation failure, 2 usage error, 3 I/O error.

use std::collections::{BTreeMap, HashSet};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::distortion::{fit_distortion_model, DistortionModel, GmmOptions};
use crate::error::Error;
use crate::eval::{
    evaluate, ground_truths, parse_detections, proposal_recall, CategoryWeighting, EvalConfig,
    Interpolation, ProposalOptions, DFG_MIN_SIZE, MAX_RECALL_SCORE, STSD_MIN_SIZE,
};
use crate::imageio::{scan_image_dir, write_png, DirImageSource};
use crate::model::{dataset_to_json, load_dataset, validate_category_criteria, Dataset, DIFFICULT_MIN_SIZE};
use crate::observe::observe_dataset;
use crate::roi::{
    assign_weights, balanced_select, ohem_candidate_pool, ohem_select, parse_candidates, pass_through,
    PassThrough, RoiCandidate, Stage, DEFAULT_NMS_IOU, DEFAULT_OHEM_POOL, DEFAULT_POST_MERGE,
    DEFAULT_PRE_NMS_TOP, DEFAULT_ROI_BUDGET,
};
use crate::seed::rng_for;
use crate::split::{split, SplitOptions, SplitResult, DEFAULT_MAX_REPAIR_ITERS, DEFAULT_RADIUS_M, DEFAULT_TEST_FRACTION};
use crate::synthesize::{augment_dataset, AugmentOptions, DEFAULT_FOCAL, DEFAULT_TARGET_MIN};

pub const TOOL: &str = "signkit";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const REPORT_SCHEMA_VERSION: u32 = 1;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "signkit", version, about = "Traffic-sign dataset tooling")]
struct Cli {
    /// Worker threads (default: available cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// JSON file with configuration values; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// More log output on stderr (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check a dataset file for schema and integrity errors.
    Validate(ValidateArgs),
    /// Fit the distortion model on a (training) dataset.
    Fit(FitArgs),
    /// Generate synthetic composites until every category has enough instances.
    Augment(AugmentArgs),
    /// Geo-clustered train/test split.
    Split(SplitArgs),
    /// Evaluate detections against ground truth.
    Eval(EvalArgs),
    /// Recall of top-N region proposals.
    Proposals(ProposalArgs),
    /// Apply an ROI selection strategy to exported candidates.
    SampleRois(SampleRoiArgs),
}

/// Command failure with its exit code.
#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Io { .. } | Error::Image { .. } => EXIT_IO,
            _ => EXIT_VALIDATION,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_USAGE,
        message: message.into(),
    }
}

type CmdResult<T> = std::result::Result<T, Failure>;

/// Layers `flags` (only the ones given) over `file` over the defaults of `T`.
fn resolve<T, A>(file: &Value, flags: &A) -> CmdResult<T>
where
    T: DeserializeOwned + Serialize + Default,
    A: Serialize,
{
    let mut merged = match serde_json::to_value(T::default()) {
        Ok(Value::Object(m)) => m,
        _ => Map::new(),
    };
    if let Value::Object(m) = file {
        for (k, v) in m {
            if !merged.contains_key(k) {
                return Err(usage(format!("unknown configuration key `{k}`")));
            }
            merged.insert(k.clone(), v.clone());
        }
    }
    if let Ok(Value::Object(m)) = serde_json::to_value(flags) {
        for (k, v) in m {
            if !v.is_null() {
                merged.insert(k, v);
            }
        }
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| usage(format!("configuration: {e}")))
}

fn read_text(path: &Path) -> CmdResult<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e).into())
}

fn write_text(path: &Path, text: &str) -> CmdResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Failure::from(Error::io(dir, e)))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e).into())
}

fn load_config_file(path: &Path) -> CmdResult<Value> {
    let text = read_text(path)?;
    let v: Value = serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    match v {
        Value::Object(mut m) => Ok(match m.remove("config") {
            Some(inner @ Value::Object(_)) => inner,
            _ => Value::Object(m),
        }),
        _ => Err(usage(format!("{}: expected a JSON object", path.display()))),
    }
}

fn required(path: &Option<PathBuf>, flag: &str) -> CmdResult<PathBuf> {
    path.clone().ok_or_else(|| usage(format!("missing required --{flag}")))
}

fn report<C: Serialize>(command: &str, seed: Option<u64>, config: &C, result: Value) -> Value {
    json!({
        "tool": TOOL,
        "version": VERSION,
        "schema_version": REPORT_SCHEMA_VERSION,
        "command": command,
        "seed": seed,
        "config": config,
        "result": result,
    })
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("serializable")
}

fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

fn load(path: &Path) -> CmdResult<Dataset> {
    let loaded = load_dataset(path)?;
    for w in &loaded.warnings {
        log::warn!("{}: {w}", path.display());
    }
    Ok(loaded.dataset)
}

fn image_root(images: &Option<PathBuf>, dataset: &Path) -> PathBuf {
    images.clone().unwrap_or_else(|| {
        dataset
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."))
    })
}

/// Restricts `ds` to one side of a split file.
fn restrict(ds: Dataset, split_path: &Option<PathBuf>, side: Side) -> CmdResult<Dataset> {
    let Some(p) = split_path else { return Ok(ds) };
    let s = SplitResult::from_json(&read_text(p)?)?;
    let ids: HashSet<u64> = match side {
        Side::Train => s.train.iter().copied().collect(),
        Side::Test => s.test.iter().copied().collect(),
    };
    Ok(ds.subset(&ids))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
enum Side {
    Train,
    Test,
}

// ---- validate

#[derive(Args, Debug, Serialize)]
struct ValidateArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Also check per-category instance criteria.
    #[arg(long)]
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    criteria: bool,
    #[arg(long)]
    min_instances: Option<usize>,
    #[arg(long)]
    min_size: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default)]
struct ValidateConfig {
    dataset: Option<PathBuf>,
    criteria: bool,
    min_instances: usize,
    min_size: f64,
    out: Option<PathBuf>,
}

impl Default for ValidateConfig {
    fn default() -> Self {
        ValidateConfig {
            dataset: None,
            criteria: false,
            min_instances: 20,
            min_size: DIFFICULT_MIN_SIZE,
            out: None,
        }
    }
}

fn cmd_validate(cfg: ValidateConfig) -> CmdResult<(Value, i32)> {
    let path = required(&cfg.dataset, "dataset")?;
    let text = read_text(&path)?;
    let (result, code) = match crate::model::parse_dataset(&text) {
        Ok(loaded) => {
            let ds = &loaded.dataset;
            let warnings: Vec<String> = loaded.warnings.iter().map(|w| w.to_string()).collect();
            for w in &warnings {
                log::warn!("{w}");
            }
            let criteria = cfg
                .criteria
                .then(|| validate_category_criteria(ds, cfg.min_instances, cfg.min_size));
            let pass = criteria.as_ref().is_none_or(|c| c.passed());
            eprintln!(
                "{}: {} images, {} instances, {} categories, {} warnings",
                path.display(),
                ds.images.len(),
                ds.instances.len(),
                ds.categories.len(),
                warnings.len()
            );
            (
                json!({
                    "valid": pass,
                    "images": ds.images.len(),
                    "instances": ds.instances.len(),
                    "categories": ds.categories.len(),
                    "difficult": ds.instances.iter().filter(|i| i.difficult).count(),
                    "warnings": warnings,
                    "criteria": criteria,
                }),
                if pass { EXIT_OK } else { EXIT_VALIDATION },
            )
        }
        Err(e) => {
            eprintln!("{}: {e}", path.display());
            (json!({"valid": false, "error": e.to_string()}), EXIT_VALIDATION)
        }
    };
    Ok((report("validate", None, &cfg, result), code))
}

// ---- fit

#[derive(Args, Debug, Serialize)]
struct FitArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Image root for dataset uris (default: the dataset's directory).
    #[arg(long)]
    images: Option<PathBuf>,
    /// Use the training side of this split.
    #[arg(long)]
    split: Option<PathBuf>,
    /// Where to write the model JSON.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default)]
struct FitConfig {
    dataset: Option<PathBuf>,
    images: Option<PathBuf>,
    split: Option<PathBuf>,
    out: Option<PathBuf>,
    seed: u64,
    tol: f64,
    max_iter: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        let g = GmmOptions::default();
        FitConfig {
            dataset: None,
            images: None,
            split: None,
            out: None,
            seed: 0,
            tol: g.tol,
            max_iter: g.max_iter,
        }
    }
}

fn cmd_fit(cfg: FitConfig) -> CmdResult<(Value, i32)> {
    let path = required(&cfg.dataset, "dataset")?;
    let out = required(&cfg.out, "out")?;
    let ds = restrict(load(&path)?, &cfg.split, Side::Train)?;
    let source = DirImageSource::new(image_root(&cfg.images, &path));
    let observations = observe_dataset(&ds, &source)?;
    let opts = GmmOptions {
        tol: cfg.tol,
        max_iter: cfg.max_iter,
        seed: crate::seed::derive_seed(cfg.seed, "fit"),
        ..Default::default()
    };
    let model = fit_distortion_model(&ds, &observations, &opts)?;
    write_text(&out, &model.to_json())?;
    let result = json!({
        "model": out,
        "observations": observations.len(),
        "with_geometry": observations.iter().filter(|o| o.angles.is_some()).count(),
        "rotation": model.rotation.is_some(),
        "brightness_categories": model.brightness.means.len(),
        "brightness_variance": model.brightness.variance,
        "scale_components": model.scale.as_ref().map(|s| s.components()),
    });
    Ok((report("fit", Some(cfg.seed), &cfg, result), EXIT_OK))
}

// ---- augment

#[derive(Args, Debug, Serialize)]
struct AugmentArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    images: Option<PathBuf>,
    #[arg(long)]
    split: Option<PathBuf>,
    /// Directory of sign-free background images.
    #[arg(long)]
    backgrounds: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    target_min: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    focal: Option<f64>,
    /// Output directory for images and `annotations.json`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default)]
struct AugmentConfig {
    dataset: Option<PathBuf>,
    images: Option<PathBuf>,
    split: Option<PathBuf>,
    backgrounds: Option<PathBuf>,
    model: Option<PathBuf>,
    target_min: usize,
    seed: u64,
    focal: f64,
    out: Option<PathBuf>,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            dataset: None,
            images: None,
            split: None,
            backgrounds: None,
            model: None,
            target_min: DEFAULT_TARGET_MIN,
            seed: 0,
            focal: DEFAULT_FOCAL,
            out: None,
        }
    }
}

fn cmd_augment(cfg: AugmentConfig) -> CmdResult<(Value, i32)> {
    let path = required(&cfg.dataset, "dataset")?;
    let bg_dir = required(&cfg.backgrounds, "backgrounds")?;
    let model_path = required(&cfg.model, "model")?;
    let out = required(&cfg.out, "out")?;
    let ds = restrict(load(&path)?, &cfg.split, Side::Train)?;
    let model = DistortionModel::from_json(&read_text(&model_path)?)?;
    let backgrounds = scan_image_dir(&bg_dir)?;
    let source = DirImageSource::new(image_root(&cfg.images, &path));
    let bg_source = DirImageSource::new(&bg_dir);
    let max_image = ds.images.iter().map(|i| i.id).max().unwrap_or(0);
    let max_instance = ds.instances.iter().map(|i| i.id).max().unwrap_or(0);
    let opts = AugmentOptions {
        target_min: cfg.target_min,
        seed: cfg.seed,
        focal: cfg.focal,
        first_image_id: max_image + 1,
        first_instance_id: max_instance + 1,
        ..Default::default()
    };
    let result = augment_dataset(&ds, &source, &backgrounds, &bg_source, &model, &opts, &mut |record, img| {
        write_png(&out.join(&record.uri), img)
    })?;
    let annotations = out.join("annotations.json");
    write_text(&annotations, &dataset_to_json(&result.delta)?)?;
    let mut after = ds.instance_counts();
    for (c, n) in &result.synthesized {
        *after.entry(*c).or_default() += n;
    }
    let res = json!({
        "annotations": annotations,
        "images": result.delta.images.len(),
        "instances": result.delta.instances.len(),
        "synthesized": result.synthesized,
        "counts_after": after,
        "backgrounds": backgrounds.len(),
    });
    Ok((report("augment", Some(cfg.seed), &cfg, res), EXIT_OK))
}

// ---- split

#[derive(Args, Debug, Serialize)]
struct SplitArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    test_fraction: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Clustering radius in meters.
    #[arg(long)]
    radius: Option<f64>,
    #[arg(long)]
    max_repair_iters: Option<usize>,
    /// Where to write split.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default)]
struct SplitConfig {
    dataset: Option<PathBuf>,
    test_fraction: f64,
    seed: u64,
    radius: f64,
    max_repair_iters: usize,
    out: Option<PathBuf>,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            dataset: None,
            test_fraction: DEFAULT_TEST_FRACTION,
            seed: 0,
            radius: DEFAULT_RADIUS_M,
            max_repair_iters: DEFAULT_MAX_REPAIR_ITERS,
            out: None,
        }
    }
}

fn cmd_split(cfg: SplitConfig) -> CmdResult<(Value, i32)> {
    let path = required(&cfg.dataset, "dataset")?;
    let out = required(&cfg.out, "out")?;
    let ds = load(&path)?;
    let opts = SplitOptions {
        test_fraction: cfg.test_fraction,
        seed: cfg.seed,
        radius_m: cfg.radius,
        max_repair_iters: cfg.max_repair_iters,
    };
    let result = split(&ds, &opts)?;
    write_text(&out, &result.to_json()?)?;
    eprintln!(
        "{} clusters: {} train / {} test images",
        result.clusters,
        result.train.len(),
        result.test.len()
    );
    let res = json!({
        "split": out,
        "clusters": result.clusters,
        "train_images": result.train.len(),
        "test_images": result.test.len(),
        "per_category": result.per_category,
        "warnings": result.warnings.len(),
    });
    Ok((report("split", Some(cfg.seed), &cfg, res), EXIT_OK))
}

// ---- eval

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
enum Protocol {
    /// 30 px minimal size.
    Dfg,
    /// 50 px minimal size.
    Stsd,
}

#[derive(Args, Debug, Serialize)]
struct EvalArgs {
    /// Ground-truth dataset.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Line-delimited detections.
    #[arg(long)]
    detections: Option<PathBuf>,
    /// Evaluate only images of one side of this split.
    #[arg(long)]
    split: Option<PathBuf>,
    #[arg(long, value_enum)]
    side: Option<Side>,
    /// Primary IoU threshold (mAP50, counts, max recall, best F).
    #[arg(long)]
    iou: Option<f64>,
    #[arg(long, value_enum)]
    protocol: Option<Protocol>,
    /// Overrides the protocol's minimal size.
    #[arg(long)]
    min_size: Option<f64>,
    #[arg(long)]
    max_recall_score: Option<f64>,
    #[arg(long, value_enum)]
    interpolation: Option<InterpolationArg>,
    /// Write precision-recall curves as CSV.
    #[arg(long)]
    pr_csv: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
enum InterpolationArg {
    AllPoints,
    Coco101,
}

impl From<InterpolationArg> for Interpolation {
    fn from(a: InterpolationArg) -> Self {
        match a {
            InterpolationArg::AllPoints => Interpolation::AllPoints,
            InterpolationArg::Coco101 => Interpolation::Coco101,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default)]
struct EvalCliConfig {
    dataset: Option<PathBuf>,
    detections: Option<PathBuf>,
    split: Option<PathBuf>,
    side: Side,
    iou: f64,
    protocol: Protocol,
    min_size: Option<f64>,
    max_recall_score: f64,
    interpolation: InterpolationArg,
    pr_csv: Option<PathBuf>,
    out: Option<PathBuf>,
}

impl Default for EvalCliConfig {
    fn default() -> Self {
        EvalCliConfig {
            dataset: None,
            detections: None,
            split: None,
            side: Side::Test,
            iou: 0.5,
            protocol: Protocol::Dfg,
            min_size: None,
            max_recall_score: MAX_RECALL_SCORE,
            interpolation: InterpolationArg::AllPoints,
            pr_csv: None,
            out: None,
        }
    }
}

fn cmd_eval(cfg: EvalCliConfig) -> CmdResult<(Value, i32)> {
    let path = required(&cfg.dataset, "dataset")?;
    let det_path = required(&cfg.detections, "detections")?;
    if !(cfg.iou > 0.0 && cfg.iou <= 1.0) {
        return Err(usage(format!("--iou {} outside (0, 1]", cfg.iou)));
    }
    let ds = restrict(load(&path)?, &cfg.split, cfg.side)?;
    let images: HashSet<u64> = ds.images.iter().map(|i| i.id).collect();
    let dets: Vec<_> = parse_detections(&read_text(&det_path)?)?
        .into_iter()
        .filter(|d| images.contains(&d.image_id))
        .collect();
    let min_size = cfg.min_size.unwrap_or(match cfg.protocol {
        Protocol::Dfg => DFG_MIN_SIZE,
        Protocol::Stsd => STSD_MIN_SIZE,
    });
    let eval_cfg = EvalConfig {
        primary_iou: cfg.iou,
        min_size,
        max_recall_score: cfg.max_recall_score,
        interpolation: cfg.interpolation.into(),
        ..Default::default()
    };
    let gts = ground_truths(&ds);
    let rep = evaluate(&dets, &gts, &eval_cfg);
    eprint!("{}", rep.to_table());
    if let Some(csv) = &cfg.pr_csv {
        write_text(csv, &rep.pr_csv())?;
    }
    let coco = evaluate(
        &dets,
        &gts,
        &EvalConfig {
            interpolation: Interpolation::Coco101,
            ..eval_cfg
        },
    );
    let mut result = to_value(&rep);
    result["map50_coco101"] = json!(coco.map50);
    result["map50_95_coco101"] = json!(coco.map50_95);
    Ok((report("eval", None, &cfg, result), EXIT_OK))
}

// ---- proposals

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> CmdResult<Vec<T>> {
    s.split(',')
        .map(|p| p.trim().parse::<T>().map_err(|_| usage(format!("bad {what} list `{s}`"))))
        .collect()
}

#[derive(Args, Debug, Serialize)]
struct ProposalArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Line-delimited candidates with `image_id` and `objectness`.
    #[arg(long)]
    proposals: Option<PathBuf>,
    #[arg(long)]
    split: Option<PathBuf>,
    #[arg(long, value_enum)]
    side: Option<Side>,
    /// Comma-separated N values.
    #[arg(long)]
    top_n: Option<String>,
    /// Comma-separated IoU thresholds.
    #[arg(long)]
    iou: Option<String>,
    /// `min,max` bbox size band in pixels.
    #[arg(long)]
    size_band: Option<String>,
    #[arg(long)]
    min_size: Option<f64>,
    #[arg(long, value_enum)]
    weighting: Option<WeightingArg>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
enum WeightingArg {
    Equal,
    Instance,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default)]
struct ProposalConfig {
    dataset: Option<PathBuf>,
    proposals: Option<PathBuf>,
    split: Option<PathBuf>,
    side: Side,
    top_n: String,
    iou: String,
    size_band: Option<String>,
    min_size: f64,
    weighting: WeightingArg,
    out: Option<PathBuf>,
}

impl Default for ProposalConfig {
    fn default() -> Self {
        ProposalConfig {
            dataset: None,
            proposals: None,
            split: None,
            side: Side::Test,
            top_n: "10,50,100,300,1000,2000".into(),
            iou: "0.5,0.6,0.7,0.8,0.9".into(),
            size_band: None,
            min_size: DFG_MIN_SIZE,
            weighting: WeightingArg::Equal,
            out: None,
        }
    }
}

fn cmd_proposals(cfg: ProposalConfig) -> CmdResult<(Value, i32)> {
    let path = required(&cfg.dataset, "dataset")?;
    let prop_path = required(&cfg.proposals, "proposals")?;
    let top_n: Vec<usize> = parse_list(&cfg.top_n, "top-n")?;
    let ious: Vec<f64> = parse_list(&cfg.iou, "iou")?;
    let size_band = match &cfg.size_band {
        None => None,
        Some(s) => match parse_list::<f64>(s, "size-band")?.as_slice() {
            [lo, hi] if lo <= hi => Some((*lo, *hi)),
            _ => return Err(usage(format!("--size-band expects `min,max`, got `{s}`"))),
        },
    };
    let ds = restrict(load(&path)?, &cfg.split, cfg.side)?;
    let images: HashSet<u64> = ds.images.iter().map(|i| i.id).collect();
    let proposals: Vec<RoiCandidate> = parse_candidates(&read_text(&prop_path)?)?;
    if proposals.iter().any(|p| p.image_id.is_none()) {
        return Err(Error::InvalidInput("every proposal needs an image_id".into()).into());
    }
    let proposals: Vec<RoiCandidate> = proposals
        .into_iter()
        .filter(|p| p.image_id.is_some_and(|i| images.contains(&i)))
        .collect();
    let opts = ProposalOptions {
        size_band,
        min_size: cfg.min_size,
        weighting: match cfg.weighting {
            WeightingArg::Equal => CategoryWeighting::Equal,
            WeightingArg::Instance => CategoryWeighting::Instance,
        },
    };
    let grid = proposal_recall(&proposals, &ground_truths(&ds), &top_n, &ious, &opts);
    eprintln!("recall (%) by top-N (rows) and IoU (columns) over {} ground truths", grid.ground_truths);
    eprint!("{:>8}", "N");
    for t in &grid.iou_thresholds {
        eprint!("{t:>8.2}");
    }
    eprintln!();
    for (n, row) in grid.top_n.iter().zip(&grid.recall) {
        eprint!("{n:>8}");
        for r in row {
            eprint!("{r:>8.1}");
        }
        eprintln!();
    }
    Ok((report("proposals", None, &cfg, to_value(&grid)), EXIT_OK))
}

// ---- sample-rois

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
enum Strategy {
    /// Objectness pool, NMS, then top loss per foreground/background pool.
    Ohem,
    /// Equal ROI count per assigned object.
    Balanced,
    /// Per-level top-k, merge, NMS, keep best.
    PassThrough,
}

#[derive(Args, Debug, Serialize)]
struct SampleRoiArgs {
    #[arg(long)]
    candidates: Option<PathBuf>,
    #[arg(long, value_enum)]
    strategy: Option<Strategy>,
    /// ROIs selected per image.
    #[arg(long)]
    budget: Option<usize>,
    /// Foreground share of the budget for OHEM.
    #[arg(long)]
    fg_fraction: Option<f64>,
    #[arg(long)]
    min_loss: Option<f64>,
    #[arg(long)]
    pool_size: Option<usize>,
    #[arg(long)]
    nms_iou: Option<f64>,
    #[arg(long)]
    pre_nms_top: Option<usize>,
    #[arg(long)]
    post_merge: Option<usize>,
    #[arg(long, value_enum)]
    stage: Option<StageArg>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
enum StageArg {
    Rpn,
    Classifier,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default)]
struct SampleRoiConfig {
    candidates: Option<PathBuf>,
    strategy: Strategy,
    budget: usize,
    fg_fraction: f64,
    min_loss: Option<f64>,
    pool_size: usize,
    nms_iou: f64,
    pre_nms_top: usize,
    post_merge: usize,
    stage: StageArg,
    seed: u64,
    out: Option<PathBuf>,
}

impl Default for SampleRoiConfig {
    fn default() -> Self {
        SampleRoiConfig {
            candidates: None,
            strategy: Strategy::Ohem,
            budget: DEFAULT_ROI_BUDGET,
            fg_fraction: 0.25,
            min_loss: None,
            pool_size: DEFAULT_OHEM_POOL,
            nms_iou: DEFAULT_NMS_IOU,
            pre_nms_top: DEFAULT_PRE_NMS_TOP,
            post_merge: DEFAULT_POST_MERGE,
            stage: StageArg::Classifier,
            seed: 0,
            out: None,
        }
    }
}

fn cmd_sample_rois(cfg: SampleRoiConfig) -> CmdResult<(Value, i32)> {
    let path = required(&cfg.candidates, "candidates")?;
    if !(0.0..=1.0).contains(&cfg.fg_fraction) {
        return Err(usage("--fg-fraction outside [0, 1]"));
    }
    if !(cfg.nms_iou > 0.0 && cfg.nms_iou < 1.0) {
        return Err(usage("--nms-iou outside (0, 1)"));
    }
    let cands = parse_candidates(&read_text(&path)?)?;
    let mut by_image: BTreeMap<u64, Vec<RoiCandidate>> = BTreeMap::new();
    for c in cands {
        by_image.entry(c.image_id.unwrap_or(0)).or_default().push(c);
    }
    let stage = match cfg.stage {
        StageArg::Rpn => Stage::Rpn,
        StageArg::Classifier => Stage::Classifier,
    };
    let mut images = Vec::new();
    for (&image_id, cands) in &by_image {
        let selected: Vec<RoiCandidate> = match cfg.strategy {
            Strategy::Ohem => {
                let pool: Vec<RoiCandidate> = ohem_candidate_pool(cands, cfg.pool_size, cfg.nms_iou)
                    .into_iter()
                    .map(|i| cands[i].clone())
                    .collect();
                let fg = (cfg.fg_fraction * cfg.budget as f64).round() as usize;
                ohem_select(&pool, fg, cfg.budget - fg.min(cfg.budget), cfg.min_loss)?
                    .into_iter()
                    .map(|i| pool[i].clone())
                    .collect()
            }
            Strategy::Balanced => {
                let mut rng = rng_for(cfg.seed, &format!("sample-rois/{image_id}"));
                let assigned: Vec<RoiCandidate> =
                    cands.iter().filter(|c| c.assigned_gt.is_some()).cloned().collect();
                if assigned.is_empty() {
                    Vec::new()
                } else {
                    balanced_select(&assigned, cfg.budget, &mut rng)?
                        .into_iter()
                        .map(|i| assigned[i].clone())
                        .collect()
                }
            }
            Strategy::PassThrough => {
                let mut levels: BTreeMap<u32, Vec<RoiCandidate>> = BTreeMap::new();
                for c in cands {
                    levels.entry(c.level).or_default().push(c.clone());
                }
                pass_through(
                    &levels,
                    &PassThrough {
                        pre_nms_top: cfg.pre_nms_top,
                        post_merge: cfg.post_merge,
                        iou_threshold: cfg.nms_iou,
                    },
                )
            }
        };
        let weighted = assign_weights(&selected, stage);
        let fg = weighted.iter().filter(|w| w.candidate.label.is_foreground()).count();
        images.push(json!({
            "image_id": image_id,
            "candidates": cands.len(),
            "selected": weighted.len(),
            "foreground": fg,
            "background": weighted.len() - fg,
            "rois": weighted,
        }));
    }
    eprintln!("{} images processed", images.len());
    let seed = (cfg.strategy == Strategy::Balanced).then_some(cfg.seed);
    Ok((report("sample-rois", seed, &cfg, json!({ "images": images })), EXIT_OK))
}

fn emit(value: &Value, out: Option<&Path>) -> CmdResult<()> {
    let text = pretty(value);
    match out {
        Some(p) => write_text(p, &text),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(|e| Error::io("<stdout>", e).into())
        }
    }
}

fn dispatch(cli: Cli) -> CmdResult<i32> {
    let file = match &cli.config {
        Some(p) => load_config_file(p)?,
        None => Value::Object(Map::new()),
    };
    let (value, code, out) = match cli.command {
        Command::Validate(a) => {
            let cfg: ValidateConfig = resolve(&file, &a)?;
            let out = cfg.out.clone();
            let (v, c) = cmd_validate(cfg)?;
            (v, c, out)
        }
        Command::Fit(a) => {
            let (v, c) = cmd_fit(resolve(&file, &a)?)?;
            (v, c, None)
        }
        Command::Augment(a) => {
            let (v, c) = cmd_augment(resolve(&file, &a)?)?;
            (v, c, None)
        }
        Command::Split(a) => {
            let (v, c) = cmd_split(resolve(&file, &a)?)?;
            (v, c, None)
        }
        Command::Eval(a) => {
            let cfg: EvalCliConfig = resolve(&file, &a)?;
            let out = cfg.out.clone();
            let (v, c) = cmd_eval(cfg)?;
            (v, c, out)
        }
        Command::Proposals(a) => {
            let cfg: ProposalConfig = resolve(&file, &a)?;
            let out = cfg.out.clone();
            let (v, c) = cmd_proposals(cfg)?;
            (v, c, out)
        }
        Command::SampleRois(a) => {
            let cfg: SampleRoiConfig = resolve(&file, &a)?;
            let out = cfg.out.clone();
            let (v, c) = cmd_sample_rois(cfg)?;
            (v, c, out)
        }
    };
    emit(&value, out.as_deref())?;
    Ok(code)
}

/// Runs the tool on `argv` (including the program name) and returns the
/// exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .target(env_logger::Target::Stderr)
        .try_init();

    let outcome = match cli.threads {
        Some(0) => Err(usage("--threads must be at least 1")),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| dispatch(cli)),
            Err(e) => Err(usage(e.to_string())),
        },
        None => dispatch(cli),
    };
    match outcome {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}
