//! `egoforecast` — command-line front end for the future-person-localization
//! toolkit: synthetic scene generation, dataset preparation, fold-based
//! training, evaluation against baselines, single-sample prediction, and a
//! numerical self-test battery.
//!
//! Exit codes: `0` success, `1` usage/configuration error, `2` data/format
//! error, `3` self-test failure.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use egoforecast::data::io::{read_samples, read_tracklets, write_samples};
use egoforecast::data::{
    compute_norm_stats, kfold_split, sliding_window, DataError, FoldSplit, NormStats, Sample,
};
use egoforecast::eval::{
    const_vel, evaluate, fde, network_predictions, nneighbor, overlay_svg, report_csv, report_json,
    truth_final, EvalError, MatchFrame, Prediction, DEFAULT_NEIGHBORS,
};
use egoforecast::features::RotationAccumulation;
use egoforecast::model::{
    load_weights, save_weights, ModelError, NetConfig, Network, StreamKind, TrainSchedule,
};
use egoforecast::selftest::run_selftest;
use egoforecast::synth::{
    curved_ego_suite, generate_scene, interactive_suite, linear_suite, suite_to_samples,
    write_suite, GeneratedSuite, SceneScript, SynthError, DEFAULT_SCENES_PER_SUITE,
};

/// Environment variable consulted for the RNG seed when neither a `--seed`
/// flag nor a config-file seed is given. Absent everywhere, the seed is 0.
const SEED_ENV: &str = "EGOFORECAST_SEED";

/// Batch size used when running the network for evaluation/prediction.
const EVAL_BATCH: usize = 64;

// ---------------------------------------------------------------------------
// Errors and exit codes
// ---------------------------------------------------------------------------

#[derive(Debug)]
enum CliError {
    /// Bad flags, bad config, out-of-range indices: exit 1.
    Usage(String),
    /// Unreadable or malformed data/weights files, runtime failures: exit 2.
    Data(String),
    /// One or more self-test checks failed: exit 3.
    SelfTest(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::SelfTest(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::SelfTest(m) => f.write_str(m),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Config(_) | ModelError::Usage(_) => CliError::Usage(e.to_string()),
            ModelError::Tensor(_)
            | ModelError::Format(_)
            | ModelError::Io(_)
            | ModelError::Diverged(_) => CliError::Data(e.to_string()),
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Usage(m) => CliError::Usage(m),
            EvalError::Model(m) => m.into(),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            // A scene script is configuration supplied by the user.
            SynthError::Script(_) => CliError::Usage(e.to_string()),
            SynthError::Io(_) | SynthError::Data(_) | SynthError::Truth(_) => {
                CliError::Data(e.to_string())
            }
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

// ---------------------------------------------------------------------------
// Run configuration (JSON file + flag overrides)
// ---------------------------------------------------------------------------

/// Training-schedule section of the run configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ScheduleConfig {
    iterations: usize,
    batch_size: usize,
    base_lr: f64,
    decay_points: Vec<usize>,
    decay_factor: f64,
}

impl From<TrainSchedule> for ScheduleConfig {
    fn from(s: TrainSchedule) -> Self {
        ScheduleConfig {
            iterations: s.iterations,
            batch_size: s.batch_size,
            base_lr: s.base_lr,
            decay_points: s.decay_points,
            decay_factor: s.decay_factor,
        }
    }
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        TrainSchedule::standard().into()
    }
}

impl ScheduleConfig {
    fn to_schedule(&self) -> TrainSchedule {
        TrainSchedule {
            iterations: self.iterations,
            batch_size: self.batch_size,
            base_lr: self.base_lr,
            decay_points: self.decay_points.clone(),
            decay_factor: self.decay_factor,
        }
    }
}

/// One run's worth of settings. Loaded from a JSON file (`--config`); every
/// command-line flag overrides the corresponding field.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RunConfig {
    /// Observed frames per sample (6 or 10).
    t_prev: usize,
    /// Predicted frames per sample (10 or 20).
    t_future: usize,
    /// Enabled input streams: any of "ls", "ego", "pose".
    streams: Vec<String>,
    /// Ego feature kind: "rotation_translation" (6-dim) or "flow_grid" (24-dim).
    ego_features: String,
    /// Training schedule.
    schedule: ScheduleConfig,
    /// RNG seed; when absent the EGOFORECAST_SEED env var, then 0, applies.
    seed: Option<u64>,
    /// Cross-validation fold count.
    folds: usize,
    /// Horizontal-flip training augmentation.
    augment: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            t_prev: 10,
            t_future: 10,
            streams: vec!["ls".into(), "ego".into(), "pose".into()],
            ego_features: "rotation_translation".into(),
            schedule: ScheduleConfig::default(),
            seed: None,
            folds: 5,
            augment: true,
        }
    }
}

impl RunConfig {
    fn validate(&self) -> Result<(), CliError> {
        if !matches!(self.t_prev, 6 | 10) {
            return Err(CliError::Usage(format!(
                "t_prev must be 6 or 10, got {}",
                self.t_prev
            )));
        }
        if !matches!(self.t_future, 10 | 20) {
            return Err(CliError::Usage(format!(
                "t_future must be 10 or 20, got {}",
                self.t_future
            )));
        }
        if self.streams.is_empty() {
            return Err(CliError::Usage("streams must not be empty".into()));
        }
        self.stream_kinds()?;
        self.ego_dim()?;
        if self.folds < 2 {
            return Err(CliError::Usage(format!(
                "folds must be at least 2 (one held out), got {}",
                self.folds
            )));
        }
        let s = &self.schedule;
        if s.iterations == 0 {
            return Err(CliError::Usage(
                "schedule.iterations must be positive".into(),
            ));
        }
        if s.batch_size == 0 {
            return Err(CliError::Usage(
                "schedule.batch_size must be positive".into(),
            ));
        }
        if !(s.base_lr.is_finite() && s.base_lr > 0.0) {
            return Err(CliError::Usage(format!(
                "schedule.base_lr must be a positive number, got {}",
                s.base_lr
            )));
        }
        if !(s.decay_factor.is_finite() && s.decay_factor > 0.0) {
            return Err(CliError::Usage(format!(
                "schedule.decay_factor must be a positive number, got {}",
                s.decay_factor
            )));
        }
        for pair in s.decay_points.windows(2) {
            if pair[1] <= pair[0] {
                return Err(CliError::Usage(format!(
                    "schedule.decay_points must be strictly increasing, got {:?}",
                    s.decay_points
                )));
            }
        }
        if let Some(&last) = s.decay_points.last() {
            if last >= s.iterations {
                return Err(CliError::Usage(format!(
                    "schedule.decay_points must stay below iterations ({}), got {:?}",
                    s.iterations, s.decay_points
                )));
            }
        }
        Ok(())
    }

    /// Flag > config file > EGOFORECAST_SEED > 0.
    fn resolve_seed(&self) -> Result<u64, CliError> {
        match self.seed {
            Some(s) => Ok(s),
            None => env_seed(),
        }
    }

    /// Streams in canonical order (location-scale, ego, pose), deduplicated.
    fn stream_kinds(&self) -> Result<Vec<StreamKind>, CliError> {
        let mut have = [false; 3];
        for token in &self.streams {
            let idx = match token.as_str() {
                "ls" | "location" | "location_scale" | "x" => 0,
                "ego" | "e" => 1,
                "pose" | "p" => 2,
                other => {
                    return Err(CliError::Usage(format!(
                        "unknown stream {other:?}; expected ls, ego, or pose"
                    )))
                }
            };
            have[idx] = true;
        }
        let all = [
            StreamKind::LocationScale,
            StreamKind::EgoMotion,
            StreamKind::Pose,
        ];
        Ok(all
            .iter()
            .zip(have)
            .filter(|(_, h)| *h)
            .map(|(k, _)| *k)
            .collect())
    }

    fn ego_dim(&self) -> Result<usize, CliError> {
        match self.ego_features.as_str() {
            "rotation_translation" => Ok(6),
            "flow_grid" => Ok(24),
            other => Err(CliError::Usage(format!(
                "unknown ego_features {other:?}; expected rotation_translation or flow_grid"
            ))),
        }
    }

    fn net_config(&self) -> Result<NetConfig, CliError> {
        let mut config = NetConfig::standard(&self.stream_kinds()?, self.ego_dim()?);
        if self.t_prev == 6 {
            config = config.with_short_observation();
        }
        if self.t_future == 20 {
            config = config.with_long_prediction();
        }
        config.validate()?;
        Ok(config)
    }
}

/// Seed from the environment, defaulting to 0 when the variable is unset.
fn env_seed() -> Result<u64, CliError> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map_err(|_| {
            CliError::Usage(format!("{SEED_ENV} must be an unsigned integer, got {v:?}"))
        }),
        Err(std::env::VarError::NotPresent) => Ok(0),
        Err(e) => Err(CliError::Usage(format!("{SEED_ENV}: {e}"))),
    }
}

/// Flag > EGOFORECAST_SEED > 0, for commands without a config file.
fn resolve_seed(flag: Option<u64>) -> Result<u64, CliError> {
    match flag {
        Some(s) => Ok(s),
        None => env_seed(),
    }
}

// ---------------------------------------------------------------------------
// Command-line grammar
// ---------------------------------------------------------------------------

#[derive(Parser)]
#[command(
    name = "egoforecast",
    version,
    about = "Forecast a pedestrian's future image-plane location from first-person video cues"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic scene suites or one scripted scene.
    Synth(SynthArgs),
    /// Cut tracklet files into fixed-length training samples.
    Prepare(PrepareArgs),
    /// Train the forecaster, holding out one cross-validation fold.
    Train(TrainArgs),
    /// Evaluate trained weights or a baseline on a held-out fold.
    Eval(EvalArgs),
    /// Predict the future of one sample and print it as JSON.
    Predict(PredictArgs),
    /// Run the numerical self-test battery (gradients, shapes, ego loop).
    Selftest(SelftestArgs),
}

/// Flags shared by train/eval/predict that mirror the JSON run config.
#[derive(Args, Clone, Default)]
struct ConfigArgs {
    /// JSON run-configuration file; every flag below overrides its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Observed frames per sample (6 or 10).
    #[arg(long)]
    t_prev: Option<usize>,
    /// Predicted frames per sample (10 or 20).
    #[arg(long)]
    t_future: Option<usize>,
    /// Comma-separated input streams: ls, ego, pose.
    #[arg(long, value_delimiter = ',')]
    streams: Option<Vec<String>>,
    /// Ego feature kind: rotation_translation or flow_grid.
    #[arg(long)]
    ego_features: Option<String>,
    /// Schedule preset: "paper" (17,000 iterations) or "desk" (2,000).
    #[arg(long)]
    schedule: Option<String>,
    /// Override the schedule's iteration count.
    #[arg(long)]
    iterations: Option<usize>,
    /// Override the schedule's batch size.
    #[arg(long)]
    batch_size: Option<usize>,
    /// Override the schedule's base learning rate.
    #[arg(long)]
    base_lr: Option<f64>,
    /// Override the schedule's decay points (comma-separated iterations).
    #[arg(long, value_delimiter = ',')]
    decay_points: Option<Vec<usize>>,
    /// RNG seed; falls back to the config file, then $EGOFORECAST_SEED, then 0.
    #[arg(long)]
    seed: Option<u64>,
    /// Cross-validation fold count.
    #[arg(long)]
    folds: Option<usize>,
    /// Disable horizontal-flip training augmentation.
    #[arg(long)]
    no_augment: bool,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| {
                    CliError::Usage(format!("cannot read config {}: {e}", path.display()))
                })?;
                serde_json::from_str::<RunConfig>(&text)
                    .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?
            }
            None => RunConfig::default(),
        };
        if let Some(v) = self.t_prev {
            cfg.t_prev = v;
        }
        if let Some(v) = self.t_future {
            cfg.t_future = v;
        }
        if let Some(v) = &self.streams {
            cfg.streams = v.clone();
        }
        if let Some(v) = &self.ego_features {
            cfg.ego_features = v.clone();
        }
        if let Some(name) = &self.schedule {
            cfg.schedule = match name.as_str() {
                "paper" => TrainSchedule::standard().into(),
                "desk" => TrainSchedule::desk().into(),
                other => {
                    return Err(CliError::Usage(format!(
                        "unknown schedule {other:?}; expected paper or desk"
                    )))
                }
            };
        }
        if let Some(v) = self.iterations {
            cfg.schedule.iterations = v;
            // Drop decay points the shortened run can no longer reach.
            cfg.schedule.decay_points.retain(|&p| p < v);
        }
        if let Some(v) = self.batch_size {
            cfg.schedule.batch_size = v;
        }
        if let Some(v) = self.base_lr {
            cfg.schedule.base_lr = v;
        }
        if let Some(v) = &self.decay_points {
            cfg.schedule.decay_points = v.clone();
        }
        if let Some(v) = self.seed {
            cfg.seed = Some(v);
        }
        if let Some(v) = self.folds {
            cfg.folds = v;
        }
        if self.no_augment {
            cfg.augment = false;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct SynthArgs {
    /// Suite name: linear, curved_ego, interactive, or all.
    #[arg(long, conflicts_with = "script")]
    suite: Option<String>,
    /// JSON scene script to generate instead of a canned suite.
    #[arg(long)]
    script: Option<PathBuf>,
    /// Output directory for tracklet and ground-truth files.
    #[arg(short = 'o', long)]
    out: PathBuf,
    /// Scenes per suite.
    #[arg(long, default_value_t = DEFAULT_SCENES_PER_SUITE)]
    scenes: usize,
    /// RNG seed; falls back to $EGOFORECAST_SEED, then 0.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct PrepareArgs {
    /// Tracklet JSONL file to cut into samples.
    #[arg(long)]
    data: PathBuf,
    /// Output samples JSONL file.
    #[arg(short = 'o', long)]
    out: PathBuf,
    /// Observed frames per sample.
    #[arg(long, default_value_t = 10)]
    t_prev: usize,
    /// Predicted frames per sample.
    #[arg(long, default_value_t = 10)]
    t_future: usize,
    /// Frames between consecutive window starts.
    #[arg(long, default_value_t = 1)]
    stride: usize,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Prepared samples JSONL file.
    #[arg(long)]
    data: PathBuf,
    /// Held-out fold index (0-based); its videos are excluded from training.
    #[arg(long, default_value_t = 0)]
    fold: usize,
    /// Output weights file.
    #[arg(short = 'o', long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Prepared samples JSONL file.
    #[arg(long)]
    data: PathBuf,
    /// Held-out fold index (0-based) to evaluate on.
    #[arg(long, default_value_t = 0)]
    fold: usize,
    /// Trained weights file (expects a `<weights>.norm.json` sidecar).
    #[arg(long, conflicts_with = "baseline")]
    weights: Option<PathBuf>,
    /// Baseline predictor: constvel or nneighbor.
    #[arg(long)]
    baseline: Option<String>,
    /// Neighbor count for the nneighbor baseline.
    #[arg(long, default_value_t = DEFAULT_NEIGHBORS)]
    k: usize,
    /// Neighbor matching frame: relative (anchor-subtracted) or absolute.
    #[arg(long, default_value = "relative")]
    match_frame: String,
    /// Output directory for report.json and report.csv.
    #[arg(short = 'o', long)]
    out: PathBuf,
    /// Also write overlay SVGs for the first N evaluated samples.
    #[arg(long, default_value_t = 0)]
    svg: usize,
}

#[derive(Args)]
struct PredictArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Prepared samples JSONL file.
    #[arg(long)]
    data: PathBuf,
    /// 0-based index of the sample to predict.
    #[arg(long, default_value_t = 0)]
    index: usize,
    /// Trained weights file (expects a `<weights>.norm.json` sidecar).
    #[arg(long, conflicts_with = "baseline")]
    weights: Option<PathBuf>,
    /// Baseline predictor: constvel or nneighbor.
    #[arg(long)]
    baseline: Option<String>,
    /// Neighbor count for the nneighbor baseline.
    #[arg(long, default_value_t = DEFAULT_NEIGHBORS)]
    k: usize,
    /// Write an overlay SVG of past, truth, and prediction here.
    #[arg(long)]
    svg: Option<PathBuf>,
}

#[derive(Args)]
struct SelftestArgs {
    /// Perturb one analytic gradient to prove the battery catches it.
    /// Targets: conv1d, deconv1d, batchnorm_train, batchnorm_eval,
    /// relu_chain, concat, mse_loss, network.
    #[arg(long)]
    inject_fault: Option<String>,
}

// ---------------------------------------------------------------------------
// Entry point
// ---------------------------------------------------------------------------

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let ok = matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion);
            let _ = e.print();
            return if ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            };
        }
    };
    let result = match cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Prepare(args) => cmd_prepare(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Selftest(args) => cmd_selftest(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

fn cmd_synth(args: SynthArgs) -> Result<(), CliError> {
    let seed = resolve_seed(args.seed)?;
    if args.scenes == 0 {
        return Err(CliError::Usage("--scenes must be positive".into()));
    }
    let suites: Vec<GeneratedSuite> = match (&args.suite, &args.script) {
        (Some(name), None) => match name.as_str() {
            "linear" => vec![linear_suite(seed, args.scenes)?],
            "curved_ego" => vec![curved_ego_suite(seed, args.scenes)?],
            "interactive" => vec![interactive_suite(seed, args.scenes)?],
            "all" => vec![
                linear_suite(seed, args.scenes)?,
                curved_ego_suite(seed, args.scenes)?,
                interactive_suite(seed, args.scenes)?,
            ],
            other => {
                return Err(CliError::Usage(format!(
                    "unknown suite {other:?}\nusage: egoforecast synth --suite <linear|curved_ego|interactive|all> -o <dir>"
                )))
            }
        },
        (None, Some(path)) => {
            let text = fs::read_to_string(path).map_err(|e| {
                CliError::Data(format!("cannot read script {}: {e}", path.display()))
            })?;
            let mut script: SceneScript = serde_json::from_str(&text).map_err(|e| {
                CliError::Usage(format!("script {}: {e}", path.display()))
            })?;
            if args.seed.is_some() {
                script.seed = seed;
            }
            let (truth, tracklets) = generate_scene(&script)?;
            vec![GeneratedSuite {
                name: script.id.clone(),
                scripts: vec![script],
                truths: vec![truth],
                tracklets,
            }]
        }
        (None, None) => {
            return Err(CliError::Usage(
                "one of --suite or --script is required\nusage: egoforecast synth --suite <linear|curved_ego|interactive|all> -o <dir>".into(),
            ))
        }
        (Some(_), Some(_)) => unreachable!("clap conflicts_with"),
    };
    fs::create_dir_all(&args.out)?;
    for suite in &suites {
        let (tracklet_path, truth_path) = write_suite(suite, &args.out)?;
        let samples = suite_to_samples(suite, 10, 10, 1, RotationAccumulation::PreMultiply)?;
        println!(
            "suite {}: {} scenes, {} tracklets, {} samples at t_prev 10 / t_future 10 / stride 1",
            suite.name,
            suite.truths.len(),
            suite.tracklets.len(),
            samples.len()
        );
        println!("  wrote {}", tracklet_path.display());
        println!("  wrote {}", truth_path.display());
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// prepare
// ---------------------------------------------------------------------------

fn cmd_prepare(args: PrepareArgs) -> Result<(), CliError> {
    let tracklets = read_tracklets(&args.data)?;
    let mut samples = Vec::new();
    for tracklet in &tracklets {
        samples.extend(sliding_window(
            tracklet,
            args.t_prev,
            args.t_future,
            args.stride,
            RotationAccumulation::PreMultiply,
        )?);
    }
    if samples.is_empty() {
        return Err(CliError::Data(format!(
            "no window of {}+{} frames fits any of the {} tracklets",
            args.t_prev,
            args.t_future,
            tracklets.len()
        )));
    }
    write_samples(&args.out, &samples)?;
    println!(
        "prepared {} samples from {} tracklets into {}",
        samples.len(),
        tracklets.len(),
        args.out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

/// Group samples by video and split the videos into balanced folds.
fn make_split(samples: &[Sample], folds: usize, seed: u64) -> Result<FoldSplit, CliError> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for s in samples {
        *counts.entry(s.video_id.clone()).or_default() += 1;
    }
    let videos: Vec<(String, usize)> = counts.into_iter().collect();
    kfold_split(&videos, folds, seed).map_err(|e| CliError::Usage(e.to_string()))
}

/// Partition samples into (held-out fold, training remainder).
fn fold_partition(
    samples: Vec<Sample>,
    split: &FoldSplit,
    fold: usize,
) -> (Vec<Sample>, Vec<Sample>) {
    samples
        .into_iter()
        .partition(|s| split.fold_of(&s.video_id) == Some(fold))
}

fn sidecar_path(weights: &Path, suffix: &str) -> PathBuf {
    PathBuf::from(format!("{}.{suffix}", weights.display()))
}

fn load_dataset(path: &Path) -> Result<Vec<Sample>, CliError> {
    if !path.exists() {
        return Err(CliError::Data(format!(
            "dataset {} does not exist",
            path.display()
        )));
    }
    Ok(read_samples(path)?)
}

fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    let cfg = args.config.resolve()?;
    let seed = cfg.resolve_seed()?;
    if args.fold >= cfg.folds {
        return Err(CliError::Usage(format!(
            "fold {} out of range for {} folds",
            args.fold, cfg.folds
        )));
    }
    let samples = load_dataset(&args.data)?;
    let split = make_split(&samples, cfg.folds, seed)?;
    let (held_out, train_samples) = fold_partition(samples, &split, args.fold);
    if train_samples.is_empty() {
        return Err(CliError::Data(format!(
            "no training samples outside fold {}",
            args.fold
        )));
    }
    let stats = compute_norm_stats(&train_samples)?;
    let schedule = cfg.schedule.to_schedule();
    let mut net = Network::build(cfg.net_config()?, seed)?;
    println!(
        "training {} parameters on {} samples ({} held out in fold {}): {} iterations, batch {}",
        net.parameter_count(),
        train_samples.len(),
        held_out.len(),
        args.fold,
        schedule.iterations,
        schedule.batch_size
    );
    let log = net.train(&train_samples, &stats, &schedule, seed, cfg.augment)?;
    if let Some(dir) = args.out.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    save_weights(&net, &args.out)?;
    let norm_path = sidecar_path(&args.out, "norm.json");
    let mut norm_json = serde_json::to_string_pretty(&stats)
        .map_err(|e| CliError::Data(format!("serializing normalization stats: {e}")))?;
    norm_json.push('\n');
    fs::write(&norm_path, norm_json)?;
    let loss_path = sidecar_path(&args.out, "loss.csv");
    let mut csv = String::from("iteration,loss\n");
    for (i, loss) in log.losses.iter().enumerate() {
        csv.push_str(&format!("{i},{loss}\n"));
    }
    fs::write(&loss_path, csv)?;
    let first = log.losses.first().copied().unwrap_or(f64::NAN);
    let last = log.losses.last().copied().unwrap_or(f64::NAN);
    println!(
        "loss {first:.6} -> {last:.6} over {} iterations",
        log.losses.len()
    );
    println!("  wrote {}", args.out.display());
    println!("  wrote {}", norm_path.display());
    println!("  wrote {}", loss_path.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

fn parse_match_frame(token: &str) -> Result<MatchFrame, CliError> {
    match token {
        "relative" => Ok(MatchFrame::Relative),
        "absolute" => Ok(MatchFrame::Absolute),
        other => Err(CliError::Usage(format!(
            "unknown match frame {other:?}; expected relative or absolute"
        ))),
    }
}

fn read_norm_sidecar(weights: &Path) -> Result<NormStats, CliError> {
    let path = sidecar_path(weights, "norm.json");
    let text = fs::read_to_string(&path).map_err(|e| {
        CliError::Data(format!(
            "cannot read normalization sidecar {}: {e}",
            path.display()
        ))
    })?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Data(format!("normalization sidecar {}: {e}", path.display())))
}

/// Predict every test sample with either the trained net or a baseline.
fn predict_all(
    cfg: &RunConfig,
    weights: Option<&Path>,
    baseline: Option<&str>,
    k: usize,
    frame: MatchFrame,
    test: &[Sample],
    index: &[Sample],
) -> Result<Vec<Prediction>, CliError> {
    match (weights, baseline) {
        (Some(w), None) => {
            let config = cfg.net_config()?;
            let mut net = load_weights(w, &config)?;
            let stats = read_norm_sidecar(w)?;
            Ok(network_predictions(&mut net, test, &stats, EVAL_BATCH)?)
        }
        (None, Some("constvel")) => {
            Ok(test.iter().map(const_vel).collect::<Result<Vec<_>, _>>()?)
        }
        (None, Some("nneighbor")) => {
            if index.is_empty() {
                return Err(CliError::Data(
                    "nneighbor baseline needs a non-empty training fold as its index".into(),
                ));
            }
            Ok(test
                .iter()
                .map(|s| nneighbor(s, index, k, frame))
                .collect::<Result<Vec<_>, _>>()?)
        }
        (None, Some(other)) => Err(CliError::Usage(format!(
            "unknown baseline {other:?}; expected constvel or nneighbor"
        ))),
        (None, None) => Err(CliError::Usage(
            "one of --weights or --baseline is required".into(),
        )),
        (Some(_), Some(_)) => unreachable!("clap conflicts_with"),
    }
}

fn cmd_eval(args: EvalArgs) -> Result<(), CliError> {
    let cfg = args.config.resolve()?;
    let seed = cfg.resolve_seed()?;
    if args.fold >= cfg.folds {
        return Err(CliError::Usage(format!(
            "fold {} out of range for {} folds",
            args.fold, cfg.folds
        )));
    }
    let frame = parse_match_frame(&args.match_frame)?;
    let samples = load_dataset(&args.data)?;
    let split = make_split(&samples, cfg.folds, seed)?;
    let (test, train) = fold_partition(samples, &split, args.fold);
    if test.is_empty() {
        return Err(CliError::Data(format!("fold {} has no samples", args.fold)));
    }
    let predictions = predict_all(
        &cfg,
        args.weights.as_deref(),
        args.baseline.as_deref(),
        args.k,
        frame,
        &test,
        &train,
    )?;
    let report = evaluate(&predictions, &test)?;
    fs::create_dir_all(&args.out)?;
    let json_path = args.out.join("report.json");
    let csv_path = args.out.join("report.csv");
    fs::write(&json_path, report_json(&report))?;
    fs::write(&csv_path, report_csv(&report))?;
    if args.svg > 0 {
        for (i, (pred, sample)) in predictions.iter().zip(&test).take(args.svg).enumerate() {
            let svg_path = args.out.join(format!("sample-{i:04}.svg"));
            fs::write(&svg_path, overlay_svg(sample, pred))?;
        }
    }
    println!("evaluated {} samples from fold {}", report.count, args.fold);
    print!("{}", report_csv(&report));
    println!(
        "average FDE {:.3} px; {:.1}% under 100 px, {:.1}% over 300 px; mean physical error {:.1} cm",
        report.average_fde_px,
        100.0 * report.fraction_below_100px,
        100.0 * report.fraction_above_300px,
        report.mean_physical_error_cm
    );
    println!("  wrote {}", json_path.display());
    println!("  wrote {}", csv_path.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// predict
// ---------------------------------------------------------------------------

fn cmd_predict(args: PredictArgs) -> Result<(), CliError> {
    let cfg = args.config.resolve()?;
    let samples = load_dataset(&args.data)?;
    if args.index >= samples.len() {
        return Err(CliError::Usage(format!(
            "index {} out of range for {} samples",
            args.index,
            samples.len()
        )));
    }
    let sample = samples[args.index].clone();
    // For the neighbor baseline, every other sample serves as the index.
    let rest: Vec<Sample> = samples
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != args.index)
        .map(|(_, s)| s.clone())
        .collect();
    let test = [sample];
    let predictions = predict_all(
        &cfg,
        args.weights.as_deref(),
        args.baseline.as_deref(),
        args.k,
        MatchFrame::Relative,
        &test,
        &rest,
    )?;
    let prediction = &predictions[0];
    let sample = &test[0];
    let truth = truth_final(sample);
    let report = serde_json::json!({
        "video_id": sample.video_id,
        "t0": sample.t0,
        "anchor": [sample.anchor.x, sample.anchor.y, sample.anchor.s],
        "final_location": prediction.final_location,
        "offsets": prediction.offsets,
        "truth_final": truth,
        "fde_px": fde(prediction.final_location, truth),
    });
    let text = serde_json::to_string_pretty(&report)
        .map_err(|e| CliError::Data(format!("serializing prediction: {e}")))?;
    println!("{text}");
    if let Some(svg_path) = &args.svg {
        fs::write(svg_path, overlay_svg(sample, prediction))?;
        println!("wrote {}", svg_path.display());
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// selftest
// ---------------------------------------------------------------------------

fn cmd_selftest(args: SelftestArgs) -> Result<(), CliError> {
    let report = run_selftest(args.inject_fault.as_deref())?;
    print!("{}", report.summary());
    if report.all_passed() {
        Ok(())
    } else {
        let names: Vec<&str> = report.failures().iter().map(|c| c.name.as_str()).collect();
        Err(CliError::SelfTest(format!(
            "self-test failed: {}",
            names.join(", ")
        )))
    }
}
