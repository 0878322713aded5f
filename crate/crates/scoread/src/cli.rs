//! Command-line pipeline: `train`, `detect`, `eval`, and `synth`.
//!
//! Every command reads an optional JSON configuration (`--config`), then a
//! named parameter bundle (`--profile`), then individual flags; later
//! sources win. Outputs land in `--output` (default: current directory)
//! alongside JSON sidecars that echo the resolved configuration, so a run
//! can be reproduced from its artifacts alone.
//!
//! Exit codes: 0 success, 1 configuration problem, 2 unusable data,
//! 3 training divergence, 4 single-class ground truth.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::data_io::{
    extract_context, flatten, load_cube, load_mask, normalize_cube, save_cube, save_mask,
    ContextSet, DualWindow,
};
use crate::detector::{detect_map, load_map, save_map, save_map_pgm, DetectorParams};
use crate::error::{Error, Result};
use crate::eval::{evaluate_map, write_box_csv, write_curves_csv, BoxStats, MetricsReport,
    DEFAULT_N_TAU};
use crate::numerics::SeededRng;
use crate::oracle::{generate_scene, reference_scene, GaussianSubspaceModel, SceneMeta};
use crate::sgm::{
    load_model, save_model, train, ArchConfig, ContextArch, SigmaSchedule, TrainConfig,
    TrainReport,
};

/// Environment variable consulted for the detection thread count when
/// `--threads` is absent.
pub const THREADS_ENV: &str = "SCOREAD_THREADS";

/// Score-ensemble anomaly detection for hyperspectral cubes.
#[derive(Debug, Parser)]
#[command(name = "scoread", version, about)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Top-level subcommands.
#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a score model on a cube.
    Train(TrainArgs),
    /// Score every pixel of a cube with a trained model.
    Detect(DetectArgs),
    /// Compare an anomaly map against a ground-truth mask.
    Eval(EvalArgs),
    /// Generate a synthetic scene with implanted anomalies.
    Synth(SynthArgs),
}

/// Flags shared by every subcommand.
#[derive(Debug, Args)]
pub struct CommonArgs {
    /// JSON pipeline configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Named parameter bundle: hydice, pavia, salinas, or hyperion.
    #[arg(long)]
    pub profile: Option<String>,
    /// Directory for outputs (created if missing).
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Seed override applied to training, detection, and synthesis.
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Arguments of `scoread train`.
#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Cube header (JSON); the raw payload sits next to it.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Where to write the model (default: `<output>/model.scad`).
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Number of optimization steps.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Minibatch size.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Adam learning rate.
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Dual window `INNER,OUTER` for context-conditional training.
    #[arg(long)]
    pub window: Option<String>,
    /// Train unconditionally even if the configuration sets a window.
    #[arg(long)]
    pub no_context: bool,
}

/// Arguments of `scoread detect`.
#[derive(Debug, Args)]
pub struct DetectArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Cube header (JSON); the raw payload sits next to it.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Trained model file.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Diffusion time of the perturbation ensemble.
    #[arg(long)]
    pub t: Option<f64>,
    /// Ensemble size per pixel.
    #[arg(long)]
    pub k: Option<usize>,
    /// Dual window `INNER,OUTER` for context extraction.
    #[arg(long)]
    pub window: Option<String>,
    /// Detect without context even if the configuration sets a window.
    #[arg(long)]
    pub no_context: bool,
    /// Worker threads (default: `SCOREAD_THREADS` or all cores).
    #[arg(long)]
    pub threads: Option<usize>,
}

/// Arguments of `scoread eval`.
#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Anomaly map header (JSON); the raw payload sits next to it.
    #[arg(long)]
    pub map: Option<PathBuf>,
    /// Ground-truth mask (binary PGM or one-band cube container).
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Number of grid thresholds in [0, 1].
    #[arg(long)]
    pub n_tau: Option<usize>,
}

/// Arguments of `scoread synth`.
#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Generate the pinned reference scene, ignoring the shape flags below.
    #[arg(long)]
    pub preset: bool,
    /// Scene height in pixels.
    #[arg(long)]
    pub height: Option<usize>,
    /// Scene width in pixels.
    #[arg(long)]
    pub width: Option<usize>,
    /// Number of bands.
    #[arg(long)]
    pub bands: Option<usize>,
    /// Intrinsic dimension of the background subspace.
    #[arg(long)]
    pub intrinsic: Option<usize>,
    /// Number of implanted anomaly pixels.
    #[arg(long)]
    pub anomalies: Option<usize>,
    /// Normal-space offset distance of each implant.
    #[arg(long)]
    pub distance: Option<f64>,
    /// Variance of each in-subspace direction.
    #[arg(long)]
    pub eigenvalue: Option<f64>,
    /// Background center value in every band.
    #[arg(long)]
    pub offset: Option<f64>,
}

/// Architecture overrides; unset fields keep the per-band defaults.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchSection {
    pub width: Option<usize>,
    pub blocks: Option<usize>,
    pub kernel: Option<usize>,
    pub fourier_dim: Option<usize>,
    pub film_hidden: Option<usize>,
    /// Hidden width of the context encoder (used when a window is set).
    pub context_hidden: Option<usize>,
    /// Pooled context encoding dimension (used when a window is set).
    pub context_encoded: Option<usize>,
}

/// Training section: hyperparameters plus architecture overrides.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSection {
    #[serde(flatten)]
    pub config: TrainConfig,
    pub arch: ArchSection,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            config: TrainConfig::default(),
            arch: ArchSection::default(),
        }
    }
}

/// Detection section of the configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorSection {
    /// Diffusion time of the perturbation ensemble.
    pub t: f64,
    /// Ensemble size per pixel.
    pub k: usize,
    /// Per-pixel stream seed.
    pub seed: u64,
}

impl Default for DetectorSection {
    fn default() -> Self {
        DetectorSection {
            t: 0.05,
            k: 100,
            seed: 0,
        }
    }
}

/// Evaluation section of the configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSection {
    /// Number of grid thresholds in [0, 1].
    pub n_tau: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection { n_tau: DEFAULT_N_TAU }
    }
}

/// Synthesis section of the configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSection {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub intrinsic: usize,
    pub eigenvalue: f64,
    pub offset: f64,
    pub anomalies: usize,
    pub distance: f64,
    pub seed: u64,
}

impl Default for SynthSection {
    fn default() -> Self {
        SynthSection {
            height: 32,
            width: 32,
            bands: 30,
            intrinsic: 4,
            eigenvalue: 0.01,
            offset: 0.5,
            anomalies: 5,
            distance: 0.5,
            seed: crate::oracle::REFERENCE_SCENE_SEED,
        }
    }
}

/// The full pipeline configuration; every field has a default, so `{}` is a
/// valid file.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Input cube header.
    pub cube: Option<PathBuf>,
    /// Ground-truth mask.
    pub mask: Option<PathBuf>,
    /// Anomaly map header (for `eval`).
    pub map: Option<PathBuf>,
    /// Model file (output of `train`, input of `detect`).
    pub model: Option<PathBuf>,
    /// Output directory.
    pub output_dir: Option<PathBuf>,
    /// Dual window `(inner, outer)` used by both training and detection;
    /// absent means unconditional.
    pub window: Option<(usize, usize)>,
    /// Noise schedule shared by training and detection.
    pub schedule: SigmaSchedule,
    pub train: TrainSection,
    pub detector: DetectorSection,
    pub eval: EvalSection,
    pub synth: SynthSection,
}

/// Maps every error to the documented process exit code.
pub fn exit_code(error: &Error) -> i32 {
    match error {
        Error::InvalidArgument(_) | Error::ShapeMismatch(_) => 1,
        Error::Io { .. } | Error::Format { .. } | Error::DegenerateInput(_)
        | Error::NonFinite(_) => 2,
        Error::Diverged { .. } => 3,
        Error::SingleClass(_) => 4,
    }
}

/// Runs one parsed command to completion.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(args) => run_train(args),
        Command::Detect(args) => run_detect(args),
        Command::Eval(args) => run_eval(args),
        Command::Synth(args) => run_synth(args),
    }
}

fn load_config(path: &Path) -> Result<PipelineConfig> {
    // Configuration problems (missing or malformed file) are usage errors,
    // not data errors, hence InvalidArgument.
    let text = std::fs::read_to_string(path).map_err(|e| {
        Error::InvalidArgument(format!("cannot read config {}: {e}", path.display()))
    })?;
    serde_json::from_str(&text).map_err(|e| {
        Error::InvalidArgument(format!("cannot parse config {}: {e}", path.display()))
    })
}

fn apply_profile(config: &mut PipelineConfig, name: &str) -> Result<()> {
    match name {
        "hydice" => {
            config.detector.t = 0.05;
            config.window = None;
        }
        "pavia" | "salinas" => {
            config.detector.t = 0.05;
            config.window = Some((3, 5));
        }
        "hyperion" => {
            config.detector.t = 0.01;
            config.window = Some((3, 5));
        }
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown profile \"{other}\" (expected hydice, pavia, salinas, or hyperion)"
            )));
        }
    }
    config.detector.k = 100;
    Ok(())
}

fn parse_window(spec: &str) -> Result<(usize, usize)> {
    let parts: Vec<&str> = spec.split(',').collect();
    let invalid = || {
        Error::InvalidArgument(format!(
            "window must be INNER,OUTER with odd sizes, got \"{spec}\""
        ))
    };
    if parts.len() != 2 {
        return Err(invalid());
    }
    let inner: usize = parts[0].trim().parse().map_err(|_| invalid())?;
    let outer: usize = parts[1].trim().parse().map_err(|_| invalid())?;
    Ok((inner, outer))
}

/// Resolves config file, profile, and common flags; creates the output dir.
fn resolve_common(common: &CommonArgs) -> Result<(PipelineConfig, PathBuf)> {
    let mut config = match &common.config {
        Some(path) => load_config(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(profile) = &common.profile {
        apply_profile(&mut config, profile)?;
    }
    if let Some(output) = &common.output {
        config.output_dir = Some(output.clone());
    }
    if let Some(seed) = common.seed {
        config.train.config.seed = seed;
        config.detector.seed = seed;
        config.synth.seed = seed;
    }
    let output_dir = config
        .output_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&output_dir).map_err(|e| Error::io(&output_dir, e))?;
    Ok((config, output_dir))
}

fn apply_window_flags(
    config: &mut PipelineConfig,
    window: &Option<String>,
    no_context: bool,
) -> Result<()> {
    if let Some(spec) = window {
        config.window = Some(parse_window(spec)?);
    }
    if no_context {
        config.window = None;
    }
    Ok(())
}

fn required_path(explicit: Option<PathBuf>, fallback: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    explicit.or_else(|| fallback.clone()).ok_or_else(|| {
        Error::InvalidArgument(format!("no {what} given (flag or config entry required)"))
    })
}

fn dual_window(config: &PipelineConfig) -> Result<Option<DualWindow>> {
    config
        .window
        .map(|(inner, outer)| DualWindow::new(inner, outer))
        .transpose()
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| {
        Error::Format {
            path: path.to_path_buf(),
            reason: format!("cannot serialize: {e}"),
        }
    })?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn resolved_arch(
    bands: usize,
    section: &ArchSection,
    window: Option<DualWindow>,
) -> ArchConfig {
    let mut arch = ArchConfig::default_for_bands(bands);
    if let Some(width) = section.width {
        arch.width = width;
    }
    if let Some(blocks) = section.blocks {
        arch.blocks = blocks;
    }
    if let Some(kernel) = section.kernel {
        arch.kernel = kernel;
    }
    if let Some(fourier_dim) = section.fourier_dim {
        arch.fourier_dim = fourier_dim;
    }
    if let Some(film_hidden) = section.film_hidden {
        arch.film_hidden = film_hidden;
    }
    arch.context = window.map(|w| ContextArch {
        count: w.context_count(),
        hidden: section.context_hidden.unwrap_or(32),
        encoded: section.context_encoded.unwrap_or(32),
    });
    arch
}

#[derive(Serialize)]
struct TrainSidecar<'a> {
    version: &'a str,
    model: &'a Path,
    cube: &'a Path,
    report: &'a TrainReport,
    config: &'a PipelineConfig,
}

fn run_train(args: TrainArgs) -> Result<()> {
    let (mut config, output_dir) = resolve_common(&args.common)?;
    apply_window_flags(&mut config, &args.window, args.no_context)?;
    if let Some(steps) = args.steps {
        config.train.config.steps = steps;
    }
    if let Some(batch_size) = args.batch_size {
        config.train.config.batch_size = batch_size;
    }
    if let Some(learning_rate) = args.learning_rate {
        config.train.config.learning_rate = learning_rate;
    }
    let header = required_path(args.input, &config.cube, "input cube")?;
    let cube = load_cube(&header, &header.with_extension("raw"))?;
    let cube = normalize_cube(&cube)?;
    let spectra = flatten(&cube);

    let window = dual_window(&config)?;
    let contexts: Option<Vec<ContextSet>> = match window {
        Some(window) => Some(
            (0..cube.pixel_count())
                .map(|pixel| extract_context(&cube, pixel, window))
                .collect::<Result<Vec<_>>>()?,
        ),
        None => None,
    };
    let arch = resolved_arch(cube.bands(), &config.train.arch, window);
    let (net, report) = train(
        &arch,
        &config.schedule,
        &spectra,
        contexts.as_deref(),
        &config.train.config,
    )?;

    let model_path = args
        .model
        .or_else(|| config.model.clone())
        .unwrap_or_else(|| output_dir.join("model.scad"));
    save_model(&net, &model_path)?;
    write_json(
        &TrainSidecar {
            version: env!("CARGO_PKG_VERSION"),
            model: &model_path,
            cube: &header,
            report: &report,
            config: &config,
        },
        &output_dir.join("train_report.json"),
    )?;
    println!(
        "trained {} parameters for {} steps; final loss {:.6}; model -> {}",
        net.param_count(),
        config.train.config.steps,
        report.final_loss,
        model_path.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct DetectSidecar<'a> {
    version: &'a str,
    model: &'a Path,
    cube: &'a Path,
    t: f64,
    k: usize,
    window: Option<(usize, usize)>,
    seed: u64,
    config: &'a PipelineConfig,
}

fn run_detect(args: DetectArgs) -> Result<()> {
    let (mut config, output_dir) = resolve_common(&args.common)?;
    apply_window_flags(&mut config, &args.window, args.no_context)?;
    if let Some(t) = args.t {
        config.detector.t = t;
    }
    if let Some(k) = args.k {
        config.detector.k = k;
    }
    let model_path = required_path(args.model, &config.model, "model file")?;
    let header = required_path(args.input, &config.cube, "input cube")?;

    let net = load_model(&model_path)?;
    let cube = load_cube(&header, &header.with_extension("raw"))?;
    let cube = normalize_cube(&cube)?;
    let params = DetectorParams {
        t: config.detector.t,
        k: config.detector.k,
        window: dual_window(&config)?,
        seed: config.detector.seed,
    };

    let threads = match args.threads {
        Some(n) => Some(n),
        None => match std::env::var(THREADS_ENV) {
            Ok(text) => Some(text.parse::<usize>().map_err(|_| {
                Error::InvalidArgument(format!("{THREADS_ENV} must be a positive integer, got \"{text}\""))
            })?),
            Err(_) => None,
        },
    };
    if threads == Some(0) {
        return Err(Error::InvalidArgument(
            "thread count must be at least 1".into(),
        ));
    }
    let map = match threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("cannot build thread pool: {e}")))?
            .install(|| detect_map(&cube, &net, &params))?,
        None => detect_map(&cube, &net, &params)?,
    };

    let map_header = output_dir.join("map.json");
    save_map(&map, &map_header, &output_dir.join("map.raw"))?;
    save_map_pgm(&map, &output_dir.join("map.pgm"))?;
    write_json(
        &DetectSidecar {
            version: env!("CARGO_PKG_VERSION"),
            model: &model_path,
            cube: &header,
            t: params.t,
            k: params.k,
            window: config.window,
            seed: params.seed,
            config: &config,
        },
        &output_dir.join("detect_meta.json"),
    )?;
    let min = map.strengths().iter().cloned().fold(f64::INFINITY, f64::min);
    let max = map
        .strengths()
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    println!(
        "scored {}x{} pixels (k = {}, t = {}); strengths in [{min:.4}, {max:.4}]; map -> {}",
        map.height(),
        map.width(),
        params.k,
        params.t,
        map_header.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct EvalSidecar<'a> {
    version: &'a str,
    map: &'a Path,
    mask: &'a Path,
    n_tau: usize,
    score_min: f64,
    score_max: f64,
    metrics: &'a MetricsReport,
    background: &'a BoxStats,
    anomaly: &'a BoxStats,
}

fn run_eval(args: EvalArgs) -> Result<()> {
    let (mut config, output_dir) = resolve_common(&args.common)?;
    if let Some(n_tau) = args.n_tau {
        config.eval.n_tau = n_tau;
    }
    let map_header = required_path(args.map, &config.map, "anomaly map")?;
    let mask_path = required_path(args.mask, &config.mask, "ground-truth mask")?;

    let map = load_map(&map_header, &map_header.with_extension("raw"))?;
    let mask = load_mask(&mask_path)?;
    let evaluation = evaluate_map(&map, &mask, config.eval.n_tau)?;

    write_json(
        &EvalSidecar {
            version: env!("CARGO_PKG_VERSION"),
            map: &map_header,
            mask: &mask_path,
            n_tau: config.eval.n_tau,
            score_min: evaluation.score_min,
            score_max: evaluation.score_max,
            metrics: &evaluation.report,
            background: &evaluation.background,
            anomaly: &evaluation.anomaly,
        },
        &output_dir.join("report.json"),
    )?;
    write_curves_csv(&evaluation.curves, &output_dir.join("curves.csv"))?;
    write_box_csv(
        &evaluation.background,
        &evaluation.anomaly,
        &output_dir.join("box.csv"),
    )?;
    let report = &evaluation.report;
    println!(
        "auc_pd_pf={:.4} auc_pd_tau={:.4} auc_pf_tau={:.4} auc_pr={:.4} odp={:.4}",
        report.auc_pd_pf, report.auc_pd_tau, report.auc_pf_tau, report.auc_pr, report.odp
    );
    println!("report -> {}", output_dir.join("report.json").display());
    Ok(())
}

#[derive(Serialize)]
struct SynthSidecar<'a> {
    version: &'a str,
    meta: &'a SceneMeta,
    config: &'a PipelineConfig,
}

fn run_synth(args: SynthArgs) -> Result<()> {
    let (mut config, output_dir) = resolve_common(&args.common)?;
    if let Some(height) = args.height {
        config.synth.height = height;
    }
    if let Some(width) = args.width {
        config.synth.width = width;
    }
    if let Some(bands) = args.bands {
        config.synth.bands = bands;
    }
    if let Some(intrinsic) = args.intrinsic {
        config.synth.intrinsic = intrinsic;
    }
    if let Some(anomalies) = args.anomalies {
        config.synth.anomalies = anomalies;
    }
    if let Some(distance) = args.distance {
        config.synth.distance = distance;
    }
    if let Some(eigenvalue) = args.eigenvalue {
        config.synth.eigenvalue = eigenvalue;
    }
    if let Some(offset) = args.offset {
        config.synth.offset = offset;
    }

    let scene = if args.preset {
        reference_scene()?
    } else {
        let section = &config.synth;
        let mut rng = SeededRng::new(section.seed, 0);
        let model = GaussianSubspaceModel::random(
            section.bands,
            section.intrinsic,
            vec![section.eigenvalue; section.intrinsic],
            vec![section.offset; section.bands],
            &mut rng,
        )?;
        generate_scene(
            &model,
            section.height,
            section.width,
            section.anomalies,
            section.distance,
            &mut rng,
        )?
    };

    let scene_header = output_dir.join("scene.json");
    save_cube(&scene.cube, &scene_header, &output_dir.join("scene.raw"))?;
    save_mask(&scene.mask, &output_dir.join("mask.pgm"))?;
    write_json(
        &SynthSidecar {
            version: env!("CARGO_PKG_VERSION"),
            meta: &scene.meta,
            config: &config,
        },
        &output_dir.join("scene_meta.json"),
    )?;
    println!(
        "scene {}x{}x{} with {} anomalies -> {}",
        scene.cube.height(),
        scene.cube.width(),
        scene.cube.bands(),
        scene.meta.anomaly_count,
        scene_header.display()
    );
    Ok(())
}
