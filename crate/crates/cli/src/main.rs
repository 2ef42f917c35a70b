use std::fs::{self, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use autograd::Real;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use pix2nerf::checkpoint::{load_checkpoint, save_checkpoint};
use pix2nerf::config::{ablation_config, AblationTag, TrainingConfig};
use pix2nerf::data::{load_image_folder, make_synthetic_dataset, save_dataset, Dataset, GroundTruth, SceneCamera};
use pix2nerf::image_tensor::ImageTensor;
use pix2nerf::inference::{
    interpolate, novel_views, parse_poses, refine_latent, sample_unconditional, InferenceModel, PoseMode, RefineInit,
    RefineOptions,
};
use pix2nerf::metrics::{evaluate, metric_extractor, EvalMode, EvalOptions, ShapeClassifier};
use pix2nerf::training::{LossReport, TrainState, Trainer};

const MANIFEST: &str = "run_manifest.json";

#[derive(Parser, Debug)]
#[command(name = "pix2nerf", version, about = "Single-image radiance fields: train, render, sample and evaluate")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Flat key = value configuration file, or a run manifest to replay.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Named configuration preset applied before the file.
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Extra `key=value` overrides, applied after the file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Fixed reduction order everywhere. Execution is single-threaded, so
    /// runs are always reproducible; the flag is recorded in the manifest.
    #[arg(long, global = true)]
    deterministic: bool,
    /// 64-bit parameters and arithmetic.
    #[arg(long, global = true)]
    high_precision: bool,
    /// Output directory.
    #[arg(long, global = true, env = "PIX2NERF_OUT", default_value = "runs/latest")]
    out: PathBuf,
    /// Increase log verbosity.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train the generator, discriminator and encoder.
    Train(TrainArgs),
    /// Novel views of one input image.
    Render(RenderArgs),
    /// Unconditional samples from the prior.
    Sample(SampleArgs),
    /// Latent interpolation between two images.
    Interpolate(InterpolateArgs),
    /// Latent optimization starting from the encoder.
    Refine(RefineArgs),
    /// Generative and reconstruction metrics.
    Evaluate(EvaluateArgs),
    /// Render a synthetic dataset with hidden ground truth.
    MakeDataset(MakeDatasetArgs),
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Total training iterations (overrides `total_iterations`).
    #[arg(long)]
    iters: Option<usize>,
    /// Ablation tag A..J.
    #[arg(long)]
    ablation: Option<AblationTag>,
    /// Folder of training images; a synthetic set is rendered when absent.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Scenes in the synthetic set used without `--dataset`.
    #[arg(long, default_value_t = 256)]
    synthetic_scenes: usize,
    /// Center-crop loaded images to a square.
    #[arg(long)]
    center_crop: bool,
    /// Continue from a checkpoint directory.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ModelArgs {
    #[arg(long)]
    checkpoint: PathBuf,
}

#[derive(Args, Debug)]
struct RenderArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    input: PathBuf,
    /// `pitch,yaw;pitch,yaw` or `turntable:k`.
    #[arg(long, default_value = "turntable:8")]
    poses: String,
}

#[derive(Args, Debug)]
struct SampleArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 8)]
    n: usize,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PoseModeArg {
    Interpolate,
    Fixed,
}

#[derive(Args, Debug)]
struct InterpolateArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[arg(long, default_value_t = 8)]
    steps: usize,
    #[arg(long, value_enum, default_value_t = PoseModeArg::Interpolate)]
    pose_mode: PoseModeArg,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum InitArg {
    Encoder,
    Random,
}

#[derive(Args, Debug)]
struct RefineArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 200)]
    iterations: usize,
    #[arg(long, default_value_t = 5e-3)]
    step_size: f64,
    #[arg(long, value_enum, default_value_t = InitArg::Encoder)]
    init: InitArg,
    /// Optimize the latent only, holding the encoder's pose.
    #[arg(long)]
    z_only: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Conditional,
    Unconditional,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::Conditional)]
    mode: ModeArg,
    #[arg(long, default_value_t = 64)]
    n_samples: usize,
    #[arg(long)]
    center_crop: bool,
}

#[derive(Args, Debug)]
struct MakeDatasetArgs {
    #[arg(long, default_value_t = 256)]
    scenes: usize,
    #[arg(long, default_value_t = 1)]
    views: usize,
    #[arg(long, default_value_t = 32)]
    resolution: usize,
}

#[derive(Serialize)]
struct RunManifest {
    command: String,
    argv: Vec<String>,
    version: &'static str,
    seed: u64,
    deterministic: bool,
    precision: &'static str,
    config: String,
    started: String,
    finished: String,
    outputs: Vec<String>,
}

/// A run manifest stands in for the config file it recorded.
fn config_text(path: &Path, text: String) -> Result<String> {
    if path.extension().is_some_and(|e| e == "json") {
        let value: serde_json::Value = serde_json::from_str(&text)?;
        match value.get("config").and_then(|c| c.as_str()) {
            Some(cfg) => Ok(cfg.to_string()),
            None => bail!("{} is not a run manifest", path.display()),
        }
    } else {
        Ok(text)
    }
}

/// State shared by every subcommand: resolved config and produced files.
struct Run {
    common: Common,
    cfg: TrainingConfig,
    started: chrono::DateTime<chrono::Utc>,
    outputs: Vec<PathBuf>,
}

impl Run {
    fn new(common: Common) -> Result<Self> {
        let mut cfg = match &common.preset {
            Some(name) => TrainingConfig::preset(name)?,
            None => TrainingConfig::default(),
        };
        if let Some(path) = &common.config {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            cfg.apply_text(&config_text(path, text)?)?;
        }
        for item in &common.overrides {
            cfg.apply_line(item)?;
        }
        if let Some(seed) = common.seed {
            cfg.seed = seed;
        }
        cfg.validate()?;
        fs::create_dir_all(&common.out).with_context(|| format!("creating {}", common.out.display()))?;
        Ok(Run { common, cfg, started: chrono::Utc::now(), outputs: Vec::new() })
    }

    fn out(&self, name: &str) -> PathBuf {
        self.common.out.join(name)
    }

    fn record(&mut self, path: PathBuf) {
        self.outputs.push(path);
    }

    fn save_images(&mut self, prefix: &str, images: &[ImageTensor]) -> Result<()> {
        for (i, img) in images.iter().enumerate() {
            let path = self.out(&format!("{prefix}_{i:03}.png"));
            img.save_png(&path)?;
            self.record(path);
        }
        Ok(())
    }

    fn write_json(&mut self, name: &str, value: &impl Serialize) -> Result<()> {
        let path = self.out(name);
        fs::write(&path, serde_json::to_string_pretty(value)?)?;
        self.record(path);
        Ok(())
    }

    fn finish(self, command: &str) -> Result<()> {
        let manifest = RunManifest {
            command: command.to_string(),
            argv: std::env::args().collect(),
            version: env!("CARGO_PKG_VERSION"),
            seed: self.cfg.seed,
            deterministic: self.common.deterministic,
            precision: if self.common.high_precision { "f64" } else { "f32" },
            config: self.cfg.to_text(),
            started: self.started.to_rfc3339(),
            finished: chrono::Utc::now().to_rfc3339(),
            outputs: self.outputs.iter().map(|p| p.display().to_string()).collect(),
        };
        fs::write(self.out(MANIFEST), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }
}

#[derive(Serialize)]
struct TrainSummary {
    iterations: usize,
    steps_this_run: usize,
    seconds: f64,
    ablation: Option<char>,
    checkpoint: String,
    log: String,
    final_losses: Vec<(String, f64)>,
}

fn final_losses(r: &LossReport) -> Vec<(String, f64)> {
    [
        ("loss_d", r.discriminator),
        ("loss_inv", r.inversion),
        ("loss_g", r.generator),
        ("loss_odd", r.odd),
        ("loss_recon", r.recon),
        ("loss_cond", r.cond),
        ("cond_pose_mse", r.cond_pose_mse),
    ]
    .into_iter()
    .filter_map(|(k, v)| v.map(|v| (k.to_string(), v)))
    .collect()
}

fn training_data(run: &Run, args: &TrainArgs) -> Result<Dataset> {
    let res = run.cfg.max_resolution();
    match &args.dataset {
        Some(dir) => Ok(load_image_folder(dir, args.center_crop, res)?),
        None => {
            let cam = SceneCamera { radius: run.cfg.camera_radius, fov: run.cfg.fov, ..SceneCamera::default() };
            let prior = run.cfg.pose_prior()?;
            Ok(make_synthetic_dataset(args.synthetic_scenes, 1, &prior, cam, res, run.cfg.seed)?.dataset)
        }
    }
}

fn train_with<R: Real>(mut run: Run, args: &TrainArgs) -> Result<()> {
    let data = training_data(&run, args)?;
    let mut state = match &args.resume {
        Some(dir) => {
            let ckpt = load_checkpoint::<R>(dir)?;
            run.cfg = ckpt.cfg;
            if let Some(iters) = args.iters {
                run.cfg.total_iterations = iters;
            }
            ckpt.state
        }
        None => match &run.cfg.init_checkpoint {
            Some(dir) => {
                let pretrained = load_checkpoint::<R>(dir)?;
                TrainState::from_pretrained(&run.cfg, &pretrained.state.params)?
            }
            None => TrainState::initialize(&run.cfg)?,
        },
    };
    let cfg = run.cfg.clone();
    let trainer = Trainer::new(&cfg, &data)?;
    let log_path = run.out("train_log.csv");
    let fresh = args.resume.is_none() || !log_path.exists();
    let file = OpenOptions::new().create(true).append(!fresh).write(true).truncate(fresh).open(&log_path)?;
    let mut log = BufWriter::new(file);
    if fresh {
        writeln!(log, "{}", LossReport::HEADER)?;
    }
    let steps = cfg.total_iterations.saturating_sub(state.iteration);
    log::info!("training {steps} iterations on {} images", data.len());
    let clock = Instant::now();
    let ckpt_root = run.out("checkpoints");
    let reports = trainer.run(&mut state, steps, Some(&mut log), |s, r| {
        if r.iteration % 100 == 0 {
            log::info!("iteration {}: {}", r.iteration, r.csv_row());
        }
        if cfg.checkpoint_every > 0 && s.iteration % cfg.checkpoint_every == 0 {
            save_checkpoint(s, &cfg, &ckpt_root.join(format!("iter_{:07}", s.iteration)))?;
        }
        Ok(())
    })?;
    log.flush()?;
    let ckpt = run.out("checkpoint");
    save_checkpoint(&state, &cfg, &ckpt)?;
    run.record(ckpt.clone());
    run.record(log_path.clone());
    let summary = TrainSummary {
        iterations: state.iteration,
        steps_this_run: steps,
        seconds: clock.elapsed().as_secs_f64(),
        ablation: cfg.ablation.map(|t| t.letter()),
        checkpoint: ckpt.display().to_string(),
        log: log_path.display().to_string(),
        final_losses: reports.last().map(final_losses).unwrap_or_default(),
    };
    run.write_json("summary.json", &summary)?;
    run.finish("train")
}

fn train(mut run: Run, args: TrainArgs) -> Result<()> {
    if let Some(tag) = args.ablation {
        run.cfg = ablation_config(tag, run.cfg.clone());
    }
    if let Some(iters) = args.iters {
        run.cfg.total_iterations = iters;
    }
    run.cfg.validate()?;
    if run.cfg.flags.freeze_generator && run.cfg.init_checkpoint.is_none() && args.resume.is_none() {
        bail!("ablation A needs `--set init_checkpoint=<dir>` with a pretrained generator");
    }
    if run.common.high_precision {
        train_with::<f64>(run, &args)
    } else {
        train_with::<f32>(run, &args)
    }
}

fn load_image(path: &Path) -> Result<ImageTensor> {
    ImageTensor::load_png(path).with_context(|| format!("reading {}", path.display()))
}

fn with_model<T>(
    run: &mut Run,
    checkpoint: &Path,
    f32_fn: impl FnOnce(&mut Run, &InferenceModel<f32>) -> Result<T>,
    f64_fn: impl FnOnce(&mut Run, &InferenceModel<f64>) -> Result<T>,
) -> Result<T> {
    if run.common.high_precision {
        let model = InferenceModel::<f64>::load(checkpoint)?;
        run.cfg = model.cfg.clone();
        f64_fn(run, &model)
    } else {
        let model = InferenceModel::<f32>::load(checkpoint)?;
        run.cfg = model.cfg.clone();
        f32_fn(run, &model)
    }
}

macro_rules! both {
    ($run:expr, $ckpt:expr, |$r:ident, $m:ident| $body:expr) => {
        with_model($run, $ckpt, |$r, $m| $body, |$r, $m| $body)
    };
}

fn render(mut run: Run, args: RenderArgs) -> Result<()> {
    let input = load_image(&args.input)?;
    both!(&mut run, &args.model.checkpoint, |r, m| {
        let poses = parse_poses(&args.poses, &m.prior()?)?;
        let views = novel_views(m, &input, &poses)?;
        r.save_images("view", &views)
    })?;
    run.finish("render")
}

fn sample(mut run: Run, args: SampleArgs) -> Result<()> {
    let seed = run.common.seed;
    both!(&mut run, &args.model.checkpoint, |r, m| {
        let images = sample_unconditional(m, args.n, seed.unwrap_or(m.cfg.seed))?;
        r.save_images("sample", &images)
    })?;
    run.finish("sample")
}

fn interp(mut run: Run, args: InterpolateArgs) -> Result<()> {
    let (a, b) = (load_image(&args.a)?, load_image(&args.b)?);
    let mode = match args.pose_mode {
        PoseModeArg::Interpolate => PoseMode::Interpolate,
        PoseModeArg::Fixed => PoseMode::Fixed,
    };
    both!(&mut run, &args.model.checkpoint, |r, m| {
        let frames = interpolate(m, &a, &b, args.steps, mode)?;
        r.save_images("frame", &frames)
    })?;
    run.finish("interpolate")
}

#[derive(Serialize)]
struct RefineSummary {
    z: Vec<f64>,
    pitch: f64,
    yaw: f64,
    initial_loss: f64,
    loss: f64,
    trace: Vec<f64>,
}

fn refine(mut run: Run, args: RefineArgs) -> Result<()> {
    let input = load_image(&args.input)?;
    let seed = run.common.seed.unwrap_or(run.cfg.seed);
    let opts = RefineOptions {
        init: match args.init {
            InitArg::Encoder => RefineInit::Encoder,
            InitArg::Random => RefineInit::Random(seed),
        },
        iterations: args.iterations,
        step_size: args.step_size,
        z_only: args.z_only,
    };
    both!(&mut run, &args.model.checkpoint, |r, m| {
        let result = refine_latent(m, &input, &opts)?;
        let path = r.out("refined.png");
        result.image.save_png(&path)?;
        r.record(path);
        let summary = RefineSummary {
            z: result.z.clone(),
            pitch: result.pose.pitch,
            yaw: result.pose.yaw,
            initial_loss: result.initial_loss,
            loss: result.loss,
            trace: result.trace.clone(),
        };
        r.write_json("refine.json", &summary)
    })?;
    run.finish("refine")
}

fn evaluate_cmd(mut run: Run, args: EvaluateArgs) -> Result<()> {
    let seed = run.common.seed.unwrap_or(run.cfg.seed);
    let mode = match args.mode {
        ModeArg::Conditional => EvalMode::Conditional,
        ModeArg::Unconditional => EvalMode::Unconditional,
    };
    let extractor = metric_extractor();
    let truth = GroundTruth::load(&args.dataset).ok();
    let report = both!(&mut run, &args.model.checkpoint, |_r, m| {
        let real = load_image_folder(&args.dataset, args.center_crop, m.resolution())?;
        let classifier = match &truth {
            Some(t) if t.views.len() == real.len() => {
                let refs: Vec<&ImageTensor> = real.images().iter().collect();
                let feats = extractor.embed(&refs)?;
                Some(ShapeClassifier::train(&feats, &t.labels(), 3, 300)?)
            }
            _ => None,
        };
        let opts = EvalOptions { mode, n_samples: args.n_samples, seed, extractor: &extractor, classifier: classifier.as_ref() };
        Ok(evaluate(m, &real, &opts)?)
    })?;
    run.write_json("metrics.json", &report)?;
    let csv = run.out("metrics.csv");
    let new = !csv.exists();
    let mut f = OpenOptions::new().create(true).append(true).open(&csv)?;
    if new {
        writeln!(f, "mode,metric,value,n_generated,n_real,extractor,seed")?;
    }
    for r in &report.reports {
        writeln!(f, "{:?},{},{:?},{},{},\"{}\",{}", mode, r.metric, r.value, r.n_generated, r.n_real, r.extractor, r.seed)?;
    }
    run.record(csv);
    run.finish("evaluate")
}

fn make_dataset(mut run: Run, args: MakeDatasetArgs) -> Result<()> {
    let cam = SceneCamera { radius: run.cfg.camera_radius, fov: run.cfg.fov, ..SceneCamera::default() };
    let prior = run.cfg.pose_prior()?;
    let data = make_synthetic_dataset(args.scenes, args.views, &prior, cam, args.resolution, run.cfg.seed)?;
    save_dataset(&data, &run.common.out)?;
    for v in &data.truth.views {
        run.record(run.out(&v.file));
    }
    run.record(run.out(pix2nerf::data::GROUND_TRUTH_FILE));
    run.finish("make-dataset")
}

fn dispatch(cli: Cli) -> Result<()> {
    let run = Run::new(cli.common)?;
    match cli.command {
        Command::Train(a) => train(run, a),
        Command::Render(a) => render(run, a),
        Command::Sample(a) => sample(run, a),
        Command::Interpolate(a) => interp(run, a),
        Command::Refine(a) => refine(run, a),
        Command::Evaluate(a) => evaluate_cmd(run, a),
        Command::MakeDataset(a) => make_dataset(run, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.common.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
