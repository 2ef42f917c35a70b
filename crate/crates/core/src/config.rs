//! Training configuration: flat `key = value` text with `#` comments.
//!
//! Resolution order is documented defaults, then the file, then command-line
//! overrides. Unknown keys and malformed values are errors naming the key.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::geometry::{Pose, PosePrior};
use crate::render::RenderConfig;

/// Network sizes.
#[derive(Clone, Debug, PartialEq)]
pub struct Architecture {
    pub z_dim: usize,
    pub mapping_width: usize,
    pub mapping_layers: usize,
    pub field_width: usize,
    /// Number of FiLM sine layers before the density head.
    pub field_layers: usize,
    pub omega0: f64,
    /// Feed the ray direction into the color layer.
    pub view_dependent: bool,
    pub disc_widths: Vec<usize>,
    pub enc_widths: Vec<usize>,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            z_dim: 16,
            mapping_width: 256,
            mapping_layers: 3,
            field_width: 64,
            field_layers: 4,
            omega0: 30.0,
            view_dependent: true,
            disc_widths: vec![32, 64, 128, 128],
            enc_widths: vec![32, 64, 128, 128],
        }
    }
}

/// One piece of the progressive schedule, active from `start` onwards.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stage {
    pub start: usize,
    pub resolution: usize,
    pub samples_per_ray: usize,
    pub lr_generator: f64,
    pub lr_discriminator: f64,
    pub lr_encoder: f64,
}

impl Stage {
    fn parse(text: &str) -> Result<Stage> {
        let bad = || Error::config("stages", format!("`{text}` is not start:res:samples:lrG:lrD:lrE"));
        let parts: Vec<&str> = text.trim().split(':').collect();
        if parts.len() != 6 {
            return Err(bad());
        }
        Ok(Stage {
            start: parts[0].parse().map_err(|_| bad())?,
            resolution: parts[1].parse().map_err(|_| bad())?,
            samples_per_ray: parts[2].parse().map_err(|_| bad())?,
            lr_generator: parts[3].parse().map_err(|_| bad())?,
            lr_discriminator: parts[4].parse().map_err(|_| bad())?,
            lr_encoder: parts[5].parse().map_err(|_| bad())?,
        })
    }

    fn format(&self) -> String {
        format!(
            "{}:{}:{}:{:e}:{:e}:{:e}",
            self.start,
            self.resolution,
            self.samples_per_ray,
            self.lr_generator,
            self.lr_discriminator,
            self.lr_encoder
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub pos: f64,
    pub ssim: f64,
    pub vgg: f64,
    pub recon: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { pos: 15.0, ssim: 1.0, vgg: 1.0, recon: 5.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (key, v) in
            [("lambda_pos", self.pos), ("lambda_ssim", self.ssim), ("lambda_vgg", self.vgg), ("lambda_recon", self.recon)]
        {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(key, format!("{v} must be finite and ≥ 0")));
            }
        }
        Ok(())
    }
}

/// Named ablation configurations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AblationTag {
    /// Naive inversion against a frozen pretrained generator.
    A,
    /// Auto-encoder without the latent GAN objectives.
    B,
    /// No inversion objective.
    C,
    /// No conditional adversarial objective.
    D,
    /// No warm-up.
    E,
    /// Warm-up never ends.
    F,
    G,
    H,
    I,
    J,
}

impl AblationTag {
    pub const ALL: [AblationTag; 10] = [
        AblationTag::A,
        AblationTag::B,
        AblationTag::C,
        AblationTag::D,
        AblationTag::E,
        AblationTag::F,
        AblationTag::G,
        AblationTag::H,
        AblationTag::I,
        AblationTag::J,
    ];

    pub fn letter(self) -> char {
        "ABCDEFGHIJ".as_bytes()[self as usize] as char
    }

    /// Reconstruction weight replacing warm-up for tags G–J.
    pub fn recon_override(self) -> Option<f64> {
        match self {
            AblationTag::G => Some(1.0),
            AblationTag::H => Some(0.1),
            AblationTag::I => Some(0.01),
            AblationTag::J => Some(0.001),
            _ => None,
        }
    }
}

impl FromStr for AblationTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_uppercase();
        AblationTag::ALL
            .into_iter()
            .find(|tag| t.len() == 1 && t.starts_with(tag.letter()))
            .ok_or_else(|| Error::config("ablation", format!("unknown tag `{s}` (expected A..J)")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct AblationFlags {
    pub freeze_generator: bool,
    pub drop_latent_gan: bool,
    pub no_inversion: bool,
    pub no_cond_adversarial: bool,
    pub no_warmup: bool,
    pub always_warmup: bool,
}

impl AblationFlags {
    pub fn validate(&self) -> Result<()> {
        if self.no_warmup && self.always_warmup {
            return Err(Error::config("no_warmup/always_warmup", "cannot both be set"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.0, beta2: 0.9, eps: 1e-8 }
    }
}

/// Frozen random convolutional feature stack used by the perceptual loss.
#[derive(Clone, Debug, PartialEq)]
pub struct PerceptualConfig {
    pub seed: u64,
    pub widths: Vec<usize>,
}

impl Default for PerceptualConfig {
    fn default() -> Self {
        PerceptualConfig { seed: 7_000_001, widths: vec![8, 16] }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingConfig {
    pub arch: Architecture,
    pub camera_radius: f64,
    pub fov: f64,
    pub near: Option<f64>,
    pub far: Option<f64>,
    pub pose_prior_kind: String,
    pub pose_pitch_mean: f64,
    pub pose_yaw_mean: f64,
    pub pose_pitch_std: f64,
    pub pose_yaw_std: f64,
    pub total_iterations: usize,
    pub batch_size: usize,
    pub stages: Vec<Stage>,
    pub stratified: bool,
    pub seed: u64,
    pub weights: LossWeights,
    pub adam: AdamConfig,
    pub ablation: Option<AblationTag>,
    pub flags: AblationFlags,
    pub init_checkpoint: Option<PathBuf>,
    pub pose_wraparound: bool,
    pub perceptual: PerceptualConfig,
    pub checkpoint_every: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            arch: Architecture::default(),
            camera_radius: 2.5,
            fov: 0.8,
            near: None,
            far: None,
            pose_prior_kind: "gaussian".into(),
            pose_pitch_mean: 1.17,
            pose_yaw_mean: PI,
            pose_pitch_std: 0.1,
            pose_yaw_std: 0.5,
            total_iterations: 20_000,
            batch_size: 8,
            stages: vec![Stage {
                start: 0,
                resolution: 32,
                samples_per_ray: 24,
                lr_generator: 4e-5,
                lr_discriminator: 4e-4,
                lr_encoder: 4e-4,
            }],
            stratified: true,
            seed: 0,
            weights: LossWeights::default(),
            adam: AdamConfig::default(),
            ablation: None,
            flags: AblationFlags::default(),
            init_checkpoint: None,
            pose_wraparound: false,
            perceptual: PerceptualConfig::default(),
            checkpoint_every: 0,
        }
    }
}

/// Every accepted key, in snapshot order.
pub const KEYS: &[&str] = &[
    "z_dim",
    "mapping_width",
    "mapping_layers",
    "field_width",
    "field_layers",
    "omega0",
    "view_dependent",
    "disc_widths",
    "enc_widths",
    "camera_radius",
    "fov",
    "near",
    "far",
    "pose_prior",
    "pose_pitch_mean",
    "pose_yaw_mean",
    "pose_pitch_std",
    "pose_yaw_std",
    "total_iterations",
    "batch_size",
    "stages",
    "stratified",
    "seed",
    "lambda_pos",
    "lambda_ssim",
    "lambda_vgg",
    "lambda_recon",
    "adam_beta1",
    "adam_beta2",
    "adam_eps",
    "ablation",
    "freeze_generator",
    "drop_latent_gan",
    "no_inversion",
    "no_cond_adversarial",
    "no_warmup",
    "always_warmup",
    "init_checkpoint",
    "pose_wraparound",
    "perceptual_seed",
    "perceptual_widths",
    "checkpoint_every",
];

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| Error::config(key, format!("cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        other => Err(Error::config(key, format!("`{other}` is not a boolean"))),
    }
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value.split(',').filter(|s| !s.trim().is_empty()).map(|s| parse_num(key, s)).collect()
}

fn join(list: &[usize]) -> String {
    list.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

impl TrainingConfig {
    /// Reads a file, applies `key=value` overrides, then validates.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut cfg = TrainingConfig::default();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path)?;
            cfg.apply_text(&text)?;
        }
        for item in overrides {
            cfg.apply_line(item)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = TrainingConfig::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for line in text.lines() {
            let line = line.split('#').next().unwrap_or("").trim();
            if !line.is_empty() {
                self.apply_line(line)?;
            }
        }
        Ok(())
    }

    pub fn apply_line(&mut self, line: &str) -> Result<()> {
        let (key, value) =
            line.split_once('=').ok_or_else(|| Error::config(line.trim(), "expected `key = value`"))?;
        self.set(key.trim(), value.trim())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let opt_path = |v: &str| if v.is_empty() || v == "none" { None } else { Some(PathBuf::from(v)) };
        let opt_num = |v: &str| -> Result<Option<f64>> {
            if v.is_empty() || v == "auto" {
                Ok(None)
            } else {
                parse_num(key, v).map(Some)
            }
        };
        match key {
            "z_dim" => self.arch.z_dim = parse_num(key, value)?,
            "mapping_width" => self.arch.mapping_width = parse_num(key, value)?,
            "mapping_layers" => self.arch.mapping_layers = parse_num(key, value)?,
            "field_width" => self.arch.field_width = parse_num(key, value)?,
            "field_layers" => self.arch.field_layers = parse_num(key, value)?,
            "omega0" => self.arch.omega0 = parse_num(key, value)?,
            "view_dependent" => self.arch.view_dependent = parse_bool(key, value)?,
            "disc_widths" => self.arch.disc_widths = parse_list(key, value)?,
            "enc_widths" => self.arch.enc_widths = parse_list(key, value)?,
            "camera_radius" => self.camera_radius = parse_num(key, value)?,
            "fov" => self.fov = parse_num(key, value)?,
            "near" => self.near = opt_num(value)?,
            "far" => self.far = opt_num(value)?,
            "pose_prior" => self.pose_prior_kind = value.to_string(),
            "pose_pitch_mean" => self.pose_pitch_mean = parse_num(key, value)?,
            "pose_yaw_mean" => self.pose_yaw_mean = parse_num(key, value)?,
            "pose_pitch_std" => self.pose_pitch_std = parse_num(key, value)?,
            "pose_yaw_std" => self.pose_yaw_std = parse_num(key, value)?,
            "total_iterations" => self.total_iterations = parse_num(key, value)?,
            "batch_size" => self.batch_size = parse_num(key, value)?,
            "stages" => self.stages = value.split(',').map(Stage::parse).collect::<Result<_>>()?,
            "stratified" => self.stratified = parse_bool(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "lambda_pos" => self.weights.pos = parse_num(key, value)?,
            "lambda_ssim" => self.weights.ssim = parse_num(key, value)?,
            "lambda_vgg" => self.weights.vgg = parse_num(key, value)?,
            "lambda_recon" => self.weights.recon = parse_num(key, value)?,
            "adam_beta1" => self.adam.beta1 = parse_num(key, value)?,
            "adam_beta2" => self.adam.beta2 = parse_num(key, value)?,
            "adam_eps" => self.adam.eps = parse_num(key, value)?,
            "ablation" => {
                if value.is_empty() || value == "none" {
                    self.ablation = None;
                } else {
                    *self = ablation_config(value.parse()?, self.clone());
                }
            }
            "freeze_generator" => self.flags.freeze_generator = parse_bool(key, value)?,
            "drop_latent_gan" => self.flags.drop_latent_gan = parse_bool(key, value)?,
            "no_inversion" => self.flags.no_inversion = parse_bool(key, value)?,
            "no_cond_adversarial" => self.flags.no_cond_adversarial = parse_bool(key, value)?,
            "no_warmup" => self.flags.no_warmup = parse_bool(key, value)?,
            "always_warmup" => self.flags.always_warmup = parse_bool(key, value)?,
            "init_checkpoint" => self.init_checkpoint = opt_path(value),
            "pose_wraparound" => self.pose_wraparound = parse_bool(key, value)?,
            "perceptual_seed" => self.perceptual.seed = parse_num(key, value)?,
            "perceptual_widths" => self.perceptual.widths = parse_list(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse_num(key, value)?,
            other => return Err(Error::config(other, "unknown key")),
        }
        Ok(())
    }

    /// Canonical text form; parsing it reproduces this config.
    pub fn to_text(&self) -> String {
        let a = &self.arch;
        let opt = |v: Option<f64>| v.map_or("auto".to_string(), |x| format!("{x:?}"));
        let pairs: Vec<(&str, String)> = vec![
            ("z_dim", a.z_dim.to_string()),
            ("mapping_width", a.mapping_width.to_string()),
            ("mapping_layers", a.mapping_layers.to_string()),
            ("field_width", a.field_width.to_string()),
            ("field_layers", a.field_layers.to_string()),
            ("omega0", format!("{:?}", a.omega0)),
            ("view_dependent", a.view_dependent.to_string()),
            ("disc_widths", join(&a.disc_widths)),
            ("enc_widths", join(&a.enc_widths)),
            ("camera_radius", format!("{:?}", self.camera_radius)),
            ("fov", format!("{:?}", self.fov)),
            ("near", opt(self.near)),
            ("far", opt(self.far)),
            ("pose_prior", self.pose_prior_kind.clone()),
            ("pose_pitch_mean", format!("{:?}", self.pose_pitch_mean)),
            ("pose_yaw_mean", format!("{:?}", self.pose_yaw_mean)),
            ("pose_pitch_std", format!("{:?}", self.pose_pitch_std)),
            ("pose_yaw_std", format!("{:?}", self.pose_yaw_std)),
            ("total_iterations", self.total_iterations.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("stages", self.stages.iter().map(Stage::format).collect::<Vec<_>>().join(",")),
            ("stratified", self.stratified.to_string()),
            ("seed", self.seed.to_string()),
            ("lambda_pos", format!("{:?}", self.weights.pos)),
            ("lambda_ssim", format!("{:?}", self.weights.ssim)),
            ("lambda_vgg", format!("{:?}", self.weights.vgg)),
            ("lambda_recon", format!("{:?}", self.weights.recon)),
            ("adam_beta1", format!("{:?}", self.adam.beta1)),
            ("adam_beta2", format!("{:?}", self.adam.beta2)),
            ("adam_eps", format!("{:?}", self.adam.eps)),
            ("freeze_generator", self.flags.freeze_generator.to_string()),
            ("drop_latent_gan", self.flags.drop_latent_gan.to_string()),
            ("no_inversion", self.flags.no_inversion.to_string()),
            ("no_cond_adversarial", self.flags.no_cond_adversarial.to_string()),
            ("no_warmup", self.flags.no_warmup.to_string()),
            ("always_warmup", self.flags.always_warmup.to_string()),
            (
                "init_checkpoint",
                self.init_checkpoint.as_ref().map_or("none".to_string(), |p| p.display().to_string()),
            ),
            ("pose_wraparound", self.pose_wraparound.to_string()),
            ("perceptual_seed", self.perceptual.seed.to_string()),
            ("perceptual_widths", join(&self.perceptual.widths)),
            ("checkpoint_every", self.checkpoint_every.to_string()),
        ];
        let mut out = String::new();
        if let Some(tag) = self.ablation {
            // Informational only: the resolved flags below are authoritative.
            let _ = writeln!(out, "# ablation {}", tag.letter());
        }
        for (k, v) in pairs {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn near(&self) -> f64 {
        self.near.unwrap_or(self.camera_radius - 1.0)
    }

    pub fn far(&self) -> f64 {
        self.far.unwrap_or(self.camera_radius + 1.0)
    }

    pub fn pose_prior(&self) -> Result<PosePrior> {
        match self.pose_prior_kind.as_str() {
            "gaussian" => Ok(PosePrior::Gaussian {
                mean: Pose::new(self.pose_pitch_mean, self.pose_yaw_mean),
                stddev: (self.pose_pitch_std, self.pose_yaw_std),
            }),
            "uniform-hemisphere" | "hemisphere" => Ok(PosePrior::UniformHemisphere),
            other => Err(Error::config("pose_prior", format!("unknown prior `{other}`"))),
        }
    }

    /// Smallest stage resolution; images above it are pooled down to it
    /// before the convolutional networks.
    pub fn base_resolution(&self) -> usize {
        self.stages.iter().map(|s| s.resolution).min().unwrap_or(32)
    }

    pub fn max_resolution(&self) -> usize {
        self.stages.iter().map(|s| s.resolution).max().unwrap_or(32)
    }

    /// Stage in force at `iteration`.
    pub fn stage_config(&self, iteration: usize) -> Stage {
        *self.stages.iter().rev().find(|s| s.start <= iteration).unwrap_or(&self.stages[0])
    }

    pub fn render_config(&self, stage: &Stage) -> RenderConfig {
        RenderConfig {
            resolution: (stage.resolution, stage.resolution),
            samples_per_ray: stage.samples_per_ray,
            near: self.near(),
            far: self.far(),
            stratified: self.stratified,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let a = &self.arch;
        for (key, v) in [
            ("z_dim", a.z_dim),
            ("mapping_width", a.mapping_width),
            ("mapping_layers", a.mapping_layers),
            ("field_width", a.field_width),
            ("field_layers", a.field_layers),
            ("batch_size", self.batch_size),
            ("total_iterations", self.total_iterations),
        ] {
            if v == 0 {
                return Err(Error::config(key, "must be at least 1"));
            }
        }
        if a.disc_widths.is_empty() || a.disc_widths.contains(&0) {
            return Err(Error::config("disc_widths", "needs at least one positive width"));
        }
        if a.enc_widths.is_empty() || a.enc_widths.contains(&0) {
            return Err(Error::config("enc_widths", "needs at least one positive width"));
        }
        if self.perceptual.widths.is_empty() || self.perceptual.widths.contains(&0) {
            return Err(Error::config("perceptual_widths", "needs at least one positive width"));
        }
        if !(a.omega0 > 0.0) {
            return Err(Error::config("omega0", "must be positive"));
        }
        if !(self.camera_radius > 0.0) {
            return Err(Error::config("camera_radius", "must be positive"));
        }
        if !(self.fov > 0.0 && self.fov < PI) {
            return Err(Error::config("fov", "must lie in (0, π)"));
        }
        if !(self.near() < self.far()) {
            return Err(Error::config("near/far", format!("near {} must be < far {}", self.near(), self.far())));
        }
        if !(self.near() >= 0.0) {
            return Err(Error::config("near", "must be ≥ 0"));
        }
        self.pose_prior()?.validate()?;
        if self.stages.is_empty() || self.stages[0].start != 0 {
            return Err(Error::config("stages", "the first stage must start at iteration 0"));
        }
        let base = self.base_resolution();
        for (i, s) in self.stages.iter().enumerate() {
            if i > 0 && s.start <= self.stages[i - 1].start {
                return Err(Error::config("stages", "stage starts must strictly increase"));
            }
            if i > 0 && s.start >= self.total_iterations {
                return Err(Error::config("stages", format!("switch at {} ≥ total_iterations", s.start)));
            }
            if s.resolution == 0 || s.samples_per_ray == 0 {
                return Err(Error::config("stages", "resolution and samples must be ≥ 1"));
            }
            if s.resolution % base != 0 {
                return Err(Error::config("stages", format!("resolution {} is not a multiple of {base}", s.resolution)));
            }
            for lr in [s.lr_generator, s.lr_discriminator, s.lr_encoder] {
                if !(lr > 0.0 && lr.is_finite()) {
                    return Err(Error::config("stages", format!("learning rate {lr} must be positive")));
                }
            }
        }
        let min_res = 1usize << a.disc_widths.len().max(a.enc_widths.len());
        if base < min_res {
            return Err(Error::config("stages", format!("resolution {base} too small for the conv stack")));
        }
        self.weights.validate()?;
        if !(0.0..1.0).contains(&self.adam.beta1) {
            return Err(Error::config("adam_beta1", "must lie in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.adam.beta2) {
            return Err(Error::config("adam_beta2", "must lie in [0, 1)"));
        }
        if !(self.adam.eps > 0.0) {
            return Err(Error::config("adam_eps", "must be positive"));
        }
        self.flags.validate()
    }

    /// Two-stage schedule and iteration budget of the full-scale recipe.
    pub fn paper_preset() -> Self {
        TrainingConfig {
            total_iterations: 300_000,
            stages: vec![
                Stage {
                    start: 0,
                    resolution: 32,
                    samples_per_ray: 96,
                    lr_generator: 4e-5,
                    lr_discriminator: 4e-4,
                    lr_encoder: 4e-4,
                },
                Stage {
                    start: 50_000,
                    resolution: 64,
                    samples_per_ray: 72,
                    lr_generator: 2e-5,
                    lr_discriminator: 2e-4,
                    lr_encoder: 2e-4,
                },
            ],
            ..TrainingConfig::default()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" | "default" => Ok(TrainingConfig::default()),
            "paper" => Ok(TrainingConfig::paper_preset()),
            other => Err(Error::config("preset", format!("unknown preset `{other}`"))),
        }
    }
}

/// `base` with exactly the flag set of one ablation.
pub fn ablation_config(tag: AblationTag, base: TrainingConfig) -> TrainingConfig {
    let mut cfg = base;
    cfg.ablation = Some(tag);
    cfg.flags = AblationFlags::default();
    match tag {
        AblationTag::A => {
            cfg.flags.freeze_generator = true;
            cfg.flags.no_warmup = true;
        }
        AblationTag::B => cfg.flags.drop_latent_gan = true,
        AblationTag::C => cfg.flags.no_inversion = true,
        AblationTag::D => cfg.flags.no_cond_adversarial = true,
        AblationTag::E => cfg.flags.no_warmup = true,
        AblationTag::F => cfg.flags.always_warmup = true,
        AblationTag::G | AblationTag::H | AblationTag::I | AblationTag::J => {
            cfg.flags.no_warmup = true;
            cfg.weights.recon = tag.recon_override().expect("G..J carry a weight");
        }
    }
    cfg
}

/// Warm-up holds for the first `floor(total / 2)` iterations unless a flag
/// overrides it.
pub fn warmup_active(iteration: usize, total: usize, flags: &AblationFlags) -> bool {
    if flags.no_warmup {
        false
    } else if flags.always_warmup {
        true
    } else {
        iteration < total / 2
    }
}
