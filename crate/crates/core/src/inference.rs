//! Inference with a trained model: novel views from one image,
//! unconditional samples, latent interpolation and latent refinement.

use std::path::Path;

use autograd::{Graph, Real, Tensor};

use crate::checkpoint::load_checkpoint;
use crate::config::TrainingConfig;
use crate::data::sample_latent;
use crate::error::{Error, Result};
use crate::generator::{generate_images, latent_tensor, pose_tensor, Lens};
use crate::geometry::{Pose, PosePrior};
use crate::image_tensor::{from_batch, to_batch, ImageTensor};
use crate::networks::{encode, EncoderOutput};
use crate::objectives::reconstruction_terms;
use crate::optim::OptimizerState;
use crate::params::{Bound, Group, ParameterStore};
use crate::render::RenderConfig;
use crate::rng::RngStream;
use crate::training::Model;

/// Trained parameters with the configuration that shaped them.
#[derive(Clone, Debug)]
pub struct InferenceModel<R: Real> {
    pub cfg: TrainingConfig,
    pub params: ParameterStore<R>,
}

impl<R: Real> InferenceModel<R> {
    pub fn new(cfg: TrainingConfig, params: ParameterStore<R>) -> Result<Self> {
        cfg.validate()?;
        Ok(InferenceModel { cfg, params })
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let ckpt = load_checkpoint::<R>(dir)?;
        Ok(InferenceModel { cfg: ckpt.cfg, params: ckpt.state.params })
    }

    /// Final-stage render settings with deterministic sample placement.
    pub fn render_config(&self) -> RenderConfig {
        let stage = self.cfg.stage_config(self.cfg.total_iterations.saturating_sub(1));
        RenderConfig { stratified: false, ..self.cfg.render_config(&stage) }
    }

    pub fn resolution(&self) -> usize {
        self.render_config().resolution.0
    }

    pub fn prior(&self) -> Result<PosePrior> {
        self.cfg.pose_prior()
    }

    pub fn lens(&self) -> Lens {
        Lens { radius: self.cfg.camera_radius, fov: self.cfg.fov }
    }

    fn prepare(&self, image: &ImageTensor) -> ImageTensor {
        let res = self.resolution();
        if image.resolution() == (res, res) {
            image.clone()
        } else {
            image.resize(res, res)
        }
    }

    /// `E(I)` for each image.
    pub fn encode(&self, images: &[&ImageTensor]) -> Result<Vec<EncoderOutput>> {
        let prepared: Vec<ImageTensor> = images.iter().map(|im| self.prepare(im)).collect();
        let refs: Vec<&ImageTensor> = prepared.iter().collect();
        encode(&self.params, &self.cfg.arch, &self.prior()?, &refs, self.cfg.base_resolution())
    }

    /// `G(z, d)` for one code and pose.
    pub fn render(&self, z: &[f64], pose: Pose) -> Result<ImageTensor> {
        let mut rng = RngStream::seeded(0);
        generate_images(&self.params, &self.cfg.arch, &[z.to_vec()], &[pose], self.lens(), &self.render_config(), &mut rng)
            .map(|mut v| v.remove(0))
    }

    /// `E(I)` followed by `G(E(I).z, E(I).d)` through the same graph code
    /// that training differentiates.
    pub fn reconstruct(&self, image: &ImageTensor) -> Result<(EncoderOutput, ImageTensor)> {
        let model = Model::new(&self.cfg)?;
        let graph = Graph::new();
        let bound = Bound::new(&graph, &self.params, &[Group::Generator, Group::Encoder], &[]);
        let input = graph.constant(to_batch(&[&self.prepare(image)])?);
        let mut rng = RngStream::seeded(0);
        let recon = model.reconstruct(&bound, input, &self.render_config(), &mut rng)?;
        let (z, d) = (recon.z.value().to_f64_vec(), recon.d.value().to_f64_vec());
        let out = EncoderOutput { z_pred: z, d_pred: Pose::new(d[0], d[1]) };
        Ok((out, from_batch(&recon.image.value()).remove(0)))
    }
}

/// Renders the encoded content of `image` at each requested pose.
pub fn novel_views<R: Real>(model: &InferenceModel<R>, image: &ImageTensor, poses: &[Pose]) -> Result<Vec<ImageTensor>> {
    if poses.is_empty() {
        return Err(Error::Pose("no poses requested".into()));
    }
    let enc = model.encode(&[image])?.remove(0);
    poses.iter().map(|&p| model.render(&enc.z_pred, p)).collect()
}

/// `n` images from `G(z_rand, d_rand)`.
pub fn sample_unconditional<R: Real>(model: &InferenceModel<R>, n: usize, seed: u64) -> Result<Vec<ImageTensor>> {
    if n == 0 {
        return Err(Error::config("n", "must be at least 1"));
    }
    let prior = model.prior()?;
    let mut rng = RngStream::derived(seed, 0x5A3);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let z = sample_latent(&mut rng, model.cfg.arch.z_dim);
        let pose = prior.sample(&mut rng);
        out.push(model.render(&z, pose)?);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoseMode {
    /// Interpolate pose alongside content.
    Interpolate,
    /// Hold the first image's pose.
    Fixed,
}

impl std::str::FromStr for PoseMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "interpolate" => Ok(PoseMode::Interpolate),
            "fixed" => Ok(PoseMode::Fixed),
            other => Err(Error::config("pose_mode", format!("`{other}` is not interpolate or fixed"))),
        }
    }
}

/// Codes and poses along the segment between two encodings.
pub fn interpolation_path(a: &EncoderOutput, b: &EncoderOutput, steps: usize, mode: PoseMode) -> Result<Vec<(Vec<f64>, Pose)>> {
    if steps < 2 {
        return Err(Error::config("steps", "must be at least 2"));
    }
    Ok((0..steps)
        .map(|i| {
            let t = i as f64 / (steps - 1) as f64;
            let z = a.z_pred.iter().zip(&b.z_pred).map(|(x, y)| (1.0 - t) * x + t * y).collect();
            let pose = match mode {
                PoseMode::Interpolate => a.d_pred.lerp(&b.d_pred, t),
                PoseMode::Fixed => a.d_pred,
            };
            (z, pose)
        })
        .collect())
}

pub fn interpolate<R: Real>(
    model: &InferenceModel<R>,
    a: &ImageTensor,
    b: &ImageTensor,
    steps: usize,
    mode: PoseMode,
) -> Result<Vec<ImageTensor>> {
    let (ea, eb) = (model.encode(&[a])?.remove(0), model.encode(&[b])?.remove(0));
    interpolation_path(&ea, &eb, steps, mode)?.iter().map(|(z, p)| model.render(z, *p)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RefineInit {
    Encoder,
    /// Uniform latent and prior-center pose.
    Random(u64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RefineOptions {
    pub init: RefineInit,
    pub iterations: usize,
    pub step_size: f64,
    /// Optimize the latent only, holding the pose.
    pub z_only: bool,
}

impl Default for RefineOptions {
    fn default() -> Self {
        RefineOptions { init: RefineInit::Encoder, iterations: 200, step_size: 5e-3, z_only: false }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RefineResult {
    pub z: Vec<f64>,
    pub pose: Pose,
    pub image: ImageTensor,
    pub initial_loss: f64,
    pub loss: f64,
    /// Loss at every visited iterate, starting with the initialization.
    pub trace: Vec<f64>,
}

/// Gradient descent on the reconstruction objective over `(z, d)` with the
/// generator frozen, returning the lowest-loss iterate.
pub fn refine_latent<R: Real>(model: &InferenceModel<R>, image: &ImageTensor, opts: &RefineOptions) -> Result<RefineResult> {
    if !(opts.step_size > 0.0) {
        return Err(Error::config("step_size", "must be positive"));
    }
    let cfg = &model.cfg;
    let target = model.prepare(image);
    let (mut z, mut pose) = match opts.init {
        RefineInit::Encoder => {
            let enc = model.encode(&[&target])?.remove(0);
            (enc.z_pred, enc.d_pred)
        }
        RefineInit::Random(seed) => {
            let mut rng = RngStream::derived(seed, 0x4EF);
            (sample_latent(&mut rng, cfg.arch.z_dim), model.prior()?.center())
        }
    };
    let objective = Model::new(cfg)?;
    let render_cfg = model.render_config();
    let target_batch: Tensor<R> = to_batch(&[&target])?;
    // Latent and pose live in an encoder-group store so the shared Adam
    // code can update them.
    let mut vars: ParameterStore<R> = ParameterStore::new();
    vars.insert("encoder.refine.z", latent_tensor(&[z.clone()]));
    vars.insert("encoder.refine.d", pose_tensor(&[pose]));
    let mut optim = OptimizerState::new();
    let mut trace = Vec::with_capacity(opts.iterations + 1);
    let mut best: Option<(f64, Vec<f64>, Pose, ImageTensor)> = None;
    for it in 0..=opts.iterations {
        let graph = Graph::new();
        let frozen = Bound::new(&graph, &model.params, &[Group::Generator], &[]);
        let zv = graph.param(vars.require("encoder.refine.z")?.clone());
        let dv = if opts.z_only {
            graph.constant(vars.require("encoder.refine.d")?.clone())
        } else {
            graph.param(vars.require("encoder.refine.d")?.clone())
        };
        let mut rng = RngStream::seeded(0);
        let recon = objective.render(&frozen, zv, dv, &render_cfg, &mut rng)?;
        let loss = reconstruction_terms(recon, graph.constant(target_batch.clone()), &cfg.weights, &objective.perceptual).total;
        let value = loss.item().to_f64().unwrap_or(f64::NAN);
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("refinement loss at iteration {it}")));
        }
        trace.push(value);
        if best.as_ref().is_none_or(|b| value < b.0) {
            best = Some((value, z.clone(), pose, from_batch(&recon.value()).remove(0)));
        }
        if it == opts.iterations {
            break;
        }
        let mut grads = graph.backward(loss);
        let mut step = std::collections::BTreeMap::new();
        if let Some(g) = grads.take(zv) {
            step.insert("encoder.refine.z".to_string(), g);
        }
        if !opts.z_only {
            if let Some(g) = grads.take(dv) {
                step.insert("encoder.refine.d".to_string(), g);
            }
        }
        optim.step("refine", Group::Encoder, &mut vars, &step, opts.step_size, &cfg.adam)?;
        let zt = vars.get_mut("encoder.refine.z").expect("inserted above");
        for v in zt.data_mut() {
            *v = v.max(-R::one()).min(R::one());
        }
        z = zt.to_f64_vec();
        let d = vars.require("encoder.refine.d")?.to_f64_vec();
        pose = Pose::new(d[0], d[1]);
    }
    let (loss, z, pose, image) = best.expect("at least one iterate");
    Ok(RefineResult { z, pose, image, initial_loss: trace[0], loss, trace })
}

/// `k` equally spaced yaws at the prior's central pitch.
pub fn turntable(prior: &PosePrior, k: usize) -> Result<Vec<Pose>> {
    if k == 0 {
        return Err(Error::Pose("turntable needs at least one view".into()));
    }
    let pitch = prior.center().pitch;
    Ok((0..k).map(|i| Pose::new(pitch, std::f64::consts::TAU * i as f64 / k as f64)).collect())
}

/// Parses `"p,y;p,y"` pose lists or `"turntable:k"`.
pub fn parse_poses(text: &str, prior: &PosePrior) -> Result<Vec<Pose>> {
    let text = text.trim();
    if let Some(k) = text.strip_prefix("turntable:") {
        let k = k.trim().parse().map_err(|_| Error::Pose(format!("bad turntable count `{k}`")))?;
        return turntable(prior, k);
    }
    let poses = text
        .split(';')
        .filter(|s| !s.trim().is_empty())
        .map(|pair| {
            let nums: Vec<f64> = pair
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::Pose(format!("bad pose `{pair}`")))?;
            match nums.as_slice() {
                [p, y] => Ok(Pose::new(*p, *y)),
                _ => Err(Error::Pose(format!("pose `{pair}` needs pitch,yaw"))),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    if poses.is_empty() {
        return Err(Error::Pose("empty pose list".into()));
    }
    Ok(poses)
}
