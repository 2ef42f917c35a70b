//! The optimization loop: objective routing, warm-up, the progressive stage
//! schedule and per-objective Adam updates.
//!
//! Every iteration updates the discriminator and runs the inversion
//! objective on the same generated batch. Even iterations add the
//! generator's adversarial objective; odd iterations add the joint
//! conditional-adversarial and reconstruction objective, which reaches the
//! encoder only once warm-up has ended. Modules outside an objective's
//! update set enter its graph as constants, so they cannot change.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::Write;

use autograd::{Graph, Real, Tensor, Var};

use crate::config::{warmup_active, AblationFlags, Stage, TrainingConfig};
use crate::data::{sample_latent, Dataset};
use crate::error::{Error, Result};
use crate::features::ConvFeatures;
use crate::generator::{init_generator, latent_tensor, pose_tensor, render_batch, Lens};
use crate::geometry::{Pose, PosePrior};
use crate::image_tensor::{to_batch, ImageTensor};
use crate::networks::{discriminator_forward, encoder_forward, init_discriminator, init_encoder};
use crate::objectives::{
    conditional_loss, discriminator_loss, generator_loss, inversion_loss, pose_distance, reconstruction_terms,
};
use crate::optim::OptimizerState;
use crate::params::{Bound, Group, ParameterStore};
use crate::render::RenderConfig;
use crate::rng::RngStream;

/// Stream identifiers derived from the run seed.
const INIT_STREAM: u64 = 1;
const TRAIN_STREAM: u64 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Objective {
    Discriminator,
    Inversion,
    Generator,
    /// Conditional adversarial plus weighted reconstruction.
    Odd,
}

impl Objective {
    pub fn name(self) -> &'static str {
        match self {
            Objective::Discriminator => "discriminator",
            Objective::Inversion => "inversion",
            Objective::Generator => "generator",
            Objective::Odd => "odd",
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Objectives scheduled for one iteration and the groups each may update.
#[derive(Clone, Debug, PartialEq)]
pub struct Routing {
    pub warmup: bool,
    pub steps: Vec<(Objective, Vec<Group>)>,
}

impl Routing {
    /// Union of all groups that may change this iteration.
    pub fn updated_groups(&self) -> Vec<Group> {
        let mut groups: Vec<Group> = self.steps.iter().flat_map(|(_, g)| g.iter().copied()).collect();
        groups.sort();
        groups.dedup();
        groups
    }
}

/// Pure schedule lookup from (iteration, total, flags).
pub fn routing(iteration: usize, total: usize, flags: &AblationFlags) -> Routing {
    let warmup = warmup_active(iteration, total, flags);
    let even = iteration % 2 == 0;
    let mut steps = Vec::new();
    if !flags.freeze_generator {
        steps.push((Objective::Discriminator, vec![Group::Discriminator]));
    }
    if !flags.no_inversion && !flags.drop_latent_gan {
        steps.push((Objective::Inversion, vec![Group::Encoder]));
    }
    if even {
        if !flags.freeze_generator && !flags.drop_latent_gan {
            steps.push((Objective::Generator, vec![Group::Generator]));
        }
    } else {
        let mut groups = Vec::new();
        if !flags.freeze_generator {
            groups.push(Group::Generator);
        }
        if !warmup {
            groups.push(Group::Encoder);
        }
        if !groups.is_empty() {
            steps.push((Objective::Odd, groups));
        }
    }
    Routing { warmup, steps }
}

/// Parameters, optimizer moments, iteration counter and random stream.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState<R: Real> {
    pub iteration: usize,
    pub params: ParameterStore<R>,
    pub optim: OptimizerState<R>,
    pub rng: RngStream,
}

/// Fresh parameters for all three networks.
pub fn init_parameters<R: Real>(cfg: &TrainingConfig, seed: u64) -> ParameterStore<R> {
    let mut store = ParameterStore::new();
    let mut rng = RngStream::derived(seed, INIT_STREAM);
    let base = cfg.base_resolution();
    init_generator(&mut store, &cfg.arch, &mut rng);
    init_discriminator(&mut store, &cfg.arch, base, &mut rng);
    init_encoder(&mut store, &cfg.arch, base, &mut rng);
    store
}

impl<R: Real> TrainState<R> {
    pub fn initialize(cfg: &TrainingConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(TrainState {
            iteration: 0,
            params: init_parameters(cfg, cfg.seed),
            optim: OptimizerState::new(),
            rng: RngStream::derived(cfg.seed, TRAIN_STREAM),
        })
    }

    /// Fresh state whose generator and discriminator come from a
    /// pretrained store.
    pub fn from_pretrained(cfg: &TrainingConfig, pretrained: &ParameterStore<R>) -> Result<Self> {
        let mut state = Self::initialize(cfg)?;
        for group in [Group::Generator, Group::Discriminator] {
            for (name, tensor) in pretrained.group(group) {
                let slot = state
                    .params
                    .get_mut(name)
                    .ok_or_else(|| Error::config("init_checkpoint", format!("unexpected tensor `{name}`")))?;
                if slot.shape() != tensor.shape() {
                    return Err(Error::config(
                        "init_checkpoint",
                        format!("`{name}` has shape {:?}, expected {:?}", tensor.shape(), slot.shape()),
                    ));
                }
                *slot = tensor.clone();
            }
        }
        Ok(state)
    }
}

/// One CSV row of the training log.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossReport {
    pub iteration: usize,
    pub warmup: bool,
    pub discriminator: Option<f64>,
    pub inversion: Option<f64>,
    pub generator: Option<f64>,
    pub odd: Option<f64>,
    pub recon: Option<f64>,
    pub cond: Option<f64>,
    /// Discriminator pose error on conditional renders; logged only.
    pub cond_pose_mse: Option<f64>,
}

impl LossReport {
    pub const HEADER: &'static str =
        "iteration,parity,warmup,loss_d,loss_inv,loss_g,loss_odd,loss_recon,loss_cond,cond_pose_mse";

    pub fn csv_row(&self) -> String {
        let f = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:?}"));
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.iteration,
            if self.iteration % 2 == 0 { "even" } else { "odd" },
            self.warmup as u8,
            f(self.discriminator),
            f(self.inversion),
            f(self.generator),
            f(self.odd),
            f(self.recon),
            f(self.cond),
            f(self.cond_pose_mse),
        )
    }

    fn merge(&mut self, other: LossReport) {
        self.discriminator = self.discriminator.or(other.discriminator);
        self.inversion = self.inversion.or(other.inversion);
        self.generator = self.generator.or(other.generator);
        self.odd = self.odd.or(other.odd);
        self.recon = self.recon.or(other.recon);
        self.cond = self.cond.or(other.cond);
        self.cond_pose_mse = self.cond_pose_mse.or(other.cond_pose_mse);
    }
}

/// Generated batch shared by the discriminator and inversion objectives.
#[derive(Clone, Debug)]
pub struct FakeBatch<R: Real> {
    pub z: Tensor<R>,
    pub d: Tensor<R>,
    pub images: Tensor<R>,
}

/// Reconstruction path `E(I) → (z, d̂) → G(z, d̂)`, shared by training and
/// inference so both produce identical reconstructions.
pub struct Reconstruction<'g, R: Real> {
    pub z: Var<'g, R>,
    pub d: Var<'g, R>,
    pub image: Var<'g, R>,
}

/// Frozen pieces the objectives need besides parameters.
pub struct Model<'a> {
    pub cfg: &'a TrainingConfig,
    pub prior: PosePrior,
    pub lens: Lens,
    pub perceptual: ConvFeatures,
}

impl<'a> Model<'a> {
    pub fn new(cfg: &'a TrainingConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Model {
            cfg,
            prior: cfg.pose_prior()?,
            lens: Lens { radius: cfg.camera_radius, fov: cfg.fov },
            perceptual: ConvFeatures::perceptual(cfg.perceptual.seed, &cfg.perceptual.widths),
        })
    }

    pub fn base_resolution(&self) -> usize {
        self.cfg.base_resolution()
    }

    pub fn encode<'g, R: Real>(&self, bound: &Bound<'g, R>, images: Var<'g, R>) -> Result<(Var<'g, R>, Var<'g, R>)> {
        encoder_forward(bound, &self.cfg.arch, &self.prior, images, self.base_resolution())
    }

    pub fn discriminate<'g, R: Real>(
        &self,
        bound: &Bound<'g, R>,
        images: Var<'g, R>,
    ) -> Result<(Var<'g, R>, Var<'g, R>)> {
        discriminator_forward(bound, &self.cfg.arch, &self.prior, images, self.base_resolution())
    }

    pub fn render<'g, R: Real>(
        &self,
        bound: &Bound<'g, R>,
        z: Var<'g, R>,
        d: Var<'g, R>,
        render_cfg: &RenderConfig,
        rng: &mut RngStream,
    ) -> Result<Var<'g, R>> {
        render_batch(bound, &self.cfg.arch, z, d, self.lens, render_cfg, rng)
    }

    pub fn reconstruct<'g, R: Real>(
        &self,
        bound: &Bound<'g, R>,
        images: Var<'g, R>,
        render_cfg: &RenderConfig,
        rng: &mut RngStream,
    ) -> Result<Reconstruction<'g, R>> {
        let (z, d) = self.encode(bound, images)?;
        let image = self.render(bound, z, d, render_cfg, rng)?;
        Ok(Reconstruction { z, d, image })
    }
}

/// Drives training steps over an image-only dataset.
pub struct Trainer<'a> {
    pub model: Model<'a>,
    data: &'a Dataset,
    resized: HashMap<usize, Vec<ImageTensor>>,
}

fn collect_grads<R: Real>(
    graph: &Graph<R>,
    bound: &Bound<'_, R>,
    loss: Var<'_, R>,
    objective: Objective,
) -> Result<BTreeMap<Group, BTreeMap<String, Tensor<R>>>> {
    let value = loss.item();
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("{objective} objective (loss = {value})")));
    }
    let mut grads = graph.backward(loss);
    let mut out: BTreeMap<Group, BTreeMap<String, Tensor<R>>> = BTreeMap::new();
    for (name, var) in bound.trainable() {
        if let Some(g) = grads.take(*var) {
            let group = Group::of(name).expect("bound names carry a group prefix");
            out.entry(group).or_default().insert(name.clone(), g);
        }
    }
    Ok(out)
}

fn scalar<R: Real>(v: Var<'_, R>) -> f64 {
    v.item().to_f64().unwrap_or(f64::NAN)
}

fn lr_for(stage: &Stage, group: Group) -> f64 {
    match group {
        Group::Generator => stage.lr_generator,
        Group::Discriminator => stage.lr_discriminator,
        Group::Encoder => stage.lr_encoder,
    }
}

impl<'a> Trainer<'a> {
    pub fn new(cfg: &'a TrainingConfig, data: &'a Dataset) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::Dataset("training needs at least one image".into()));
        }
        let mut resized = HashMap::new();
        for stage in &cfg.stages {
            resized
                .entry(stage.resolution)
                .or_insert_with(|| data.images().iter().map(|im| im.resize(stage.resolution, stage.resolution)).collect());
        }
        Ok(Trainer { model: Model::new(cfg)?, data, resized })
    }

    pub fn cfg(&self) -> &TrainingConfig {
        self.model.cfg
    }

    pub fn dataset(&self) -> &Dataset {
        self.data
    }

    fn real_batch<R: Real>(&self, rng: &mut RngStream, resolution: usize) -> Result<Tensor<R>> {
        let pool = &self.resized[&resolution];
        let picks: Vec<&ImageTensor> = (0..self.cfg().batch_size).map(|_| &pool[rng.index(pool.len())]).collect();
        to_batch(&picks)
    }

    fn poses(&self, rng: &mut RngStream) -> Vec<Pose> {
        (0..self.cfg().batch_size).map(|_| self.model.prior.sample(rng)).collect()
    }

    fn latents(&self, rng: &mut RngStream) -> Vec<Vec<f64>> {
        (0..self.cfg().batch_size).map(|_| sample_latent(rng, self.cfg().arch.z_dim)).collect()
    }

    /// Renders the frozen-generator batch used by the discriminator and
    /// inversion objectives. Without the latent GAN, codes come from the
    /// frozen encoder applied to real images.
    pub fn draw_fakes<R: Real>(&self, state: &mut TrainState<R>) -> Result<FakeBatch<R>> {
        let stage = self.cfg().stage_config(state.iteration);
        let render_cfg = self.cfg().render_config(&stage);
        let graph = Graph::new();
        let bound = Bound::new(&graph, &state.params, &[Group::Generator, Group::Encoder], &[]);
        let rng = &mut state.rng;
        let z = if self.cfg().flags.drop_latent_gan {
            let real = graph.constant(self.real_batch(rng, stage.resolution)?);
            self.model.encode(&bound, real)?.0
        } else {
            graph.constant(latent_tensor(&self.latents(rng)))
        };
        let d = graph.constant(pose_tensor(&self.poses(rng)));
        let images = self.model.render(&bound, z, d, &render_cfg, rng)?;
        Ok(FakeBatch { z: (*z.value()).clone(), d: (*d.value()).clone(), images: (*images.value()).clone() })
    }

    /// Parameter groups each objective reads.
    pub fn groups_read(objective: Objective) -> &'static [Group] {
        match objective {
            Objective::Discriminator => &[Group::Discriminator],
            Objective::Inversion => &[Group::Encoder],
            Objective::Generator => &[Group::Generator, Group::Discriminator],
            Objective::Odd => &Group::ALL,
        }
    }

    /// Builds the scalar loss of one objective on `graph`, drawing batches
    /// and poses from `rng`.
    pub fn objective_loss<'g, R: Real>(
        &self,
        graph: &'g Graph<R>,
        bound: &Bound<'g, R>,
        objective: Objective,
        iteration: usize,
        rng: &mut RngStream,
        fakes: Option<&FakeBatch<R>>,
    ) -> Result<(Var<'g, R>, LossReport)> {
        let cfg = self.cfg();
        let stage = cfg.stage_config(iteration);
        let render_cfg = cfg.render_config(&stage);
        let wrap = cfg.pose_wraparound;
        let lambda_pos = cfg.weights.pos;
        let mut report = LossReport::default();
        let fakes_required = || {
            fakes.ok_or_else(|| Error::Shape(format!("{objective} objective needs a generated batch")))
        };
        let loss = match objective {
            Objective::Discriminator => {
                let fakes = fakes_required()?;
                let real = graph.constant(self.real_batch(rng, stage.resolution)?);
                let (l_real, _) = self.model.discriminate(bound, real)?;
                let (l_gen, d_gen) = self.model.discriminate(bound, graph.constant(fakes.images.clone()))?;
                let d_rand = graph.constant(fakes.d.clone());
                let loss = discriminator_loss(l_real, l_gen, d_gen, d_rand, lambda_pos, wrap);
                report.discriminator = Some(scalar(loss));
                loss
            }
            Objective::Inversion => {
                let fakes = fakes_required()?;
                let (z_pred, d_pred) = self.model.encode(bound, graph.constant(fakes.images.clone()))?;
                let loss =
                    inversion_loss(z_pred, graph.constant(fakes.z.clone()), d_pred, graph.constant(fakes.d.clone()), wrap);
                report.inversion = Some(scalar(loss));
                loss
            }
            Objective::Generator => {
                let z = graph.constant(latent_tensor(&self.latents(rng)));
                let d_rand = graph.constant(pose_tensor(&self.poses(rng)));
                let images = self.model.render(bound, z, d_rand, &render_cfg, rng)?;
                let (l_gen, d_gen) = self.model.discriminate(bound, images)?;
                let loss = generator_loss(l_gen, d_gen, d_rand, lambda_pos, wrap);
                report.generator = Some(scalar(loss));
                loss
            }
            Objective::Odd => {
                let real = graph.constant(self.real_batch(rng, stage.resolution)?);
                let d_rand = graph.constant(pose_tensor(&self.poses(rng)));
                let recon = self.model.reconstruct(bound, real, &render_cfg, rng)?;
                let terms = reconstruction_terms(recon.image, real, &cfg.weights, &self.model.perceptual);
                let mut loss = terms.total.scale(autograd::lit(cfg.weights.recon));
                report.recon = Some(scalar(terms.total));
                if !cfg.flags.no_cond_adversarial {
                    let cond_images = self.model.render(bound, recon.z, d_rand, &render_cfg, rng)?;
                    let (l_cond, d_cond) = self.model.discriminate(bound, cond_images)?;
                    let cond = conditional_loss(l_cond);
                    report.cond = Some(scalar(cond));
                    report.cond_pose_mse = Some(scalar(pose_distance(d_cond, d_rand, wrap)));
                    loss = cond + loss;
                }
                report.odd = Some(scalar(loss));
                loss
            }
        };
        Ok((loss, report))
    }

    /// Runs one objective, updating exactly the groups in `update`.
    pub fn apply_objective<R: Real>(
        &self,
        state: &mut TrainState<R>,
        objective: Objective,
        update: &[Group],
        fakes: Option<&FakeBatch<R>>,
    ) -> Result<LossReport> {
        let cfg = self.cfg();
        let stage = cfg.stage_config(state.iteration);
        let graph = Graph::new();
        let bound = Bound::new(&graph, &state.params, Self::groups_read(objective), update);
        let (loss, report) = self.objective_loss(&graph, &bound, objective, state.iteration, &mut state.rng, fakes)?;
        let grads = collect_grads(&graph, &bound, loss, objective)?;
        for group in update {
            if let Some(g) = grads.get(group) {
                state.optim.step(objective.name(), *group, &mut state.params, g, lr_for(&stage, *group), &cfg.adam)?;
            }
        }
        Ok(report)
    }

    /// One full iteration following [`routing`].
    pub fn training_step<R: Real>(&self, state: &mut TrainState<R>) -> Result<LossReport> {
        let cfg = self.cfg();
        let route = routing(state.iteration, cfg.total_iterations, &cfg.flags);
        let needs_fakes =
            route.steps.iter().any(|(o, _)| matches!(o, Objective::Discriminator | Objective::Inversion));
        let fakes = if needs_fakes { Some(self.draw_fakes(state)?) } else { None };
        let mut report = LossReport { iteration: state.iteration, warmup: route.warmup, ..LossReport::default() };
        for (objective, groups) in &route.steps {
            let r = self.apply_objective(state, *objective, groups, fakes.as_ref())?;
            report.merge(r);
        }
        state.iteration += 1;
        Ok(report)
    }

    /// Runs `steps` iterations, writing one CSV row per step to `log` (the
    /// header is written when the log is empty at iteration 0).
    pub fn run<R: Real>(
        &self,
        state: &mut TrainState<R>,
        steps: usize,
        mut log: Option<&mut dyn Write>,
        mut on_step: impl FnMut(&TrainState<R>, &LossReport) -> Result<()>,
    ) -> Result<Vec<LossReport>> {
        let mut reports = Vec::with_capacity(steps);
        for _ in 0..steps {
            let report = self.training_step(state)?;
            if let Some(w) = log.as_deref_mut() {
                writeln!(w, "{}", report.csv_row())?;
            }
            on_step(state, &report)?;
            reports.push(report);
        }
        Ok(reports)
    }
}
