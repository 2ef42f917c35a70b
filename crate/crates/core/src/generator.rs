//! The radiance generator: a mapping network from latent codes to FiLM
//! parameters, and a FiLM-conditioned sine network evaluated along camera
//! rays and composited into images.

use std::rc::Rc;

use autograd::{lit, Graph, Real, Tensor, Var};

use crate::config::Architecture;
use crate::error::{Error, Result};
use crate::geometry::{pixel_directions, Pose};
use crate::image_tensor::{from_batch, ImageTensor};
use crate::params::{default_init, uniform_tensor, Bound, Group, ParameterStore};
use crate::render::{deltas, stratified_sample, RadianceSample, RenderConfig, BACKGROUND};
use crate::rng::RngStream;

const MAPPING_SLOPE: f64 = 0.2;

/// Number of FiLM-modulated sine layers, including the color layer.
pub fn film_layers(arch: &Architecture) -> usize {
    arch.field_layers + 1
}

fn mapping_name(i: usize, what: &str) -> String {
    format!("generator.mapping.{i}.{what}")
}

fn field_name(i: usize, what: &str) -> String {
    format!("generator.field.{i}.{what}")
}

/// Adds freshly initialized generator tensors to `store`.
pub fn init_generator<R: Real>(store: &mut ParameterStore<R>, arch: &Architecture, rng: &mut RngStream) {
    let film_out = 2 * film_layers(arch) * arch.field_width;
    let mut fan_in = arch.z_dim;
    for i in 0..arch.mapping_layers {
        let last = i + 1 == arch.mapping_layers;
        let fan_out = if last { film_out } else { arch.mapping_width };
        let mut w = default_init::<R>(&[fan_in, fan_out], fan_in, rng);
        if last {
            // Start near γ = ω₀, β = 0.
            w = w.map(|v| v * lit(0.25));
        }
        store.insert(mapping_name(i, "weight"), w);
        store.insert(mapping_name(i, "bias"), Tensor::zeros(&[fan_out]));
        fan_in = fan_out;
    }

    let w = arch.field_width;
    let siren = |fan_in: usize| (6.0 / fan_in as f64).sqrt() / arch.omega0;
    for i in 0..arch.field_layers {
        let (fan_in, bound) = if i == 0 { (3, 1.0 / 3.0) } else { (w, siren(w)) };
        store.insert(field_name(i, "weight"), uniform_tensor::<R>(&[fan_in, w], bound, rng));
        store.insert(field_name(i, "bias"), default_init::<R>(&[w], fan_in, rng));
    }
    store.insert("generator.density.weight", default_init::<R>(&[w, 1], w, rng));
    store.insert("generator.density.bias", Tensor::zeros(&[1]));
    store.insert("generator.color.weight", uniform_tensor::<R>(&[w, w], siren(w), rng));
    if arch.view_dependent {
        store.insert("generator.color.view", uniform_tensor::<R>(&[3, w], siren(3), rng));
    }
    store.insert("generator.color.bias", default_init::<R>(&[w], w + 3, rng));
    store.insert("generator.rgb.weight", default_init::<R>(&[w, 3], w, rng));
    store.insert("generator.rgb.bias", Tensor::zeros(&[3]));
}

/// Per-layer FiLM frequencies and phase shifts, each `[B, width]`.
pub struct Film<'g, R: Real> {
    pub gamma: Vec<Var<'g, R>>,
    pub beta: Vec<Var<'g, R>>,
}

/// Mapping network on `z: [B, z_dim]`. Frequencies are `ω₀ + (ω₀/2)·f` for
/// raw outputs `f`; phases are used as is.
pub fn mapping_network<'g, R: Real>(bound: &Bound<'g, R>, arch: &Architecture, z: Var<'g, R>) -> Film<'g, R> {
    let mut h = z;
    for i in 0..arch.mapping_layers {
        h = h.linear(bound.var(&mapping_name(i, "weight")), Some(bound.var(&mapping_name(i, "bias"))));
        if i + 1 < arch.mapping_layers {
            h = h.leaky_relu(MAPPING_SLOPE);
        }
    }
    let (layers, w) = (film_layers(arch), arch.field_width);
    let omega: R = lit(arch.omega0);
    let half = omega * lit(0.5);
    let gamma = (0..layers).map(|i| h.slice_cols(i * w, (i + 1) * w).scale(half).add_scalar(omega)).collect();
    let beta = (0..layers).map(|i| h.slice_cols((layers + i) * w, (layers + i + 1) * w)).collect();
    Film { gamma, beta }
}

/// Field network on points `[N, 3]` and unit view directions `[N, 3]`,
/// where consecutive row blocks belong to successive FiLM groups. Returns
/// colors `[N, 3]` in `(0, 1)` and densities `[N, 1]` ≥ 0.
pub fn field_network<'g, R: Real>(
    bound: &Bound<'g, R>,
    arch: &Architecture,
    points: Var<'g, R>,
    view_dirs: Var<'g, R>,
    film: &Film<'g, R>,
) -> (Var<'g, R>, Var<'g, R>) {
    let mut h = points;
    for i in 0..arch.field_layers {
        let pre = h.linear(bound.var(&field_name(i, "weight")), Some(bound.var(&field_name(i, "bias"))));
        h = pre.film_sin(film.gamma[i], film.beta[i]);
    }
    let sigma = h
        .linear(bound.var("generator.density.weight"), Some(bound.var("generator.density.bias")))
        .softplus();
    let last = arch.field_layers;
    let mut color_pre = h.linear(bound.var("generator.color.weight"), Some(bound.var("generator.color.bias")));
    if arch.view_dependent {
        color_pre = color_pre + view_dirs.linear(bound.var("generator.color.view"), None);
    }
    let color = color_pre.film_sin(film.gamma[last], film.beta[last]);
    let rgb = color.linear(bound.var("generator.rgb.weight"), Some(bound.var("generator.rgb.bias"))).sigmoid();
    (rgb, sigma)
}

/// Depths and interval lengths for every ray of a batch.
fn ray_depths<R: Real>(rays: usize, cfg: &RenderConfig, rng: &mut RngStream) -> Result<(Vec<R>, Vec<R>)> {
    let n = rays * cfg.samples_per_ray;
    let (mut depths, mut widths) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for _ in 0..rays {
        let d = stratified_sample(cfg.near, cfg.far, cfg.samples_per_ray, cfg.stratified, rng)?;
        widths.extend(deltas(&d, cfg.far).into_iter().map(lit::<R>));
        depths.extend(d.into_iter().map(lit::<R>));
    }
    Ok((depths, widths))
}

/// Camera-space pixel directions with each repeated once per sample.
fn sample_directions<R: Real>(cfg: &RenderConfig, fov: f64) -> Tensor<R> {
    let (h, w) = cfg.resolution;
    let dirs = pixel_directions(h, w, fov);
    let mut data = Vec::with_capacity(dirs.len() * cfg.samples_per_ray * 3);
    for d in &dirs {
        for _ in 0..cfg.samples_per_ray {
            data.extend(d.iter().map(|&v| lit::<R>(v)));
        }
    }
    Tensor::new(&[dirs.len() * cfg.samples_per_ray, 3], data)
}

/// Camera placement shared by every render.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Lens {
    pub radius: f64,
    pub fov: f64,
}

/// Differentiable render of `G(z, d)` for `z: [B, z_dim]` and poses
/// `[B, 2]`, returning `[B, 3, H, W]` in `[-1, 1]`.
pub fn render_batch<'g, R: Real>(
    bound: &Bound<'g, R>,
    arch: &Architecture,
    z: Var<'g, R>,
    poses: Var<'g, R>,
    lens: Lens,
    cfg: &RenderConfig,
    rng: &mut RngStream,
) -> Result<Var<'g, R>> {
    cfg.validate()?;
    let batch = z.shape()[0];
    if z.shape() != [batch, arch.z_dim] {
        return Err(Error::config("z_dim", format!("latent shape {:?}, expected [{batch}, {}]", z.shape(), arch.z_dim)));
    }
    if poses.shape() != [batch, 2] {
        return Err(Error::Shape(format!("poses {:?} for a batch of {batch}", poses.shape())));
    }
    let (h, w) = cfg.resolution;
    let pixels = h * w;
    let film = mapping_network(bound, arch, z);
    let frames = poses.camera_frame(lit(lens.radius));
    let dirs = Rc::new(sample_directions::<R>(cfg, lens.fov));
    let (depths, widths) = ray_depths::<R>(batch * pixels, cfg, rng)?;
    let points = frames.transform_points(dirs.clone(), depths.into());
    let view = frames.rotate_dirs(dirs);
    let (rgb, sigma) = field_network(bound, arch, points, view, &film);
    let background = BACKGROUND.map(lit::<R>);
    let image = rgb
        .composite(sigma, widths.into(), background, cfg.samples_per_ray)
        .reshape(&[batch, pixels, 3])
        .swap_last2()
        .reshape(&[batch, 3, h, w]);
    Ok(image.scale(lit(2.0)).add_scalar(lit(-1.0)))
}

/// Latent matrix `[B, z_dim]` from rows.
pub fn latent_tensor<R: Real>(codes: &[Vec<f64>]) -> Tensor<R> {
    let dim = codes.first().map_or(0, Vec::len);
    let flat: Vec<f64> = codes.iter().flatten().copied().collect();
    Tensor::from_f64(&[codes.len(), dim], &flat)
}

/// Pose matrix `[B, 2]`.
pub fn pose_tensor<R: Real>(poses: &[Pose]) -> Tensor<R> {
    let flat: Vec<f64> = poses.iter().flat_map(|p| [p.pitch, p.yaw]).collect();
    Tensor::from_f64(&[poses.len(), 2], &flat)
}

/// Renders `G(z, d)` without tracking gradients.
pub fn generate_images<R: Real>(
    store: &ParameterStore<R>,
    arch: &Architecture,
    codes: &[Vec<f64>],
    poses: &[Pose],
    lens: Lens,
    cfg: &RenderConfig,
    rng: &mut RngStream,
) -> Result<Vec<ImageTensor>> {
    if codes.len() != poses.len() || codes.is_empty() {
        return Err(Error::Shape(format!("{} codes for {} poses", codes.len(), poses.len())));
    }
    if let Some(c) = codes.iter().find(|c| c.len() != arch.z_dim) {
        return Err(Error::config("z_dim", format!("latent of length {} for z_dim {}", c.len(), arch.z_dim)));
    }
    let graph = Graph::new();
    let bound = Bound::new(&graph, store, &[Group::Generator], &[]);
    let z = graph.constant(latent_tensor(codes));
    let d = graph.constant(pose_tensor(poses));
    let image = render_batch(&bound, arch, z, d, lens, cfg, rng)?;
    Ok(from_batch(&image.value()))
}

/// Single-image convenience over [`generate_images`].
pub fn generate_image<R: Real>(
    store: &ParameterStore<R>,
    arch: &Architecture,
    z: &[f64],
    pose: Pose,
    lens: Lens,
    cfg: &RenderConfig,
    rng: &mut RngStream,
) -> Result<ImageTensor> {
    Ok(generate_images(store, arch, &[z.to_vec()], &[pose], lens, cfg, rng)?.remove(0))
}

/// FiLM parameters for one latent code, as plain vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct FilmParams {
    pub gamma: Vec<Vec<f64>>,
    pub beta: Vec<Vec<f64>>,
}

pub fn film_params(store: &ParameterStore<f64>, arch: &Architecture, z: &[f64]) -> Result<FilmParams> {
    if z.len() != arch.z_dim {
        return Err(Error::config("z_dim", format!("latent of length {} for z_dim {}", z.len(), arch.z_dim)));
    }
    let graph = Graph::new();
    let bound = Bound::new(&graph, store, &[Group::Generator], &[]);
    let film = mapping_network(&bound, arch, graph.constant(Tensor::new(&[1, z.len()], z.to_vec())));
    Ok(FilmParams {
        gamma: film.gamma.iter().map(|v| v.value().data().to_vec()).collect(),
        beta: film.beta.iter().map(|v| v.value().data().to_vec()).collect(),
    })
}

/// Evaluates the field at one point under explicit FiLM parameters.
pub fn field_forward(
    store: &ParameterStore<f64>,
    arch: &Architecture,
    point: [f64; 3],
    direction: [f64; 3],
    film: &FilmParams,
) -> Result<RadianceSample> {
    if point.iter().chain(&direction).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("field query point".into()));
    }
    let layers = film_layers(arch);
    if film.gamma.len() != layers || film.beta.len() != layers {
        return Err(Error::Shape(format!("{} FiLM layers, architecture has {layers}", film.gamma.len())));
    }
    let graph = Graph::new();
    let bound = Bound::new(&graph, store, &[Group::Generator], &[]);
    let row = |v: &Vec<f64>| graph.constant(Tensor::new(&[1, v.len()], v.clone()));
    let f = Film { gamma: film.gamma.iter().map(row).collect(), beta: film.beta.iter().map(row).collect() };
    let p = graph.constant(Tensor::new(&[1, 3], point.to_vec()));
    let d = graph.constant(Tensor::new(&[1, 3], direction.to_vec()));
    let (rgb, sigma) = field_network(&bound, arch, p, d, &f);
    let c = rgb.value();
    Ok(RadianceSample { color: [c.data()[0], c.data()[1], c.data()[2]], density: sigma.item() })
}
