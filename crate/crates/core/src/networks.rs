//! Convolutional encoder and discriminator sharing one backbone design:
//! stride-2 3×3 blocks with leaky ReLU, then linear heads.

use std::f64::consts::{FRAC_PI_2, TAU};

use autograd::{lit, Graph, Real, Tensor, Var};

use crate::config::Architecture;
use crate::error::{Error, Result};
use crate::geometry::{Pose, PosePrior};
use crate::image_tensor::{to_batch, ImageTensor};
use crate::params::{default_init, Bound, Group, ParameterStore};
use crate::rng::RngStream;

const SLOPE: f64 = 0.2;

/// Input geometry shared by both networks.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvInput {
    /// Images larger than this are average-pooled down to it.
    pub base_resolution: usize,
}

fn flat_len(widths: &[usize], base: usize) -> usize {
    let side = base >> widths.len();
    widths.last().copied().unwrap_or(3) * side * side
}

fn init_backbone<R: Real>(store: &mut ParameterStore<R>, prefix: &str, widths: &[usize], rng: &mut RngStream) {
    let mut channels = 3;
    for (i, &w) in widths.iter().enumerate() {
        let fan_in = channels * 9;
        store.insert(format!("{prefix}.conv.{i}.weight"), default_init::<R>(&[w, channels, 3, 3], fan_in, rng));
        store.insert(format!("{prefix}.conv.{i}.bias"), default_init::<R>(&[w], fan_in, rng));
        channels = w;
    }
}

fn init_head<R: Real>(store: &mut ParameterStore<R>, name: &str, fan_in: usize, fan_out: usize, rng: &mut RngStream) {
    store.insert(format!("{name}.weight"), default_init::<R>(&[fan_in, fan_out], fan_in, rng));
    store.insert(format!("{name}.bias"), Tensor::zeros(&[fan_out]));
}

pub fn init_discriminator<R: Real>(
    store: &mut ParameterStore<R>,
    arch: &Architecture,
    base: usize,
    rng: &mut RngStream,
) {
    init_backbone(store, "discriminator", &arch.disc_widths, rng);
    let flat = flat_len(&arch.disc_widths, base);
    init_head(store, "discriminator.logit", flat, 1, rng);
    init_head(store, "discriminator.pose", flat, 2, rng);
}

pub fn init_encoder<R: Real>(store: &mut ParameterStore<R>, arch: &Architecture, base: usize, rng: &mut RngStream) {
    init_backbone(store, "encoder", &arch.enc_widths, rng);
    let flat = flat_len(&arch.enc_widths, base);
    init_head(store, "encoder.latent", flat, arch.z_dim, rng);
    init_head(store, "encoder.pose", flat, 2, rng);
}

/// Conv stack on `[B, 3, H, W]`, returning flattened features.
fn backbone<'g, R: Real>(
    bound: &Bound<'g, R>,
    prefix: &str,
    widths: &[usize],
    images: Var<'g, R>,
    base: usize,
) -> Result<Var<'g, R>> {
    let s = images.shape();
    if s.len() != 4 || s[1] != 3 {
        return Err(Error::Shape(format!("{prefix} expects [B, 3, H, W], got {s:?}")));
    }
    let (h, w) = (s[2], s[3]);
    if h != w || h < base || h % base != 0 {
        return Err(Error::config(
            "resolution",
            format!("{prefix} accepts square multiples of {base}, got {h}x{w}"),
        ));
    }
    let mut x = images.avg_pool(h / base);
    for i in 0..widths.len() {
        let wv = bound.var(&format!("{prefix}.conv.{i}.weight"));
        let bv = bound.var(&format!("{prefix}.conv.{i}.bias"));
        x = x.conv2d(wv, Some(bv), 2, 1).leaky_relu(SLOPE);
    }
    Ok(x.reshape(&[s[0], flat_len(widths, base)]))
}

fn head<'g, R: Real>(bound: &Bound<'g, R>, name: &str, x: Var<'g, R>) -> Var<'g, R> {
    x.linear(bound.var(&format!("{name}.weight")), Some(bound.var(&format!("{name}.bias"))))
}

fn pose_row<'g, R: Real>(graph: &'g Graph<R>, values: [f64; 2]) -> Var<'g, R> {
    graph.constant(Tensor::from_f64(&[2], &values))
}

/// Encoder outputs: `z [B, z_dim]` in `(−1, 1)` and `d [B, 2]`.
pub fn encoder_forward<'g, R: Real>(
    bound: &Bound<'g, R>,
    arch: &Architecture,
    prior: &PosePrior,
    images: Var<'g, R>,
    base: usize,
) -> Result<(Var<'g, R>, Var<'g, R>)> {
    let feats = backbone(bound, "encoder", &arch.enc_widths, images, base)?;
    let z = head(bound, "encoder.latent", feats).tanh();
    let raw = head(bound, "encoder.pose", feats);
    let graph = images.graph();
    let pose = match prior {
        PosePrior::Gaussian { mean, .. } => raw.add_row(pose_row(graph, mean.as_array())),
        PosePrior::UniformHemisphere => raw.sigmoid().mul_row(pose_row(graph, [FRAC_PI_2, TAU])),
    };
    Ok((z, pose))
}

/// Discriminator outputs: logits `[B, 1]` and pose estimates `[B, 2]`.
pub fn discriminator_forward<'g, R: Real>(
    bound: &Bound<'g, R>,
    arch: &Architecture,
    prior: &PosePrior,
    images: Var<'g, R>,
    base: usize,
) -> Result<(Var<'g, R>, Var<'g, R>)> {
    let feats = backbone(bound, "discriminator", &arch.disc_widths, images, base)?;
    let logit = head(bound, "discriminator.logit", feats);
    let pose = head(bound, "discriminator.pose", feats).add_row(pose_row(images.graph(), prior.center().as_array()));
    Ok((logit, pose))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderOutput {
    pub z_pred: Vec<f64>,
    pub d_pred: Pose,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminatorOutput {
    pub logit: f64,
    pub d_hat: [f64; 2],
}

/// Encodes each image without tracking gradients.
pub fn encode<R: Real>(
    store: &ParameterStore<R>,
    arch: &Architecture,
    prior: &PosePrior,
    images: &[&ImageTensor],
    base: usize,
) -> Result<Vec<EncoderOutput>> {
    let graph = Graph::new();
    let bound = Bound::new(&graph, store, &[Group::Encoder], &[]);
    let x = graph.constant(to_batch(images)?);
    let (z, d) = encoder_forward(&bound, arch, prior, x, base)?;
    let (zv, dv) = (z.value().to_f64_vec(), d.value().to_f64_vec());
    Ok((0..images.len())
        .map(|i| EncoderOutput {
            z_pred: zv[i * arch.z_dim..(i + 1) * arch.z_dim].to_vec(),
            d_pred: Pose::new(dv[2 * i], dv[2 * i + 1]),
        })
        .collect())
}

pub fn discriminate<R: Real>(
    store: &ParameterStore<R>,
    arch: &Architecture,
    prior: &PosePrior,
    images: &[&ImageTensor],
    base: usize,
) -> Result<Vec<DiscriminatorOutput>> {
    let graph = Graph::new();
    let bound = Bound::new(&graph, store, &[Group::Discriminator], &[]);
    let x = graph.constant(to_batch(images)?);
    let (l, d) = discriminator_forward(&bound, arch, prior, x, base)?;
    let (lv, dv) = (l.value().to_f64_vec(), d.value().to_f64_vec());
    Ok((0..images.len()).map(|i| DiscriminatorOutput { logit: lv[i], d_hat: [dv[2 * i], dv[2 * i + 1]] }).collect())
}

/// Literal helper for callers assembling pose rows.
pub fn pose_values<R: Real>(pose: Pose) -> [R; 2] {
    [lit(pose.pitch), lit(pose.yaw)]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arch() -> Architecture {
        Architecture { z_dim: 5, disc_widths: vec![4, 6], enc_widths: vec![4, 6], ..Architecture::default() }
    }

    fn store() -> ParameterStore<f64> {
        let mut s = ParameterStore::new();
        let mut rng = RngStream::seeded(4);
        init_discriminator(&mut s, &arch(), 8, &mut rng);
        init_encoder(&mut s, &arch(), 8, &mut rng);
        s
    }

    fn noise(res: usize, seed: u64) -> ImageTensor {
        let mut rng = RngStream::seeded(seed);
        let data = (0..res * res * 3).map(|_| rng.uniform_in(-1.0, 1.0) as f32).collect();
        ImageTensor::new(res, res, data).unwrap()
    }

    #[test]
    fn encoder_latents_stay_inside_the_prior_support() {
        let (s, prior) = (store(), PosePrior::UniformHemisphere);
        let imgs: Vec<_> = (0..6).map(|i| noise(8, i)).collect();
        let refs: Vec<_> = imgs.iter().collect();
        let out = encode(&s, &arch(), &prior, &refs, 8).unwrap();
        for o in &out {
            assert!(o.z_pred.iter().all(|v| v.abs() < 1.0));
            assert!(o.d_pred.pitch > 0.0 && o.d_pred.pitch < FRAC_PI_2);
            assert!((0.0..TAU).contains(&o.d_pred.yaw));
        }
        assert_eq!(out, encode(&s, &arch(), &prior, &refs, 8).unwrap());
    }

    #[test]
    fn both_stage_resolutions_are_accepted() {
        let (s, prior) = (store(), PosePrior::UniformHemisphere);
        let big = noise(16, 1);
        assert!(discriminate(&s, &arch(), &prior, &[&big], 8).is_ok());
        assert!(encode(&s, &arch(), &prior, &[&noise(12, 1)], 8).is_err());
        assert!(encode(&s, &arch(), &prior, &[&noise(4, 1)], 8).is_err());
    }

    #[test]
    fn discriminator_is_deterministic_on_a_zero_image() {
        let s = store();
        let prior = PosePrior::Gaussian { mean: Pose::new(1.0, 3.0), stddev: (0.1, 0.2) };
        let zero = ImageTensor::filled(8, 8, [0.0; 3]);
        let a = discriminate(&s, &arch(), &prior, &[&zero], 8).unwrap();
        assert!(a[0].logit.is_finite());
        assert_eq!(a, discriminate(&s, &arch(), &prior, &[&zero], 8).unwrap());
    }

    #[test]
    fn logit_pixel_gradient_matches_finite_differences() {
        let s = store();
        let prior = PosePrior::UniformHemisphere;
        let img = noise(8, 3);
        let base = to_batch::<f64>(&[&img]).unwrap();
        let eval = |t: Tensor<f64>| {
            let g = Graph::new();
            let b = Bound::new(&g, &s, &[Group::Discriminator], &[]);
            discriminator_forward(&b, &arch(), &prior, g.constant(t), 8).unwrap().0.item()
        };
        let g = Graph::new();
        let b = Bound::new(&g, &s, &[Group::Discriminator], &[]);
        let x = g.param(base.clone());
        let (l, _) = discriminator_forward(&b, &arch(), &prior, x, 8).unwrap();
        let grad = g.backward(l.sum()).take(x).unwrap();
        for idx in [0, 17, 100, 191] {
            let (mut plus, mut minus) = (base.clone(), base.clone());
            plus.data_mut()[idx] += 1e-6;
            minus.data_mut()[idx] -= 1e-6;
            let fd = (eval(plus) - eval(minus)) / 2e-6;
            let an = grad.data()[idx];
            assert!((fd - an).abs() / fd.abs().max(an.abs()).max(1e-8) < 1e-4, "{idx}: {an} vs {fd}");
        }
    }
}
