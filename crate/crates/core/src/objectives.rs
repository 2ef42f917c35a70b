//! The five training objectives and the SSIM and perceptual distances.
//!
//! Graph-level functions operate on batched variables and are what training
//! differentiates; the plain `f64` wrappers evaluate the same graphs for
//! callers holding ordinary values.

use std::f64::consts::TAU;
use std::rc::Rc;

use autograd::{kernels::gaussian_taps, lit, Graph, Real, Tensor, Var};

use crate::config::LossWeights;
use crate::error::{Error, Result};
use crate::features::ConvFeatures;
use crate::geometry::Pose;
use crate::image_tensor::{to_batch, ImageTensor};

/// SSIM stabilizers for a dynamic range of 1.
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
/// Gaussian window: 11 taps, σ = 1.5.
pub const SSIM_RADIUS: usize = 5;
pub const SSIM_SIGMA: f64 = 1.5;

fn batch_of<R: Real>(v: &Var<'_, R>) -> R {
    lit(v.shape()[0] as f64)
}

/// `Σ‖a − b‖² / B` over rows; with `wrap`, yaw differences are taken
/// modulo 2π into `[−π, π]`.
pub fn pose_distance<'g, R: Real>(a: Var<'g, R>, b: Var<'g, R>, wrap: bool) -> Var<'g, R> {
    let mut diff = a - b;
    if wrap {
        let dv = diff.value();
        let shift: Vec<R> = dv
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                if i % 2 == 1 {
                    let turns = (x.to_f64().unwrap_or(0.0) / TAU).round();
                    lit(-turns * TAU)
                } else {
                    R::zero()
                }
            })
            .collect();
        diff = diff + a.graph().constant(Tensor::new(dv.shape(), shift));
    }
    diff.square().sum().scale(R::one() / batch_of(&a))
}

/// `mean softplus(−l_gen) + λ_pos·Σ‖d_rand − d_gen‖²/B`.
pub fn generator_loss<'g, R: Real>(
    l_gen: Var<'g, R>,
    d_gen: Var<'g, R>,
    d_rand: Var<'g, R>,
    lambda_pos: f64,
    wrap: bool,
) -> Var<'g, R> {
    (-l_gen).softplus().mean() + pose_distance(d_rand, d_gen, wrap).scale(lit(lambda_pos))
}

/// `mean softplus(−l_real) + mean softplus(l_gen) + λ_pos·Σ‖d_rand − d_gen‖²/B`.
pub fn discriminator_loss<'g, R: Real>(
    l_real: Var<'g, R>,
    l_gen: Var<'g, R>,
    d_gen: Var<'g, R>,
    d_rand: Var<'g, R>,
    lambda_pos: f64,
    wrap: bool,
) -> Var<'g, R> {
    (-l_real).softplus().mean() + l_gen.softplus().mean() + pose_distance(d_rand, d_gen, wrap).scale(lit(lambda_pos))
}

/// `(Σ‖z_pred − z_rand‖² + Σ‖d_pred − d_rand‖²) / B`.
pub fn inversion_loss<'g, R: Real>(
    z_pred: Var<'g, R>,
    z_rand: Var<'g, R>,
    d_pred: Var<'g, R>,
    d_rand: Var<'g, R>,
    wrap: bool,
) -> Var<'g, R> {
    (z_pred - z_rand).square().sum().scale(R::one() / batch_of(&z_pred)) + pose_distance(d_pred, d_rand, wrap)
}

/// `mean softplus(−l_cond)`.
pub fn conditional_loss<'g, R: Real>(l_cond: Var<'g, R>) -> Var<'g, R> {
    (-l_cond).softplus().mean()
}

fn ssim_taps<R: Real>() -> Rc<[R]> {
    gaussian_taps(SSIM_RADIUS, SSIM_SIGMA).into_iter().map(lit::<R>).collect::<Vec<_>>().into()
}

/// Mean local SSIM of `[B, 3, H, W]` images given in `[-1, 1]`.
pub fn ssim_var<'g, R: Real>(a: Var<'g, R>, b: Var<'g, R>) -> Var<'g, R> {
    let half: R = lit(0.5);
    let (x, y) = (a.scale(half).add_scalar(half), b.scale(half).add_scalar(half));
    let taps = ssim_taps::<R>();
    let blur = |v: Var<'g, R>| v.blur(taps.clone());
    let (mx, my) = (blur(x), blur(y));
    let (mxx, myy, mxy) = (mx.square(), my.square(), mx * my);
    let vx = blur(x.square()) - mxx;
    let vy = blur(y.square()) - myy;
    let cxy = blur(x * y) - mxy;
    let two: R = lit(2.0);
    let num = mxy.scale(two).add_scalar(lit(SSIM_C1)) * cxy.scale(two).add_scalar(lit(SSIM_C2));
    let den = (mxx + myy).add_scalar(lit(SSIM_C1)) * (vx + vy).add_scalar(lit(SSIM_C2));
    num.div(den).mean()
}

/// `Σ_layers mean((φ_l(a) − φ_l(b))²)`.
pub fn perceptual_var<'g, R: Real>(a: Var<'g, R>, b: Var<'g, R>, feat: &ConvFeatures) -> Var<'g, R> {
    let fa = feat.activations(a);
    let fb = feat.activations(b);
    let mut total: Option<Var<'g, R>> = None;
    for (x, y) in fa.into_iter().zip(fb) {
        let term = (x - y).square().mean();
        total = Some(match total {
            Some(t) => t + term,
            None => term,
        });
    }
    total.expect("feature stack has at least one layer")
}

/// Individual terms of the reconstruction objective.
pub struct ReconTerms<'g, R: Real> {
    pub mse: Var<'g, R>,
    /// `1 − SSIM`.
    pub ssim: Var<'g, R>,
    pub perceptual: Var<'g, R>,
    pub total: Var<'g, R>,
}

/// `MSE + λ_ssim·(1 − SSIM) + λ_vgg·perceptual`.
pub fn reconstruction_terms<'g, R: Real>(
    recon: Var<'g, R>,
    real: Var<'g, R>,
    weights: &LossWeights,
    feat: &ConvFeatures,
) -> ReconTerms<'g, R> {
    let mse = (recon - real).square().mean();
    let ssim = -ssim_var(recon, real).add_scalar(-R::one());
    let perceptual = perceptual_var(recon, real, feat);
    let mut total = mse;
    if weights.ssim != 0.0 {
        total = total + ssim.scale(lit(weights.ssim));
    }
    if weights.vgg != 0.0 {
        total = total + perceptual.scale(lit(weights.vgg));
    }
    ReconTerms { mse, ssim, perceptual, total }
}

fn finite(name: &str, values: impl IntoIterator<Item = f64>) -> Result<()> {
    if values.into_iter().all(f64::is_finite) {
        Ok(())
    } else {
        Err(Error::NonFinite(name.to_string()))
    }
}

fn checked(name: &str, value: f64) -> Result<f64> {
    finite(name, [value]).map(|_| value)
}

fn column<'g>(graph: &'g Graph<f64>, values: &[f64]) -> Var<'g, f64> {
    graph.constant(Tensor::new(&[values.len(), 1], values.to_vec()))
}

fn pose_rows<'g>(graph: &'g Graph<f64>, poses: &[[f64; 2]]) -> Var<'g, f64> {
    graph.constant(Tensor::new(&[poses.len(), 2], poses.iter().flatten().copied().collect()))
}

fn check_batch(name: &str, lens: &[usize]) -> Result<()> {
    if lens.is_empty() || lens[0] == 0 || lens.iter().any(|&n| n != lens[0]) {
        return Err(Error::Shape(format!("{name}: inconsistent or empty batch sizes {lens:?}")));
    }
    Ok(())
}

/// Batched generator objective on plain values.
pub fn gan_generator_loss(l_gen: &[f64], d_rand: &[Pose], d_gen: &[[f64; 2]], lambda_pos: f64) -> Result<f64> {
    check_batch("generator loss", &[l_gen.len(), d_rand.len(), d_gen.len()])?;
    finite("generator loss inputs", l_gen.iter().chain(d_gen.iter().flatten()).copied())?;
    let g = Graph::new();
    let rand: Vec<[f64; 2]> = d_rand.iter().map(Pose::as_array).collect();
    let loss = generator_loss(column(&g, l_gen), pose_rows(&g, d_gen), pose_rows(&g, &rand), lambda_pos, false);
    checked("generator loss", loss.item())
}

pub fn gan_discriminator_loss(
    l_real: &[f64],
    l_gen: &[f64],
    d_rand: &[Pose],
    d_gen: &[[f64; 2]],
    lambda_pos: f64,
) -> Result<f64> {
    check_batch("discriminator loss", &[l_gen.len(), d_rand.len(), d_gen.len()])?;
    check_batch("discriminator loss", &[l_real.len()])?;
    finite("discriminator loss inputs", l_real.iter().chain(l_gen).chain(d_gen.iter().flatten()).copied())?;
    let g = Graph::new();
    let rand: Vec<[f64; 2]> = d_rand.iter().map(Pose::as_array).collect();
    let loss = discriminator_loss(
        column(&g, l_real),
        column(&g, l_gen),
        pose_rows(&g, d_gen),
        pose_rows(&g, &rand),
        lambda_pos,
        false,
    );
    checked("discriminator loss", loss.item())
}

pub fn gan_inversion_loss(z_pred: &[Vec<f64>], z_rand: &[Vec<f64>], d_pred: &[Pose], d_rand: &[Pose]) -> Result<f64> {
    check_batch("inversion loss", &[z_pred.len(), z_rand.len(), d_pred.len(), d_rand.len()])?;
    let dim = z_pred[0].len();
    if z_pred.iter().chain(z_rand).any(|z| z.len() != dim) {
        return Err(Error::Shape("inversion loss: latent dimensions differ".into()));
    }
    finite("inversion loss inputs", z_pred.iter().chain(z_rand).flatten().copied())?;
    let g = Graph::new();
    let mat = |rows: &[Vec<f64>]| g.constant(Tensor::new(&[rows.len(), dim], rows.concat()));
    let poses = |p: &[Pose]| pose_rows(&g, &p.iter().map(Pose::as_array).collect::<Vec<_>>());
    let loss = inversion_loss(mat(z_pred), mat(z_rand), poses(d_pred), poses(d_rand), false);
    checked("inversion loss", loss.item())
}

pub fn conditional_adversarial_loss(l_cond: &[f64]) -> Result<f64> {
    check_batch("conditional loss", &[l_cond.len()])?;
    finite("conditional loss inputs", l_cond.iter().copied())?;
    let g = Graph::new();
    checked("conditional loss", conditional_loss(column(&g, l_cond)).item())
}

fn image_pair<'g>(g: &'g Graph<f64>, a: &ImageTensor, b: &ImageTensor) -> Result<(Var<'g, f64>, Var<'g, f64>)> {
    if a.resolution() != b.resolution() {
        return Err(Error::Shape(format!(
            "{}x{} vs {}x{}",
            a.height, a.width, b.height, b.width
        )));
    }
    Ok((g.constant(to_batch(&[a])?), g.constant(to_batch(&[b])?)))
}

/// Mean SSIM with values remapped to `[0, 1]`.
pub fn ssim(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    let g = Graph::new();
    let (x, y) = image_pair(&g, a, b)?;
    checked("ssim", ssim_var(x, y).item())
}

pub fn perceptual_distance(a: &ImageTensor, b: &ImageTensor, feat: &ConvFeatures) -> Result<f64> {
    let g = Graph::new();
    let (x, y) = image_pair(&g, a, b)?;
    checked("perceptual distance", perceptual_var(x, y, feat).item())
}

pub fn reconstruction_loss(
    recon: &ImageTensor,
    real: &ImageTensor,
    weights: &LossWeights,
    feat: &ConvFeatures,
) -> Result<f64> {
    let g = Graph::new();
    let (x, y) = image_pair(&g, recon, real)?;
    checked("reconstruction loss", reconstruction_terms(x, y, weights, feat).total.item())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::LN_2;

    fn feat() -> ConvFeatures {
        ConvFeatures::perceptual(11, &[4, 6])
    }

    fn noise(h: usize, w: usize, seed: u64) -> ImageTensor {
        let mut rng = crate::rng::RngStream::seeded(seed);
        ImageTensor::new(h, w, (0..h * w * 3).map(|_| rng.uniform_in(-1.0, 1.0) as f32).collect()).unwrap()
    }

    #[test]
    fn generator_loss_cases() {
        let d = Pose::new(1.0, 2.0);
        assert!((gan_generator_loss(&[0.0], &[d], &[[1.0, 2.0]], 15.0).unwrap() - LN_2).abs() < 1e-12);
        // ‖Δd‖² = 0.1 from a pitch offset of √0.1.
        let off = [1.0 + 0.1f64.sqrt(), 2.0];
        let v = gan_generator_loss(&[0.0], &[d], &[off], 15.0).unwrap();
        assert!((v - (LN_2 + 1.5)).abs() < 1e-12, "{v}");
        let big = gan_generator_loss(&[800.0], &[d], &[off], 15.0).unwrap();
        assert!((big - 1.5).abs() < 1e-12);
        assert!(gan_generator_loss(&[f64::NAN], &[d], &[[1.0, 2.0]], 1.0).is_err());
    }

    #[test]
    fn discriminator_loss_cases() {
        let d = Pose::new(1.0, 2.0);
        let v = gan_discriminator_loss(&[0.0], &[0.0], &[d], &[[1.0, 2.0]], 15.0).unwrap();
        assert!((v - 2.0 * LN_2).abs() < 1e-12);
        let v = gan_discriminator_loss(&[900.0], &[-900.0], &[d], &[[1.0, 2.0]], 15.0).unwrap();
        assert_eq!(v, 0.0);
        let g = Graph::new();
        let l = g.param(Tensor::new(&[1, 1], vec![0.0]));
        let rows = |v: [f64; 2]| g.constant(Tensor::new(&[1, 2], v.to_vec()));
        let loss = discriminator_loss(column(&g, &[0.0]), l, rows([1.0, 2.0]), rows([1.0, 2.0]), 1.0, false);
        assert!((g.backward(loss).get(l).unwrap().item() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn inversion_loss_cases() {
        let z: Vec<f64> = (0..256).map(|i| (i as f64 / 256.0) - 0.5).collect();
        let mut z2 = z.clone();
        z2[17] += 0.1;
        let d = [Pose::new(1.0, 1.0)];
        assert_eq!(gan_inversion_loss(&[z.clone()], &[z.clone()], &d, &d).unwrap(), 0.0);
        let v = gan_inversion_loss(&[z2.clone()], &[z.clone()], &d, &d).unwrap();
        assert!((v - 0.01).abs() < 1e-12);
        assert_eq!(v, gan_inversion_loss(&[z.clone()], &[z2], &d, &d).unwrap());
        assert!(gan_inversion_loss(&[z.clone()], &[vec![0.0; 3]], &d, &d).is_err());
    }

    #[test]
    fn wraparound_shifts_yaw() {
        let g = Graph::<f64>::new();
        let a = g.constant(Tensor::new(&[1, 2], vec![1.0, 0.1]));
        let b = g.constant(Tensor::new(&[1, 2], vec![1.0, TAU - 0.1]));
        assert!((pose_distance(a, b, true).item() - 0.04).abs() < 1e-12);
        assert!(pose_distance(a, b, false).item() > 30.0);
    }

    #[test]
    fn conditional_loss_shape() {
        assert!((conditional_adversarial_loss(&[0.0]).unwrap() - LN_2).abs() < 1e-15);
        assert!((conditional_adversarial_loss(&[10.0]).unwrap() - 4.5398899e-5).abs() < 1e-11);
        let grid: Vec<f64> = (0..=100).map(|i| -5.0 + i as f64 * 0.1).collect();
        let vals: Vec<f64> = grid.iter().map(|&l| conditional_adversarial_loss(&[l]).unwrap()).collect();
        assert!(vals.windows(2).all(|w| w[1] < w[0]));
        assert!(vals.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn ssim_identity_and_symmetry() {
        for seed in 0..20 {
            let (a, b) = (noise(8, 8, seed), noise(8, 8, seed + 100));
            assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
            let (ab, ba) = (ssim(&a, &b).unwrap(), ssim(&b, &a).unwrap());
            assert!((ab - ba).abs() < 1e-12);
            assert!((-1.0..=1.0).contains(&ab));
        }
        assert!(ssim(&noise(4, 4, 0), &noise(4, 5, 0)).is_err());
    }

    #[test]
    fn perceptual_properties() {
        let f = feat();
        let a = noise(8, 8, 1);
        assert_eq!(perceptual_distance(&a, &a, &f).unwrap(), 0.0);
        let mut last = f64::INFINITY;
        for eps in [0.2, 0.1, 0.05, 0.01, 0.001] {
            let b = ImageTensor { data: a.data.iter().map(|v| v + eps as f32).collect(), ..a.clone() };
            let d = perceptual_distance(&a, &b, &f).unwrap();
            assert!(d >= 0.0 && d < last);
            last = d;
        }
    }

    #[test]
    fn reconstruction_reduces_to_mse() {
        let f = feat();
        let (a, b) = (noise(6, 6, 1), noise(6, 6, 2));
        assert_eq!(reconstruction_loss(&a, &a, &LossWeights::default(), &f).unwrap(), 0.0);
        let w = LossWeights { ssim: 0.0, vgg: 0.0, ..LossWeights::default() };
        let mse = a.data.iter().zip(&b.data).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum::<f64>() / a.data.len() as f64;
        assert!((reconstruction_loss(&a, &b, &w, &f).unwrap() - mse).abs() < 1e-12);
    }
}
