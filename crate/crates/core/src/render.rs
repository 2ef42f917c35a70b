//! Depth sampling and transmittance compositing along rays.

use crate::error::{Error, Result};
use crate::geometry::{generate_rays, Camera};
use crate::image_tensor::ImageTensor;
use crate::rng::RngStream;

/// Background color in `[0, 1]` space.
pub const BACKGROUND: [f64; 3] = [0.0, 0.0, 0.0];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderConfig {
    pub resolution: (usize, usize),
    pub samples_per_ray: usize,
    pub near: f64,
    pub far: f64,
    pub stratified: bool,
}

impl RenderConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.near < self.far) {
            return Err(Error::config("near/far", format!("near {} must be < far {}", self.near, self.far)));
        }
        if self.samples_per_ray == 0 {
            return Err(Error::config("samples_per_ray", "must be at least 1"));
        }
        if self.resolution.0 == 0 || self.resolution.1 == 0 {
            return Err(Error::config("resolution", "must be at least 1x1"));
        }
        Ok(())
    }
}

/// Color and density of the field at one point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RadianceSample {
    pub color: [f64; 3],
    pub density: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompositeResult {
    pub pixel_color: [f64; 3],
    pub weights: Vec<f64>,
    pub opacity: f64,
}

/// `n` increasing depths in `[near, far]`: bin midpoints, or one uniform
/// draw per equal-width bin.
pub fn stratified_sample(near: f64, far: f64, n: usize, stratified: bool, rng: &mut RngStream) -> Result<Vec<f64>> {
    if !(near < far) || n == 0 {
        return Err(Error::config("near/far", format!("need near < far and n ≥ 1, got {near}, {far}, {n}")));
    }
    let width = (far - near) / n as f64;
    Ok((0..n)
        .map(|i| {
            let offset = if stratified { rng.uniform() } else { 0.5 };
            near + (i as f64 + offset) * width
        })
        .collect())
}

/// Interval lengths: gaps between depths, then `far − depth_n`.
pub fn deltas(depths: &[f64], far: f64) -> Vec<f64> {
    let n = depths.len();
    (0..n).map(|i| if i + 1 < n { depths[i + 1] - depths[i] } else { far - depths[i] }).collect()
}

/// Alpha compositing of one ray's samples.
pub fn composite(
    colors: &[[f64; 3]],
    densities: &[f64],
    depths: &[f64],
    far: f64,
    background: [f64; 3],
) -> Result<CompositeResult> {
    if colors.len() != densities.len() || depths.len() != densities.len() {
        return Err(Error::Shape(format!(
            "{} colors, {} densities, {} depths",
            colors.len(),
            densities.len(),
            depths.len()
        )));
    }
    if depths.windows(2).any(|w| !(w[1] > w[0])) || depths.last().is_some_and(|&d| d > far) {
        return Err(Error::Shape("depths must be strictly increasing and ≤ far".into()));
    }
    if densities.iter().any(|&s| !(s >= 0.0)) {
        return Err(Error::Shape("densities must be non-negative".into()));
    }
    let mut trans = 1.0;
    let mut pixel = [0.0; 3];
    let mut weights = Vec::with_capacity(depths.len());
    for ((c, &sigma), delta) in colors.iter().zip(densities).zip(deltas(depths, far)) {
        let decay = (-sigma * delta).exp();
        let w = trans * (1.0 - decay);
        for ch in 0..3 {
            pixel[ch] += w * c[ch];
        }
        weights.push(w);
        trans *= decay;
    }
    for ch in 0..3 {
        pixel[ch] += trans * background[ch];
    }
    Ok(CompositeResult { pixel_color: pixel, weights, opacity: 1.0 - trans })
}

/// Renders a full frame by querying `field(point, direction)`, returning an
/// image remapped to `[-1, 1]`.
pub fn render(
    field: impl Fn([f64; 3], [f64; 3]) -> RadianceSample,
    camera: &Camera,
    cfg: &RenderConfig,
    rng: &mut RngStream,
) -> Result<ImageTensor> {
    cfg.validate()?;
    let rays = generate_rays(camera, cfg.resolution)?;
    let (h, w) = cfg.resolution;
    let mut out = ImageTensor::filled(h, w, [0.0; 3]);
    for ((origin, dir), &pix) in rays.origins.iter().zip(&rays.directions).zip(&rays.pixel_index) {
        let depths = stratified_sample(cfg.near, cfg.far, cfg.samples_per_ray, cfg.stratified, rng)?;
        let mut colors = Vec::with_capacity(depths.len());
        let mut densities = Vec::with_capacity(depths.len());
        for &t in &depths {
            let p = [origin[0] + t * dir[0], origin[1] + t * dir[1], origin[2] + t * dir[2]];
            let s = field(p, *dir);
            colors.push(s.color);
            densities.push(s.density);
        }
        let result = composite(&colors, &densities, &depths, cfg.far, BACKGROUND)?;
        let rgb = result.pixel_color.map(|v| (2.0 * v - 1.0) as f32);
        out.set_pixel(pix / w, pix % w, rgb);
    }
    Ok(out)
}
