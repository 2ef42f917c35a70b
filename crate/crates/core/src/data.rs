//! Training data: a synthetic toy dataset rendered by an analytic ray
//! tracer, image-folder ingestion, and latent sampling.
//!
//! Training code receives a [`Dataset`], which holds images only. Poses and
//! scene parameters live in [`GroundTruth`], reachable solely through
//! [`SyntheticDataset`] for evaluation.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{generate_rays, pose_to_camera, Pose, PosePrior};
use crate::image_tensor::ImageTensor;
use crate::rng::RngStream;

pub const GROUND_TRUTH_FILE: &str = "ground_truth.json";

const AMBIENT: f64 = 0.3;
const SATURATION: f64 = 0.7;
const VALUE: f64 = 0.9;
/// Off-axis key light, so a view and its yaw-opposite are shaded differently.
pub const DEFAULT_LIGHT: [f64; 3] = [0.4, 0.6, 0.7];
const SUPERSAMPLE: usize = 2;

/// Images only; the interface training code consumes.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    images: Vec<ImageTensor>,
}

impl Dataset {
    pub fn new(images: Vec<ImageTensor>) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::Dataset("no images".into()));
        }
        let res = images[0].resolution();
        if images.iter().any(|im| im.resolution() != res) {
            return Err(Error::Dataset("images differ in resolution".into()));
        }
        Ok(Dataset { images })
    }

    pub fn images(&self) -> &[ImageTensor] {
        &self.images
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn resolution(&self) -> (usize, usize) {
        self.images[0].resolution()
    }

    /// Subset by index, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        Dataset::new(indices.iter().map(|&i| self.images[i].clone()).collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Box,
    Ellipsoid,
    Cylinder,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 3] = [ShapeKind::Box, ShapeKind::Ellipsoid, ShapeKind::Cylinder];

    pub fn label(self) -> usize {
        self as usize
    }
}

/// One solid, axis-aligned primitive centered at the origin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScene {
    pub kind: ShapeKind,
    /// Half extents along x, y, z.
    pub half_extents: [f64; 3],
    /// Base hue in `[0, 1)`.
    pub hue: f64,
}

impl SyntheticScene {
    /// Draws shape kind, size, elongation and hue.
    pub fn sample(rng: &mut RngStream) -> Self {
        let kind = ShapeKind::ALL[rng.index(3)];
        let size = rng.uniform_in(0.35, 0.5);
        let elongation = rng.uniform_in(1.0, 1.5);
        let hue = rng.uniform();
        SyntheticScene { kind, half_extents: [size * elongation, size, size], hue }
    }

    pub fn albedo(&self) -> [f64; 3] {
        hsv_to_rgb(self.hue, SATURATION, VALUE)
    }

    /// Radius of the bounding sphere.
    pub fn bound(&self) -> f64 {
        self.half_extents.iter().map(|e| e * e).sum::<f64>().sqrt()
    }

    /// Nearest hit distance and outward unit normal.
    pub fn intersect(&self, origin: [f64; 3], dir: [f64; 3]) -> Option<(f64, [f64; 3])> {
        let e = self.half_extents;
        match self.kind {
            ShapeKind::Box => intersect_box(origin, dir, e),
            ShapeKind::Ellipsoid => {
                // Unit sphere in coordinates scaled by the half extents.
                let o = [origin[0] / e[0], origin[1] / e[1], origin[2] / e[2]];
                let d = [dir[0] / e[0], dir[1] / e[1], dir[2] / e[2]];
                let t = smallest_root(dot(d, d), 2.0 * dot(o, d), dot(o, o) - 1.0)?;
                let p = add(origin, scale(dir, t));
                Some((t, normalize([p[0] / (e[0] * e[0]), p[1] / (e[1] * e[1]), p[2] / (e[2] * e[2])])))
            }
            ShapeKind::Cylinder => intersect_cylinder(origin, dir, e),
        }
    }
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn add(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn scale(a: [f64; 3], s: f64) -> [f64; 3] {
    [a[0] * s, a[1] * s, a[2] * s]
}

fn normalize(v: [f64; 3]) -> [f64; 3] {
    scale(v, 1.0 / dot(v, v).sqrt())
}

/// Smallest positive root of `a t² + b t + c`.
fn smallest_root(a: f64, b: f64, c: f64) -> Option<f64> {
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return None;
    }
    let s = disc.sqrt();
    [(-b - s) / (2.0 * a), (-b + s) / (2.0 * a)].into_iter().find(|&t| t > 0.0)
}

fn intersect_box(o: [f64; 3], d: [f64; 3], e: [f64; 3]) -> Option<(f64, [f64; 3])> {
    let (mut t_near, mut t_far) = (f64::NEG_INFINITY, f64::INFINITY);
    let mut axis = 0;
    for i in 0..3 {
        if d[i].abs() < 1e-15 {
            if o[i].abs() > e[i] {
                return None;
            }
            continue;
        }
        let (a, b) = ((-e[i] - o[i]) / d[i], (e[i] - o[i]) / d[i]);
        let (lo, hi) = (a.min(b), a.max(b));
        if lo > t_near {
            t_near = lo;
            axis = i;
        }
        t_far = t_far.min(hi);
    }
    if t_near > t_far || t_near <= 0.0 {
        return None;
    }
    let mut n = [0.0; 3];
    n[axis] = -d[axis].signum();
    Some((t_near, n))
}

/// Elliptic cylinder along z, capped at `±e[2]`.
fn intersect_cylinder(o: [f64; 3], d: [f64; 3], e: [f64; 3]) -> Option<(f64, [f64; 3])> {
    let mut best: Option<(f64, [f64; 3])> = None;
    let mut consider = |t: f64, n: [f64; 3]| {
        if t > 0.0 && best.is_none_or(|(bt, _)| t < bt) {
            best = Some((t, n));
        }
    };
    let (ox, oy, dx, dy) = (o[0] / e[0], o[1] / e[1], d[0] / e[0], d[1] / e[1]);
    let a = dx * dx + dy * dy;
    if a > 1e-15 {
        let b = 2.0 * (ox * dx + oy * dy);
        let c = ox * ox + oy * oy - 1.0;
        let disc = b * b - 4.0 * a * c;
        if disc >= 0.0 {
            let s = disc.sqrt();
            for t in [(-b - s) / (2.0 * a), (-b + s) / (2.0 * a)] {
                let z = o[2] + t * d[2];
                if z.abs() <= e[2] {
                    let p = add(o, scale(d, t));
                    consider(t, normalize([p[0] / (e[0] * e[0]), p[1] / (e[1] * e[1]), 0.0]));
                }
            }
        }
    }
    if d[2].abs() > 1e-15 {
        for cap in [-e[2], e[2]] {
            let t = (cap - o[2]) / d[2];
            let (x, y) = ((o[0] + t * d[0]) / e[0], (o[1] + t * d[1]) / e[1]);
            if x * x + y * y <= 1.0 {
                consider(t, [0.0, 0.0, cap.signum()]);
            }
        }
    }
    best
}

pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let sector = h6.floor() as usize % 6;
    let f = h6 - h6.floor();
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match sector {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Camera and light shared by every rendered view.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneCamera {
    pub radius: f64,
    pub fov: f64,
    pub light: [f64; 3],
}

impl Default for SceneCamera {
    fn default() -> Self {
        SceneCamera { radius: 2.5, fov: 0.8, light: DEFAULT_LIGHT }
    }
}

/// Lambertian render on a black background with 2×2 supersampling,
/// quantized to 8 bits so saved and in-memory images agree.
pub fn render_scene(scene: &SyntheticScene, pose: Pose, camera: &SceneCamera, resolution: usize) -> Result<ImageTensor> {
    if resolution == 0 {
        return Err(Error::config("resolution", "must be at least 1"));
    }
    let cam = pose_to_camera(pose, camera.radius, camera.fov)?;
    let fine = resolution * SUPERSAMPLE;
    let rays = generate_rays(&cam, (fine, fine))?;
    let light = normalize(camera.light);
    let albedo = scene.albedo();
    let mut hi = ImageTensor::filled(fine, fine, [-1.0; 3]);
    for (i, (&o, &d)) in rays.origins.iter().zip(&rays.directions).enumerate() {
        if let Some((_, n)) = scene.intersect(o, d) {
            let shade = AMBIENT + (1.0 - AMBIENT) * dot(n, light).max(0.0);
            let rgb = albedo.map(|a| (2.0 * a * shade - 1.0) as f32);
            hi.set_pixel(i / fine, i % fine, rgb);
        }
    }
    Ok(ImageTensor::from_rgb8(&hi.resize(resolution, resolution).to_rgb8()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewRecord {
    pub scene: usize,
    pub pose: Pose,
    pub file: String,
}

/// Hidden scene parameters and poses, for evaluation only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub camera: SceneCamera,
    pub resolution: usize,
    pub seed: u64,
    pub scenes: Vec<SyntheticScene>,
    pub views: Vec<ViewRecord>,
}

impl GroundTruth {
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::write(dir.join(GROUND_TRUTH_FILE), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(dir.join(GROUND_TRUTH_FILE))?)?)
    }

    pub fn poses(&self) -> Vec<Pose> {
        self.views.iter().map(|v| v.pose).collect()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.views.iter().map(|v| self.scenes[v.scene].kind.label()).collect()
    }
}

/// Rendered images together with their ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticDataset {
    pub dataset: Dataset,
    pub truth: GroundTruth,
}

/// Scenes and poses without rendering.
pub fn synthetic_layout(
    n_scenes: usize,
    views_per_scene: usize,
    prior: &PosePrior,
    camera: SceneCamera,
    resolution: usize,
    seed: u64,
) -> Result<GroundTruth> {
    if n_scenes == 0 || views_per_scene == 0 {
        return Err(Error::config("n_scenes", "scene and view counts must be at least 1"));
    }
    prior.validate()?;
    let mut scene_rng = RngStream::derived(seed, 0x5CE);
    let mut pose_rng = RngStream::derived(seed, 0x905E);
    let scenes: Vec<SyntheticScene> = (0..n_scenes).map(|_| SyntheticScene::sample(&mut scene_rng)).collect();
    let mut views = Vec::with_capacity(n_scenes * views_per_scene);
    for scene in 0..n_scenes {
        for _ in 0..views_per_scene {
            let file = format!("view_{:05}.png", views.len());
            views.push(ViewRecord { scene, pose: prior.sample(&mut pose_rng), file });
        }
    }
    Ok(GroundTruth { camera, resolution, seed, scenes, views })
}

pub fn make_synthetic_dataset(
    n_scenes: usize,
    views_per_scene: usize,
    prior: &PosePrior,
    camera: SceneCamera,
    resolution: usize,
    seed: u64,
) -> Result<SyntheticDataset> {
    let truth = synthetic_layout(n_scenes, views_per_scene, prior, camera, resolution, seed)?;
    if truth.scenes.iter().any(|s| s.bound() >= camera.radius) {
        return Err(Error::config("camera_radius", "objects must fit inside the camera sphere"));
    }
    let images = truth
        .views
        .iter()
        .map(|v| render_scene(&truth.scenes[v.scene], v.pose, &camera, resolution))
        .collect::<Result<Vec<_>>>()?;
    Ok(SyntheticDataset { dataset: Dataset::new(images)?, truth })
}

/// Writes one PNG per view plus the ground-truth sidecar.
pub fn save_dataset(data: &SyntheticDataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (img, view) in data.dataset.images().iter().zip(&data.truth.views) {
        img.save_png(&dir.join(&view.file))?;
    }
    data.truth.save(dir)
}

/// Loads every decodable image in `dir` (sorted by name), optionally
/// center-cropped to a square, resized to `resolution`.
pub fn load_image_folder(dir: &Path, center_crop: bool, resolution: usize) -> Result<Dataset> {
    if resolution == 0 {
        return Err(Error::config("resolution", "must be at least 1"));
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.file_name().is_some_and(|n| n != GROUND_TRUTH_FILE))
        .collect();
    paths.sort();
    let mut images = Vec::new();
    for path in &paths {
        match ImageTensor::load_png(path) {
            Ok(img) => {
                let img = if center_crop { img.center_crop() } else { img };
                images.push(img.resize(resolution, resolution));
            }
            Err(e) => log::warn!("skipping {}: {e}", path.display()),
        }
    }
    if images.is_empty() {
        return Err(Error::Dataset(format!("no decodable images in {}", dir.display())));
    }
    Dataset::new(images)
}

/// I.i.d. uniform draws on `[-1, 1]`.
pub fn sample_latent(rng: &mut RngStream, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.uniform_in(-1.0, 1.0)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn fixed_prior(pitch: f64, yaw: f64) -> PosePrior {
        PosePrior::Gaussian { mean: Pose::new(pitch, yaw), stddev: (0.0, 0.0) }
    }

    #[test]
    fn single_deterministic_image() {
        let prior = fixed_prior(1.2, 3.0);
        let a = make_synthetic_dataset(1, 1, &prior, SceneCamera::default(), 16, 5).unwrap();
        let b = make_synthetic_dataset(1, 1, &prior, SceneCamera::default(), 16, 5).unwrap();
        assert_eq!(a.dataset.len(), 1);
        assert_eq!(a, b);
        assert_eq!(a.truth.views[0].pose, Pose::new(1.2, 3.0));
        // The object is visible and the corners are background.
        let img = &a.dataset.images()[0];
        assert_eq!(img.pixel(0, 0), [-1.0; 3]);
        assert!(img.pixel(8, 8).iter().any(|&v| v > -0.5));
    }

    #[test]
    fn yaw_opposite_views_mirror() {
        let camera = SceneCamera { light: [0.0, 0.6, 0.8], ..SceneCamera::default() };
        for kind in ShapeKind::ALL {
            let scene = SyntheticScene { kind, half_extents: [0.6, 0.4, 0.45], hue: 0.3 };
            for pitch in [1.0, 1.3] {
                let a = render_scene(&scene, Pose::new(pitch, 0.0), &camera, 24).unwrap();
                let b = render_scene(&scene, Pose::new(pitch, PI), &camera, 24).unwrap();
                let diff = a.mean_abs_diff(&b.flip_horizontal());
                assert!(diff < 2.0 / 255.0, "{kind:?} pitch {pitch}: {diff}");
            }
        }
    }

    #[test]
    fn box_silhouette_matches_projection() {
        // Looking down +x at a box, the visible face spans ±e_y horizontally.
        let scene = SyntheticScene { kind: ShapeKind::Box, half_extents: [0.3, 0.5, 0.5], hue: 0.0 };
        let camera = SceneCamera::default();
        let img = render_scene(&scene, Pose::new(PI / 2.0, 0.0), &camera, 64).unwrap();
        let row = 32;
        let lit: Vec<usize> = (0..64).filter(|&c| img.pixel(row, c)[0] > -0.9).collect();
        let half = (0.5 * camera.fov).tan();
        // Front face at distance radius − 0.3, edge at 0.5 world units.
        let edge = 0.5 / (camera.radius - 0.3) / half;
        let expected = (edge * 64.0).round() as isize;
        assert!((lit.len() as isize - expected).abs() <= 2, "{} vs {expected}", lit.len());
    }

    #[test]
    fn pose_histogram_matches_prior() {
        let prior = PosePrior::UniformHemisphere;
        let truth = synthetic_layout(10_000, 1, &prior, SceneCamera::default(), 8, 3).unwrap();
        // Equal-probability bins in cos(pitch) and yaw.
        let (nb, n) = (10usize, truth.views.len() as f64);
        let mut bins = vec![0.0; nb * nb];
        for v in &truth.views {
            let a = ((v.pose.pitch.cos() * nb as f64) as usize).min(nb - 1);
            let b = ((v.pose.yaw / (2.0 * PI) * nb as f64) as usize).min(nb - 1);
            bins[a * nb + b] += 1.0;
        }
        let expected = n / (nb * nb) as f64;
        let chi2: f64 = bins.iter().map(|o| (o - expected).powi(2) / expected).sum();
        // 99th percentile of χ² with 99 degrees of freedom.
        assert!(chi2 < 134.6, "χ² = {chi2}");
    }

    #[test]
    fn latent_moments() {
        let mut rng = RngStream::seeded(0);
        let dim = 4;
        let n = 1_000_000 / dim;
        let mut sums = vec![0.0; dim];
        let mut sq = vec![0.0; dim];
        for _ in 0..n {
            let z = sample_latent(&mut rng, dim);
            assert!(z.iter().all(|v| (-1.0..=1.0).contains(v)));
            for i in 0..dim {
                sums[i] += z[i];
                sq[i] += z[i] * z[i];
            }
        }
        let stderr = (1.0 / 3.0 / n as f64).sqrt();
        for i in 0..dim {
            let mean = sums[i] / n as f64;
            assert!(mean.abs() < 3.0 * stderr, "coordinate {i}: mean {mean}, stderr {stderr}");
            assert!((sq[i] / n as f64 - mean * mean - 1.0 / 3.0).abs() < 3e-3);
        }
        assert_eq!(sample_latent(&mut RngStream::seeded(1), 3), sample_latent(&mut RngStream::seeded(1), 3));
    }

    #[test]
    fn folder_round_trip_and_crop() {
        let dir = tempfile::tempdir().unwrap();
        let data = make_synthetic_dataset(2, 1, &fixed_prior(1.1, 3.0), SceneCamera::default(), 16, 1).unwrap();
        save_dataset(&data, dir.path()).unwrap();
        fs::write(dir.path().join("zz_notes.txt"), "not an image").unwrap();
        let loaded = load_image_folder(dir.path(), false, 16).unwrap();
        assert_eq!(loaded, data.dataset);
        assert_eq!(load_image_folder(dir.path(), false, 16).unwrap(), loaded);
        assert_eq!(GroundTruth::load(dir.path()).unwrap(), data.truth);

        let big = ImageTensor::filled(128, 128, [0.2, 0.4, -0.6]);
        let one = tempfile::tempdir().unwrap();
        big.save_png(&one.path().join("a.png")).unwrap();
        let small = load_image_folder(one.path(), true, 64).unwrap();
        assert_eq!(small.resolution(), (64, 64));
        assert!(small.images()[0].data.iter().all(|v| (-1.0..=1.0).contains(v)));

        let empty = tempfile::tempdir().unwrap();
        assert!(load_image_folder(empty.path(), true, 8).is_err());
    }

    #[test]
    fn rectangular_crop_keeps_center() {
        let mut img = ImageTensor::filled(80, 100, [-1.0; 3]);
        for r in 0..80 {
            for c in 10..90 {
                img.set_pixel(r, c, [1.0; 3]);
            }
        }
        let cropped = img.center_crop();
        assert_eq!(cropped.resolution(), (80, 80));
        assert!(cropped.data.iter().all(|&v| v == 1.0));
    }
}
