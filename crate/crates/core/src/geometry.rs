//! Poses on a viewing sphere, pose priors, look-at cameras and pixel rays.
//!
//! Axis convention: world-up is +z and pitch is the polar angle measured from
//! +z, so `pitch = π/2, yaw = 0` places the camera on the +x axis. Camera
//! space is (right, up, forward) and every camera looks at the origin.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Margin keeping clamped pitches strictly inside `(0, π)`.
const POLE_MARGIN: f64 = 1e-6;

/// Camera direction on the viewing sphere, in radians.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub pitch: f64,
    pub yaw: f64,
}

impl Pose {
    pub fn new(pitch: f64, yaw: f64) -> Self {
        Pose { pitch, yaw }
    }

    pub fn is_valid(&self) -> bool {
        self.pitch > 0.0 && self.pitch < PI && (0.0..TAU).contains(&self.yaw)
    }

    pub fn as_array(&self) -> [f64; 2] {
        [self.pitch, self.yaw]
    }

    /// Componentwise linear interpolation.
    pub fn lerp(&self, other: &Pose, t: f64) -> Pose {
        Pose {
            pitch: (1.0 - t) * self.pitch + t * other.pitch,
            yaw: (1.0 - t) * self.yaw + t * other.yaw,
        }
    }
}

/// Prior over camera poses.
#[derive(Clone, Debug, PartialEq)]
pub enum PosePrior {
    /// Independent normals on pitch and yaw, clamped into the valid ranges.
    Gaussian { mean: Pose, stddev: (f64, f64) },
    /// Area-uniform on the upper hemisphere.
    UniformHemisphere,
}

impl PosePrior {
    pub fn validate(&self) -> Result<()> {
        match self {
            PosePrior::Gaussian { mean, stddev } => {
                if !mean.is_valid() {
                    return Err(Error::config(
                        "pose_mean",
                        format!("mean pose ({}, {}) outside pitch (0, π) × yaw [0, 2π)", mean.pitch, mean.yaw),
                    ));
                }
                let (sp, sy) = *stddev;
                if !(sp >= 0.0 && sy >= 0.0 && sp.is_finite() && sy.is_finite()) {
                    return Err(Error::config("pose_std", format!("stddev ({sp}, {sy}) must be finite and ≥ 0")));
                }
                Ok(())
            }
            PosePrior::UniformHemisphere => Ok(()),
        }
    }

    /// Draws one pose.
    pub fn sample(&self, rng: &mut RngStream) -> Pose {
        match self {
            PosePrior::Gaussian { mean, stddev } => {
                let pitch = mean.pitch + stddev.0 * rng.normal();
                let yaw = mean.yaw + stddev.1 * rng.normal();
                clamp_pose(pitch, yaw)
            }
            PosePrior::UniformHemisphere => {
                // cos(pitch) uniform on [0, 1) gives equal area; u < 1 keeps
                // the pole out of the support.
                let pitch = rng.uniform().acos();
                let yaw = TAU * rng.uniform();
                Pose { pitch, yaw }
            }
        }
    }

    /// Central pose: the Gaussian mean, or (mean pitch, π) for the hemisphere.
    pub fn center(&self) -> Pose {
        match self {
            PosePrior::Gaussian { mean, .. } => *mean,
            // E[acos(u)] for u ~ U[0, 1] is exactly 1 radian.
            PosePrior::UniformHemisphere => Pose { pitch: 1.0, yaw: PI },
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            PosePrior::Gaussian { .. } => "gaussian",
            PosePrior::UniformHemisphere => "uniform-hemisphere",
        }
    }
}

/// Validating wrapper around [`PosePrior::sample`].
pub fn sample_pose(prior: &PosePrior, rng: &mut RngStream) -> Result<Pose> {
    prior.validate()?;
    Ok(prior.sample(rng))
}

fn clamp_pose(pitch: f64, yaw: f64) -> Pose {
    let max_yaw = TAU * (1.0 - f64::EPSILON);
    Pose {
        pitch: pitch.clamp(POLE_MARGIN, PI - POLE_MARGIN),
        yaw: yaw.clamp(0.0, max_yaw),
    }
}

/// Fixed sphere radius and vertical field of view shared by all views.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraSpec {
    pub radius: f64,
    pub fov: f64,
}

/// Pinhole camera on the viewing sphere looking at the origin.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Camera {
    pub position: [f64; 3],
    /// Columns are the world-space right, up and forward axes.
    pub rotation: [[f64; 3]; 3],
    pub fov: f64,
    pub radius: f64,
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn normalize(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

pub fn pose_to_camera(pose: Pose, radius: f64, fov: f64) -> Result<Camera> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::config("camera_radius", format!("radius {radius} must be positive")));
    }
    if !(fov > 0.0 && fov < PI) {
        return Err(Error::config("fov", format!("fov {fov} must lie in (0, π)")));
    }
    if !(pose.pitch > 0.0 && pose.pitch < PI) || !pose.yaw.is_finite() {
        return Err(Error::Pose(format!(
            "pitch {} must lie strictly between the poles (up vector undefined)",
            pose.pitch
        )));
    }
    let (st, ct) = pose.pitch.sin_cos();
    let (sy, cy) = pose.yaw.sin_cos();
    let position = [radius * st * cy, radius * st * sy, radius * ct];
    let forward = normalize([-position[0], -position[1], -position[2]]);
    let right = normalize(cross(forward, [0.0, 0.0, 1.0]));
    let up = cross(right, forward);
    let rotation = [
        [right[0], up[0], forward[0]],
        [right[1], up[1], forward[1]],
        [right[2], up[2], forward[2]],
    ];
    Ok(Camera { position, rotation, fov, radius })
}

impl Camera {
    pub fn to_world(&self, local: [f64; 3]) -> [f64; 3] {
        let r = &self.rotation;
        [
            r[0][0] * local[0] + r[0][1] * local[1] + r[0][2] * local[2],
            r[1][0] * local[0] + r[1][1] * local[1] + r[1][2] * local[2],
            r[2][0] * local[0] + r[2][1] * local[1] + r[2][2] * local[2],
        ]
    }
}

/// Unit camera-space direction through image position `(row, col)`, where
/// integer coordinates are pixel corners and `+0.5` is a pixel center.
pub fn camera_direction(row: f64, col: f64, height: usize, width: usize, fov: f64) -> [f64; 3] {
    let half = (0.5 * fov).tan();
    let aspect = width as f64 / height as f64;
    let x = (2.0 * col / width as f64 - 1.0) * half * aspect;
    let y = (1.0 - 2.0 * row / height as f64) * half;
    normalize([x, y, 1.0])
}

/// Camera-space directions through every pixel center, row-major.
pub fn pixel_directions(height: usize, width: usize, fov: f64) -> Vec<[f64; 3]> {
    let mut dirs = Vec::with_capacity(height * width);
    for row in 0..height {
        for col in 0..width {
            dirs.push(camera_direction(row as f64 + 0.5, col as f64 + 0.5, height, width, fov));
        }
    }
    dirs
}

/// One ray per pixel of a full frame.
#[derive(Clone, Debug, PartialEq)]
pub struct RayBundle {
    pub origins: Vec<[f64; 3]>,
    pub directions: Vec<[f64; 3]>,
    pub pixel_index: Vec<usize>,
}

impl RayBundle {
    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }
}

pub fn generate_rays(camera: &Camera, resolution: (usize, usize)) -> Result<RayBundle> {
    let (h, w) = resolution;
    if h == 0 || w == 0 {
        return Err(Error::config("resolution", format!("{h}x{w} must be at least 1x1")));
    }
    let directions: Vec<[f64; 3]> =
        pixel_directions(h, w, camera.fov).into_iter().map(|d| normalize(camera.to_world(d))).collect();
    Ok(RayBundle {
        origins: vec![camera.position; h * w],
        directions,
        pixel_index: (0..h * w).collect(),
    })
}

/// Upper-hemisphere pitch bound.
pub const HEMISPHERE_MAX_PITCH: f64 = FRAC_PI_2;

#[cfg(test)]
mod tests {
    use super::*;

    fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
        a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
    }

    #[test]
    fn degenerate_gaussian_returns_the_mean() {
        let mean = Pose::new(1.2, 3.0);
        let prior = PosePrior::Gaussian { mean, stddev: (0.0, 0.0) };
        let mut rng = RngStream::seeded(5);
        for _ in 0..10 {
            assert_eq!(sample_pose(&prior, &mut rng).unwrap(), mean);
        }
    }

    #[test]
    fn invalid_priors_are_rejected() {
        let bad_std = PosePrior::Gaussian { mean: Pose::new(1.0, 1.0), stddev: (-0.1, 0.1) };
        assert!(matches!(bad_std.validate(), Err(Error::Config { .. })));
        let bad_mean = PosePrior::Gaussian { mean: Pose::new(4.0, 1.0), stddev: (0.1, 0.1) };
        assert!(matches!(bad_mean.validate(), Err(Error::Config { .. })));
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let prior = PosePrior::UniformHemisphere;
        let a = sample_pose(&prior, &mut RngStream::seeded(42)).unwrap();
        let b = sample_pose(&prior, &mut RngStream::seeded(42)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gaussian_samples_are_clamped_into_range() {
        let prior = PosePrior::Gaussian { mean: Pose::new(0.1, 0.1), stddev: (2.0, 2.0) };
        let mut rng = RngStream::seeded(3);
        for _ in 0..2000 {
            let p = prior.sample(&mut rng);
            assert!(p.is_valid(), "{p:?}");
        }
    }

    #[test]
    fn hemisphere_yaw_mean_matches_uniform_moments() {
        let mut rng = RngStream::seeded(11);
        let n = 100_000;
        let yaws: Vec<f64> = (0..n).map(|_| PosePrior::UniformHemisphere.sample(&mut rng).yaw).collect();
        let mean = yaws.iter().sum::<f64>() / n as f64;
        // Uniform on [0, 2π): variance (2π)²/12.
        let stderr = (TAU * TAU / 12.0 / n as f64).sqrt();
        assert!((mean - PI).abs() < 3.0 * stderr, "mean {mean}, stderr {stderr}");
    }

    #[test]
    fn hemisphere_cos_pitch_is_uniform() {
        let mut rng = RngStream::seeded(12);
        let n = 100_000;
        let mut c: Vec<f64> = (0..n)
            .map(|_| {
                let p = PosePrior::UniformHemisphere.sample(&mut rng);
                assert!(p.pitch > 0.0 && p.pitch <= HEMISPHERE_MAX_PITCH);
                p.pitch.cos()
            })
            .collect();
        c.sort_by(f64::total_cmp);
        let ks = c
            .iter()
            .enumerate()
            .map(|(i, &x)| ((i + 1) as f64 / n as f64 - x).abs().max((x - i as f64 / n as f64).abs()))
            .fold(0.0, f64::max);
        assert!(ks < 0.01, "KS statistic {ks}");
    }

    #[test]
    fn equator_yaw_zero_sits_on_positive_x() {
        let cam = pose_to_camera(Pose::new(FRAC_PI_2, 0.0), 1.0, 0.8).unwrap();
        assert!((cam.position[0] - 1.0).abs() < 1e-12);
        assert!(cam.position[1].abs() < 1e-12 && cam.position[2].abs() < 1e-12);
        let forward = [cam.rotation[0][2], cam.rotation[1][2], cam.rotation[2][2]];
        assert!((forward[0] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn poles_are_rejected() {
        assert!(pose_to_camera(Pose::new(0.0, 1.0), 1.0, 0.8).is_err());
        assert!(pose_to_camera(Pose::new(PI, 1.0), 1.0, 0.8).is_err());
        assert!(pose_to_camera(Pose::new(1.0, 1.0), -1.0, 0.8).is_err());
        assert!(pose_to_camera(Pose::new(1.0, 1.0), 1.0, PI).is_err());
    }

    #[test]
    fn rotations_are_orthonormal_and_positions_on_sphere() {
        let mut rng = RngStream::seeded(1);
        for _ in 0..100 {
            let pose = Pose::new(rng.uniform_in(0.05, PI - 0.05), rng.uniform_in(0.0, TAU));
            let radius = rng.uniform_in(0.5, 4.0);
            let cam = pose_to_camera(pose, radius, 0.7).unwrap();
            let norm = dot(cam.position, cam.position).sqrt();
            assert!((norm - radius).abs() < 1e-6);
            let col = |j: usize| [cam.rotation[0][j], cam.rotation[1][j], cam.rotation[2][j]];
            for i in 0..3 {
                for j in 0..3 {
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert!((dot(col(i), col(j)) - expect).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn odd_frame_center_ray_hits_origin() {
        let cam = pose_to_camera(Pose::new(1.1, 2.3), 2.5, 0.8).unwrap();
        let rays = generate_rays(&cam, (7, 9)).unwrap();
        assert_eq!(rays.len(), 63);
        let center = 3 * 9 + 4;
        let (o, d) = (rays.origins[center], rays.directions[center]);
        // Distance from the origin to the ray line.
        let t = -dot(o, d);
        let closest = [o[0] + t * d[0], o[1] + t * d[1], o[2] + t * d[2]];
        assert!(dot(closest, closest).sqrt() < 1e-5);
        for d in &rays.directions {
            assert!((dot(*d, *d).sqrt() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn narrower_fov_shrinks_corner_angle() {
        let angle = |fov: f64| {
            let cam = pose_to_camera(Pose::new(1.0, 0.5), 2.0, fov).unwrap();
            let rays = generate_rays(&cam, (8, 8)).unwrap();
            let (a, b) = (rays.directions[0], rays.directions[63]);
            dot(a, b).clamp(-1.0, 1.0).acos()
        };
        assert!(angle(0.4) < angle(0.8));
    }

    #[test]
    fn rays_are_bit_deterministic() {
        let cam = pose_to_camera(Pose::new(0.9, 4.0), 2.0, 0.6).unwrap();
        assert_eq!(generate_rays(&cam, (5, 6)).unwrap(), generate_rays(&cam, (5, 6)).unwrap());
    }
}
