//! Camera placement for visibility extraction.
//!
//! Directions come from a Fibonacci lattice (or a latitude/longitude grid for
//! comparison), distances from a uniform grid between the asset's near and
//! far sampling distances. Each main view looks at a randomly offset target
//! and is accompanied by auxiliary views on a small cone around it.

use std::f64::consts::PI;

use glam::{DVec3, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::asset::Asset;
use crate::camera::{look_rotation, Camera};
use crate::raster::{render, RenderOptions};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    Fibonacci,
    LongLat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    pub n_directions: usize,
    pub n_distances: usize,
    /// Vertical field of view of the (square) training camera, radians.
    pub fov: f32,
    pub image_size: u32,
    pub n_aux_views: usize,
    pub aux_cone_half_angle: f32,
    pub offset_enabled: bool,
    /// Multiplier on the maximum target offset
    /// `bound_radius * min_extent / max_extent`.
    pub offset_scale: f32,
    pub sampler_kind: SamplerKind,
    pub seed: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            n_directions: 256,
            n_distances: 8,
            fov: 60f32.to_radians(),
            image_size: 128,
            n_aux_views: 6,
            aux_cone_half_angle: 3f32.to_radians(),
            offset_enabled: true,
            offset_scale: 1.0,
            sampler_kind: SamplerKind::Fibonacci,
            seed: 0,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_directions == 0 || self.n_distances == 0 {
            return Err(Error::InvalidArgument(
                "need at least one direction and one distance".into(),
            ));
        }
        if !(self.aux_cone_half_angle > 0.0
            && self.aux_cone_half_angle < std::f32::consts::FRAC_PI_4)
        {
            return Err(Error::InvalidArgument(
                "aux cone half-angle must be in (0, pi/4)".into(),
            ));
        }
        if !(self.fov > 0.0 && self.fov < std::f32::consts::PI) || self.image_size == 0 {
            return Err(Error::InvalidArgument("invalid training camera".into()));
        }
        Ok(())
    }

    /// The camera used for training views, positioned by the caller.
    pub fn camera(&self, position: Vec3, target: Vec3) -> Camera {
        Camera::look_at(position, target, self.fov, self.image_size, self.image_size)
    }

    /// Field of view spanned by the training image diagonal; this is the
    /// angle that near/far sampling distances are computed against.
    pub fn diagonal_fov(&self) -> f32 {
        self.camera(Vec3::Z, Vec3::ZERO).diagonal_fov()
    }

    /// Focal length (pixels) of the training camera.
    pub fn focal(&self) -> f32 {
        self.camera(Vec3::Z, Vec3::ZERO).focal()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainView {
    pub camera: Camera,
    /// Unit vector from the asset center to the camera.
    pub direction_unit: Vec3,
    pub distance: f32,
    pub target_offset: Vec3,
    pub aux_cameras: Vec<Camera>,
}

/// Fibonacci lattice: `z_i = 1 - 2(i + 0.5)/n`, azimuth advancing by the
/// golden angle.
pub fn fibonacci_directions(n: usize) -> Vec<Vec3> {
    let golden_angle = PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let rho = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden_angle * i as f64;
            DVec3::new(rho * phi.cos(), rho * phi.sin(), z)
                .normalize()
                .as_vec3()
        })
        .collect()
}

/// Equal-angle latitude/longitude grid with exactly `n` points.
pub fn longlat_directions(n: usize) -> Vec<Vec3> {
    if n == 0 {
        return Vec::new();
    }
    let rows = ((n as f64 / 2.0).sqrt().round() as usize).clamp(1, n);
    let (base, extra) = (n / rows, n % rows);
    let mut out = Vec::with_capacity(n);
    for j in 0..rows {
        let count = base + usize::from(j < extra);
        let theta = PI * (j as f64 + 0.5) / rows as f64;
        for k in 0..count {
            let phi = 2.0 * PI * k as f64 / count as f64;
            out.push(
                DVec3::new(
                    theta.sin() * phi.cos(),
                    theta.sin() * phi.sin(),
                    theta.cos(),
                )
                .as_vec3(),
            );
        }
    }
    out
}

pub fn directions(kind: SamplerKind, n: usize) -> Vec<Vec3> {
    match kind {
        SamplerKind::Fibonacci => fibonacci_directions(n),
        SamplerKind::LongLat => longlat_directions(n),
    }
}

/// True when every point projects inside the camera image.
pub fn frustum_contains(cam: &Camera, points: impl IntoIterator<Item = Vec3>) -> bool {
    let (w, h) = (cam.width as f32, cam.height as f32);
    points.into_iter().all(|p| match cam.project(p) {
        Some(px) => px.x >= 0.0 && px.y >= 0.0 && px.x <= w && px.y <= h,
        None => false,
    })
}

/// Auxiliary camera directions: `n` unit vectors at angle `half_angle` from
/// `dir`, evenly spaced around it.
pub fn cone_directions(dir: Vec3, half_angle: f32, n: usize) -> Vec<Vec3> {
    let d = dir.as_dvec3().normalize();
    let (u, v) = d.any_orthonormal_pair();
    let (s, c) = (half_angle as f64).sin_cos();
    (0..n)
        .map(|k| {
            let phi = 2.0 * PI * k as f64 / n as f64;
            (c * d + s * (phi.cos() * u + phi.sin() * v))
                .normalize()
                .as_vec3()
        })
        .collect()
}

const OFFSET_SHRINK_STEPS: usize = 8;

/// Builds every main view (directions × distances) with its auxiliary views.
pub fn build_views(asset: &Asset, cfg: &SamplingConfig) -> Result<Vec<TrainView>> {
    cfg.validate()?;
    let dist = asset.distances()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let extent = asset.bbox_extent();
    let max_extent = extent.max_element();
    let ratio = if max_extent > 0.0 {
        extent.min_element() / max_extent
    } else {
        0.0
    };
    let offset_max = asset.bound_radius * ratio * cfg.offset_scale;

    let dirs = directions(cfg.sampler_kind, cfg.n_directions);
    let mut views = Vec::with_capacity(dirs.len() * cfg.n_distances);
    for dir in dirs {
        let base_rot = look_rotation(-dir);
        for k in 0..cfg.n_distances {
            let t = if cfg.n_distances > 1 {
                k as f32 / (cfg.n_distances - 1) as f32
            } else {
                0.0
            };
            let distance = dist.near + (dist.far - dist.near) * t;
            let position = dir * distance;
            // Always draw the angle so the random stream does not depend on
            // the offset toggle.
            let psi: f32 = rng.random_range(0.0..std::f32::consts::TAU);
            let mut magnitude = if cfg.offset_enabled {
                offset_max * t
            } else {
                0.0
            };
            let offset_dir = psi.cos() * base_rot.row(0) + psi.sin() * base_rot.row(1);

            let mut target_offset = offset_dir * magnitude;
            let mut shrink = 0;
            while magnitude > 0.0 {
                let cam = cfg.camera(position, target_offset);
                if frustum_contains(&cam, asset.gaussians.iter().map(|g| g.mean)) {
                    break;
                }
                shrink += 1;
                magnitude = if shrink >= OFFSET_SHRINK_STEPS {
                    0.0
                } else {
                    0.5 * magnitude
                };
                target_offset = offset_dir * magnitude;
            }

            let camera = cfg.camera(position, target_offset);
            let aux_cameras = cone_directions(dir, cfg.aux_cone_half_angle, cfg.n_aux_views)
                .into_iter()
                .map(|d| cfg.camera(d * distance, target_offset))
                .collect();
            views.push(TrainView {
                camera,
                direction_unit: dir,
                distance,
                target_offset,
                aux_cameras,
            });
        }
    }
    Ok(views)
}

/// Per-Gaussian visibility for one view: set when the Gaussian contributes to
/// any pixel of the main camera or of any auxiliary camera.
pub fn visible_labels(asset: &Asset, view: &TrainView) -> Vec<bool> {
    let opts = RenderOptions {
        sh_degree: 0,
        ..RenderOptions::recording()
    };
    let mut labels = vec![false; asset.len()];
    for cam in std::iter::once(&view.camera).chain(&view.aux_cameras) {
        let out = render(&asset.gaussians, cam, &opts);
        let contrib = out.contribution_max.expect("recording enabled");
        for (l, c) in labels.iter_mut().zip(contrib) {
            *l |= c > 0.0;
        }
    }
    labels
}
