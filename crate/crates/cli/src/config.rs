//! TOML configuration. Every key is optional; missing keys take the defaults
//! below, and command-line flags override both.

use std::path::Path;

use anyhow::{Context, Result};
use serde::Deserialize;
use splatcull::metrics::{Trajectory, Variant};
use splatcull::{SamplerKind, SamplingConfig, TrainConfig};

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub prep: PrepSection,
    pub sampling: SamplingSection,
    pub train: TrainConfig,
    pub render: RenderSection,
    pub bench: BenchSection,
    pub orbit: OrbitSection,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrepSection {
    /// Gaussians with opacity below this are dropped.
    pub prune: f32,
    /// Vertical fov of the square training camera, degrees.
    pub fov_deg: f32,
    pub p_near: f32,
    pub p_far: f32,
}

impl Default for PrepSection {
    fn default() -> Self {
        PrepSection {
            prune: 1.0 / 255.0,
            fov_deg: 60.0,
            p_near: 0.9,
            p_far: 0.05,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingSection {
    pub n_directions: usize,
    pub n_distances: usize,
    pub n_aux_views: usize,
    pub aux_cone_half_angle_deg: f32,
    pub image_size: u32,
    pub offset_enabled: bool,
    pub offset_scale: f32,
    pub sampler: SamplerKind,
}

impl Default for SamplingSection {
    fn default() -> Self {
        let d = SamplingConfig::default();
        SamplingSection {
            n_directions: d.n_directions,
            n_distances: d.n_distances,
            n_aux_views: d.n_aux_views,
            aux_cone_half_angle_deg: d.aux_cone_half_angle.to_degrees(),
            image_size: d.image_size,
            offset_enabled: d.offset_enabled,
            offset_scale: d.offset_scale,
            sampler: d.sampler_kind,
        }
    }
}

impl SamplingSection {
    pub fn to_config(&self, fov_deg: f32, seed: u64) -> SamplingConfig {
        SamplingConfig {
            n_directions: self.n_directions,
            n_distances: self.n_distances,
            fov: fov_deg.to_radians(),
            image_size: self.image_size,
            n_aux_views: self.n_aux_views,
            aux_cone_half_angle: self.aux_cone_half_angle_deg.to_radians(),
            offset_enabled: self.offset_enabled,
            offset_scale: self.offset_scale,
            sampler_kind: self.sampler,
            seed,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderSection {
    pub use_mlp: bool,
    pub fov_correction: bool,
    pub strict_frustum: bool,
    /// Overrides the threshold stored in each model.
    pub threshold: Option<f32>,
    pub radius_clip: Option<f32>,
    pub sh_degree: u32,
    pub tile_size: u32,
}

impl Default for RenderSection {
    fn default() -> Self {
        RenderSection {
            use_mlp: true,
            fov_correction: true,
            strict_frustum: false,
            threshold: None,
            radius_clip: None,
            sh_degree: 3,
            tile_size: 16,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    pub trajectory: Trajectory,
    pub variants: Vec<Variant>,
    /// Determinant threshold of the `mlp+radius_clip` variant.
    pub radius_clip: f32,
}

impl Default for BenchSection {
    fn default() -> Self {
        BenchSection {
            trajectory: Trajectory::default(),
            variants: Variant::ALL.to_vec(),
            radius_clip: 0.5,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OrbitSection {
    pub n_views: usize,
    /// Absolute camera distance. When unset it is derived from `frac`.
    pub distance: Option<f32>,
    /// Position of the orbit between the asset's near and far sampling
    /// distances, after mapping to the orbit camera's focal length.
    pub frac: f32,
    pub elevation_deg: f32,
    pub phase: f32,
    pub fov_deg: f32,
    pub image_size: u32,
    pub axis: [f32; 3],
}

impl Default for OrbitSection {
    fn default() -> Self {
        OrbitSection {
            n_views: 64,
            distance: None,
            frac: 0.25,
            elevation_deg: 20.0,
            phase: 0.1234,
            fov_deg: 60.0,
            image_size: 256,
            axis: [0.0, 1.0, 0.0],
        }
    }
}
