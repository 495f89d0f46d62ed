//! Circular-trajectory evaluation of a visibility model against the
//! rasterizer's own contribution records.

use glam::Vec3;
use serde::Serialize;

use super::{plan_frame, render_plan, ComposeOptions, ComposedScene, InstanceTransform};
use crate::asset::Asset;
use crate::camera::Camera;
use crate::nn::VisibilityModel;
use crate::quality::{compute_metrics_pair, ImageRef};
use crate::raster::RenderOptions;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct OrbitConfig {
    pub n_views: usize,
    /// Distance from the orbit center (the asset origin).
    pub distance: f32,
    /// Rotation axis of the orbit.
    pub axis: Vec3,
    /// Angle between the cameras and the plane perpendicular to `axis`.
    pub elevation: f32,
    /// Azimuth of the first view. A non-zero phase keeps the orbit off the
    /// training directions.
    pub phase: f32,
    pub fov_y: f32,
    pub image_size: u32,
    pub render: RenderOptions,
}

impl Default for OrbitConfig {
    fn default() -> Self {
        OrbitConfig {
            n_views: 64,
            distance: 4.0,
            axis: Vec3::Y,
            elevation: 20f32.to_radians(),
            phase: 0.1234,
            fov_y: 60f32.to_radians(),
            image_size: 256,
            render: RenderOptions::default(),
        }
    }
}

pub fn orbit_cameras(cfg: &OrbitConfig) -> Vec<Camera> {
    let axis = cfg.axis.normalize();
    let u = axis.any_orthonormal_vector();
    let v = axis.cross(u);
    (0..cfg.n_views)
        .map(|i| {
            let a = cfg.phase + std::f32::consts::TAU * i as f32 / cfg.n_views as f32;
            let radial = a.cos() * u + a.sin() * v;
            let pos = cfg.distance * (cfg.elevation.cos() * radial + cfg.elevation.sin() * axis);
            Camera::look_at(pos, Vec3::ZERO, cfg.fov_y, cfg.image_size, cfg.image_size)
        })
        .collect()
}

/// Averages over the trajectory. "Passed" counts Gaussians handed to the
/// rasterizer: frustum survivors for the ground truth side, MLP survivors
/// for ours. "Used" counts Gaussians with a nonzero contribution.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct OrbitStats {
    pub n_views: usize,
    pub passed_gt: f64,
    pub used_gt: f64,
    pub passed_ours: f64,
    pub used_ours: f64,
    pub delta_passed_pct: f64,
    /// Fraction of ground-truth used Gaussians that the MLP kept.
    pub recall: f64,
    pub psnr: f64,
    pub min_psnr: f64,
    pub ssim: f64,
}

pub fn orbit_eval(asset: &Asset, model: &VisibilityModel, cfg: &OrbitConfig) -> Result<OrbitStats> {
    if cfg.n_views == 0 {
        return Err(Error::InvalidArgument(
            "orbit needs at least one view".into(),
        ));
    }
    let mut scene = ComposedScene::new();
    let a = scene.add_asset("orbit", asset.clone(), Some(model.clone()))?;
    scene.add_instance(a, InstanceTransform::default())?;

    let ours_opts = ComposeOptions {
        render: cfg.render.clone(),
        ..Default::default()
    };
    let gt_opts = ComposeOptions {
        use_mlp: false,
        render: RenderOptions {
            record_contributions: true,
            ..cfg.render.clone()
        },
        ..ours_opts.clone()
    };

    let mut s = OrbitStats {
        n_views: cfg.n_views,
        min_psnr: f64::INFINITY,
        ..Default::default()
    };
    let (mut used_total, mut used_kept) = (0usize, 0usize);
    let mut kept = vec![false; asset.len()];
    for cam in orbit_cameras(cfg) {
        let mut gt = plan_frame(&scene, &cam, &gt_opts)?;
        let gt_out = render_plan(&mut gt, &cam, &gt_opts);
        let mut ours = plan_frame(&scene, &cam, &ours_opts)?;
        let ours_out = render_plan(&mut ours, &cam, &ours_opts);

        kept.fill(false);
        for &(_, g) in &ours.origin {
            kept[g as usize] = true;
        }
        let contrib = gt_out.contribution_max.as_deref().unwrap_or_default();
        for (&(_, g), &c) in gt.origin.iter().zip(contrib) {
            if c > 0.0 {
                used_total += 1;
                used_kept += kept[g as usize] as usize;
            }
        }

        s.passed_gt += gt.stats.instantiated as f64;
        s.used_gt += gt.stats.used as f64;
        s.passed_ours += ours.stats.instantiated as f64;
        s.used_ours += ours.stats.used as f64;
        let (p, q) = compute_metrics_pair(
            &ImageRef::from_render(&gt_out),
            &ImageRef::from_render(&ours_out),
        )?;
        s.psnr += p;
        s.ssim += q;
        s.min_psnr = s.min_psnr.min(p);
    }
    s.delta_passed_pct = if s.passed_gt > 0.0 {
        100.0 * (s.passed_ours - s.passed_gt) / s.passed_gt
    } else {
        0.0
    };
    let n = cfg.n_views as f64;
    for v in [
        &mut s.passed_gt,
        &mut s.used_gt,
        &mut s.passed_ours,
        &mut s.used_ours,
        &mut s.psnr,
        &mut s.ssim,
    ] {
        *v /= n;
    }
    s.recall = if used_total > 0 {
        used_kept as f64 / used_total as f64
    } else {
        1.0
    };
    Ok(s)
}
