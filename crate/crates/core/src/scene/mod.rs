//! Composed scenes of instanced assets and the occlusion-aware render path.
//!
//! Each frame runs, per instance: a frustum test on the transformed means,
//! the visibility MLP in the asset's local frame, radius clipping, and only
//! then materializes the surviving Gaussians for the rasterizer.

mod layout;
mod orbit;

pub use layout::{AssetEntry, InstanceEntry, SceneLayout};
pub use orbit::{orbit_cameras, orbit_eval, OrbitConfig, OrbitStats};

use std::path::Path;
use std::time::Instant;

use glam::{DQuat, DVec3, Quat, Vec3};
use rayon::prelude::*;
use serde::Serialize;

use crate::asset::Asset;
use crate::camera::{Camera, CameraPose};
use crate::gaussian::Gaussian;
use crate::nn::{context_inputs, VisibilityModel, FEATURE_DIM, VIS_INPUTS};
use crate::raster::{project_gaussian, render, RenderOptions, RenderOutput, COV2D_DILATION};
use crate::{Error, Result};

/// Similarity transform from an asset's local frame to the world.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstanceTransform {
    pub translation: Vec3,
    pub rotation: Quat,
    pub scale: f32,
}

impl Default for InstanceTransform {
    fn default() -> Self {
        InstanceTransform {
            translation: Vec3::ZERO,
            rotation: Quat::IDENTITY,
            scale: 1.0,
        }
    }
}

impl InstanceTransform {
    /// Normalizes `rotation`; fails on a non-positive scale or a zero
    /// quaternion.
    pub fn new(translation: Vec3, rotation: Quat, scale: f32) -> Result<Self> {
        let len = rotation.length();
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "instance scale must be positive, got {scale}"
            )));
        }
        if !(len > 1e-6 && len.is_finite()) || !translation.is_finite() {
            return Err(Error::InvalidArgument(
                "instance transform is degenerate".into(),
            ));
        }
        Ok(InstanceTransform {
            translation,
            rotation: rotation / len,
            scale,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if (self.rotation.length() - 1.0).abs() > 1e-4 {
            return Err(Error::InvalidArgument(
                "instance rotation is not a unit quaternion".into(),
            ));
        }
        Self::new(self.translation, self.rotation, self.scale).map(|_| ())
    }

    pub fn apply_point(&self, p: Vec3) -> Vec3 {
        self.translation + self.scale * (self.rotation * p)
    }

    /// The Gaussian as it appears in the world. SH coefficients are not
    /// rotated.
    pub fn apply(&self, g: &Gaussian) -> Gaussian {
        Gaussian {
            mean: self.apply_point(g.mean),
            log_scale: g.log_scale + Vec3::splat(self.scale.ln()),
            rotation: self.rotation * g.rotation,
            opacity_logit: g.opacity_logit,
            sh: g.sh.clone(),
        }
    }
}

/// One unique asset with its instances. The feature cache exists exactly
/// when a model does.
#[derive(Debug, Clone)]
pub struct SceneAsset {
    pub id: String,
    pub asset: Asset,
    pub instances: Vec<InstanceTransform>,
    model: Option<VisibilityModel>,
    features: Option<Vec<[f32; FEATURE_DIM]>>,
}

impl SceneAsset {
    pub fn model(&self) -> Option<&VisibilityModel> {
        self.model.as_ref()
    }

    pub fn features(&self) -> Option<&[[f32; FEATURE_DIM]]> {
        self.features.as_deref()
    }

    fn payload_bytes(&self) -> usize {
        Gaussian::payload_bytes(self.asset.sh_degree)
    }
}

#[derive(Debug, Clone, Default)]
pub struct ComposedScene {
    assets: Vec<SceneAsset>,
    /// Default view from the layout file, if any.
    pub camera: Option<CameraPose>,
}

impl ComposedScene {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds an asset, running the feature encoder once if a model is given.
    /// Returns the asset's index.
    pub fn add_asset(
        &mut self,
        id: impl Into<String>,
        asset: Asset,
        model: Option<VisibilityModel>,
    ) -> Result<usize> {
        let id = id.into();
        if self.assets.iter().any(|a| a.id == id) {
            return Err(Error::Scene(format!("duplicate asset id {id:?}")));
        }
        let features = model
            .as_ref()
            .map(|m| m.encode_features(&asset))
            .transpose()?;
        self.assets.push(SceneAsset {
            id,
            asset,
            instances: Vec::new(),
            model,
            features,
        });
        Ok(self.assets.len() - 1)
    }

    pub fn add_instance(&mut self, asset: usize, inst: InstanceTransform) -> Result<()> {
        inst.validate()?;
        let n = self.assets.len();
        let a = self.assets.get_mut(asset).ok_or_else(|| {
            Error::Scene(format!("asset index {asset} out of range ({n} assets)"))
        })?;
        a.instances.push(inst);
        Ok(())
    }

    /// Drops every visibility model, which turns the render path into plain
    /// frustum culling plus instancing.
    pub fn without_models(&self) -> Self {
        let mut s = self.clone();
        for a in &mut s.assets {
            a.model = None;
            a.features = None;
        }
        s
    }

    /// Overrides the keep threshold of every visibility model.
    pub fn set_threshold(&mut self, threshold: f32) -> Result<()> {
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "threshold {threshold} out of (0, 1)"
            )));
        }
        for m in self.assets.iter_mut().filter_map(|a| a.model.as_mut()) {
            m.threshold = threshold;
        }
        Ok(())
    }

    pub fn assets(&self) -> &[SceneAsset] {
        &self.assets
    }

    pub fn asset_index(&self, id: &str) -> Option<usize> {
        self.assets.iter().position(|a| a.id == id)
    }

    pub fn n_instances(&self) -> usize {
        self.assets.iter().map(|a| a.instances.len()).sum()
    }

    /// Gaussians in the scene once every instance is materialized.
    pub fn total_gaussians(&self) -> usize {
        self.assets
            .iter()
            .map(|a| a.asset.len() * a.instances.len())
            .sum()
    }

    pub fn max_sh_degree(&self) -> u32 {
        self.assets
            .iter()
            .map(|a| a.asset.sh_degree)
            .max()
            .unwrap_or(0)
    }

    /// Every instance materialized, in asset, instance, Gaussian order.
    pub fn flatten(&self) -> Vec<Gaussian> {
        self.assets
            .iter()
            .flat_map(|a| {
                a.instances
                    .iter()
                    .flat_map(|t| a.asset.gaussians.iter().map(|g| t.apply(g)))
            })
            .collect()
    }

    /// Loads a JSON layout; relative paths resolve against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let layout = SceneLayout::load(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_layout(&layout, base)
    }

    pub fn from_layout(layout: &SceneLayout, base_dir: &Path) -> Result<Self> {
        let mut scene = ComposedScene {
            camera: layout.camera.clone(),
            ..Default::default()
        };
        for e in &layout.assets {
            let asset = crate::ply::load_ply(base_dir.join(&e.ply))?;
            let model = e
                .vismlp
                .as_ref()
                .map(|p| VisibilityModel::load(base_dir.join(p)))
                .transpose()?;
            scene.add_asset(e.id.clone(), asset, model)?;
        }
        for e in &layout.instances {
            let i = scene.asset_index(&e.asset_id).ok_or_else(|| {
                Error::Scene(format!(
                    "instance references unknown asset {:?}",
                    e.asset_id
                ))
            })?;
            scene.add_instance(i, e.transform()?)?;
        }
        Ok(scene)
    }
}

/// Per-instance quantities shared by every Gaussian's MLP input.
struct LocalView {
    /// Camera position in the asset's local frame, in asset units.
    cam_local: DVec3,
    dir: Vec3,
    fwd: Vec3,
    /// `f_t / f_r`, or 1 without FoV correction.
    focal_ratio: f64,
}

impl LocalView {
    fn new(inst: &InstanceTransform, cam: &Camera, f_train: f32, fov_correction: bool) -> Self {
        let q = inst.rotation.as_dquat().normalize();
        let inv: DQuat = q.conjugate();
        let rel = cam.position.as_dvec3() - inst.translation.as_dvec3();
        let cam_local = inv * rel / inst.scale as f64;
        LocalView {
            cam_local,
            dir: cam_local.normalize_or_zero().as_vec3(),
            fwd: (inv * cam.forward().as_dvec3())
                .normalize_or_zero()
                .as_vec3(),
            focal_ratio: if fov_correction {
                f_train as f64 / cam.focal() as f64
            } else {
                1.0
            },
        }
    }

    /// `d_t = d_r (f_t / f_r) / s` for the distance from the camera to the
    /// instance origin, evaluated in the local frame where the division by
    /// `s` has already happened.
    fn corrected_distance(&self) -> f64 {
        self.cam_local.length() * self.focal_ratio
    }

    fn inputs(
        &self,
        model: &VisibilityModel,
        local_mean: Vec3,
        feature: &[f32; FEATURE_DIM],
    ) -> [f32; VIS_INPUTS] {
        let d = model.norm.distance(self.corrected_distance() as f32);
        let ctx = context_inputs(local_mean, model.norm.mean_scale, self.dir, d, self.fwd);
        let mut out = [0.0; VIS_INPUTS];
        out[..ctx.len()].copy_from_slice(&ctx);
        out[ctx.len()..].copy_from_slice(feature);
        out
    }
}

/// The 16 visibility-network inputs for Gaussian `g_index` of `entry` seen
/// through instance `inst`, with FoV correction.
pub fn local_inputs(
    entry: &SceneAsset,
    g_index: usize,
    inst: &InstanceTransform,
    cam: &Camera,
) -> Result<[f32; VIS_INPUTS]> {
    let (Some(model), Some(features)) = (entry.model(), entry.features()) else {
        return Err(Error::Scene(format!(
            "asset {:?} has no visibility model",
            entry.id
        )));
    };
    let g =
        entry.asset.gaussians.get(g_index).ok_or_else(|| {
            Error::InvalidArgument(format!("gaussian index {g_index} out of range"))
        })?;
    let view = LocalView::new(inst, cam, model.norm.f_train, true);
    Ok(view.inputs(model, g.mean, &features[g_index]))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComposeOptions {
    /// Query visibility models where present.
    pub use_mlp: bool,
    /// Apply the focal-length ratio to MLP distances.
    pub fov_correction: bool,
    /// Test means against the bare image rectangle. The default widens it by
    /// a bound on each splat's screen radius so nothing the rasterizer would
    /// draw is dropped.
    pub strict_frustum: bool,
    /// `render.radius_clip` is applied before instantiation and then
    /// cleared for the rasterizer.
    pub render: RenderOptions,
}

impl Default for ComposeOptions {
    fn default() -> Self {
        ComposeOptions {
            use_mlp: true,
            fov_correction: true,
            strict_frustum: false,
            render: RenderOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct FrameStats {
    pub frustum_passed: usize,
    pub mlp_culled: usize,
    pub radius_culled: usize,
    /// `frustum_passed - mlp_culled - radius_culled`.
    pub instantiated: usize,
    /// Splats the rasterizer kept after its own screen-bounds test.
    pub passed: usize,
    pub used: usize,
    pub mem_bytes_instantiated: usize,
    pub preprocess_ms: f64,
    pub mlp_ms: f64,
    pub render_ms: f64,
}

/// Materialized survivors of one frame, with `(asset, gaussian)` origins.
pub(crate) struct FramePlan {
    pub gaussians: Vec<Gaussian>,
    pub origin: Vec<(u32, u32)>,
    pub stats: FrameStats,
}

/// Whether a world-space mean can influence the image. With a margin this
/// is conservative with respect to the rasterizer's own 3σ bounds test.
fn in_frustum(cam: &Camera, world_mean: Vec3, max_scale: f32, strict: bool) -> bool {
    let c = cam.world_to_camera(world_mean);
    if !(c.z > cam.near && c.z <= cam.far) {
        return false;
    }
    let p = cam.camera_to_pixel(c);
    if !p.is_finite() {
        return false;
    }
    let margin = if strict {
        0.0
    } else {
        // λmax(J W Σ Wᵀ Jᵀ) <= |J|_F² σ², and the rasterizer adds at most
        // dilation + sqrt(0.1) to it before taking the ceiling of 3 sqrt(λ).
        let f = cam.focal();
        let (u, v) = (c.x / c.z, c.y / c.z);
        let jf2 = (f / c.z).powi(2) * (2.0 + u * u + v * v);
        3.0 * (jf2 * max_scale * max_scale + COV2D_DILATION + 0.4).sqrt() + 2.0
    };
    let (w, h) = (cam.width as f32, cam.height as f32);
    !(p.x + margin < 0.0 || p.y + margin < 0.0 || p.x - margin >= w || p.y - margin >= h)
}

pub(crate) fn plan_frame(
    scene: &ComposedScene,
    cam: &Camera,
    opts: &ComposeOptions,
) -> Result<FramePlan> {
    cam.validate()?;
    let mut stats = FrameStats::default();
    let mut gaussians = Vec::new();
    let mut origin = Vec::new();
    let mut pre = 0.0;
    let mut mlp = 0.0;
    for (ai, entry) in scene.assets.iter().enumerate() {
        let gs = &entry.asset.gaussians;
        for inst in &entry.instances {
            let t0 = Instant::now();
            let passed: Vec<u32> = gs
                .par_iter()
                .enumerate()
                .filter(|(_, g)| {
                    in_frustum(
                        cam,
                        inst.apply_point(g.mean),
                        g.max_scale() * inst.scale,
                        opts.strict_frustum,
                    )
                })
                .map(|(i, _)| i as u32)
                .collect();
            stats.frustum_passed += passed.len();
            pre += t0.elapsed().as_secs_f64();

            let t1 = Instant::now();
            let kept = match (opts.use_mlp, entry.model(), entry.features()) {
                (true, Some(model), Some(features)) => {
                    let view = LocalView::new(inst, cam, model.norm.f_train, opts.fov_correction);
                    if view.corrected_distance() >= model.norm.d_near as f64 && !passed.is_empty() {
                        let inputs: Vec<f32> = passed
                            .par_iter()
                            .flat_map_iter(|&i| {
                                view.inputs(model, gs[i as usize].mean, &features[i as usize])
                            })
                            .collect();
                        let logits = model.logits(&inputs)?;
                        let kept: Vec<u32> = passed
                            .iter()
                            .zip(&logits)
                            .filter(|(_, &l)| model.is_visible(l))
                            .map(|(&i, _)| i)
                            .collect();
                        stats.mlp_culled += passed.len() - kept.len();
                        kept
                    } else {
                        passed
                    }
                }
                _ => passed,
            };
            mlp += t1.elapsed().as_secs_f64();

            let t2 = Instant::now();
            let mut survivors: Vec<(u32, Gaussian)> = kept
                .par_iter()
                .map(|&i| (i, inst.apply(&gs[i as usize])))
                .collect();
            if let Some(clip) = opts.render.radius_clip {
                let before = survivors.len();
                survivors.retain(|(_, g)| project_gaussian(g, cam).is_none_or(|p| p.det() >= clip));
                stats.radius_culled += before - survivors.len();
            }
            stats.mem_bytes_instantiated += survivors.len() * entry.payload_bytes();
            for (i, g) in survivors {
                origin.push((ai as u32, i));
                gaussians.push(g);
            }
            pre += t2.elapsed().as_secs_f64();
        }
    }
    stats.instantiated = gaussians.len();
    stats.preprocess_ms = pre * 1e3;
    stats.mlp_ms = mlp * 1e3;
    Ok(FramePlan {
        gaussians,
        origin,
        stats,
    })
}

fn raster_options(opts: &ComposeOptions) -> RenderOptions {
    RenderOptions {
        radius_clip: None,
        ..opts.render.clone()
    }
}

pub(crate) fn render_plan(
    plan: &mut FramePlan,
    cam: &Camera,
    opts: &ComposeOptions,
) -> RenderOutput {
    let t = Instant::now();
    let out = render(&plan.gaussians, cam, &raster_options(opts));
    plan.stats.render_ms = t.elapsed().as_secs_f64() * 1e3;
    plan.stats.passed = out.passed_count;
    plan.stats.used = out.used_count;
    out
}

/// Renders the scene through the culling pipeline.
pub fn render_composed(
    scene: &ComposedScene,
    cam: &Camera,
    opts: &ComposeOptions,
) -> Result<(RenderOutput, FrameStats)> {
    let mut plan = plan_frame(scene, cam, opts)?;
    let out = render_plan(&mut plan, cam, opts);
    Ok((out, plan.stats))
}

#[cfg(test)]
mod tests;
