//! Extracted visibility data: sampled views plus packed per-(view, Gaussian)
//! labels, and the `.visdata` file format that stores them.
//!
//! Layout (all little-endian):
//!
//! ```text
//! magic "VDAT" | u32 version
//! u64 asset hash | u64 gaussian count | u64 view count
//! sampling config | f32 d_near, d_far, focal, bound_radius
//! per view: f32 position[3], rotation[9] (row-major), distance, forward[3], direction[3]
//! per view: ceil(gaussians / 64) u64 label words, bit g of word g / 64
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use glam::{Mat3, Vec3};
use rayon::prelude::*;

use crate::asset::Asset;
use crate::binio::{LeReader, LeWriter};
use crate::sampling::{build_views, visible_labels, SamplerKind, SamplingConfig};
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"VDAT";
const VERSION: u32 = 1;

/// Camera pose of a main view, in the asset's local frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewRecord {
    pub position: Vec3,
    /// World-to-camera rotation.
    pub rotation: Mat3,
    pub distance: f32,
    pub forward: Vec3,
    /// Unit vector from the asset center to the camera.
    pub direction: Vec3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VisibilityDataset {
    pub asset_hash: u64,
    pub config: SamplingConfig,
    pub d_near: f32,
    pub d_far: f32,
    /// Focal length in pixels of the training camera.
    pub focal: f32,
    pub bound_radius: f32,
    pub n_gaussians: usize,
    pub views: Vec<ViewRecord>,
    words_per_view: usize,
    bits: Vec<u64>,
}

impl VisibilityDataset {
    /// Renders every sampled view of `asset` and records visibility labels.
    pub fn extract(asset: &Asset, cfg: &SamplingConfig) -> Result<Self> {
        Self::extract_with_progress(asset, cfg, |_, _| {})
    }

    pub fn extract_with_progress(
        asset: &Asset,
        cfg: &SamplingConfig,
        progress: impl Fn(usize, usize) + Sync,
    ) -> Result<Self> {
        let dist = asset.distances()?;
        let views = build_views(asset, cfg)?;
        let n = asset.len();
        let words_per_view = n.div_ceil(64);
        let done = std::sync::atomic::AtomicUsize::new(0);
        let per_view: Vec<Vec<u64>> = views
            .par_iter()
            .map(|v| {
                let labels = visible_labels(asset, v);
                let k = done.fetch_add(1, std::sync::atomic::Ordering::Relaxed) + 1;
                progress(k, views.len());
                pack(&labels, words_per_view)
            })
            .collect();
        Ok(VisibilityDataset {
            asset_hash: asset.content_hash(),
            config: cfg.clone(),
            d_near: dist.near,
            d_far: dist.far,
            focal: cfg.focal(),
            bound_radius: asset.bound_radius,
            n_gaussians: n,
            views: views
                .iter()
                .map(|v| ViewRecord {
                    position: v.camera.position,
                    rotation: v.camera.rotation,
                    distance: v.distance,
                    forward: v.camera.forward(),
                    direction: v.direction_unit,
                })
                .collect(),
            words_per_view,
            bits: per_view.concat(),
        })
    }

    /// Builds a dataset from explicit labels (one `Vec<bool>` per view).
    pub fn from_labels(
        asset: &Asset,
        config: SamplingConfig,
        views: Vec<ViewRecord>,
        labels: &[Vec<bool>],
    ) -> Result<Self> {
        let dist = asset.distances()?;
        if views.len() != labels.len() || labels.iter().any(|l| l.len() != asset.len()) {
            return Err(Error::DimensionMismatch {
                expected: format!("{} views x {} gaussians", views.len(), asset.len()),
                got: format!("{} label rows", labels.len()),
            });
        }
        let words_per_view = asset.len().div_ceil(64);
        Ok(VisibilityDataset {
            asset_hash: asset.content_hash(),
            focal: config.focal(),
            config,
            d_near: dist.near,
            d_far: dist.far,
            bound_radius: asset.bound_radius,
            n_gaussians: asset.len(),
            views,
            words_per_view,
            bits: labels
                .iter()
                .flat_map(|l| pack(l, words_per_view))
                .collect(),
        })
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty() || self.n_gaussians == 0
    }

    pub fn label(&self, view: usize, gaussian: usize) -> bool {
        let w = self.bits[view * self.words_per_view + gaussian / 64];
        (w >> (gaussian % 64)) & 1 == 1
    }

    pub fn view_labels(&self, view: usize) -> Vec<bool> {
        (0..self.n_gaussians).map(|g| self.label(view, g)).collect()
    }

    pub fn visible_count(&self, view: usize) -> usize {
        self.bits[view * self.words_per_view..(view + 1) * self.words_per_view]
            .iter()
            .map(|w| w.count_ones() as usize)
            .sum()
    }

    pub fn positive_fraction(&self) -> f64 {
        let total: usize = (0..self.views.len()).map(|v| self.visible_count(v)).sum();
        total as f64 / (self.views.len() * self.n_gaussians).max(1) as f64
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read(BufReader::new(File::open(path)?))
    }

    pub fn write<W: Write>(&self, w: W) -> Result<()> {
        let mut w = LeWriter::new(w);
        w.bytes(MAGIC)?;
        w.u32(VERSION)?;
        w.u64(self.asset_hash)?;
        w.u64(self.n_gaussians as u64)?;
        w.u64(self.views.len() as u64)?;
        let c = &self.config;
        w.u32(c.n_directions as u32)?;
        w.u32(c.n_distances as u32)?;
        w.f32(c.fov)?;
        w.u32(c.image_size)?;
        w.u32(c.n_aux_views as u32)?;
        w.f32(c.aux_cone_half_angle)?;
        w.u32(c.offset_enabled as u32)?;
        w.f32(c.offset_scale)?;
        w.u32(match c.sampler_kind {
            SamplerKind::Fibonacci => 0,
            SamplerKind::LongLat => 1,
        })?;
        w.u64(c.seed)?;
        w.f32s(&[self.d_near, self.d_far, self.focal, self.bound_radius])?;
        for v in &self.views {
            w.f32s(&v.position.to_array())?;
            w.f32s(&v.rotation.transpose().to_cols_array())?;
            w.f32(v.distance)?;
            w.f32s(&v.forward.to_array())?;
            w.f32s(&v.direction.to_array())?;
        }
        for &word in &self.bits {
            w.u64(word)?;
        }
        Ok(())
    }

    pub fn read<R: Read>(r: R) -> Result<Self> {
        let mut r = LeReader::new(r, "visdata");
        r.expect_magic(MAGIC)?;
        r.expect_version(VERSION)?;
        let asset_hash = r.u64()?;
        let n_gaussians = r.u64()? as usize;
        let n_views = r.u64()? as usize;
        let config = SamplingConfig {
            n_directions: r.u32()? as usize,
            n_distances: r.u32()? as usize,
            fov: r.f32()?,
            image_size: r.u32()?,
            n_aux_views: r.u32()? as usize,
            aux_cone_half_angle: r.f32()?,
            offset_enabled: r.u32()? != 0,
            offset_scale: r.f32()?,
            sampler_kind: match r.u32()? {
                0 => SamplerKind::Fibonacci,
                1 => SamplerKind::LongLat,
                k => {
                    return Err(Error::format(
                        "visdata",
                        format!("unknown sampler kind {k}"),
                    ))
                }
            },
            seed: r.u64()?,
        };
        let (d_near, d_far, focal, bound_radius) = (r.f32()?, r.f32()?, r.f32()?, r.f32()?);
        let mut views = Vec::with_capacity(n_views.min(1 << 20));
        for _ in 0..n_views {
            let position = Vec3::from_slice(&r.f32s(3)?);
            let rotation = Mat3::from_cols_slice(&r.f32s(9)?).transpose();
            let distance = r.f32()?;
            let forward = Vec3::from_slice(&r.f32s(3)?);
            let direction = Vec3::from_slice(&r.f32s(3)?);
            views.push(ViewRecord {
                position,
                rotation,
                distance,
                forward,
                direction,
            });
        }
        let words_per_view = n_gaussians.div_ceil(64);
        let bits = (0..n_views * words_per_view)
            .map(|_| r.u64())
            .collect::<Result<Vec<_>>>()?;
        r.finish()?;
        Ok(VisibilityDataset {
            asset_hash,
            config,
            d_near,
            d_far,
            focal,
            bound_radius,
            n_gaussians,
            views,
            words_per_view,
            bits,
        })
    }
}

fn pack(labels: &[bool], words: usize) -> Vec<u64> {
    let mut out = vec![0u64; words];
    for (i, &l) in labels.iter().enumerate() {
        if l {
            out[i / 64] |= 1 << (i % 64);
        }
    }
    out
}
