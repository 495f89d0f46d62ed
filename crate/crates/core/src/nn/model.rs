use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use glam::Vec3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::mlp::Mlp;
use super::real::Real;
use crate::asset::Asset;
use crate::binio::{LeReader, LeWriter};
use crate::gaussian::Gaussian;
use crate::{Error, Result};

/// Per-Gaussian parameters fed to the feature encoder.
pub const GAUSSIAN_INPUTS: usize = 14;
pub const FEATURE_DIM: usize = 6;
/// View-dependent part of the visibility input: mean (3), direction (3),
/// distance (1), camera forward (3). Direction and distance are those of the
/// camera relative to the asset origin, so they are shared by all Gaussians
/// of a view.
pub const CONTEXT_INPUTS: usize = 10;
pub const VIS_INPUTS: usize = CONTEXT_INPUTS + FEATURE_DIM;
pub const DEFAULT_HIDDEN: [usize; 2] = [32, 32];

const MAGIC: &[u8; 4] = b"VMLP";
const VERSION: u32 = 1;
const INFER_CHUNK: usize = 4096;

/// Constants that map raw quantities to network inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalization {
    /// Means and scales are divided by this (the asset's bounding radius).
    pub mean_scale: f32,
    pub d_near: f32,
    pub d_far: f32,
    /// Focal length in pixels of the camera the labels were rendered with.
    pub f_train: f32,
}

impl Normalization {
    /// Min-max normalization of a distance to `[-1, 1]`, clamped.
    pub fn distance(&self, d: f32) -> f32 {
        (2.0 * (d - self.d_near) / (self.d_far - self.d_near) - 1.0).clamp(-1.0, 1.0)
    }

    /// Render-space distance converted to the training camera and the
    /// asset's own scale: `d_t = d_r · (f_t / f_r) / s`.
    pub fn corrected_distance(&self, d_render: f32, f_render: f32, scale: f32) -> f32 {
        d_render * (self.f_train / f_render) / scale
    }
}

pub fn gaussian_inputs(g: &Gaussian, mean_scale: f32) -> [f32; GAUSSIAN_INPUTS] {
    let m = g.mean / mean_scale;
    let s = g.scale() / mean_scale;
    let q = g.rotation;
    let c = g.dc_color();
    [
        m.x,
        m.y,
        m.z,
        s.x,
        s.y,
        s.z,
        q.w,
        q.x,
        q.y,
        q.z,
        g.opacity(),
        c.x,
        c.y,
        c.z,
    ]
}

/// Context inputs for one Gaussian: `mean` is the asset-local mean, `dir`
/// the unit vector from the asset center to the camera and `fwd` the camera
/// forward axis, both in asset-local space.
pub fn context_inputs(
    mean: Vec3,
    mean_scale: f32,
    dir: Vec3,
    dist_norm: f32,
    fwd: Vec3,
) -> [f32; CONTEXT_INPUTS] {
    let m = mean / mean_scale;
    [
        m.x, m.y, m.z, dir.x, dir.y, dir.z, dist_norm, fwd.x, fwd.y, fwd.z,
    ]
}

/// Feature encoder plus visibility network, with what is needed to build
/// their inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct VisibilityModel {
    pub asset_hash: u64,
    pub norm: Normalization,
    /// A Gaussian is kept when `sigmoid(logit) >= threshold`.
    pub threshold: f32,
    pub final_loss: f32,
    pub feature_mlp: Mlp<f32>,
    pub vis_mlp: Mlp<f32>,
}

impl VisibilityModel {
    pub fn new_random(
        asset_hash: u64,
        norm: Normalization,
        threshold: f32,
        hidden: &[usize],
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let widths = |i, o| [&[i][..], hidden, &[o][..]].concat();
        Ok(VisibilityModel {
            asset_hash,
            norm,
            threshold,
            final_loss: f32::NAN,
            feature_mlp: Mlp::he_uniform(&widths(GAUSSIAN_INPUTS, FEATURE_DIM), &mut rng)?,
            vis_mlp: Mlp::he_uniform(&widths(VIS_INPUTS, 1), &mut rng)?,
        })
    }

    fn validate(&self) -> Result<()> {
        let (f, v) = (&self.feature_mlp, &self.vis_mlp);
        if f.input_width() != GAUSSIAN_INPUTS
            || f.output_width() != FEATURE_DIM
            || v.input_width() != VIS_INPUTS
            || v.output_width() != 1
        {
            return Err(Error::DimensionMismatch {
                expected: format!("{GAUSSIAN_INPUTS}->..->{FEATURE_DIM} and {VIS_INPUTS}->..->1"),
                got: format!("{:?} and {:?}", f.widths(), v.widths()),
            });
        }
        if !(self.norm.mean_scale > 0.0
            && self.norm.d_far > self.norm.d_near
            && self.norm.f_train > 0.0)
        {
            return Err(Error::InvalidArgument(
                "invalid normalization constants".into(),
            ));
        }
        Ok(())
    }

    pub fn check_asset(&self, asset: &Asset) -> Result<()> {
        let got = asset.content_hash();
        if got != self.asset_hash {
            return Err(Error::AssetMismatch {
                expected: self.asset_hash,
                got,
            });
        }
        Ok(())
    }

    /// Runs the feature encoder once over every Gaussian of `asset`.
    pub fn encode_features(&self, asset: &Asset) -> Result<Vec<[f32; FEATURE_DIM]>> {
        self.check_asset(asset)?;
        let inputs: Vec<f32> = asset
            .gaussians
            .iter()
            .flat_map(|g| gaussian_inputs(g, self.norm.mean_scale))
            .collect();
        let out = batched(&self.feature_mlp, &inputs)?;
        Ok(out
            .chunks_exact(FEATURE_DIM)
            .map(|c| c.try_into().unwrap())
            .collect())
    }

    /// Visibility logits for row-major `n × 16` inputs.
    pub fn logits(&self, inputs: &[f32]) -> Result<Vec<f32>> {
        batched(&self.vis_mlp, inputs)
    }

    pub fn is_visible(&self, logit: f32) -> bool {
        logit.sigmoid() >= self.threshold
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
        let n = &self.norm;
        w.f32s(&[
            n.mean_scale,
            n.d_near,
            n.d_far,
            n.f_train,
            self.threshold,
            self.final_loss,
        ])?;
        for m in [&self.feature_mlp, &self.vis_mlp] {
            w.u32(m.widths().len() as u32)?;
            for &x in m.widths() {
                w.u32(x as u32)?;
            }
            w.f32s(m.params())?;
        }
        Ok(())
    }

    pub fn read<R: Read>(r: R) -> Result<Self> {
        let mut r = LeReader::new(r, "vismlp");
        r.expect_magic(MAGIC)?;
        r.expect_version(VERSION)?;
        let asset_hash = r.u64()?;
        let c = r.f32s(6)?;
        let mut mlps = Vec::with_capacity(2);
        for _ in 0..2 {
            let n = r.u32()? as usize;
            if !(2..=16).contains(&n) {
                return Err(Error::format("vismlp", format!("bad layer count {n}")));
            }
            let widths = (0..n)
                .map(|_| Ok(r.u32()? as usize))
                .collect::<Result<Vec<_>>>()?;
            if widths.iter().any(|&x| x == 0 || x > 4096) {
                return Err(Error::format(
                    "vismlp",
                    format!("bad layer widths {widths:?}"),
                ));
            }
            let params = r.f32s(super::mlp::param_count(&widths))?;
            mlps.push(Mlp::from_params(&widths, params)?);
        }
        r.finish()?;
        let vis_mlp = mlps.pop().unwrap();
        let feature_mlp = mlps.pop().unwrap();
        let model = VisibilityModel {
            asset_hash,
            norm: Normalization {
                mean_scale: c[0],
                d_near: c[1],
                d_far: c[2],
                f_train: c[3],
            },
            threshold: c[4],
            final_loss: c[5],
            feature_mlp,
            vis_mlp,
        };
        model.validate()?;
        Ok(model)
    }

    /// Size in bytes of the serialized model.
    pub fn serialized_len(&self) -> usize {
        let mlp = |m: &Mlp<f32>| 4 + 4 * m.widths().len() + 4 * m.params().len();
        4 + 4 + 8 + 6 * 4 + mlp(&self.feature_mlp) + mlp(&self.vis_mlp)
    }
}

/// Row-sharded inference; rows are independent so the result does not depend
/// on the thread count.
fn batched(m: &Mlp<f32>, inputs: &[f32]) -> Result<Vec<f32>> {
    let w = m.input_width();
    if !inputs.len().is_multiple_of(w) {
        return Err(Error::DimensionMismatch {
            expected: format!("a multiple of {w} inputs"),
            got: inputs.len().to_string(),
        });
    }
    let parts = inputs
        .par_chunks(INFER_CHUNK * w)
        .map(|c| m.forward(c, c.len() / w))
        .collect::<Result<Vec<_>>>()?;
    Ok(parts.concat())
}
