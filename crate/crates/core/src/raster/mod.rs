//! Deterministic tile-based software rasterizer for Gaussian splats.
//!
//! Splats are binned into square tiles, sorted per tile by depth (ties broken
//! by input index) and alpha-composited front to back. When asked, the
//! rasterizer also records each Gaussian's largest per-pixel contribution
//! `α_p · T`, which is the ground truth for visibility labels.

mod io;
mod project;

pub use io::{read_contributions, save_png, write_contributions, CONTRIB_MAGIC};
pub use project::{
    project_gaussian, project_gaussian_with_dilation, ProjectedGaussian, COV2D_DILATION,
};

use glam::{Vec2, Vec3};
use rayon::prelude::*;

use crate::camera::Camera;
use crate::gaussian::Gaussian;

pub const DEFAULT_TILE_SIZE: u32 = 16;
pub const DEFAULT_MIN_TRANSMITTANCE: f32 = 1.0 / 255.0;
/// Per-pixel opacity cap.
pub const MAX_ALPHA: f32 = 0.99;
/// Per-pixel opacity below which a splat is not composited at all.
pub const MIN_ALPHA: f32 = 1.0 / 255.0;
const MIN_DET: f32 = 1e-12;
/// Side of the pixel blocks a tile list is pre-filtered for.
const SUB_BLOCK: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOptions {
    /// Highest SH band evaluated for color.
    pub sh_degree: u32,
    /// Fill [`RenderOutput::contribution_max`].
    pub record_contributions: bool,
    /// Fill [`RenderOutput::pixel_trace`] with every `(index, α_p·T)` pair
    /// composited into each pixel. Expensive; meant for tests and debugging.
    pub record_pixel_trace: bool,
    /// Discard splats whose 2D covariance determinant is below this value.
    pub radius_clip: Option<f32>,
    pub tile_size: u32,
    /// A pixel stops compositing once its transmittance drops below this.
    pub min_transmittance: f32,
    pub background: Vec3,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions {
            sh_degree: 3,
            record_contributions: false,
            record_pixel_trace: false,
            radius_clip: None,
            tile_size: DEFAULT_TILE_SIZE,
            min_transmittance: DEFAULT_MIN_TRANSMITTANCE,
            background: Vec3::ONE,
        }
    }
}

impl RenderOptions {
    pub fn recording() -> Self {
        RenderOptions {
            record_contributions: true,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub width: u32,
    pub height: u32,
    /// Row-major RGB, `height * width * 3` values in [0, 1].
    pub image: Vec<f32>,
    /// Row-major, `height * width` values in [0, 1].
    pub final_transmittance: Vec<f32>,
    /// Per input Gaussian, the maximum of `α_p · T` over all pixels.
    pub contribution_max: Option<Vec<f32>>,
    pub pixel_trace: Option<Vec<Vec<(u32, f32)>>>,
    /// Gaussians with a nonzero contribution somewhere in the image.
    pub used_count: usize,
    /// Gaussians that survived near/far culling, the screen bounds test and
    /// radius clipping.
    pub passed_count: usize,
    /// Gaussians dropped because their 2D covariance was not invertible.
    pub ill_conditioned: usize,
}

impl RenderOutput {
    pub fn pixel(&self, x: u32, y: u32) -> Vec3 {
        let i = 3 * (y * self.width + x) as usize;
        Vec3::new(self.image[i], self.image[i + 1], self.image[i + 2])
    }

    pub fn transmittance(&self, x: u32, y: u32) -> f32 {
        self.final_transmittance[(y * self.width + x) as usize]
    }

    /// Per-Gaussian flags: contributed to at least one pixel.
    pub fn used_mask(&self) -> Option<Vec<bool>> {
        self.contribution_max
            .as_ref()
            .map(|c| c.iter().map(|&v| v > 0.0).collect())
    }
}

#[derive(Clone, Copy)]
struct Splat {
    index: u32,
    mean: Vec2,
    /// Inverse covariance (a, b, c) for `a dx² + 2b dx dy + c dy²`.
    conic: [f32; 3],
    opacity: f32,
    /// Below this exponent `opacity · exp(power)` is certainly under
    /// [`MIN_ALPHA`], so the exponential can be skipped.
    power_floor: f32,
    /// Half-widths of the box outside which `power < power_floor`.
    reach: Vec2,
    color: Vec3,
    depth: f32,
    /// Inclusive tile rectangle.
    tiles: [u32; 4],
}

struct TileResult {
    color: Vec<Vec3>,
    transmittance: Vec<f32>,
    /// Parallel to the tile's splat list.
    contrib: Vec<f32>,
    trace: Vec<Vec<(u32, f32)>>,
}

enum Prepared {
    Splat(Splat),
    Culled,
    IllConditioned,
}

fn prepare(
    i: usize,
    g: &Gaussian,
    cam: &Camera,
    opts: &RenderOptions,
    tiles_x: u32,
    tiles_y: u32,
) -> Prepared {
    let Some(p) = project_gaussian(g, cam) else {
        return Prepared::Culled;
    };
    let det = p.det();
    if det.is_nan() || det <= MIN_DET {
        return Prepared::IllConditioned;
    }
    if let Some(clip) = opts.radius_clip {
        if det < clip {
            return Prepared::Culled;
        }
    }
    let r = p.radius();
    let (w, h) = (cam.width as f32, cam.height as f32);
    let m = p.mean2d;
    if m.x + r < 0.0 || m.y + r < 0.0 || m.x - r >= w || m.y - r >= h || !m.is_finite() {
        return Prepared::Culled;
    }
    let ts = opts.tile_size as f32;
    let tile = |v: f32, max: u32| ((v / ts).floor().max(0.0) as u32).min(max - 1);
    let inv_det = 1.0 / det;
    let (a, b, c) = (p.cov2d.x_axis.x, p.cov2d.y_axis.x, p.cov2d.y_axis.y);
    let dir = (g.mean - cam.position).normalize_or_zero();
    let power_floor = (MIN_ALPHA / g.opacity()).ln() - 1e-3;
    // -2 power = dᵀ Σ⁻¹ d <= k spans sqrt(k Σxx) along x; padded for rounding
    let k = (-2.0 * power_floor).max(0.0);
    let reach = Vec2::new((k * a).sqrt(), (k * c).sqrt()) * 1.001 + Vec2::splat(0.01);
    Prepared::Splat(Splat {
        index: i as u32,
        mean: m,
        conic: [c * inv_det, -b * inv_det, a * inv_det],
        opacity: g.opacity(),
        power_floor,
        reach,
        color: g.color(dir, opts.sh_degree),
        depth: p.depth,
        tiles: [
            tile(m.x - r, tiles_x),
            tile(m.y - r, tiles_y),
            tile(m.x + r, tiles_x),
            tile(m.y + r, tiles_y),
        ],
    })
}

/// Renders `gaussians` from `cam`.
pub fn render(gaussians: &[Gaussian], cam: &Camera, opts: &RenderOptions) -> RenderOutput {
    let ts = opts.tile_size.max(1);
    let tiles_x = cam.width.div_ceil(ts);
    let tiles_y = cam.height.div_ceil(ts);

    let prepared: Vec<Prepared> = gaussians
        .par_iter()
        .enumerate()
        .with_min_len(1024)
        .map(|(i, g)| prepare(i, g, cam, opts, tiles_x, tiles_y))
        .collect();
    let mut ill_conditioned = 0;
    let mut splats = Vec::with_capacity(prepared.len());
    for p in prepared {
        match p {
            Prepared::Splat(s) => splats.push(s),
            Prepared::IllConditioned => ill_conditioned += 1,
            Prepared::Culled => {}
        }
    }
    // Depths are positive past the near plane, so their bit patterns sort
    // like the values; the index breaks ties.
    let mut keys: Vec<u64> = splats
        .iter()
        .enumerate()
        .map(|(k, s)| ((s.depth.to_bits() as u64) << 32) | k as u64)
        .collect();
    keys.sort_unstable();
    let splats: Vec<Splat> = keys
        .iter()
        .map(|&key| splats[(key & 0xffff_ffff) as usize])
        .collect();

    // Binning in sorted order leaves every tile list depth-sorted.
    let mut bins: Vec<Vec<u32>> = vec![Vec::new(); (tiles_x * tiles_y) as usize];
    for (k, s) in splats.iter().enumerate() {
        let [x0, y0, x1, y1] = s.tiles;
        for ty in y0..=y1 {
            for tx in x0..=x1 {
                bins[(ty * tiles_x + tx) as usize].push(k as u32);
            }
        }
    }

    let tile_results: Vec<TileResult> = bins
        .par_iter()
        .enumerate()
        .map(|(t, list)| {
            let tx = t as u32 % tiles_x;
            let ty = t as u32 / tiles_x;
            render_tile(&splats, list, tx * ts, ty * ts, ts, cam, opts)
        })
        .collect();

    let (w, h) = (cam.width as usize, cam.height as usize);
    let mut image = vec![0.0f32; w * h * 3];
    let mut final_t = vec![1.0f32; w * h];
    let mut contrib = vec![0.0f32; gaussians.len()];
    let mut trace = opts.record_pixel_trace.then(|| vec![Vec::new(); w * h]);
    for (t, (res, list)) in tile_results.into_iter().zip(&bins).enumerate() {
        let x0 = (t as u32 % tiles_x * ts) as usize;
        let y0 = (t as u32 / tiles_x * ts) as usize;
        let tw = (ts as usize).min(w - x0);
        let th = (ts as usize).min(h - y0);
        for ly in 0..th {
            for lx in 0..tw {
                let l = ly * tw + lx;
                let p = (y0 + ly) * w + x0 + lx;
                image[3 * p..3 * p + 3].copy_from_slice(&res.color[l].to_array());
                final_t[p] = res.transmittance[l];
            }
        }
        if let Some(trace) = trace.as_mut() {
            for (l, pix) in res.trace.into_iter().enumerate() {
                let p = (y0 + l / tw) * w + x0 + l % tw;
                trace[p] = pix;
            }
        }
        for (&k, &c) in list.iter().zip(&res.contrib) {
            let g = splats[k as usize].index as usize;
            if c > contrib[g] {
                contrib[g] = c;
            }
        }
    }

    let used_count = contrib.iter().filter(|&&c| c > 0.0).count();
    RenderOutput {
        width: cam.width,
        height: cam.height,
        image,
        final_transmittance: final_t,
        contribution_max: opts.record_contributions.then_some(contrib),
        pixel_trace: trace,
        used_count,
        passed_count: splats.len(),
        ill_conditioned,
    }
}

fn render_tile(
    splats: &[Splat],
    list: &[u32],
    x0: u32,
    y0: u32,
    ts: u32,
    cam: &Camera,
    opts: &RenderOptions,
) -> TileResult {
    let tw = ts.min(cam.width - x0) as usize;
    let th = ts.min(cam.height - y0) as usize;
    let mut color = vec![Vec3::ZERO; tw * th];
    let mut transmittance = vec![1.0f32; tw * th];
    let mut contrib = vec![0.0f32; list.len()];
    let mut trace = vec![Vec::new(); if opts.record_pixel_trace { tw * th } else { 0 }];

    let local: Vec<Splat> = list.iter().map(|&k| splats[k as usize]).collect();
    let mut near: Vec<u32> = Vec::with_capacity(list.len());
    for by in (0..th).step_by(SUB_BLOCK) {
        for bx in (0..tw).step_by(SUB_BLOCK) {
            let bw = SUB_BLOCK.min(tw - bx);
            let bh = SUB_BLOCK.min(th - by);
            // pixel-center extent of this sub-block
            let lo = Vec2::new(
                (x0 as usize + bx) as f32 + 0.5,
                (y0 as usize + by) as f32 + 0.5,
            );
            let hi = lo + Vec2::new((bw - 1) as f32, (bh - 1) as f32);
            near.clear();
            near.extend((0..local.len() as u32).filter(|&slot| {
                let s = &local[slot as usize];
                (s.mean + s.reach).cmpge(lo).all() && (s.mean - s.reach).cmple(hi).all()
            }));
            for ly in by..by + bh {
                for lx in bx..bx + bw {
                    let l = ly * tw + lx;
                    let px = Vec2::new(
                        (x0 as usize + lx) as f32 + 0.5,
                        (y0 as usize + ly) as f32 + 0.5,
                    );
                    let (c, t) =
                        composite_pixel(&local, &near, px, &mut contrib, trace.get_mut(l), opts);
                    color[l] = (c + t * opts.background).clamp(Vec3::ZERO, Vec3::ONE);
                    transmittance[l] = t;
                }
            }
        }
    }
    TileResult {
        color,
        transmittance,
        contrib,
        trace,
    }
}

/// Front-to-back compositing of one pixel over the entries `slots` of a
/// tile's depth-sorted splats. Returns accumulated color and final transmittance.
fn composite_pixel(
    local: &[Splat],
    slots: &[u32],
    px: Vec2,
    contrib: &mut [f32],
    mut trace: Option<&mut Vec<(u32, f32)>>,
    opts: &RenderOptions,
) -> (Vec3, f32) {
    let mut t = 1.0f32;
    let mut c = Vec3::ZERO;
    for &slot in slots {
        let s = &local[slot as usize];
        let d = px - s.mean;
        let [a, b, cc] = s.conic;
        let power = -0.5 * (a * d.x * d.x + cc * d.y * d.y) - b * d.x * d.y;
        if power > 0.0 || power < s.power_floor {
            continue;
        }
        let alpha = (s.opacity * power.exp()).min(MAX_ALPHA);
        if alpha < MIN_ALPHA {
            continue;
        }
        let w = alpha * t;
        c += s.color * w;
        let slot = slot as usize;
        if w > contrib[slot] {
            contrib[slot] = w;
        }
        if let Some(tr) = trace.as_mut() {
            tr.push((s.index, w));
        }
        t *= 1.0 - alpha;
        if t < opts.min_transmittance {
            break;
        }
    }
    (c, t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::logit;
    use glam::Quat;

    fn iso(mean: Vec3, s: f32, alpha: f32) -> Gaussian {
        Gaussian {
            mean,
            log_scale: Vec3::splat(s.ln()),
            rotation: Quat::IDENTITY,
            opacity_logit: logit(alpha),
            sh: vec![Vec3::ZERO],
        }
    }

    /// 65×65 so that the optical axis passes through the center of pixel 32.
    fn cam() -> Camera {
        Camera::look_at(Vec3::new(0.0, 0.0, -4.0), Vec3::ZERO, 0.8, 65, 65)
    }

    #[test]
    fn empty_scene_is_background() {
        let out = render(&[], &cam(), &RenderOptions::recording());
        assert!(out.image.iter().all(|&v| v == 1.0));
        assert!(out.final_transmittance.iter().all(|&v| v == 1.0));
        assert_eq!(out.used_count, 0);
        assert_eq!(out.passed_count, 0);
    }

    #[test]
    fn single_gaussian_center_pixel() {
        let g = iso(Vec3::ZERO, 0.05, 0.9);
        let out = render(&[g], &cam(), &RenderOptions::recording());
        let c = out.contribution_max.as_ref().unwrap()[0];
        assert!((c - 0.9).abs() < 1e-4, "{c}");
        assert!((out.transmittance(32, 32) - 0.1).abs() < 1e-4);
        assert_eq!(out.used_count, 1);
        assert_eq!(out.passed_count, 1);
    }

    #[test]
    fn stacked_gaussians_rear_contribution() {
        let front = iso(Vec3::ZERO, 0.05, 0.5);
        let back = front.clone();
        let opts = RenderOptions {
            record_pixel_trace: true,
            ..RenderOptions::recording()
        };
        let out = render(&[front, back], &cam(), &opts);
        let trace = &out.pixel_trace.as_ref().unwrap()[32 * 65 + 32];
        assert_eq!(trace.len(), 2);
        assert_eq!(trace[0].0, 0);
        assert!((trace[0].1 - 0.5).abs() < 1e-5);
        assert_eq!(trace[1].0, 1);
        assert!((trace[1].1 - 0.25).abs() < 1e-5);
    }

    #[test]
    fn opaque_front_hides_rear() {
        let mut gs = Vec::new();
        // dense opaque wall in front, one small splat behind it
        for i in -6..=6 {
            for j in -6..=6 {
                gs.push(iso(
                    Vec3::new(i as f32 * 0.05, j as f32 * 0.05, 0.0),
                    0.05,
                    0.99,
                ));
            }
        }
        gs.push(iso(Vec3::new(0.0, 0.0, 1.0), 0.02, 0.99));
        let out = render(&gs, &cam(), &RenderOptions::recording());
        assert_eq!(out.contribution_max.unwrap()[gs.len() - 1], 0.0);
        assert!(out.used_count < gs.len());
    }

    #[test]
    fn radius_clip_off_equals_zero() {
        let gs: Vec<_> = (0..20)
            .map(|i| {
                iso(
                    Vec3::new(i as f32 * 0.03 - 0.3, 0.0, i as f32 * 0.1),
                    0.02,
                    0.7,
                )
            })
            .collect();
        let a = render(&gs, &cam(), &RenderOptions::default());
        let b = render(
            &gs,
            &cam(),
            &RenderOptions {
                radius_clip: Some(0.0),
                ..Default::default()
            },
        );
        assert_eq!(a, b);
        let c = render(
            &gs,
            &cam(),
            &RenderOptions {
                radius_clip: Some(1e6),
                ..Default::default()
            },
        );
        assert_eq!(c.passed_count, 0);
    }

    #[test]
    fn degenerate_covariance_is_skipped() {
        // Any finite Gaussian is well conditioned thanks to the dilation, so
        // exercise the path with a covariance that is NaN.
        let mut g = iso(Vec3::ZERO, 0.05, 0.9);
        g.log_scale = Vec3::new(f32::NAN, 0.0, 0.0);
        let out = render(
            &[g, iso(Vec3::ZERO, 0.05, 0.9)],
            &cam(),
            &RenderOptions::default(),
        );
        assert_eq!(out.ill_conditioned, 1);
        assert_eq!(out.passed_count, 1);
    }
}
