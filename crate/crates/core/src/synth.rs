//! Synthetic assets with known occlusion structure.

use glam::{Quat, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::asset::Asset;
use crate::gaussian::{logit, Gaussian, SH_C0};
use crate::sampling::fibonacci_directions;

#[derive(Debug, Clone)]
pub struct ShellParams {
    pub n: usize,
    pub radius: f32,
    /// Isotropic standard deviation of each Gaussian. The shell is closed
    /// (no see-through holes at alpha near 1) once this is at least about
    /// 0.8 times the lattice spacing `radius * sqrt(4 pi / n)`.
    pub thickness: f32,
    pub alpha: f32,
    /// Per-Gaussian scale multiplier is drawn log-uniformly from
    /// `[1 / (1 + jitter), 1 + jitter]`. Zero gives identical sizes.
    pub size_jitter: f32,
    pub seed: u64,
}

impl Default for ShellParams {
    fn default() -> Self {
        ShellParams {
            n: 20_000,
            radius: 1.0,
            thickness: 0.025,
            alpha: 0.99,
            size_jitter: 0.0,
            seed: 0,
        }
    }
}

fn dc_for_color(c: Vec3) -> Vec3 {
    (c - Vec3::splat(0.5)) / SH_C0
}

fn random_color(rng: &mut ChaCha8Rng) -> Vec3 {
    Vec3::new(
        rng.random_range(0.1..0.9),
        rng.random_range(0.1..0.9),
        rng.random_range(0.1..0.9),
    )
}

/// Gaussians on a sphere, placed on a Fibonacci lattice.
pub fn make_shell(p: &ShellParams) -> Asset {
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let jitter = (1.0 + p.size_jitter.max(0.0)).ln();
    let gaussians = fibonacci_directions(p.n)
        .into_iter()
        .map(|d| {
            let s = p.thickness
                * if jitter > 0.0 {
                    rng.random_range(-jitter..=jitter).exp()
                } else {
                    1.0
                };
            // Tint by hemisphere so occlusion errors show up in the image.
            let base = random_color(&mut rng);
            let tint = Vec3::new(0.5 + 0.4 * d.x, 0.5 + 0.4 * d.y, 0.5 + 0.4 * d.z);
            Gaussian {
                mean: d * p.radius,
                log_scale: Vec3::splat(s.ln()),
                rotation: Quat::IDENTITY,
                opacity_logit: logit(p.alpha),
                sh: vec![dc_for_color(0.5 * (base + tint))],
            }
        })
        .collect();
    Asset::new(gaussians, 0).expect("shell parameters are finite")
}

#[derive(Debug, Clone)]
pub struct SlabParams {
    pub n_front: usize,
    pub n_back: usize,
    /// Separation along z between the two sheets.
    pub gap: f32,
    pub alpha_front: f32,
    pub alpha_back: f32,
    /// Side length of the front sheet.
    pub extent: f32,
    /// Back sheet side length relative to the front sheet.
    pub back_extent_ratio: f32,
    pub seed: u64,
}

impl Default for SlabParams {
    fn default() -> Self {
        SlabParams {
            n_front: 2500,
            n_back: 2500,
            gap: 0.2,
            alpha_front: 0.99,
            alpha_back: 0.9,
            extent: 1.0,
            back_extent_ratio: 0.6,
            seed: 0,
        }
    }
}

fn sheet(n: usize, extent: f32, z: f32, alpha: f32, rng: &mut ChaCha8Rng, out: &mut Vec<Gaussian>) {
    if n == 0 {
        return;
    }
    let side = (n as f32).sqrt().ceil() as usize;
    let spacing = extent / side as f32;
    // One spacing keeps the midpoint between four neighbors below 1/255
    // transmittance at alpha 0.99.
    let s = if n == 1 { 0.25 * extent } else { spacing };
    for i in 0..n {
        let (row, col) = (i / side, i % side);
        let mean = if n == 1 {
            Vec3::new(0.0, 0.0, z)
        } else {
            Vec3::new(
                (col as f32 + 0.5) * spacing - 0.5 * extent,
                (row as f32 + 0.5) * spacing - 0.5 * extent,
                z,
            )
        };
        out.push(Gaussian {
            mean,
            log_scale: Vec3::new(s.ln(), s.ln(), (0.2 * s).ln()),
            rotation: Quat::IDENTITY,
            opacity_logit: logit(alpha),
            sh: vec![dc_for_color(random_color(rng))],
        });
    }
}

/// Two parallel sheets facing ±z. The front sheet (all indices below
/// `n_front`) sits at `z = +gap / 2`, the back sheet at `z = -gap / 2`.
pub fn make_slab_pair(p: &SlabParams) -> Asset {
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let mut gaussians = Vec::with_capacity(p.n_front + p.n_back);
    sheet(
        p.n_front,
        p.extent,
        0.5 * p.gap,
        p.alpha_front,
        &mut rng,
        &mut gaussians,
    );
    sheet(
        p.n_back,
        p.extent * p.back_extent_ratio,
        -0.5 * p.gap,
        p.alpha_back,
        &mut rng,
        &mut gaussians,
    );
    Asset::new(gaussians, 0).expect("slab parameters are finite")
}
