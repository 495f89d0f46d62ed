//! Loaded 3DGS assets and the preprocessing applied before visibility
//! extraction: opacity pruning, recentering and camera distance bounds.

use glam::Vec3;
use sha2::{Digest, Sha256};

use crate::gaussian::{sh_coeff_count, Gaussian, MAX_SH_DEGREE};
use crate::{Error, Result};

/// Opacity below which Gaussians are dropped by default (one 8-bit step).
pub const DEFAULT_PRUNE_THRESHOLD: f32 = 1.0 / 255.0;
pub const DEFAULT_P_NEAR: f32 = 0.9;
pub const DEFAULT_P_FAR: f32 = 0.05;

/// Camera distance range for visibility sampling, in asset units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingDistances {
    pub near: f32,
    pub far: f32,
}

/// A collection of Gaussians together with its bounds.
///
/// Bounds are computed from the means only; the Gaussians' own extent is not
/// included.
#[derive(Debug, Clone, PartialEq)]
pub struct Asset {
    pub gaussians: Vec<Gaussian>,
    pub sh_degree: u32,
    /// Translation that `recenter` applied to the original means.
    pub center_offset: Vec3,
    pub bbox_min: Vec3,
    pub bbox_max: Vec3,
    /// Half the length of the bounding-box diagonal.
    pub bound_radius: f32,
    pub sampling_distances: Option<SamplingDistances>,
}

impl Asset {
    pub fn new(gaussians: Vec<Gaussian>, sh_degree: u32) -> Result<Self> {
        if sh_degree > MAX_SH_DEGREE {
            return Err(Error::InvalidArgument(format!(
                "sh degree {sh_degree} > {MAX_SH_DEGREE}"
            )));
        }
        let coeffs = sh_coeff_count(sh_degree);
        if let Some(i) = gaussians.iter().position(|g| g.sh.len() != coeffs) {
            return Err(Error::InvalidArgument(format!(
                "gaussian {i} has {} sh coefficients, degree {sh_degree} needs {coeffs}",
                gaussians[i].sh.len()
            )));
        }
        if let Some(i) = gaussians.iter().position(|g| !g.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "gaussian {i} has non-finite parameters"
            )));
        }
        let mut asset = Asset {
            gaussians,
            sh_degree,
            center_offset: Vec3::ZERO,
            bbox_min: Vec3::ZERO,
            bbox_max: Vec3::ZERO,
            bound_radius: 0.0,
            sampling_distances: None,
        };
        asset.update_bounds();
        Ok(asset)
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    fn update_bounds(&mut self) {
        if self.gaussians.is_empty() {
            self.bbox_min = Vec3::ZERO;
            self.bbox_max = Vec3::ZERO;
        } else {
            let (lo, hi) = self.gaussians.iter().fold(
                (Vec3::splat(f32::INFINITY), Vec3::splat(f32::NEG_INFINITY)),
                |(lo, hi), g| (lo.min(g.mean), hi.max(g.mean)),
            );
            self.bbox_min = lo;
            self.bbox_max = hi;
        }
        self.bound_radius = 0.5 * (self.bbox_max - self.bbox_min).length();
    }

    pub fn bbox_center(&self) -> Vec3 {
        0.5 * (self.bbox_min + self.bbox_max)
    }

    pub fn bbox_extent(&self) -> Vec3 {
        self.bbox_max - self.bbox_min
    }

    /// Keeps the Gaussians whose base opacity is at least `threshold`, in
    /// their original order.
    pub fn prune(&self, threshold: f32) -> Asset {
        let gaussians = self
            .gaussians
            .iter()
            .filter(|g| g.opacity() >= threshold)
            .cloned()
            .collect();
        let mut out = Asset {
            gaussians,
            ..self.clone_header()
        };
        out.update_bounds();
        out.sampling_distances = None;
        out
    }

    /// Translates the means so that the bounding-box center is the origin.
    pub fn recenter(&self) -> Result<Asset> {
        if self.is_empty() {
            return Err(Error::EmptyAsset);
        }
        let shift = self.bbox_center();
        let gaussians = self
            .gaussians
            .iter()
            .map(|g| Gaussian {
                mean: g.mean - shift,
                ..g.clone()
            })
            .collect();
        let mut out = Asset {
            gaussians,
            center_offset: self.center_offset + shift,
            ..self.clone_header()
        };
        out.update_bounds();
        Ok(out)
    }

    /// Attaches near/far sampling distances computed from the bounding radius.
    pub fn with_sampling_distances(&self, fov: f32, p_near: f32, p_far: f32) -> Result<Asset> {
        let (near, far) = compute_sampling_distances(self.bound_radius, fov, p_near, p_far)?;
        let mut out = self.clone();
        out.sampling_distances = Some(SamplingDistances { near, far });
        Ok(out)
    }

    pub fn distances(&self) -> Result<SamplingDistances> {
        self.sampling_distances.ok_or_else(|| {
            Error::InvalidArgument("asset has no sampling distances; run prep first".into())
        })
    }

    /// Stable 64-bit fingerprint of the Gaussian parameters, used to tie
    /// datasets and models to the asset they were built from.
    pub fn content_hash(&self) -> u64 {
        let mut h = Sha256::new();
        h.update((self.gaussians.len() as u64).to_le_bytes());
        h.update(self.sh_degree.to_le_bytes());
        for g in &self.gaussians {
            for v in g.mean.to_array().into_iter().chain(g.log_scale.to_array()) {
                h.update(v.to_le_bytes());
            }
            for v in g.rotation.to_array() {
                h.update(v.to_le_bytes());
            }
            h.update(g.opacity_logit.to_le_bytes());
            for c in &g.sh {
                for v in c.to_array() {
                    h.update(v.to_le_bytes());
                }
            }
        }
        let digest = h.finalize();
        u64::from_le_bytes(digest[..8].try_into().unwrap())
    }

    fn clone_header(&self) -> Asset {
        Asset {
            gaussians: Vec::new(),
            sh_degree: self.sh_degree,
            center_offset: self.center_offset,
            bbox_min: self.bbox_min,
            bbox_max: self.bbox_max,
            bound_radius: self.bound_radius,
            sampling_distances: self.sampling_distances,
        }
    }
}

/// Camera distance at which an object of bounding radius `radius` covers the
/// fraction `p` of a view spanning `fov`: `d = r / (tan(fov / 2) p)`.
///
/// Returns `(d_near, d_far)` for the two coverage fractions.
pub fn compute_sampling_distances(
    radius: f32,
    fov: f32,
    p_near: f32,
    p_far: f32,
) -> Result<(f32, f32)> {
    if !(fov > 0.0 && fov < std::f32::consts::PI) {
        return Err(Error::InvalidArgument(format!("fov {fov} out of (0, pi)")));
    }
    if !(p_far > 0.0 && p_far < p_near && p_near <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "need 0 < p_far < p_near <= 1, got p_near={p_near} p_far={p_far}"
        )));
    }
    if radius.is_nan() || radius <= 0.0 {
        return Err(Error::DegenerateAsset);
    }
    let t = (0.5 * fov).tan();
    Ok((radius / (t * p_near), radius / (t * p_far)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::logit;
    use glam::Quat;
    use proptest::prelude::*;

    fn g(mean: Vec3, alpha: f32) -> Gaussian {
        Gaussian {
            mean,
            log_scale: Vec3::splat(-3.0),
            rotation: Quat::IDENTITY,
            opacity_logit: logit(alpha),
            sh: vec![Vec3::ZERO],
        }
    }

    fn random_asset(seed: u64, n: usize) -> Asset {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let gs = (0..n)
            .map(|_| {
                let mean = Vec3::new(
                    rng.random_range(-3.0..5.0),
                    rng.random_range(-1.0..2.0),
                    rng.random_range(0.0..4.0),
                );
                g(mean, rng.random_range(0.0005..0.999))
            })
            .collect();
        Asset::new(gs, 0).unwrap()
    }

    #[test]
    fn prune_drops_low_opacity() {
        let a = Asset::new(
            vec![g(Vec3::ZERO, 0.5), g(Vec3::ONE, 0.001), g(Vec3::X, 0.9)],
            0,
        )
        .unwrap();
        let p = a.prune(DEFAULT_PRUNE_THRESHOLD);
        assert_eq!(p.len(), 2);
        assert_eq!(p.gaussians[0], a.gaussians[0]);
        assert_eq!(p.gaussians[1], a.gaussians[2]);
        assert_eq!(a.prune(0.0), a);
    }

    #[test]
    fn prune_matches_brute_force_scan() {
        let a = random_asset(7, 1000);
        let mut expected = 0;
        for g in &a.gaussians {
            if 1.0 / (1.0 + (-g.opacity_logit).exp()) >= 1.0 / 255.0 {
                expected += 1;
            }
        }
        assert_eq!(a.prune(1.0 / 255.0).len(), expected);
    }

    #[test]
    fn recenter_two_points() {
        let a = Asset::new(vec![g(Vec3::ONE, 0.5), g(Vec3::splat(3.0), 0.5)], 0).unwrap();
        let c = a.recenter().unwrap();
        assert_eq!(c.gaussians[0].mean, Vec3::splat(-1.0));
        assert_eq!(c.gaussians[1].mean, Vec3::ONE);
        assert_eq!(c.center_offset, Vec3::splat(2.0));
        assert_eq!(c.bbox_center(), Vec3::ZERO);

        let again = c.recenter().unwrap();
        assert!(again.center_offset.abs_diff_eq(Vec3::splat(2.0), 1e-7));
        assert_eq!(again.gaussians, c.gaussians);
    }

    #[test]
    fn recenter_empty_is_error() {
        let a = Asset::new(vec![], 0).unwrap();
        assert!(matches!(a.recenter(), Err(Error::EmptyAsset)));
    }

    #[test]
    fn sampling_distance_examples() {
        let (d, _) = compute_sampling_distances(1.0, 90f32.to_radians(), 1.0, 0.5).unwrap();
        assert!((d - 1.0).abs() < 1e-6);

        let (near, far) = compute_sampling_distances(1.0, 60f32.to_radians(), 0.9, 0.05).unwrap();
        let t30 = 30f32.to_radians().tan();
        assert!((near - 1.0 / (t30 * 0.9)).abs() < 1e-5);
        assert!((far - 1.0 / (t30 * 0.05)).abs() < 1e-4);
        assert!((far / near - 18.0).abs() < 1e-4);

        assert!(matches!(
            compute_sampling_distances(0.0, 1.0, 0.9, 0.05),
            Err(Error::DegenerateAsset)
        ));
        assert!(compute_sampling_distances(1.0, 1.0, 0.05, 0.9).is_err());
    }

    proptest! {
        #[test]
        fn prune_is_idempotent_and_monotone(seed in 0u64..1000, t1 in 0.0f32..0.99, t2 in 0.0f32..0.99) {
            let a = random_asset(seed, 64);
            let p = a.prune(t1);
            prop_assert_eq!(p.prune(t1).gaussians, p.gaussians.clone());
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            prop_assert!(a.prune(hi).len() <= a.prune(lo).len());
        }

        #[test]
        fn recenter_is_idempotent_translation(seed in 0u64..1000) {
            let a = random_asset(seed, 32);
            let c = a.recenter().unwrap();
            prop_assert!(c.bbox_center().length() < 1e-6);
            let cc = c.recenter().unwrap();
            for (x, y) in c.gaussians.iter().zip(&cc.gaussians) {
                prop_assert!((x.mean - y.mean).length() < 1e-6);
            }
            // pure translation: pairwise distances preserved
            for i in 0..4 {
                let d0 = (a.gaussians[i].mean - a.gaussians[i + 1].mean).length();
                let d1 = (c.gaussians[i].mean - c.gaussians[i + 1].mean).length();
                prop_assert!((d0 - d1).abs() <= 1e-5 * d0.max(1.0));
            }
        }

        #[test]
        fn sampling_distance_decreases_in_p_and_fov(r in 0.1f32..10.0, fov in 0.2f32..2.5, p in 0.1f32..0.8) {
            let (a, _) = compute_sampling_distances(r, fov, p, 0.05).unwrap();
            let (b, _) = compute_sampling_distances(r, fov, p + 0.1, 0.05).unwrap();
            let (c, _) = compute_sampling_distances(r, fov + 0.2, p, 0.05).unwrap();
            prop_assert!(b < a);
            prop_assert!(c < a);
        }
    }
}
