use glam::{Mat2, Mat3, Vec2};

use crate::camera::Camera;
use crate::gaussian::Gaussian;

/// Low-pass dilation added to every projected covariance, in pixels².
pub const COV2D_DILATION: f32 = 0.3;

/// A Gaussian after the EWA projection into pixel space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectedGaussian {
    pub mean2d: Vec2,
    /// Symmetric 2×2 covariance in pixels² (including dilation).
    pub cov2d: Mat2,
    /// Camera-space z of the mean.
    pub depth: f32,
}

impl ProjectedGaussian {
    pub fn det(&self) -> f32 {
        self.cov2d.determinant()
    }

    /// Largest eigenvalue of the 2D covariance.
    pub fn max_eigenvalue(&self) -> f32 {
        let a = self.cov2d.x_axis.x;
        let b = self.cov2d.y_axis.x;
        let c = self.cov2d.y_axis.y;
        let mid = 0.5 * (a + c);
        mid + (mid * mid - (a * c - b * b)).max(0.1).sqrt()
    }

    /// Radius in pixels of the square that bounds the 3σ ellipse.
    pub fn radius(&self) -> f32 {
        (3.0 * self.max_eigenvalue().sqrt()).ceil()
    }
}

/// Projects a Gaussian with the standard 3DGS dilation. Returns `None` when
/// the mean is not strictly beyond the near plane or lies past the far plane.
pub fn project_gaussian(g: &Gaussian, cam: &Camera) -> Option<ProjectedGaussian> {
    project_gaussian_with_dilation(g, cam, COV2D_DILATION)
}

pub fn project_gaussian_with_dilation(
    g: &Gaussian,
    cam: &Camera,
    dilation: f32,
) -> Option<ProjectedGaussian> {
    let t = cam.world_to_camera(g.mean);
    if t.z <= cam.near || t.z > cam.far {
        return None;
    }
    let cov3d = g.covariance();
    Some(ProjectedGaussian {
        mean2d: cam.camera_to_pixel(t),
        cov2d: project_covariance(cov3d, t, cam, dilation),
        depth: t.z,
    })
}

/// `J W Σ Wᵀ Jᵀ + dilation·I`, with the Jacobian evaluated at a camera-space
/// point whose lateral offset is clamped to 1.3× the half field of view.
pub(crate) fn project_covariance(cov3d: Mat3, t: glam::Vec3, cam: &Camera, dilation: f32) -> Mat2 {
    let f = cam.focal();
    let lim_x = 1.3 * cam.tan_half_fov_x();
    let lim_y = 1.3 * cam.tan_half_fov_y();
    let tx = (t.x / t.z).clamp(-lim_x, lim_x) * t.z;
    let ty = (t.y / t.z).clamp(-lim_y, lim_y) * t.z;
    let inv_z = 1.0 / t.z;
    // Rows of the 2×3 Jacobian.
    let j0 = glam::Vec3::new(f * inv_z, 0.0, -f * tx * inv_z * inv_z);
    let j1 = glam::Vec3::new(0.0, f * inv_z, -f * ty * inv_z * inv_z);
    // Rows of T = J W.
    let wt = cam.rotation.transpose();
    let r0 = wt * j0;
    let r1 = wt * j1;
    let s0 = cov3d * r0;
    let s1 = cov3d * r1;
    let a = r0.dot(s0) + dilation;
    let b = r0.dot(s1);
    let c = r1.dot(s1) + dilation;
    Mat2::from_cols(Vec2::new(a, b), Vec2::new(b, c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use glam::{Quat, Vec3};

    fn iso(mean: Vec3, s: f32) -> Gaussian {
        Gaussian {
            mean,
            log_scale: Vec3::splat(s.ln()),
            rotation: Quat::IDENTITY,
            opacity_logit: 0.0,
            sh: vec![Vec3::ZERO],
        }
    }

    fn cam() -> Camera {
        Camera::look_at(Vec3::new(0.0, 0.0, -5.0), Vec3::ZERO, 1.0, 128, 128)
    }

    #[test]
    fn on_axis_isotropic_projects_isotropic() {
        let p = project_gaussian(&iso(Vec3::ZERO, 0.1), &cam()).unwrap();
        let (a, c) = (p.cov2d.x_axis.x, p.cov2d.y_axis.y);
        assert!((a - c).abs() < 1e-6 * a);
        assert!(p.cov2d.x_axis.y.abs() < 1e-6 * a);
        assert!((p.mean2d - Vec2::splat(64.0)).length() < 1e-4);
        assert!((p.depth - 5.0).abs() < 1e-6);
    }

    #[test]
    fn behind_camera_is_culled() {
        assert!(project_gaussian(&iso(Vec3::new(0.0, 0.0, -6.0), 0.1), &cam()).is_none());
    }

    #[test]
    fn doubling_depth_halves_std_dev() {
        let c = Camera::look_at(Vec3::ZERO, Vec3::Z, 1.0, 128, 128);
        let near =
            project_gaussian_with_dilation(&iso(Vec3::new(0.0, 0.0, 4.0), 0.1), &c, 0.0).unwrap();
        let far =
            project_gaussian_with_dilation(&iso(Vec3::new(0.0, 0.0, 8.0), 0.1), &c, 0.0).unwrap();
        let ratio = far.cov2d.x_axis.x.sqrt() / near.cov2d.x_axis.x.sqrt();
        assert!((ratio - 0.5).abs() < 0.005, "{ratio}");
        // Closed form for an on-axis isotropic Gaussian: σ_px = f σ / z.
        let expected = c.focal() * 0.1 / 4.0;
        assert!((near.cov2d.x_axis.x.sqrt() - expected).abs() < 1e-3 * expected);
    }
}
