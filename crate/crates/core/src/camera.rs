use glam::{Mat3, Vec2, Vec3};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Pinhole camera with square pixels and the principal point at the image
/// center.
///
/// Camera space follows the usual 3DGS convention: +x right, +y down, +z
/// forward. `rotation` maps world-space directions into camera space, so its
/// rows are the right, down and forward axes expressed in world space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub position: Vec3,
    pub rotation: Mat3,
    pub fov_y: f32,
    pub width: u32,
    pub height: u32,
    pub near: f32,
    pub far: f32,
}

pub const DEFAULT_NEAR: f32 = 0.01;
pub const DEFAULT_FAR: f32 = 1.0e4;

impl Camera {
    /// Builds a camera at `position` looking at `target`.
    pub fn look_at(position: Vec3, target: Vec3, fov_y: f32, width: u32, height: u32) -> Self {
        Camera {
            position,
            rotation: look_rotation(target - position),
            fov_y,
            width,
            height,
            near: DEFAULT_NEAR,
            far: DEFAULT_FAR,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fov_y > 0.0 && self.fov_y < std::f32::consts::PI) {
            return Err(Error::InvalidArgument(format!(
                "fov_y {} out of (0, pi)",
                self.fov_y
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidArgument("camera has zero-sized image".into()));
        }
        if !(self.near > 0.0 && self.far > self.near) {
            return Err(Error::InvalidArgument("camera needs 0 < near < far".into()));
        }
        let should_be_identity = self.rotation * self.rotation.transpose();
        if !should_be_identity.abs_diff_eq(Mat3::IDENTITY, 1e-5) {
            return Err(Error::InvalidArgument(
                "camera rotation is not orthonormal".into(),
            ));
        }
        Ok(())
    }

    /// Focal length in pixels, `height / (2 tan(fov_y / 2))`.
    pub fn focal(&self) -> f32 {
        self.height as f32 / (2.0 * (0.5 * self.fov_y).tan())
    }

    pub fn tan_half_fov_x(&self) -> f32 {
        0.5 * self.width as f32 / self.focal()
    }

    pub fn tan_half_fov_y(&self) -> f32 {
        (0.5 * self.fov_y).tan()
    }

    /// Field of view spanned by the image diagonal.
    pub fn diagonal_fov(&self) -> f32 {
        let half_diag = 0.5 * ((self.width as f32).powi(2) + (self.height as f32).powi(2)).sqrt();
        2.0 * (half_diag / self.focal()).atan()
    }

    pub fn image_diagonal(&self) -> f32 {
        ((self.width as f32).powi(2) + (self.height as f32).powi(2)).sqrt()
    }

    /// World-space unit vector along the optical axis.
    pub fn forward(&self) -> Vec3 {
        self.rotation.row(2)
    }

    pub fn right(&self) -> Vec3 {
        self.rotation.row(0)
    }

    pub fn down(&self) -> Vec3 {
        self.rotation.row(1)
    }

    pub fn world_to_camera(&self, p: Vec3) -> Vec3 {
        self.rotation * (p - self.position)
    }

    /// Pixel coordinates of a camera-space point. Pixel `i` covers
    /// `[i, i + 1)`, so its center sits at `i + 0.5`.
    pub fn camera_to_pixel(&self, p: Vec3) -> Vec2 {
        let f = self.focal();
        Vec2::new(
            f * p.x / p.z + 0.5 * self.width as f32,
            f * p.y / p.z + 0.5 * self.height as f32,
        )
    }

    /// Projects a world-space point, or `None` if it is not in front of the
    /// near plane.
    pub fn project(&self, p: Vec3) -> Option<Vec2> {
        let c = self.world_to_camera(p);
        (c.z > self.near).then(|| self.camera_to_pixel(c))
    }

    /// Same camera with a different vertical field of view.
    pub fn with_fov_y(mut self, fov_y: f32) -> Self {
        self.fov_y = fov_y;
        self
    }
}

/// World-to-camera rotation for a camera looking along `dir`, with world +y
/// as the up reference (falling back to +z when looking straight up/down).
pub fn look_rotation(dir: Vec3) -> Mat3 {
    let forward = dir.normalize();
    let up = if forward.y.abs() > 0.999 {
        Vec3::Z
    } else {
        Vec3::Y
    };
    let right = forward.cross(up).normalize();
    let down = forward.cross(right);
    Mat3::from_cols(right, down, forward).transpose()
}

/// On-disk camera description used by the CLI (`--camera pose.json`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub position: [f32; 3],
    pub target: [f32; 3],
    #[serde(default = "default_fov_deg")]
    pub fov_y_deg: f32,
    #[serde(default = "default_size")]
    pub width: u32,
    #[serde(default = "default_size")]
    pub height: u32,
}

fn default_fov_deg() -> f32 {
    60.0
}

fn default_size() -> u32 {
    256
}

impl CameraPose {
    pub fn to_camera(&self) -> Camera {
        Camera::look_at(
            Vec3::from(self.position),
            Vec3::from(self.target),
            self.fov_y_deg.to_radians(),
            self.width,
            self.height,
        )
    }
}
