use glam::{Mat3, Quat, Vec3};

pub const SH_C0: f32 = 0.282_094_8;
const SH_C1: f32 = 0.488_602_5;
const SH_C2: [f32; 5] = [
    1.092_548_4,
    -1.092_548_4,
    0.315_391_57,
    -1.092_548_4,
    0.546_274_2,
];
const SH_C3: [f32; 7] = [
    -0.590_043_6,
    2.890_611_4,
    -0.457_045_8,
    0.373_176_34,
    -0.457_045_8,
    1.445_305_7,
    -0.590_043_6,
];

pub const MAX_SH_DEGREE: u32 = 3;

/// Number of SH coefficients per color channel for a given degree.
pub const fn sh_coeff_count(degree: u32) -> usize {
    ((degree + 1) * (degree + 1)) as usize
}

pub fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

pub fn logit(p: f32) -> f32 {
    (p / (1.0 - p)).ln()
}

/// One splat primitive in the standard 3DGS parameterization.
///
/// Opacity and scale are stored pre-activation (logit and log) so that PLY
/// round-trips are bit-exact; activations happen at render time.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    pub mean: Vec3,
    pub log_scale: Vec3,
    pub rotation: Quat,
    pub opacity_logit: f32,
    /// SH coefficients, one RGB triple per basis function; `sh[0]` is DC.
    pub sh: Vec<Vec3>,
}

impl Gaussian {
    /// Base opacity in (0, 1).
    pub fn opacity(&self) -> f32 {
        sigmoid(self.opacity_logit)
    }

    pub fn scale(&self) -> Vec3 {
        self.log_scale.exp()
    }

    pub fn max_scale(&self) -> f32 {
        self.scale().max_element()
    }

    /// Color for a zero-degree evaluation.
    pub fn dc_color(&self) -> Vec3 {
        self.sh[0] * SH_C0 + Vec3::splat(0.5)
    }

    /// World-space covariance `R S Sᵀ Rᵀ`.
    pub fn covariance(&self) -> Mat3 {
        let r = Mat3::from_quat(self.rotation.normalize());
        let m = r * Mat3::from_diagonal(self.scale());
        m * m.transpose()
    }

    pub fn is_finite(&self) -> bool {
        self.mean.is_finite()
            && self.log_scale.is_finite()
            && self.rotation.is_finite()
            && self.opacity_logit.is_finite()
            && self.sh.iter().all(|c| c.is_finite())
    }

    /// View-dependent color for a unit direction from the camera to the
    /// Gaussian, evaluating SH bands up to `degree` (clamped to what is stored).
    pub fn color(&self, dir: Vec3, degree: u32) -> Vec3 {
        let stored = (self.sh.len() as f32).sqrt() as u32 - 1;
        let degree = degree.min(stored);
        let sh = &self.sh;
        let mut c = SH_C0 * sh[0];
        if degree > 0 {
            let (x, y, z) = (dir.x, dir.y, dir.z);
            c += -SH_C1 * y * sh[1] + SH_C1 * z * sh[2] - SH_C1 * x * sh[3];
            if degree > 1 {
                let (xx, yy, zz) = (x * x, y * y, z * z);
                let (xy, yz, xz) = (x * y, y * z, x * z);
                c += SH_C2[0] * xy * sh[4]
                    + SH_C2[1] * yz * sh[5]
                    + SH_C2[2] * (2.0 * zz - xx - yy) * sh[6]
                    + SH_C2[3] * xz * sh[7]
                    + SH_C2[4] * (xx - yy) * sh[8];
                if degree > 2 {
                    c += SH_C3[0] * y * (3.0 * xx - yy) * sh[9]
                        + SH_C3[1] * xy * z * sh[10]
                        + SH_C3[2] * y * (4.0 * zz - xx - yy) * sh[11]
                        + SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy) * sh[12]
                        + SH_C3[4] * x * (4.0 * zz - xx - yy) * sh[13]
                        + SH_C3[5] * z * (xx - yy) * sh[14]
                        + SH_C3[6] * x * (xx - 3.0 * yy) * sh[15];
                }
            }
        }
        (c + Vec3::splat(0.5)).max(Vec3::ZERO)
    }

    /// Size in bytes of this Gaussian's parameters once instantiated as f32s.
    pub fn payload_bytes(sh_degree: u32) -> usize {
        (3 + 3 + 4 + 1 + 3 * sh_coeff_count(sh_degree)) * std::mem::size_of::<f32>()
    }
}
