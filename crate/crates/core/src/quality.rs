//! Full-reference image quality: PSNR and SSIM on RGB float images in [0, 1].

use crate::{Error, Result};

/// Reported PSNR for identical images.
pub const PSNR_CAP_DB: f64 = 99.0;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

/// Borrowed view of a row-major interleaved RGB image.
#[derive(Debug, Clone, Copy)]
pub struct ImageRef<'a> {
    pub width: usize,
    pub height: usize,
    pub data: &'a [f32],
}

impl<'a> ImageRef<'a> {
    pub fn new(width: usize, height: usize, data: &'a [f32]) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::DimensionMismatch {
                expected: format!("{} values for {width}x{height} RGB", width * height * 3),
                got: data.len().to_string(),
            });
        }
        Ok(ImageRef {
            width,
            height,
            data,
        })
    }

    pub fn from_render(out: &'a crate::RenderOutput) -> Self {
        ImageRef {
            width: out.width as usize,
            height: out.height as usize,
            data: &out.image,
        }
    }
}

fn check_dims(a: &ImageRef, b: &ImageRef) -> Result<()> {
    if a.width != b.width || a.height != b.height || a.data.len() != b.data.len() {
        return Err(Error::DimensionMismatch {
            expected: format!("{}x{}", a.width, a.height),
            got: format!("{}x{}", b.width, b.height),
        });
    }
    Ok(())
}

pub fn mse(a: &ImageRef, b: &ImageRef) -> Result<f64> {
    check_dims(a, b)?;
    let sum: f64 = a
        .data
        .iter()
        .zip(b.data)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(sum / a.data.len().max(1) as f64)
}

/// PSNR in dB with a peak value of 1, capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &ImageRef, b: &ImageRef) -> Result<f64> {
    let m = mse(a, b)?;
    Ok(psnr_from_mse(m))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        PSNR_CAP_DB
    } else {
        (-10.0 * mse.log10()).min(PSNR_CAP_DB)
    }
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let x = i as f64 - c;
        *v = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

/// Separable "valid" filtering of a single-channel image.
fn filter_valid(
    src: &[f64],
    w: usize,
    h: usize,
    k: &[f64; SSIM_WINDOW],
) -> (Vec<f64>, usize, usize) {
    let ow = w + 1 - SSIM_WINDOW;
    let oh = h + 1 - SSIM_WINDOW;
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            tmp[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * src[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * tmp[(y + i) * ow + x]).sum();
        }
    }
    (out, ow, oh)
}

fn ssim_channel(a: &[f64], b: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> f64 {
    let prod = |x: &[f64], y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(p, q)| p * q).collect() };
    let (mu_a, ow, oh) = filter_valid(a, w, h, k);
    let (mu_b, ..) = filter_valid(b, w, h, k);
    let (e_aa, ..) = filter_valid(&prod(a, a), w, h, k);
    let (e_bb, ..) = filter_valid(&prod(b, b), w, h, k);
    let (e_ab, ..) = filter_valid(&prod(a, b), w, h, k);
    let mut sum = 0.0;
    for i in 0..ow * oh {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = e_aa[i] - ma * ma;
        let vb = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        sum += ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
            / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
    }
    sum / (ow * oh) as f64
}

/// Mean SSIM with an 11×11 Gaussian window (σ = 1.5), averaged over the
/// three channels. Images must be at least 11 pixels on each side.
pub fn ssim(a: &ImageRef, b: &ImageRef) -> Result<f64> {
    check_dims(a, b)?;
    if a.width < SSIM_WINDOW || a.height < SSIM_WINDOW {
        return Err(Error::InvalidArgument(format!(
            "ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}"
        )));
    }
    let k = gaussian_kernel();
    let n = a.width * a.height;
    let mut total = 0.0;
    for ch in 0..3 {
        let ca: Vec<f64> = (0..n).map(|i| a.data[3 * i + ch] as f64).collect();
        let cb: Vec<f64> = (0..n).map(|i| b.data[3 * i + ch] as f64).collect();
        total += ssim_channel(&ca, &cb, a.width, a.height, &k);
    }
    Ok(total / 3.0)
}

/// PSNR (dB) and SSIM of `b` against reference `a`.
pub fn compute_metrics_pair(a: &ImageRef, b: &ImageRef) -> Result<(f64, f64)> {
    Ok((psnr(a, b)?, ssim(a, b)?))
}
