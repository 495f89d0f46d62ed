//! Distance-sweep benchmark: renders a scene along a straight camera path
//! with several pipeline variants and reports quality, counts and memory.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use glam::Vec3;
use serde::{Deserialize, Serialize};

use crate::camera::Camera;
use crate::gaussian::Gaussian;
use crate::quality::{compute_metrics_pair, ImageRef};
use crate::raster::{render, RenderOptions};
use crate::scene::{render_composed, ComposeOptions, ComposedScene};
use crate::{Error, Result};

pub const CSV_HEADER: &str =
    "distance,variant,psnr,ssim,passed,instantiated,used,mem_bytes,frame_ms";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Every instance materialized and rasterized; the reference image.
    #[serde(rename = "full")]
    Full,
    /// Frustum culling and instancing only.
    #[serde(rename = "no_mlp")]
    NoMlp,
    #[serde(rename = "mlp")]
    Mlp,
    #[serde(rename = "mlp+radius_clip")]
    MlpRadiusClip,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Full,
        Variant::NoMlp,
        Variant::Mlp,
        Variant::MlpRadiusClip,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoMlp => "no_mlp",
            Variant::Mlp => "mlp",
            Variant::MlpRadiusClip => "mlp+radius_clip",
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown variant {s:?}")))
    }
}

/// Cameras at evenly spaced distances along `direction` from `target`, all
/// looking at `target`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Trajectory {
    pub n_steps: usize,
    pub d_min: f32,
    pub d_max: f32,
    pub direction: [f32; 3],
    pub target: [f32; 3],
    pub fov_y_deg: f32,
    pub width: u32,
    pub height: u32,
}

impl Default for Trajectory {
    fn default() -> Self {
        Trajectory {
            n_steps: 64,
            d_min: 4.0,
            d_max: 40.0,
            direction: [0.3, 0.4, 1.0],
            target: [0.0; 3],
            fov_y_deg: 60.0,
            width: 256,
            height: 256,
        }
    }
}

impl Trajectory {
    pub fn distances(&self) -> Vec<f32> {
        match self.n_steps {
            0 => Vec::new(),
            1 => vec![self.d_min],
            n => (0..n)
                .map(|i| self.d_min + (self.d_max - self.d_min) * i as f32 / (n - 1) as f32)
                .collect(),
        }
    }

    pub fn camera(&self, distance: f32) -> Camera {
        let dir = Vec3::from(self.direction).normalize();
        let target = Vec3::from(self.target);
        Camera::look_at(
            target + dir * distance,
            target,
            self.fov_y_deg.to_radians(),
            self.width,
            self.height,
        )
    }

    fn validate(&self) -> Result<()> {
        let ok = self.d_min > 0.0
            && self.d_max >= self.d_min
            && Vec3::from(self.direction).length() > 0.0
            && self.width > 0
            && self.height > 0;
        if !ok {
            return Err(Error::InvalidArgument("invalid sweep trajectory".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOptions {
    /// Determinant threshold for the radius-clipping variant.
    pub radius_clip: f32,
    pub render: RenderOptions,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            radius_clip: 0.5,
            render: RenderOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub distance: f64,
    pub variant: Variant,
    /// Against the `full` render at the same distance.
    pub psnr: f64,
    pub ssim: f64,
    pub passed: u64,
    pub instantiated: u64,
    pub used: u64,
    pub mem_bytes: u64,
    pub frame_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepResult {
    /// Sorted by distance, then variant.
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn variant(&self, v: Variant) -> impl Iterator<Item = &SweepRow> {
        self.rows.iter().filter(move |r| r.variant == v)
    }

    /// The same rows with timings zeroed, for reproducibility checks.
    pub fn without_timings(&self) -> SweepResult {
        SweepResult {
            rows: self
                .rows
                .iter()
                .map(|r| SweepRow {
                    frame_ms: 0.0,
                    ..r.clone()
                })
                .collect(),
        }
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::WriterBuilder::new()
            .has_headers(false)
            .from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r).map_err(csv_error)?;
        }
        let body = w
            .into_inner()
            .map_err(|e| Error::format("csv", e.to_string()))?;
        let mut out = String::with_capacity(CSV_HEADER.len() + 1 + body.len());
        out.push_str(CSV_HEADER);
        out.push('\n');
        out.push_str(std::str::from_utf8(&body).expect("csv output is utf-8"));
        Ok(out)
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(text.as_bytes());
        let header = r
            .headers()
            .map_err(csv_error)?
            .iter()
            .collect::<Vec<_>>()
            .join(",");
        if header != CSV_HEADER {
            return Err(Error::format(
                "csv",
                format!("unexpected header {header:?}"),
            ));
        }
        let rows = r
            .deserialize()
            .collect::<std::result::Result<Vec<SweepRow>, _>>()
            .map_err(csv_error)?;
        Ok(SweepResult { rows })
    }

    pub fn emit_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv()?)?;
        Ok(())
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_csv(&std::fs::read_to_string(path)?)
    }

    /// Per-variant means over all distances, in variant order.
    pub fn summary(&self) -> Vec<VariantSummary> {
        let mut out = Vec::new();
        for v in Variant::ALL {
            let rows: Vec<&SweepRow> = self.variant(v).collect();
            if rows.is_empty() {
                continue;
            }
            let n = rows.len() as f64;
            let mean = |f: &dyn Fn(&SweepRow) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / n;
            out.push(VariantSummary {
                variant: v,
                frames: rows.len(),
                psnr: mean(&|r| r.psnr),
                ssim: mean(&|r| r.ssim),
                passed: mean(&|r| r.passed as f64),
                instantiated: mean(&|r| r.instantiated as f64),
                used: mean(&|r| r.used as f64),
                mem_bytes: mean(&|r| r.mem_bytes as f64),
                frame_ms: mean(&|r| r.frame_ms),
            });
        }
        out
    }

    /// Plain-text table of [`SweepResult::summary`].
    pub fn format_summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<16} {:>6} {:>8} {:>7} {:>12} {:>12} {:>10} {:>12} {:>9}",
            "variant",
            "frames",
            "psnr",
            "ssim",
            "passed",
            "instantiated",
            "used",
            "mem_MB",
            "frame_ms"
        );
        for v in self.summary() {
            let _ = writeln!(
                s,
                "{:<16} {:>6} {:>8.2} {:>7.4} {:>12.1} {:>12.1} {:>10.1} {:>12.3} {:>9.2}",
                v.variant.name(),
                v.frames,
                v.psnr,
                v.ssim,
                v.passed,
                v.instantiated,
                v.used,
                v.mem_bytes / 1e6,
                v.frame_ms
            );
        }
        s
    }

    pub fn emit_summary(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.format_summary())?;
        Ok(())
    }
}

fn csv_error(e: csv::Error) -> Error {
    Error::format("csv", e.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariantSummary {
    pub variant: Variant,
    pub frames: usize,
    pub psnr: f64,
    pub ssim: f64,
    pub passed: f64,
    pub instantiated: f64,
    pub used: f64,
    pub mem_bytes: f64,
    pub frame_ms: f64,
}

/// Renders every variant at every trajectory distance. The `full` variant
/// is always rendered since it is the reference for PSNR and SSIM; its own
/// rows are only reported when it is listed in `variants`.
pub fn distance_sweep(
    scene: &ComposedScene,
    traj: &Trajectory,
    variants: &[Variant],
    opts: &SweepOptions,
) -> Result<SweepResult> {
    traj.validate()?;
    let mut variants = variants.to_vec();
    variants.sort();
    variants.dedup();
    let flat = scene.flatten();
    let full_mem: usize = scene
        .assets()
        .iter()
        .map(|a| a.asset.len() * a.instances.len() * Gaussian::payload_bytes(a.asset.sh_degree))
        .sum();
    let mut rows = Vec::new();
    for d in traj.distances() {
        let cam = traj.camera(d);
        let t = Instant::now();
        let full = render(&flat, &cam, &opts.render);
        let full_ms = t.elapsed().as_secs_f64() * 1e3;
        let reference = ImageRef::from_render(&full);
        for &v in &variants {
            let row = if v == Variant::Full {
                let (psnr, ssim) = compute_metrics_pair(&reference, &reference)?;
                SweepRow {
                    distance: d as f64,
                    variant: v,
                    psnr,
                    ssim,
                    passed: full.passed_count as u64,
                    instantiated: flat.len() as u64,
                    used: full.used_count as u64,
                    mem_bytes: full_mem as u64,
                    frame_ms: full_ms,
                }
            } else {
                let co = ComposeOptions {
                    use_mlp: v != Variant::NoMlp,
                    render: RenderOptions {
                        radius_clip: (v == Variant::MlpRadiusClip).then_some(opts.radius_clip),
                        ..opts.render.clone()
                    },
                    ..Default::default()
                };
                let (out, st) = render_composed(scene, &cam, &co)?;
                let (psnr, ssim) = compute_metrics_pair(&reference, &ImageRef::from_render(&out))?;
                SweepRow {
                    distance: d as f64,
                    variant: v,
                    psnr,
                    ssim,
                    passed: st.passed as u64,
                    instantiated: st.instantiated as u64,
                    used: st.used as u64,
                    mem_bytes: st.mem_bytes_instantiated as u64,
                    frame_ms: st.preprocess_ms + st.mlp_ms + st.render_ms,
                }
            };
            rows.push(row);
        }
    }
    Ok(SweepResult { rows })
}
