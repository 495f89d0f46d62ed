//! Neural occlusion culling for 3D Gaussian splatting assets.
//!
//! The pipeline has three stages:
//!
//! 1. [`sampling`] renders a trained asset from many viewpoints with the
//!    tile-based software rasterizer in [`raster`] and records which Gaussians
//!    make a nonzero contribution to each image.
//! 2. [`nn`] distills those labels into a small visibility MLP plus a
//!    per-Gaussian feature encoder.
//! 3. [`scene`] renders composed scenes of instanced assets, querying the MLP
//!    after frustum culling so that occluded Gaussians are never instantiated.
//!
//! [`metrics`] provides the distance-sweep benchmark harness and [`synth`]
//! generates assets with known occlusion structure.

pub mod asset;
mod binio;
pub mod camera;
pub mod dataset;
mod error;
pub mod gaussian;
pub mod metrics;
pub mod nn;
pub mod ply;
pub mod quality;
pub mod raster;
pub mod sampling;
pub mod scene;
pub mod synth;
#[cfg(test)]
mod test_support;

pub use asset::{compute_sampling_distances, Asset, SamplingDistances};
pub use camera::Camera;
pub use dataset::VisibilityDataset;
pub use error::{Error, Result};
pub use gaussian::Gaussian;
pub use nn::{TrainConfig, VisibilityModel};

pub use raster::{render, RenderOptions, RenderOutput};
pub use sampling::{SamplerKind, SamplingConfig, TrainView};
pub use scene::{render_composed, ComposeOptions, ComposedScene, FrameStats, InstanceTransform};
