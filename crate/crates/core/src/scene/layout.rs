//! JSON scene layout: assets by id, instances as similarity transforms.
//!
//! ```json
//! {
//!   "assets": [{"id": "chair", "ply": "chair.ply", "vismlp": "chair.vismlp"}],
//!   "instances": [{"asset_id": "chair", "translation": [1, 0, 0],
//!                  "rotation_quat": [1, 0, 0, 0], "scale": 2.0}],
//!   "camera": {"position": [0, 1, 6], "target": [0, 0, 0]}
//! }
//! ```
//!
//! `rotation_quat` is `[w, x, y, z]`. Paths are relative to the layout file.

use std::path::{Path, PathBuf};

use glam::{Quat, Vec3};
use serde::{Deserialize, Serialize};

use super::InstanceTransform;
use crate::camera::CameraPose;
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssetEntry {
    pub id: String,
    pub ply: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vismlp: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceEntry {
    pub asset_id: String,
    #[serde(default)]
    pub translation: [f32; 3],
    #[serde(default = "identity_wxyz")]
    pub rotation_quat: [f32; 4],
    #[serde(default = "unit_scale")]
    pub scale: f32,
}

fn identity_wxyz() -> [f32; 4] {
    [1.0, 0.0, 0.0, 0.0]
}

fn unit_scale() -> f32 {
    1.0
}

impl InstanceEntry {
    pub fn transform(&self) -> Result<InstanceTransform> {
        let [w, x, y, z] = self.rotation_quat;
        InstanceTransform::new(
            Vec3::from(self.translation),
            Quat::from_xyzw(x, y, z, w),
            self.scale,
        )
    }

    pub fn from_transform(asset_id: impl Into<String>, t: &InstanceTransform) -> Self {
        let q = t.rotation;
        InstanceEntry {
            asset_id: asset_id.into(),
            translation: t.translation.to_array(),
            rotation_quat: [q.w, q.x, q.y, q.z],
            scale: t.scale,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneLayout {
    pub assets: Vec<AssetEntry>,
    #[serde(default)]
    pub instances: Vec<InstanceEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub camera: Option<CameraPose>,
}

impl SceneLayout {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}
