//! Fixtures shared by unit tests across modules.

use std::sync::OnceLock;

use crate::asset::Asset;
use crate::dataset::VisibilityDataset;
use crate::nn::{train, Normalization, TrainConfig, VisibilityModel, DEFAULT_HIDDEN};
use crate::sampling::SamplingConfig;
use crate::synth::{make_slab_pair, SlabParams};

/// Small, fast sampling setup: 64 px training images.
pub fn train_cfg() -> SamplingConfig {
    SamplingConfig {
        n_directions: 64,
        n_distances: 4,
        n_aux_views: 2,
        image_size: 64,
        seed: 1,
        ..Default::default()
    }
}

pub fn prepped(a: Asset) -> Asset {
    a.with_sampling_distances(train_cfg().diagonal_fov(), 0.9, 0.05)
        .unwrap()
}

pub fn random_model(asset: &Asset, seed: u64) -> VisibilityModel {
    let d = asset.distances().unwrap();
    let norm = Normalization {
        mean_scale: asset.bound_radius,
        d_near: d.near,
        d_far: d.far,
        f_train: train_cfg().focal(),
    };
    VisibilityModel::new_random(asset.content_hash(), norm, 0.5, &DEFAULT_HIDDEN, seed).unwrap()
}

pub struct SlabFixture {
    pub asset: Asset,
    pub model: VisibilityModel,
}

pub const SLAB_FRONT: usize = 900;

/// Slab pair with a visibility model trained on it, built once per test
/// binary.
pub fn slab_fixture() -> &'static SlabFixture {
    static CELL: OnceLock<SlabFixture> = OnceLock::new();
    CELL.get_or_init(|| {
        let asset = prepped(make_slab_pair(&SlabParams {
            n_front: SLAB_FRONT,
            n_back: 900,
            ..Default::default()
        }));
        let ds = VisibilityDataset::extract(&asset, &train_cfg()).unwrap();
        let cfg = TrainConfig {
            iterations: 1500,
            batch_size: 2048,
            lr_init: 1e-2,
            lr_final: 1e-3,
            seed: 2,
            ..Default::default()
        };
        let model = train(&ds, &asset, &cfg).unwrap();
        SlabFixture { asset, model }
    })
}
