use glam::{Mat3, Quat, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::quality::{psnr, ImageRef};
use crate::synth::{make_shell, make_slab_pair, ShellParams, SlabParams};
use crate::test_support::{prepped, random_model, slab_fixture, SLAB_FRONT};

fn random_transform(rng: &mut ChaCha8Rng) -> InstanceTransform {
    let axis = Vec3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    );
    InstanceTransform::new(
        Vec3::new(
            rng.random_range(-4.0..4.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-4.0..4.0),
        ),
        Quat::from_axis_angle(
            axis.normalize_or(Vec3::Y),
            rng.random_range(0.0..std::f32::consts::TAU),
        ),
        rng.random_range(0.3..2.0),
    )
    .unwrap()
}

fn single(asset: Asset, model: Option<VisibilityModel>, inst: InstanceTransform) -> ComposedScene {
    let mut s = ComposedScene::new();
    let a = s.add_asset("a", asset, model).unwrap();
    s.add_instance(a, inst).unwrap();
    s
}

fn max_abs_diff(a: &[f32; VIS_INPUTS], b: &[f32; VIS_INPUTS]) -> f32 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f32::max)
}

#[test]
fn distance_correction_identity_and_scale() {
    let asset = prepped(make_shell(&ShellParams {
        n: 200,
        ..Default::default()
    }));
    let model = random_model(&asset, 1);
    let f_t = model.norm.f_train;
    // a camera whose focal length equals the training one: d_t = d_r
    let cam = Camera::look_at(
        Vec3::new(0.0, 0.0, 10.0),
        Vec3::ZERO,
        60f32.to_radians(),
        64,
        64,
    );
    assert!((cam.focal() - f_t).abs() < 1e-4);
    let view = LocalView::new(&InstanceTransform::default(), &cam, f_t, true);
    assert!((view.corrected_distance() - 10.0).abs() < 1e-5);
    let scene = single(
        asset.clone(),
        Some(model.clone()),
        InstanceTransform::default(),
    );
    let x = local_inputs(&scene.assets()[0], 7, &InstanceTransform::default(), &cam).unwrap();
    assert!((x[6] - model.norm.distance(10.0)).abs() < 1e-6);

    let half = InstanceTransform::new(Vec3::ZERO, Quat::IDENTITY, 2.0).unwrap();
    let view = LocalView::new(&half, &cam, f_t, true);
    assert!((view.corrected_distance() - 5.0).abs() < 1e-5);
}

#[test]
fn local_inputs_need_a_model() {
    let asset = prepped(make_shell(&ShellParams {
        n: 50,
        ..Default::default()
    }));
    let scene = single(asset, None, InstanceTransform::default());
    let cam = Camera::look_at(Vec3::new(0.0, 0.0, 5.0), Vec3::ZERO, 1.0, 32, 32);
    assert!(matches!(
        local_inputs(&scene.assets()[0], 0, &InstanceTransform::default(), &cam),
        Err(Error::Scene(_))
    ));
}

#[test]
fn inputs_are_rotation_equivariant() {
    let asset = prepped(make_shell(&ShellParams {
        n: 300,
        ..Default::default()
    }));
    let scene = single(
        asset.clone(),
        Some(random_model(&asset, 2)),
        InstanceTransform::default(),
    );
    let entry = &scene.assets()[0];
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let base = random_transform(&mut rng);
        let cam = Camera::look_at(
            base.translation
                + Vec3::new(rng.random_range(-6.0..6.0), 2.0, rng.random_range(5.0..9.0)),
            base.translation,
            1.0,
            96,
            96,
        );
        let r = Quat::from_axis_angle(
            Vec3::new(0.2, 1.0, -0.4).normalize(),
            rng.random_range(0.0..std::f32::consts::TAU),
        );
        // rotate instance and camera rig together about the instance center
        let turned =
            InstanceTransform::new(base.translation, r * base.rotation, base.scale).unwrap();
        let mut cam2 = cam;
        cam2.position = base.translation + r * (cam.position - base.translation);
        cam2.rotation = cam.rotation * Mat3::from_quat(r).transpose();
        for g in (0..asset.len()).step_by(17) {
            let a = local_inputs(entry, g, &base, &cam).unwrap();
            let b = local_inputs(entry, g, &turned, &cam2).unwrap();
            assert!(max_abs_diff(&a, &b) < 1e-6, "{a:?} vs {b:?}");
        }
    }
}

#[test]
fn inputs_are_fov_and_scale_invariant() {
    let asset = prepped(make_shell(&ShellParams {
        n: 300,
        ..Default::default()
    }));
    let scene = single(
        asset.clone(),
        Some(random_model(&asset, 3)),
        InstanceTransform::default(),
    );
    let entry = &scene.assets()[0];
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..50 {
        let dir = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            1.0,
        )
        .normalize();
        let d: f32 = rng.random_range(2.0..20.0);
        let g = rng.random_range(0..asset.len());
        let (fov_a, fov_b) = (rng.random_range(0.3..1.8f32), rng.random_range(0.3..1.8f32));
        let cam_a = Camera::look_at(dir * d, Vec3::ZERO, fov_a, 128, 128);
        let f_b = cam_a.with_fov_y(fov_b).focal();
        let cam_b = Camera::look_at(dir * (d * f_b / cam_a.focal()), Vec3::ZERO, fov_b, 128, 128);
        let id = InstanceTransform::default();
        let a = local_inputs(entry, g, &id, &cam_a).unwrap();
        let b = local_inputs(entry, g, &id, &cam_b).unwrap();
        assert!(max_abs_diff(&a, &b) < 1e-6);

        let s: f32 = rng.random_range(0.2..5.0);
        let scaled = InstanceTransform::new(Vec3::ZERO, Quat::IDENTITY, s).unwrap();
        let cam_s = Camera::look_at(dir * (s * d), Vec3::ZERO, fov_a, 128, 128);
        let c = local_inputs(entry, g, &scaled, &cam_s).unwrap();
        assert!(max_abs_diff(&a, &c) < 1e-6);
    }
}

#[test]
fn no_mlp_below_near_distance() {
    let asset = prepped(make_shell(&ShellParams {
        n: 2000,
        ..Default::default()
    }));
    let model = random_model(&asset, 4);
    let d_near = model.norm.d_near;
    let scene = single(asset, Some(model), InstanceTransform::default());
    let opts = ComposeOptions::default();
    // training focal length, so the corrected distance is the plain one
    let cam = Camera::look_at(
        Vec3::new(0.0, 0.0, 0.9 * d_near),
        Vec3::ZERO,
        60f32.to_radians(),
        64,
        64,
    );
    let (_, st) = render_composed(&scene, &cam, &opts).unwrap();
    assert_eq!(st.mlp_culled, 0);
    assert_eq!(st.instantiated, st.frustum_passed);
}

fn three_asset_scene(seed: u64) -> ComposedScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scene = ComposedScene::new();
    let assets = [
        make_shell(&ShellParams {
            n: 400,
            size_jitter: 0.5,
            seed,
            ..Default::default()
        }),
        make_slab_pair(&SlabParams {
            n_front: 150,
            n_back: 150,
            seed,
            ..Default::default()
        }),
        make_shell(&ShellParams {
            n: 300,
            radius: 0.5,
            thickness: 0.05,
            alpha: 0.6,
            seed: seed + 1,
            ..Default::default()
        }),
    ];
    for (k, a) in assets.into_iter().enumerate() {
        let i = scene.add_asset(format!("a{k}"), a, None).unwrap();
        for _ in 0..10 {
            scene.add_instance(i, random_transform(&mut rng)).unwrap();
        }
    }
    scene
}

#[test]
fn instanced_render_matches_flattened_bit_for_bit() {
    for seed in 0..3 {
        let scene = three_asset_scene(seed);
        let cam = Camera::look_at(
            Vec3::new(1.0, 2.5, 7.0),
            Vec3::new(0.5, 0.0, 0.0),
            55f32.to_radians(),
            96,
            80,
        );
        let opts = ComposeOptions::default();
        let (out, st) = render_composed(&scene, &cam, &opts).unwrap();
        let flat = render(&scene.flatten(), &cam, &opts.render);
        assert!(
            st.frustum_passed < scene.total_gaussians(),
            "camera should cut some instances"
        );
        assert_eq!(out.image, flat.image);
        assert_eq!(out.final_transmittance, flat.final_transmittance);
        assert_eq!(out.used_count, flat.used_count);
        assert_eq!(out.passed_count, flat.passed_count);
        assert_eq!(st.instantiated, st.frustum_passed);
    }
}

#[test]
fn strict_frustum_drops_border_splats() {
    let scene = three_asset_scene(4);
    let cam = Camera::look_at(
        Vec3::new(1.0, 2.5, 7.0),
        Vec3::new(0.5, 0.0, 0.0),
        55f32.to_radians(),
        96,
        80,
    );
    let loose = render_composed(&scene, &cam, &ComposeOptions::default())
        .unwrap()
        .1;
    let strict = ComposeOptions {
        strict_frustum: true,
        ..Default::default()
    };
    let tight = render_composed(&scene, &cam, &strict).unwrap().1;
    assert!(tight.frustum_passed < loose.frustum_passed);
}

#[test]
fn radius_clip_is_counted_before_instantiation() {
    let scene = three_asset_scene(5);
    let cam = Camera::look_at(
        Vec3::new(0.0, 4.0, 30.0),
        Vec3::ZERO,
        50f32.to_radians(),
        128,
        128,
    );
    let opts = ComposeOptions {
        render: RenderOptions {
            radius_clip: Some(0.5),
            ..Default::default()
        },
        ..Default::default()
    };
    let (_, st) = render_composed(&scene, &cam, &opts).unwrap();
    assert!(st.radius_culled > 0);
    assert_eq!(
        st.instantiated,
        st.frustum_passed - st.mlp_culled - st.radius_culled
    );
    assert!(st.used <= st.instantiated);
    assert_eq!(
        st.mem_bytes_instantiated,
        st.instantiated * Gaussian::payload_bytes(0)
    );
}

#[test]
fn layout_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let shell = prepped(make_shell(&ShellParams {
        n: 120,
        ..Default::default()
    }));
    let slab = make_slab_pair(&SlabParams {
        n_front: 30,
        n_back: 30,
        ..Default::default()
    });
    crate::ply::save_ply(&shell, dir.path().join("shell.ply")).unwrap();
    crate::ply::save_ply(&slab, dir.path().join("slab.ply")).unwrap();
    let shell = crate::ply::load_ply(dir.path().join("shell.ply")).unwrap();
    random_model(&shell, 9)
        .save(dir.path().join("shell.vismlp"))
        .unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (t0, t1) = (random_transform(&mut rng), random_transform(&mut rng));
    let layout = SceneLayout {
        assets: vec![
            AssetEntry {
                id: "shell".into(),
                ply: "shell.ply".into(),
                vismlp: Some("shell.vismlp".into()),
            },
            AssetEntry {
                id: "slab".into(),
                ply: "slab.ply".into(),
                vismlp: None,
            },
        ],
        instances: vec![
            InstanceEntry::from_transform("slab", &t1),
            InstanceEntry::from_transform("shell", &t0),
        ],
        camera: None,
    };
    let path = dir.path().join("scene.json");
    layout.save(&path).unwrap();
    let scene = ComposedScene::load(&path).unwrap();
    assert_eq!(scene.n_instances(), 2);
    assert!(scene.assets()[0].features().is_some());
    assert!(scene.assets()[1].features().is_none());
    assert_eq!(scene.assets()[1].instances[0], t1);

    let bad = SceneLayout {
        instances: vec![InstanceEntry::from_transform("nope", &t0)],
        ..layout.clone()
    };
    bad.save(&path).unwrap();
    assert!(matches!(ComposedScene::load(&path), Err(Error::Scene(_))));
    let neg = SceneLayout {
        instances: vec![InstanceEntry {
            scale: -1.0,
            ..InstanceEntry::from_transform("slab", &t0)
        }],
        ..layout
    };
    neg.save(&path).unwrap();
    assert!(ComposedScene::load(&path).is_err());
}

#[test]
fn model_for_other_asset_is_rejected() {
    let a = prepped(make_shell(&ShellParams {
        n: 100,
        ..Default::default()
    }));
    let b = prepped(make_shell(&ShellParams {
        n: 101,
        ..Default::default()
    }));
    let mut s = ComposedScene::new();
    assert!(matches!(
        s.add_asset("b", b, Some(random_model(&a, 0))),
        Err(Error::AssetMismatch { .. })
    ));
}

#[test]
fn trained_slab_model_culls_rear_sheet_head_on() {
    let fx = slab_fixture();
    let scene = single(
        fx.asset.clone(),
        Some(fx.model.clone()),
        InstanceTransform::default(),
    );
    let norm = fx.model.norm;
    // 128 px at the training fov doubles the focal length, so the corrected
    // distance is half the real one
    let d = 2.0 * (norm.d_near + 0.3 * (norm.d_far - norm.d_near));
    let cam = Camera::look_at(
        Vec3::new(0.0, 0.0, d),
        Vec3::ZERO,
        60f32.to_radians(),
        128,
        128,
    );
    let (ours, st) = render_composed(&scene, &cam, &ComposeOptions::default()).unwrap();
    let opts = ComposeOptions {
        use_mlp: false,
        ..Default::default()
    };
    let (full, base) = render_composed(&scene, &cam, &opts).unwrap();
    assert_eq!(base.frustum_passed, fx.asset.len());
    let plan = plan_frame(&scene, &cam, &ComposeOptions::default()).unwrap();
    let rear_kept = plan
        .origin
        .iter()
        .filter(|o| o.1 as usize >= SLAB_FRONT)
        .count();
    assert!(rear_kept <= 900 / 20, "{rear_kept} rear gaussians kept");
    assert!(st.mlp_culled >= 850);
    let p = psnr(&ImageRef::from_render(&full), &ImageRef::from_render(&ours)).unwrap();
    assert!(p >= 45.0, "{p}");
    assert!(st.mem_bytes_instantiated <= base.mem_bytes_instantiated);
}

#[test]
fn slab_orbit_halves_passed_count() {
    let fx = slab_fixture();
    let norm = fx.model.norm;
    // a cone of views around +z keeps the rear sheet hidden throughout
    let cfg = OrbitConfig {
        n_views: 12,
        distance: 2.0 * (norm.d_near + 0.4 * (norm.d_far - norm.d_near)),
        axis: Vec3::Z,
        elevation: 70f32.to_radians(),
        image_size: 128,
        ..Default::default()
    };
    let s = orbit_eval(&fx.asset, &fx.model, &cfg).unwrap();
    assert!(s.delta_passed_pct <= -40.0, "{s:?}");
    assert!(s.recall >= 0.98, "{s:?}");
    assert!(s.used_ours >= 0.98 * s.used_gt, "{s:?}");
}

#[test]
fn all_visible_model_changes_nothing() {
    let asset = prepped(make_shell(&ShellParams {
        n: 1500,
        ..Default::default()
    }));
    let mut model = random_model(&asset, 7);
    let p = model.vis_mlp.params_mut();
    p.fill(0.0);
    *p.last_mut().unwrap() = 20.0;
    let cfg = OrbitConfig {
        n_views: 6,
        distance: 2.0 * model.norm.d_far,
        image_size: 64,
        ..Default::default()
    };
    let s = orbit_eval(&asset, &model, &cfg).unwrap();
    assert_eq!(s.delta_passed_pct, 0.0);
    assert_eq!(s.recall, 1.0);
    assert_eq!(s.psnr, crate::quality::PSNR_CAP_DB);
    assert_eq!(s.used_ours, s.used_gt);
}
