"""Exercise the Python bindings end to end on a tiny synthetic asset.

Build first, then put the extension on the path:

    cargo build --release -p splatcull-py
    cp target/release/libsplatcull.so python/splatcull.so
    python3 python/smoke_test.py

`maturin develop -m crates/py/Cargo.toml` works as well.
"""

import os
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import splatcull as sc


def main():
    assert sc.grad_check(seed=1, batch=32) < 1e-4

    asset = sc.Asset.shell(n=1200, seed=3).prep()
    assert len(asset) == 1200
    near, far = asset.distances
    assert 0 < near < far

    cam = sc.Camera((0.0, 0.5, 4.0), width=48, height=48)
    frame = sc.render(asset, cam, record_contributions=True)
    assert len(frame.image) == 48 * 48 * 3
    assert frame.used_count > 0
    psnr, ssim = frame.compare(frame)
    assert ssim > 0.999

    data = sc.extract(asset, n_directions=16, n_distances=2, n_aux_views=1, image_size=40, seed=3)
    assert 0.0 < data.positive_fraction < 1.0
    model = sc.train(data, asset, iterations=100, batch_size=1024, threshold=0.2, seed=3)
    assert abs(model.threshold - 0.2) < 1e-6

    with tempfile.TemporaryDirectory() as d:
        asset.save(os.path.join(d, "a.ply"))
        model.save(os.path.join(d, "a.vismlp"))
        again = sc.Model.load(os.path.join(d, "a.vismlp"))
        assert again.final_loss == model.final_loss
        assert sc.Asset.load(os.path.join(d, "a.ply")).content_hash == asset.content_hash
        try:
            sc.Asset.load(os.path.join(d, "missing.ply"))
        except OSError:
            pass
        else:
            raise AssertionError("missing file should raise OSError")

    scene = sc.Scene()
    a = scene.add_asset("shell", asset, model)
    scene.add_instance(a, translation=(-1.2, 0.0, 0.0))
    scene.add_instance(a, translation=(1.2, 0.0, 0.0), scale=0.5)
    assert scene.n_instances == 2
    _, stats = scene.render(cam, use_mlp=True)
    _, full = scene.render(cam, use_mlp=False)
    assert stats["instantiated"] <= full["instantiated"] == 2400

    orbit = sc.orbit_stats(asset, model, distance=4.0, n_views=4, image_size=40)
    assert 0.0 <= orbit["recall"] <= 1.0
    print("python smoke test ok:", {k: orbit[k] for k in ("recall", "n_views")})


if __name__ == "__main__":
    main()
