"""Smoke test for the pyerpdepth extension.

Build and install first:

    pip install maturin
    maturin build --release -m crates/python/Cargo.toml -o dist
    pip install dist/pyerpdepth-*.whl
"""

import json
import math
import os
import sys
import tempfile

import numpy as np

import pyerpdepth as ed


def check(cond, what):
    if not cond:
        print(f"FAIL {what}")
        sys.exit(1)
    print(f"ok   {what}")


def main():
    h, w = 16, 32

    theta, phi = ed.pixel_to_angles(3.0, 5.0, h, w)
    u, v = ed.angles_to_pixel(theta, phi, h, w)
    check(abs(u - 3.0) < 1e-9 and abs(v - 5.0) < 1e-9, "pixel/angle round trip")
    x, y, z = ed.angles_to_vector(0.3, -1.2, 2.5)
    t2, p2, d2 = ed.vector_to_angles(x, y, z)
    check(max(abs(t2 - 0.3), abs(p2 + 1.2), abs(d2 - 2.5)) < 1e-12, "vector round trip")

    weights = np.array(ed.latitude_weights(4))
    expected = np.cos((0.5 - (np.arange(4) + 0.5) / 4) * math.pi)
    check(np.allclose(weights, expected, atol=1e-15), "latitude weights")

    rng = np.random.default_rng(0)
    img = rng.random((h, w, 3))
    depth = rng.uniform(1.0, 5.0, (h, w))
    warped, valid = ed.warp_image(img, depth, ed.Pose.identity())
    check(valid.all() and np.array_equal(warped, img), "identity warp")
    yawed, _ = ed.warp_image(img, depth, ed.Pose.yaw(2 * math.pi * 3 / w))
    check(np.allclose(yawed, np.roll(img, -3, axis=1), atol=1e-9), "yaw warp is a column roll")

    check(float(ed.photometric_error(img, img).max()) < 1e-12, "photometric error of identical images")
    check(ed.smoothness_loss(np.ones((h, w)), img) == 0.0, "smoothness of constant disparity")
    check(abs(ed.sigmoid_to_depth(1.0) - 0.1) < 1e-12, "sigmoid to depth")
    try:
        ed.sigmoid_to_depth(1.5)
        check(False, "out-of-range sigmoid raises")
    except ed.ErpDepthError:
        check(True, "out-of-range sigmoid raises")

    params = ed.DaumParams.seeded(4, 2, 7)
    feats = rng.standard_normal((4, 3, 5))
    out = ed.daum_forward(feats, params)
    check(out.shape == (4, 6, 10), "upsampling block shape")
    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "block.safetensors")
        params.save(path)
        loaded = ed.DaumParams.load(path)
        check(np.allclose(ed.daum_forward(feats, loaded), out, atol=1e-5), "float32 parameter save/load")
        loaded.save(path)
        again = ed.DaumParams.load(path)
        check(loaded.groups() == again.groups(), "second save/load is exact")

    gt = np.full((5, 10), 4.0)
    m = ed.compute_metrics(np.full((5, 10), 8.0), gt)
    check(abs(m["abs_rel"] - 1.0) < 1e-12 and abs(m["rmse_log"] - math.log(2)) < 1e-12,
          "metrics closed forms")
    m = ed.compute_metrics(np.full((5, 10), 8.0), gt, median_scale=True)
    check(m["abs_rel"] < 1e-12, "median scaling")

    smooth = np.zeros((64, 128, 3))
    for c in range(3):
        smooth[..., c] = 0.5 + 0.3 * np.sin(np.linspace(0, 2 * math.pi, 128))[None, :]
    faces = ed.erp_to_cube(smooth, 64)
    back = ed.cube_to_erp(faces, 64)
    check(len(faces) == 6 and ed.psnr(smooth, back) > 40.0, "cubemap round trip")

    rel = ed.Pose(translation=(0.1, 0.0, 0.0))
    scene = ed.render_pair(16, rel)
    init = np.full(scene["depth"].shape, 2.0)
    report, refined = ed.refine(
        scene["target"], [scene["source"]], [rel], scene["depth"], init,
        eval_mask=scene["textured"],
        config=json.dumps({"iterations": 10, "scales": [0, 1]}),
    )
    losses = report["losses"]
    check(len(losses) == 11 and all(b <= a for a, b in zip(losses, losses[1:])),
          "refinement loss is monotone")
    check(report["final_metrics"]["abs_rel"] < report["initial_metrics"]["abs_rel"],
          "refinement improves depth")
    check(refined.shape == init.shape, "refined depth shape")

    print("all smoke checks passed")


if __name__ == "__main__":
    main()
