#!/usr/bin/env python3
"""Smoke test for the meshpose_py extension module.

Locates the built cdylib under target/, copies it next to this script under
an importable name, and exercises the bound API end to end.
"""

import math
import pathlib
import shutil
import sys

HERE = pathlib.Path(__file__).resolve().parent
ROOT = HERE.parent


def locate_extension():
    candidates = []
    for profile in ("release", "debug"):
        for name in ("libmeshpose_py.so", "meshpose_py.dll", "libmeshpose_py.dylib"):
            p = ROOT / "target" / profile / name
            if p.exists():
                candidates.append(p)
    if not candidates:
        sys.exit("no built extension found; run `cargo build -p meshpose-py` first")
    src = max(candidates, key=lambda p: p.stat().st_mtime)
    dst = HERE / "meshpose_py.so"
    shutil.copyfile(src, dst)
    return dst


def approx(a, b, tol=1e-9):
    return abs(a - b) <= tol


def main():
    locate_extension()
    sys.path.insert(0, str(HERE))
    import meshpose_py as mp

    # Rotation round trip.
    omega = [0.1, -0.2, 0.3]
    r = mp.rotation_from_axis_angle(omega)
    back = mp.axis_angle_from_rotation(r)
    assert all(approx(a, b) for a, b in zip(back, omega)), (back, omega)
    assert mp.rotation_error_deg(r, r) < 1e-6

    # Row-vector convention: quarter turn about z maps +x to +y.
    rz = mp.rotation_from_axis_angle([0.0, 0.0, math.pi / 2])
    px = [sum(v * rz[i][j] for i, v in enumerate([1.0, 0.0, 0.0])) for j in range(3)]
    assert approx(px[0], 0.0, 1e-12) and approx(px[1], 1.0, 1e-12), px

    # Projection of a centered point lands on the principal point.
    k = (1000.0, 1000.0, 400.0, 400.0)
    ident = mp.rotation_from_axis_angle([0.0, 0.0, 0.0])
    pix = mp.project_world([[0.0, 0.0, 0.0]], ident, [0.0, 0.0, 0.6], k)
    assert pix == [[400.0, 400.0]], pix

    # PnP recovers an exact synthetic pose.
    verts = [
        [x, y, z]
        for x in (-0.08, 0.0, 0.08)
        for y in (-0.06, 0.01, 0.07)
        for z in (-0.04, 0.03)
    ]
    r_true = mp.rotation_from_axis_angle([0.2, -0.3, 0.1])
    t_true = [0.01, -0.02, 0.55]
    lms = mp.project_world(verts, r_true, t_true, k)
    sol = mp.solve_pnp(verts, lms, k)
    assert sol["rms_px"] < 1e-8, sol["rms_px"]
    assert sol["converged"]
    assert mp.rotation_error_deg(sol["rotation"], r_true) < 1e-6
    assert all(approx(a, b, 1e-7) for a, b in zip(sol["translation"], t_true))

    r0, t0 = mp.solve_pnp_dlt(verts, lms, k)
    assert mp.rotation_error_deg(r0, r_true) < 1e-6

    # Losses vanish at the ground truth and their gradients have unit-scale
    # entries one step away from it.
    tris = [[0, 1, 2], [3, 4, 5], [6, 7, 8]]
    zero = mp.total_loss(verts, verts, lms, lms, tris)
    assert zero["l_total"] == 0.0, zero
    shifted = [[x + 0.01, y, z] for x, y, z in verts]
    moved = mp.total_loss(shifted, verts, lms, lms, tris)
    assert approx(moved["l_vert"], 0.01)
    assert moved["l_edge"] < 1e-12  # translation preserves edge lengths
    assert len(moved["grad_vertices"]) == len(verts)

    # Metric is zero for a perfect prediction, positive otherwise.
    e = mp.instance_error(verts, verts, r_true, t_true, r_true, t_true)
    assert e["l_error_mm"] == 0.0, e
    e2 = mp.instance_error(verts, shifted, r_true, t_true, r_true, t_true)
    assert e2["l_error_mm"] > 0.0

    # Invalid input raises ValueError rather than crashing.
    try:
        mp.axis_angle_from_rotation([[2.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    except ValueError:
        pass
    else:
        sys.exit("expected ValueError for a non-rotation matrix")

    print("smoke test OK")


if __name__ == "__main__":
    main()
