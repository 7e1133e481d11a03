#!/usr/bin/env python3
"""Compare the compiled hot kernels against the numpy fallback.

Both backends are imported directly (bypassing the import-time selection in
``gazemanip.kernels``), checked for bit-identical outputs on every workload,
then timed. Workloads mirror the real call sites: full-frame depth scans at
step 1 and 4 for gaze reprojection, and primitive ray-casts at the bundled
camera resolutions for scene rendering.

Usage:
    python3 benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import time

import numpy as np

from gazemanip.geometry import CameraIntrinsics, DepthImage, RigidTransform
from gazemanip.kernels import _core, _pure
from gazemanip.scenarios import build
from gazemanip.scene import _KIND_CODE


def _timeit(fn, repeat):
    """Best-of-``repeat`` wall time in seconds."""
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def _reproject_workloads():
    rng = np.random.default_rng(7)
    for h, w in ((240, 320), (480, 640)):
        k = CameraIntrinsics(fx=0.9 * w, fy=0.9 * w, cx=w / 2, cy=h / 2,
                             width=w, height=h)
        base = 0.8 + 0.3 * rng.random((h, w))
        base[rng.random((h, w)) < 0.05] = 0.0  # dropout holes
        depth = DepthImage.from_meters(base)
        shift = RigidTransform(np.eye(3), np.array([0.03, -0.01, 0.0]))
        t34 = np.ascontiguousarray(shift.as_matrix()[:3, :])
        args = (depth.data, k.fx, k.fy, k.cx, k.cy, t34,
                k.fx, k.fy, k.cx, k.cy, w * 0.4, h * 0.6)
        for step in (1, 4):
            yield f"reproject_scan {w}x{h} step={step}", "reproject_scan", args + (step,)


def _raycast_inputs(scn, cam):
    # same prep as scene.render, inlined so both backends get one frozen input set
    k = cam.intrinsics
    us = (np.arange(k.width, dtype=np.float64) - k.cx) / k.fx
    vs = (np.arange(k.height, dtype=np.float64) - k.cy) / k.fy
    dy, dx = np.meshgrid(vs, us, indexing="ij")
    r_wc = np.array(cam.pose.rotation)
    o_w = np.array(cam.pose.translation)
    n = len(scn.objects)
    kinds = np.zeros(n, dtype=np.int32)
    params = np.zeros((n, 3))
    m_cl = np.zeros((n, 3, 3))
    o_l = np.zeros((n, 3))
    for i, obj in enumerate(scn.objects):
        kinds[i] = _KIND_CODE[obj.kind]
        params[i] = obj.kernel_params()
        r_lw = obj.pose.rotation.T
        m_cl[i] = r_lw @ r_wc
        o_l[i] = r_lw @ (o_w - obj.pose.translation)
    xmin, xmax, ymin, ymax = scn.table_bounds
    table = np.array([1.0, scn.table_z, xmin, xmax, ymin, ymax])
    return (dx, dy, o_w, r_wc, kinds, params,
            np.ascontiguousarray(m_cl), np.ascontiguousarray(o_l), table)


def _raycast_workloads():
    for name in ("e2e-multi", "plan-microwave"):
        scn = build(name)
        cam = scn.cameras[0]
        k = cam.intrinsics
        label = f"raycast {name} ({len(scn.objects)} objects, {k.width}x{k.height})"
        yield label, "raycast", _raycast_inputs(scn, cam)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5,
                    help="timing repetitions per workload (best is kept)")
    args = ap.parse_args()

    rows = []
    for label, fn_name, fn_args in (*_reproject_workloads(), *_raycast_workloads()):
        core_fn = getattr(_core, fn_name)
        pure_fn = getattr(_pure, fn_name)

        out_c = core_fn(*fn_args)
        out_p = pure_fn(*fn_args)
        flat_c = np.concatenate([np.ravel(np.asarray(o, dtype=np.float64)) for o in out_c])
        flat_p = np.concatenate([np.ravel(np.asarray(o, dtype=np.float64)) for o in out_p])
        if not np.array_equal(flat_c, flat_p):
            raise SystemExit(f"backend mismatch on {label}: outputs are not bit-identical")

        t_core = _timeit(lambda: core_fn(*fn_args), args.repeat)
        t_pure = _timeit(lambda: pure_fn(*fn_args), args.repeat)
        rows.append((label, t_core, t_pure))

    width = max(len(r[0]) for r in rows)
    print(f"{'workload':<{width}}  {'compiled':>10}  {'numpy':>10}  {'speedup':>8}")
    for label, t_core, t_pure in rows:
        print(f"{label:<{width}}  {t_core * 1e3:>8.2f}ms  {t_pure * 1e3:>8.2f}ms"
              f"  {t_pure / t_core:>7.1f}x")
    print(f"\nall outputs bit-identical across backends ({args.repeat} repeats, best kept)")


if __name__ == "__main__":
    main()
