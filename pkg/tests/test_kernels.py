"""Hot kernels against brute-force scalar oracles, plus backend parity.

The oracles below are written independently of the kernel code on purpose:
plain per-pixel Python loops with textbook formulas. Do not refactor them
to share code with the package.
"""

import math

import numpy as np
import pytest

from gazemanip.kernels import _pure

try:
    from gazemanip.kernels import _core
except ImportError:
    _core = None


def _scan_oracle(depth_mm, k_d, t44, k_r, gaze, step):
    """Exhaustive reprojection scan; returns (found, u, v) of the winner."""
    h, w = depth_mm.shape
    best = None
    best_d = math.inf
    for v in range(0, h, step):
        for u in range(0, w, step):
            d = int(depth_mm[v, u])
            if d == 0:
                continue
            z = d * 0.001
            x = (u - k_d["cx"]) * z / k_d["fx"]
            y = (v - k_d["cy"]) * z / k_d["fy"]
            p = t44 @ np.array([x, y, z, 1.0])
            if p[2] <= 0:
                continue
            ur = p[0] * k_r["fx"] / p[2] + k_r["cx"]
            vr = p[1] * k_r["fy"] / p[2] + k_r["cy"]
            dist = (ur - gaze[0]) ** 2 + (vr - gaze[1]) ** 2
            if dist < best_d:
                best_d = dist
                best = (u, v)
    if best is None:
        return (0, None, None)
    return (1, best[0], best[1])


def _make_case(rng, h=24, w=32):
    depth = rng.integers(0, 1500, size=(h, w)).astype(np.uint16)
    depth[depth < 300] = 0  # sprinkle invalid pixels
    k_d = {"fx": 210.0, "fy": 205.0, "cx": w / 2, "cy": h / 2}
    k_r = {"fx": 190.0, "fy": 195.0, "cx": w / 2 - 1, "cy": h / 2 + 1}
    from conftest import random_rotation

    t44 = np.eye(4)
    t44[:3, :3] = random_rotation(rng)
    t44[:3, 3] = rng.normal(0, 0.05, size=3)
    gaze = (rng.uniform(0, w), rng.uniform(0, h))
    return depth, k_d, t44, k_r, gaze


class TestReprojectScan:
    @pytest.mark.parametrize("seed", range(8))
    @pytest.mark.parametrize("step", [1, 3])
    def test_matches_exhaustive_oracle(self, seed, step):
        rng = np.random.default_rng(seed)
        depth, k_d, t44, k_r, gaze = _make_case(rng)
        got = _pure.reproject_scan(
            depth, k_d["fx"], k_d["fy"], k_d["cx"], k_d["cy"],
            np.ascontiguousarray(t44[:3, :]),
            k_r["fx"], k_r["fy"], k_r["cx"], k_r["cy"],
            gaze[0], gaze[1], step)
        want = _scan_oracle(depth, k_d, t44, k_r, gaze, step)
        assert got[0] == want[0]
        if want[0]:
            assert (got[1], got[2]) == (want[1], want[2])

    def test_tie_breaks_to_first_in_row_major_order(self):
        # two pixels with identical depth symmetric about the gaze point
        depth = np.zeros((5, 5), dtype=np.uint16)
        depth[2, 1] = 800
        depth[2, 3] = 800
        got = _pure.reproject_scan(depth, 100.0, 100.0, 2.0, 2.0,
                                   np.ascontiguousarray(np.eye(4)[:3, :]),
                                   100.0, 100.0, 2.0, 2.0, 2.0, 2.0, 1)
        assert (got[1], got[2]) == (1.0, 2.0)

    def test_no_valid_candidate(self):
        depth = np.zeros((4, 4), dtype=np.uint16)
        got = _pure.reproject_scan(depth, 100.0, 100.0, 2.0, 2.0,
                                   np.ascontiguousarray(np.eye(4)[:3, :]),
                                   100.0, 100.0, 2.0, 2.0, 1.0, 1.0, 1)
        assert got[0] == 0

    def test_behind_camera_candidates_skipped(self):
        # transform pushes every point behind the target camera
        t = np.eye(4)
        t[2, 3] = -10.0
        depth = np.full((4, 4), 500, dtype=np.uint16)
        got = _pure.reproject_scan(depth, 100.0, 100.0, 2.0, 2.0,
                                   np.ascontiguousarray(t[:3, :]),
                                   100.0, 100.0, 2.0, 2.0, 1.0, 1.0, 1)
        assert got[0] == 0


def _ray_box(o, d, he):
    tmin, tmax = -math.inf, math.inf
    for i in range(3):
        if abs(d[i]) < 1e-12:
            if abs(o[i]) > he[i]:
                return math.inf
            continue
        t1 = (-he[i] - o[i]) / d[i]
        t2 = (he[i] - o[i]) / d[i]
        tmin = max(tmin, min(t1, t2))
        tmax = min(tmax, max(t1, t2))
    if tmax < tmin:
        return math.inf
    t = tmin if tmin > 1e-12 else tmax
    return t if t > 1e-12 else math.inf


def _ray_sphere(o, d, r):
    a = d @ d
    b = 2.0 * (o @ d)
    c = o @ o - r * r
    disc = b * b - 4 * a * c
    if disc < 0:
        return math.inf
    sq = math.sqrt(disc)
    for t in ((-b - sq) / (2 * a), (-b + sq) / (2 * a)):
        if t > 1e-12:
            return t
    return math.inf


def _ray_cylinder(o, d, r, hh):
    best = math.inf
    a = d[0] * d[0] + d[1] * d[1]
    if a > 1e-12:
        b = 2.0 * (o[0] * d[0] + o[1] * d[1])
        c = o[0] * o[0] + o[1] * o[1] - r * r
        disc = b * b - 4 * a * c
        if disc >= 0:
            sq = math.sqrt(disc)
            for t in ((-b - sq) / (2 * a), (-b + sq) / (2 * a)):
                if 1e-12 < t < best and abs(o[2] + t * d[2]) <= hh:
                    best = t
    if abs(d[2]) > 1e-12:
        for zc in (-hh, hh):
            t = (zc - o[2]) / d[2]
            if 1e-12 < t < best:
                x, y = o[0] + t * d[0], o[1] + t * d[1]
                if x * x + y * y <= r * r:
                    best = t
    return best


def _scene_arrays():
    from conftest import two_camera_rig

    kinds = np.array([0, 1, 2], dtype=np.int32)
    params = np.array([[0.03, 0.035, 0.04], [0.03, 0.06, 0.0], [0.035, 0.0, 0.0]])
    centers = np.array([[0.5, 0.0, 0.04], [0.55, 0.18, 0.06], [0.4, -0.15, 0.035]])
    rots = [np.eye(3) for _ in centers]
    cam = two_camera_rig()[0]
    r_wc = np.array(cam.pose.rotation)
    o_w = np.array(cam.pose.translation)
    m_cl = np.stack([r.T @ r_wc for r in rots])
    o_l = np.stack([r.T @ (o_w - c) for r, c in zip(rots, centers)])
    table = np.array([1.0, 0.0, 0.0, 1.2, -0.8, 0.8])
    return kinds, params, centers, rots, r_wc, o_w, m_cl, o_l, table


class TestRaycast:
    def test_matches_scalar_oracle(self):
        kinds, params, centers, rots, r_wc, o_w, m_cl, o_l, table = _scene_arrays()
        h, w = 30, 40
        fx = fy = 40.0
        cx, cy = w / 2, h / 2
        us = (np.arange(w) - cx) / fx
        vs = (np.arange(h) - cy) / fy
        dy, dx = np.meshgrid(vs, us, indexing="ij")
        t_k, id_k = _pure.raycast(dx, dy, o_w, r_wc, kinds, params, m_cl, o_l, table)

        for v in range(h):
            for u in range(w):
                d_cam = np.array([dx[v, u], dy[v, u], 1.0])
                d_w = r_wc @ d_cam
                best_t, best_i = math.inf, -1
                for i in range(3):
                    o_loc = rots[i].T @ (o_w - centers[i])
                    d_loc = rots[i].T @ d_w
                    if kinds[i] == 0:
                        t = _ray_box(o_loc, d_loc, params[i])
                    elif kinds[i] == 1:
                        t = _ray_cylinder(o_loc, d_loc, params[i][0], params[i][1])
                    else:
                        t = _ray_sphere(o_loc, d_loc, params[i][0])
                    if t < best_t:
                        best_t, best_i = t, i + 1
                if abs(d_w[2]) > 1e-12:
                    t = (0.0 - o_w[2]) / d_w[2]
                    px, py = o_w[0] + t * d_w[0], o_w[1] + t * d_w[1]
                    if t > 1e-12 and 0.0 <= px <= 1.2 and -0.8 <= py <= 0.8 and t < best_t:
                        best_t, best_i = t, 0
                assert id_k[v, u] == best_i, (u, v)
                if best_i >= 0:
                    assert abs(t_k[v, u] - best_t) < 1e-9, (u, v)

    def test_nearer_object_wins(self):
        # two spheres on one ray; the nearer one must own the pixel
        kinds = np.array([2, 2], dtype=np.int32)
        params = np.array([[0.1, 0.0, 0.0], [0.1, 0.0, 0.0]])
        r_wc = np.eye(3)
        o_w = np.zeros(3)
        centers = np.array([[0.0, 0.0, 2.0], [0.0, 0.0, 1.0]])
        m_cl = np.stack([np.eye(3), np.eye(3)])
        o_l = np.stack([o_w - c for c in centers])
        table = np.zeros(6)
        dx = np.zeros((1, 1))
        dy = np.zeros((1, 1))
        t, ids = _pure.raycast(dx, dy, o_w, r_wc, kinds, params, m_cl, o_l, table)
        assert ids[0, 0] == 2
        np.testing.assert_allclose(t[0, 0], 0.9, atol=1e-12)


@pytest.mark.skipif(_core is None, reason="compiled extension not built")
class TestBackendParity:
    """The compiled and numpy kernels must agree bit for bit."""

    def test_reproject_scan_parity(self):
        rng = np.random.default_rng(11)
        for seed in range(6):
            depth, k_d, t44, k_r, gaze = _make_case(np.random.default_rng(seed), h=48, w=64)
            args = (depth, k_d["fx"], k_d["fy"], k_d["cx"], k_d["cy"],
                    np.ascontiguousarray(t44[:3, :]),
                    k_r["fx"], k_r["fy"], k_r["cx"], k_r["cy"], gaze[0], gaze[1], 2)
            assert _pure.reproject_scan(*args) == _core.reproject_scan(*args)

    def test_raycast_parity(self):
        kinds, params, centers, rots, r_wc, o_w, m_cl, o_l, table = _scene_arrays()
        h, w = 60, 80
        us = (np.arange(w) - w / 2) / 70.0
        vs = (np.arange(h) - h / 2) / 70.0
        dy, dx = np.meshgrid(vs, us, indexing="ij")
        t_p, id_p = _pure.raycast(dx, dy, o_w, r_wc, kinds, params, m_cl, o_l, table)
        t_c, id_c = _core.raycast(dx, dy, o_w.copy(), r_wc.copy(), kinds, params,
                                  m_cl.copy(), o_l.copy(), table)
        assert np.array_equal(id_p, id_c)
        finite = np.isfinite(t_p)
        assert np.array_equal(finite, np.isfinite(np.asarray(t_c)))
        assert np.array_equal(t_p[finite], np.asarray(t_c)[finite])

    def test_backend_name_reported(self):
        from gazemanip.kernels import backend_name

        assert backend_name() in ("compiled", "numpy")
