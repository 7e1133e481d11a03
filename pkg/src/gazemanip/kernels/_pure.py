"""Numpy implementations of the hot kernels.

Semantics are locked to the compiled backend in ``_core.pyx``: identical
arithmetic expression order, strict ``<`` winner updates so earlier
candidates (row-major / lower object index) win exact ties. The parity
test asserts bit-identical outputs, so keep every formula in sync.
"""

from __future__ import annotations

import numpy as np

BACKEND = "numpy"

_EPS = 1e-12


def reproject_scan(depth_mm, fx_d, fy_d, cx_d, cy_d, t34, fx_r, fy_r, cx_r, cy_r,
                   gaze_u, gaze_v, step):
    """Scan the depth grid, back-project, transform, project, pick nearest to gaze.

    Returns (found, u, v, x, y, z, proj_u, proj_v, dist_sq) where (u, v) is the
    winning depth pixel, (x, y, z) its depth-frame back-projection and
    (proj_u, proj_v) its projection in the target image. found == 0 when no
    candidate survived (all depth invalid or behind the target camera).
    """
    h, w = depth_mm.shape
    vs = np.arange(0, h, step, dtype=np.float64)
    us = np.arange(0, w, step, dtype=np.float64)
    vg, ug = np.meshgrid(vs, us, indexing="ij")
    d = depth_mm[::step, ::step].astype(np.float64)

    z = d * 0.001
    valid = d > 0

    x = (ug - cx_d) * z / fx_d
    y = (vg - cy_d) * z / fy_d

    xr = t34[0, 0] * x + t34[0, 1] * y + t34[0, 2] * z + t34[0, 3]
    yr = t34[1, 0] * x + t34[1, 1] * y + t34[1, 2] * z + t34[1, 3]
    zr = t34[2, 0] * x + t34[2, 1] * y + t34[2, 2] * z + t34[2, 3]

    valid &= zr > 0.0
    if not valid.any():
        return (0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, np.inf)

    with np.errstate(divide="ignore", invalid="ignore"):
        ur = xr * fx_r / zr + cx_r
        vr = yr * fy_r / zr + cy_r
    du = ur - gaze_u
    dv = vr - gaze_v
    dist = du * du + dv * dv
    dist = np.where(valid, dist, np.inf)

    flat = int(np.argmin(dist))  # first occurrence = lowest (v, u)
    i, j = divmod(flat, dist.shape[1])
    return (
        1,
        float(ug[i, j]), float(vg[i, j]),
        float(x[i, j]), float(y[i, j]), float(z[i, j]),
        float(ur[i, j]), float(vr[i, j]), float(dist[i, j]),
    )


def _ray_dirs_world(dx, dy, r_wc):
    dwx = r_wc[0, 0] * dx + r_wc[0, 1] * dy + r_wc[0, 2]
    dwy = r_wc[1, 0] * dx + r_wc[1, 1] * dy + r_wc[1, 2]
    dwz = r_wc[2, 0] * dx + r_wc[2, 1] * dy + r_wc[2, 2]
    return dwx, dwy, dwz


def raycast(dx, dy, o_w, r_wc, kinds, params, m_cl, o_l, table):
    """Ray-cast primitive objects; returns (t, idx) per pixel.

    t is the camera-frame Z depth (meters, +inf = miss); idx is -1 for miss,
    0 for the implicit table plane, i+1 for object i. The ray through pixel
    (u, v) is origin + t * (dx, dy, 1) in camera coordinates.
    """
    h, w = dx.shape
    best_t = np.full((h, w), np.inf)
    best_i = np.full((h, w), -1, dtype=np.int32)

    n = kinds.shape[0]
    for i in range(n):
        ox, oy, oz = o_l[i]
        m = m_cl[i]
        dlx = m[0, 0] * dx + m[0, 1] * dy + m[0, 2]
        dly = m[1, 0] * dx + m[1, 1] * dy + m[1, 2]
        dlz = m[2, 0] * dx + m[2, 1] * dy + m[2, 2]
        kind = int(kinds[i])
        if kind == 0:
            t = _box_t(ox, oy, oz, dlx, dly, dlz, params[i])
        elif kind == 1:
            t = _cylinder_t(ox, oy, oz, dlx, dly, dlz, params[i])
        else:
            t = _sphere_t(ox, oy, oz, dlx, dly, dlz, params[i])
        upd = t < best_t
        best_t[upd] = t[upd]
        best_i[upd] = i + 1

    if table[0] > 0.5:
        dwx, dwy, dwz = _ray_dirs_world(dx, dy, r_wc)
        tz, xmin, xmax, ymin, ymax = table[1], table[2], table[3], table[4], table[5]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (tz - o_w[2]) / dwz
        px = o_w[0] + t * dwx
        py = o_w[1] + t * dwy
        ok = (np.abs(dwz) > _EPS) & (t > _EPS) & (px >= xmin) & (px <= xmax) & (py >= ymin) & (py <= ymax)
        t = np.where(ok, t, np.inf)
        upd = t < best_t
        best_t[upd] = t[upd]
        best_i[upd] = 0

    return best_t, best_i


def _box_t(ox, oy, oz, dx, dy, dz, prm):
    hx, hy, hz = prm[0], prm[1], prm[2]
    tmin = np.full(dx.shape, -np.inf)
    tmax = np.full(dx.shape, np.inf)
    ok = np.ones(dx.shape, dtype=bool)
    for o, d, hh in ((ox, dx, hx), (oy, dy, hy), (oz, dz, hz)):
        par = np.abs(d) < _EPS
        ok &= ~par | (np.abs(o) <= hh)
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (-hh - o) / d
            t2 = (hh - o) / d
        lo = np.minimum(t1, t2)
        hi = np.maximum(t1, t2)
        tmin = np.where(par, tmin, np.maximum(tmin, lo))
        tmax = np.where(par, tmax, np.minimum(tmax, hi))
    ok &= tmax >= tmin
    t = np.where(tmin > _EPS, tmin, tmax)
    return np.where(ok & (t > _EPS), t, np.inf)


def _sphere_t(ox, oy, oz, dx, dy, dz, prm):
    r = prm[0]
    a = dx * dx + dy * dy + dz * dz
    b = 2.0 * (ox * dx + oy * dy + oz * dz)
    c = ox * ox + oy * oy + oz * oz - r * r
    disc = b * b - 4.0 * a * c
    hit = disc >= 0.0
    sq = np.sqrt(np.where(hit, disc, 0.0))
    t1 = (-b - sq) / (2.0 * a)
    t2 = (-b + sq) / (2.0 * a)
    t = np.where(t1 > _EPS, t1, t2)
    return np.where(hit & (t > _EPS), t, np.inf)


def _cylinder_t(ox, oy, oz, dx, dy, dz, prm):
    r, hh = prm[0], prm[1]
    best = np.full(dx.shape, np.inf)

    a = dx * dx + dy * dy
    b = 2.0 * (ox * dx + oy * dy)
    c = ox * ox + oy * oy - r * r
    disc = b * b - 4.0 * a * c
    quad = (a > _EPS) & (disc >= 0.0)
    sq = np.sqrt(np.where(quad, disc, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        for sgn in (-1.0, 1.0):
            t = (-b + sgn * sq) / (2.0 * a)
            zhit = oz + t * dz
            ok = quad & (t > _EPS) & (np.abs(zhit) <= hh) & (t < best)
            best = np.where(ok, t, best)

        # end caps
        for zc in (-hh, hh):
            t = (zc - oz) / dz
            xr = ox + t * dx
            yr = oy + t * dy
            ok = (np.abs(dz) > _EPS) & (t > _EPS) & (xr * xr + yr * yr <= r * r) & (t < best)
            best = np.where(ok, t, best)
    return best
