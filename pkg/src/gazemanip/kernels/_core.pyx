# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled implementations of the hot kernels.

Mirror of ``_pure.py``: expression order matches the numpy backend so the
two produce bit-identical outputs (build uses -ffp-contract=off).
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport INFINITY, fabs, sqrt

cnp.import_array()

BACKEND = "compiled"

cdef double _EPS = 1e-12


def reproject_scan(cnp.uint16_t[:, ::1] depth_mm,
                   double fx_d, double fy_d, double cx_d, double cy_d,
                   cnp.float64_t[:, ::1] t34,
                   double fx_r, double fy_r, double cx_r, double cy_r,
                   double gaze_u, double gaze_v, int step):
    cdef Py_ssize_t h = depth_mm.shape[0]
    cdef Py_ssize_t w = depth_mm.shape[1]
    cdef Py_ssize_t vi, ui
    cdef double d, z, x, y, xr, yr, zr, ur, vr, du, dv, dist
    cdef double best = INFINITY
    cdef int found = 0
    cdef double b_u = 0, b_v = 0, b_x = 0, b_y = 0, b_z = 0, b_ur = 0, b_vr = 0

    cdef double t00 = t34[0, 0], t01 = t34[0, 1], t02 = t34[0, 2], t03 = t34[0, 3]
    cdef double t10 = t34[1, 0], t11 = t34[1, 1], t12 = t34[1, 2], t13 = t34[1, 3]
    cdef double t20 = t34[2, 0], t21 = t34[2, 1], t22 = t34[2, 2], t23 = t34[2, 3]

    for vi in range(0, h, step):
        for ui in range(0, w, step):
            d = <double> depth_mm[vi, ui]
            if d <= 0:
                continue
            z = d * 0.001
            x = (<double> ui - cx_d) * z / fx_d
            y = (<double> vi - cy_d) * z / fy_d
            xr = t00 * x + t01 * y + t02 * z + t03
            yr = t10 * x + t11 * y + t12 * z + t13
            zr = t20 * x + t21 * y + t22 * z + t23
            if zr <= 0.0:
                continue
            ur = xr * fx_r / zr + cx_r
            vr = yr * fy_r / zr + cy_r
            du = ur - gaze_u
            dv = vr - gaze_v
            dist = du * du + dv * dv
            if dist < best:
                best = dist
                found = 1
                b_u = <double> ui
                b_v = <double> vi
                b_x = x
                b_y = y
                b_z = z
                b_ur = ur
                b_vr = vr
    return (found, b_u, b_v, b_x, b_y, b_z, b_ur, b_vr, best)


cdef inline double _box_t(double ox, double oy, double oz,
                          double dx, double dy, double dz,
                          double hx, double hy, double hz) nogil:
    cdef double tmin = -INFINITY
    cdef double tmax = INFINITY
    cdef double t1, t2, lo, hi, t
    cdef double o[3]
    cdef double d[3]
    cdef double hh[3]
    o[0] = ox; o[1] = oy; o[2] = oz
    d[0] = dx; d[1] = dy; d[2] = dz
    hh[0] = hx; hh[1] = hy; hh[2] = hz
    cdef int i
    for i in range(3):
        if fabs(d[i]) < _EPS:
            if fabs(o[i]) > hh[i]:
                return INFINITY
        else:
            t1 = (-hh[i] - o[i]) / d[i]
            t2 = (hh[i] - o[i]) / d[i]
            lo = t1 if t1 < t2 else t2
            hi = t1 if t1 > t2 else t2
            if lo > tmin:
                tmin = lo
            if hi < tmax:
                tmax = hi
    if tmax < tmin:
        return INFINITY
    t = tmin if tmin > _EPS else tmax
    if t > _EPS:
        return t
    return INFINITY


cdef inline double _sphere_t(double ox, double oy, double oz,
                             double dx, double dy, double dz, double r) nogil:
    cdef double a = dx * dx + dy * dy + dz * dz
    cdef double b = 2.0 * (ox * dx + oy * dy + oz * dz)
    cdef double c = ox * ox + oy * oy + oz * oz - r * r
    cdef double disc = b * b - 4.0 * a * c
    if disc < 0.0:
        return INFINITY
    cdef double sq = sqrt(disc)
    cdef double t1 = (-b - sq) / (2.0 * a)
    cdef double t2 = (-b + sq) / (2.0 * a)
    cdef double t = t1 if t1 > _EPS else t2
    if t > _EPS:
        return t
    return INFINITY


cdef inline double _cylinder_t(double ox, double oy, double oz,
                               double dx, double dy, double dz,
                               double r, double hh) nogil:
    cdef double best = INFINITY
    cdef double a = dx * dx + dy * dy
    cdef double b = 2.0 * (ox * dx + oy * dy)
    cdef double c = ox * ox + oy * oy - r * r
    cdef double disc = b * b - 4.0 * a * c
    cdef double sq, t, zhit, xr, yr, zc
    cdef double sgn
    cdef int i
    if a > _EPS and disc >= 0.0:
        sq = sqrt(disc)
        for i in range(2):
            sgn = -1.0 if i == 0 else 1.0
            t = (-b + sgn * sq) / (2.0 * a)
            zhit = oz + t * dz
            if t > _EPS and fabs(zhit) <= hh and t < best:
                best = t
    if fabs(dz) > _EPS:
        for i in range(2):
            zc = -hh if i == 0 else hh
            t = (zc - oz) / dz
            xr = ox + t * dx
            yr = oy + t * dy
            if t > _EPS and xr * xr + yr * yr <= r * r and t < best:
                best = t
    return best


def raycast(cnp.float64_t[:, ::1] dx, cnp.float64_t[:, ::1] dy,
            cnp.float64_t[::1] o_w, cnp.float64_t[:, ::1] r_wc,
            cnp.int32_t[::1] kinds, cnp.float64_t[:, ::1] params,
            cnp.float64_t[:, :, ::1] m_cl, cnp.float64_t[:, ::1] o_l,
            cnp.float64_t[::1] table):
    cdef Py_ssize_t h = dx.shape[0]
    cdef Py_ssize_t w = dx.shape[1]
    cdef Py_ssize_t n = kinds.shape[0]
    out_t = np.full((h, w), np.inf)
    out_i = np.full((h, w), -1, dtype=np.int32)
    cdef cnp.float64_t[:, ::1] bt = out_t
    cdef cnp.int32_t[:, ::1] bi = out_i

    cdef Py_ssize_t vi, ui, i
    cdef double px, py, dlx, dly, dlz, t
    cdef double dwx, dwy, dwz
    cdef int has_table = 1 if table[0] > 0.5 else 0
    cdef double tz = table[1], xmin = table[2], xmax = table[3], ymin = table[4], ymax = table[5]

    with nogil:
        for vi in range(h):
            for ui in range(w):
                for i in range(n):
                    dlx = m_cl[i, 0, 0] * dx[vi, ui] + m_cl[i, 0, 1] * dy[vi, ui] + m_cl[i, 0, 2]
                    dly = m_cl[i, 1, 0] * dx[vi, ui] + m_cl[i, 1, 1] * dy[vi, ui] + m_cl[i, 1, 2]
                    dlz = m_cl[i, 2, 0] * dx[vi, ui] + m_cl[i, 2, 1] * dy[vi, ui] + m_cl[i, 2, 2]
                    if kinds[i] == 0:
                        t = _box_t(o_l[i, 0], o_l[i, 1], o_l[i, 2], dlx, dly, dlz,
                                   params[i, 0], params[i, 1], params[i, 2])
                    elif kinds[i] == 1:
                        t = _cylinder_t(o_l[i, 0], o_l[i, 1], o_l[i, 2], dlx, dly, dlz,
                                        params[i, 0], params[i, 1])
                    else:
                        t = _sphere_t(o_l[i, 0], o_l[i, 1], o_l[i, 2], dlx, dly, dlz,
                                      params[i, 0])
                    if t < bt[vi, ui]:
                        bt[vi, ui] = t
                        bi[vi, ui] = <cnp.int32_t> (i + 1)
                if has_table:
                    dwx = r_wc[0, 0] * dx[vi, ui] + r_wc[0, 1] * dy[vi, ui] + r_wc[0, 2]
                    dwy = r_wc[1, 0] * dx[vi, ui] + r_wc[1, 1] * dy[vi, ui] + r_wc[1, 2]
                    dwz = r_wc[2, 0] * dx[vi, ui] + r_wc[2, 1] * dy[vi, ui] + r_wc[2, 2]
                    if fabs(dwz) > _EPS:
                        t = (tz - o_w[2]) / dwz
                        px = o_w[0] + t * dwx
                        py = o_w[1] + t * dwy
                        if t > _EPS and xmin <= px <= xmax and ymin <= py <= ymax and t < bt[vi, ui]:
                            bt[vi, ui] = t
                            bi[vi, ui] = 0
    return out_t, out_i
