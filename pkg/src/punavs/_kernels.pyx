# cython: boundscheck=False, wraparound=False, cdivision=True
# cython: language_level=3
"""Compiled hot loops: ray casting, voxel-grid marching, point-triangle
distance. punavs._kernels_np holds the pure-numpy twin; keep formulas and
comparison order in the two files identical so results match bit for bit.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport INFINITY, fabs, floor, sqrt

BARY_EPS = 1e-9
DET_EPS = 1e-12


def ray_triangle_hits(
    double[:, ::1] origins,
    double[:, ::1] dirs,
    double[:, ::1] v0,
    double[:, ::1] e1,
    double[:, ::1] e2,
    double t_min=1e-9,
):
    """Nearest triangle hit per ray (Moller-Trumbore, two-sided).

    Returns (face int64, t, u, v); face is -1 and t is +inf on miss.
    Ties in t keep the lowest face index.
    """
    cdef Py_ssize_t n = origins.shape[0]
    cdef Py_ssize_t f = v0.shape[0]
    hit_arr = np.full(n, -1, dtype=np.int64)
    t_arr = np.full(n, np.inf, dtype=np.float64)
    u_arr = np.zeros(n, dtype=np.float64)
    v_arr = np.zeros(n, dtype=np.float64)
    cdef long long[::1] hit = hit_arr
    cdef double[::1] tb = t_arr
    cdef double[::1] ub = u_arr
    cdef double[::1] vb = v_arr
    cdef Py_ssize_t i, j
    cdef double ox, oy, oz, dx, dy, dz
    cdef double px, py, pz, det, inv, tx, ty, tz, u, v, qx, qy, qz, t
    cdef double e1x, e1y, e1z, e2x, e2y, e2z
    cdef double eps = BARY_EPS
    for i in range(n):
        ox = origins[i, 0]; oy = origins[i, 1]; oz = origins[i, 2]
        dx = dirs[i, 0]; dy = dirs[i, 1]; dz = dirs[i, 2]
        for j in range(f):
            e1x = e1[j, 0]; e1y = e1[j, 1]; e1z = e1[j, 2]
            e2x = e2[j, 0]; e2y = e2[j, 1]; e2z = e2[j, 2]
            px = dy * e2z - dz * e2y
            py = dz * e2x - dx * e2z
            pz = dx * e2y - dy * e2x
            det = e1x * px + e1y * py + e1z * pz
            if fabs(det) < DET_EPS:
                continue
            inv = 1.0 / det
            tx = ox - v0[j, 0]; ty = oy - v0[j, 1]; tz = oz - v0[j, 2]
            u = (tx * px + ty * py + tz * pz) * inv
            if u < -eps or u > 1.0 + eps:
                continue
            qx = ty * e1z - tz * e1y
            qy = tz * e1x - tx * e1z
            qz = tx * e1y - ty * e1x
            v = (dx * qx + dy * qy + dz * qz) * inv
            if v < -eps or u + v > 1.0 + eps:
                continue
            t = (e2x * qx + e2y * qy + e2z * qz) * inv
            if t <= t_min:
                continue
            if t < tb[i]:
                tb[i] = t
                hit[i] = j
                ub[i] = u
                vb[i] = v
    return hit_arr, t_arr, u_arr, v_arr


def march_grid(
    double[:, ::1] origins,
    double[:, ::1] dirs,
    cnp.uint8_t[:, :, ::1] occ,
    double[::1] grid_min,
    double[::1] cell_size,
):
    """First occupied cell along each ray through an axis-aligned grid.

    Returns (cell int64 flat index or -1, axis int8 of the face the ray
    entered the cell through, t at that face).
    """
    cdef Py_ssize_t n = origins.shape[0]
    cdef Py_ssize_t nx = occ.shape[0], ny = occ.shape[1], nz = occ.shape[2]
    cell_arr = np.full(n, -1, dtype=np.int64)
    axis_arr = np.full(n, -1, dtype=np.int8)
    t_arr = np.full(n, np.inf, dtype=np.float64)
    cdef long long[::1] cell = cell_arr
    cdef signed char[::1] axis_out = axis_arr
    cdef double[::1] t_out = t_arr
    cdef Py_ssize_t i, k
    cdef double o[3]
    cdef double d[3]
    cdef double tlo, thi, tmp, t0, t1, tcur
    cdef double tmax[3]
    cdef double tdelta[3]
    cdef long long idx[3]
    cdef long long dims[3]
    cdef long long stepd[3]
    cdef int axis, a
    cdef double gmin, gmax, pos
    dims[0] = nx; dims[1] = ny; dims[2] = nz
    for i in range(n):
        o[0] = origins[i, 0]; o[1] = origins[i, 1]; o[2] = origins[i, 2]
        d[0] = dirs[i, 0]; d[1] = dirs[i, 1]; d[2] = dirs[i, 2]
        t0 = 0.0
        t1 = INFINITY
        axis = 0
        for k in range(3):
            gmin = grid_min[k]
            gmax = grid_min[k] + cell_size[k] * dims[k]
            if d[k] == 0.0:
                if o[k] < gmin or o[k] > gmax:
                    t0 = INFINITY
                    break
                continue
            tlo = (gmin - o[k]) / d[k]
            thi = (gmax - o[k]) / d[k]
            if tlo > thi:
                tmp = tlo; tlo = thi; thi = tmp
            if tlo > t0:
                t0 = tlo
                axis = <int>k
            if thi < t1:
                t1 = thi
        if t0 > t1 or t0 == INFINITY:
            continue
        for k in range(3):
            pos = (o[k] + t0 * d[k] - grid_min[k]) / cell_size[k]
            idx[k] = <long long>floor(pos)
            if idx[k] < 0:
                idx[k] = 0
            if idx[k] > dims[k] - 1:
                idx[k] = dims[k] - 1
            if d[k] > 0.0:
                stepd[k] = 1
                tmax[k] = ((grid_min[k] + (idx[k] + 1) * cell_size[k]) - o[k]) / d[k]
                tdelta[k] = cell_size[k] / d[k]
            elif d[k] < 0.0:
                stepd[k] = -1
                tmax[k] = ((grid_min[k] + idx[k] * cell_size[k]) - o[k]) / d[k]
                tdelta[k] = -cell_size[k] / d[k]
            else:
                stepd[k] = 0
                tmax[k] = INFINITY
                tdelta[k] = INFINITY
        tcur = t0
        while True:
            if occ[idx[0], idx[1], idx[2]]:
                cell[i] = (idx[0] * ny + idx[1]) * nz + idx[2]
                axis_out[i] = <signed char>axis
                t_out[i] = tcur
                break
            if tmax[0] <= tmax[1] and tmax[0] <= tmax[2]:
                a = 0
            elif tmax[1] <= tmax[2]:
                a = 1
            else:
                a = 2
            idx[a] += stepd[a]
            if idx[a] < 0 or idx[a] >= dims[a]:
                break
            tcur = tmax[a]
            axis = a
            tmax[a] += tdelta[a]
    return cell_arr, axis_arr, t_arr


def point_tri_dists(
    double[:, ::1] points,
    double[:, ::1] v0,
    double[:, ::1] e1,
    double[:, ::1] e2,
):
    """Distance from each point to the nearest point on any triangle."""
    cdef Py_ssize_t n = points.shape[0]
    cdef Py_ssize_t f = v0.shape[0]
    out_arr = np.full(n, np.inf, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i, j
    cdef double a, b, c, d, e, ff, det, s, t, inv, numer, denom, tmp0, tmp1
    cdef double px, py, pz, dvx, dvy, dvz, sq
    cdef double e1x, e1y, e1z, e2x, e2y, e2z
    for i in range(n):
        px = points[i, 0]; py = points[i, 1]; pz = points[i, 2]
        for j in range(f):
            e1x = e1[j, 0]; e1y = e1[j, 1]; e1z = e1[j, 2]
            e2x = e2[j, 0]; e2y = e2[j, 1]; e2z = e2[j, 2]
            dvx = v0[j, 0] - px; dvy = v0[j, 1] - py; dvz = v0[j, 2] - pz
            a = e1x * e1x + e1y * e1y + e1z * e1z
            b = e1x * e2x + e1y * e2y + e1z * e2z
            c = e2x * e2x + e2y * e2y + e2z * e2z
            d = e1x * dvx + e1y * dvy + e1z * dvz
            e = e2x * dvx + e2y * dvy + e2z * dvz
            ff = dvx * dvx + dvy * dvy + dvz * dvz
            det = a * c - b * b
            s = b * e - c * d
            t = b * d - a * e
            if s + t <= det:
                if s < 0.0:
                    if t < 0.0:
                        if d < 0.0:
                            t = 0.0
                            s = -d / a
                            if s < 0.0: s = 0.0
                            elif s > 1.0: s = 1.0
                        else:
                            s = 0.0
                            t = -e / c
                            if t < 0.0: t = 0.0
                            elif t > 1.0: t = 1.0
                    else:
                        s = 0.0
                        t = -e / c
                        if t < 0.0: t = 0.0
                        elif t > 1.0: t = 1.0
                elif t < 0.0:
                    t = 0.0
                    s = -d / a
                    if s < 0.0: s = 0.0
                    elif s > 1.0: s = 1.0
                else:
                    inv = 1.0 / det
                    s = s * inv
                    t = t * inv
            else:
                if s < 0.0:
                    tmp0 = b + d
                    tmp1 = c + e
                    if tmp1 > tmp0:
                        numer = tmp1 - tmp0
                        denom = a - 2.0 * b + c
                        s = numer / denom
                        if s > 1.0: s = 1.0
                        t = 1.0 - s
                    else:
                        s = 0.0
                        t = -e / c
                        if t < 0.0: t = 0.0
                        elif t > 1.0: t = 1.0
                elif t < 0.0:
                    tmp0 = b + e
                    tmp1 = a + d
                    if tmp1 > tmp0:
                        numer = tmp1 - tmp0
                        denom = a - 2.0 * b + c
                        t = numer / denom
                        if t > 1.0: t = 1.0
                        s = 1.0 - t
                    else:
                        t = 0.0
                        s = -d / a
                        if s < 0.0: s = 0.0
                        elif s > 1.0: s = 1.0
                else:
                    numer = c + e - b - d
                    if numer <= 0.0:
                        s = 0.0
                    else:
                        denom = a - 2.0 * b + c
                        s = numer / denom
                        if s > 1.0: s = 1.0
                    t = 1.0 - s
            sq = s * (a * s + b * t + 2.0 * d) + t * (b * s + c * t + 2.0 * e) + ff
            if sq < 0.0:
                sq = 0.0
            sq = sqrt(sq)
            if sq < out[i]:
                out[i] = sq
    return out_arr
