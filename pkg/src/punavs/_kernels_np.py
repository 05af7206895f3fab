"""Pure-numpy fallback for the compiled kernels.

Keep every formula and comparison in lockstep with _kernels.pyx: the two
backends are expected to produce bit-identical float64 results, so the
math here avoids BLAS reductions (explicit component arithmetic only).
"""

from __future__ import annotations

import numpy as np

BARY_EPS = 1e-9
DET_EPS = 1e-12


def ray_triangle_hits(origins, dirs, v0, e1, e2, t_min=1e-9):
    n = origins.shape[0]
    best_t = np.full(n, np.inf)
    best_face = np.full(n, -1, dtype=np.int64)
    best_u = np.zeros(n)
    best_v = np.zeros(n)
    ox, oy, oz = origins[:, 0], origins[:, 1], origins[:, 2]
    dx, dy, dz = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        for j in range(v0.shape[0]):
            e1x, e1y, e1z = e1[j, 0], e1[j, 1], e1[j, 2]
            e2x, e2y, e2z = e2[j, 0], e2[j, 1], e2[j, 2]
            px = dy * e2z - dz * e2y
            py = dz * e2x - dx * e2z
            pz = dx * e2y - dy * e2x
            det = e1x * px + e1y * py + e1z * pz
            ok = np.abs(det) >= DET_EPS
            inv = 1.0 / det
            tx, ty, tz = ox - v0[j, 0], oy - v0[j, 1], oz - v0[j, 2]
            u = (tx * px + ty * py + tz * pz) * inv
            ok &= (u >= -BARY_EPS) & (u <= 1.0 + BARY_EPS)
            qx = ty * e1z - tz * e1y
            qy = tz * e1x - tx * e1z
            qz = tx * e1y - ty * e1x
            v = (dx * qx + dy * qy + dz * qz) * inv
            ok &= (v >= -BARY_EPS) & (u + v <= 1.0 + BARY_EPS)
            t = (e2x * qx + e2y * qy + e2z * qz) * inv
            ok &= t > t_min
            upd = ok & (t < best_t)
            best_t[upd] = t[upd]
            best_face[upd] = j
            best_u[upd] = u[upd]
            best_v[upd] = v[upd]
    return best_face, best_t, best_u, best_v


def march_grid(origins, dirs, occ, grid_min, cell_size):
    n = origins.shape[0]
    dims = np.array(occ.shape, dtype=np.int64)
    nx, ny, nz = occ.shape
    occ_flat = np.ascontiguousarray(occ).reshape(-1).astype(bool)

    t0 = np.zeros(n)
    t1 = np.full(n, np.inf)
    entry_axis = np.zeros(n, dtype=np.int8)
    dead = np.zeros(n, dtype=bool)
    with np.errstate(divide="ignore", invalid="ignore"):
        for k in range(3):
            ok_, dk = origins[:, k], dirs[:, k]
            zero = dk == 0.0
            gmin_k = grid_min[k]
            gmax_k = grid_min[k] + cell_size[k] * dims[k]
            tlo = (gmin_k - ok_) / dk
            thi = (gmax_k - ok_) / dk
            swap = tlo > thi
            tlo, thi = np.where(swap, thi, tlo), np.where(swap, tlo, thi)
            upd = ~zero & (tlo > t0)
            t0 = np.where(upd, tlo, t0)
            entry_axis = np.where(upd, np.int8(k), entry_axis)
            t1 = np.where(~zero & (thi < t1), thi, t1)
            dead |= zero & ((ok_ < gmin_k) | (ok_ > gmax_k))
    alive = ~(dead | (t0 > t1) | np.isinf(t0))

    idx = np.zeros((n, 3), dtype=np.int64)
    tmax = np.full((n, 3), np.inf)
    tdelta = np.full((n, 3), np.inf)
    step = np.zeros((n, 3), dtype=np.int64)
    with np.errstate(divide="ignore", invalid="ignore"):
        for k in range(3):
            pos = (origins[:, k] + t0 * dirs[:, k] - grid_min[k]) / cell_size[k]
            ik = np.floor(pos).astype(np.int64)
            np.clip(ik, 0, dims[k] - 1, out=ik)
            idx[:, k] = ik
            dk = dirs[:, k]
            pos_dir = dk > 0.0
            neg_dir = dk < 0.0
            tm_pos = ((grid_min[k] + (ik + 1) * cell_size[k]) - origins[:, k]) / dk
            tm_neg = ((grid_min[k] + ik * cell_size[k]) - origins[:, k]) / dk
            tmax[:, k] = np.where(pos_dir, tm_pos, np.where(neg_dir, tm_neg, np.inf))
            tdelta[:, k] = np.where(
                pos_dir, cell_size[k] / dk, np.where(neg_dir, -cell_size[k] / dk, np.inf)
            )
            step[:, k] = np.where(pos_dir, 1, np.where(neg_dir, -1, 0))

    cell_out = np.full(n, -1, dtype=np.int64)
    axis_out = np.full(n, -1, dtype=np.int8)
    t_out = np.full(n, np.inf)
    ax = entry_axis.copy()
    tcur = t0.copy()
    rows = np.arange(n)
    while np.any(alive):
        flat = (idx[:, 0] * ny + idx[:, 1]) * nz + idx[:, 2]
        safe = np.where(alive, flat, 0)
        occ_hit = alive & occ_flat[safe]
        cell_out[occ_hit] = flat[occ_hit]
        axis_out[occ_hit] = ax[occ_hit]
        t_out[occ_hit] = tcur[occ_hit]
        alive = alive & ~occ_hit
        if not np.any(alive):
            break
        # Same tie rule as the compiled loop: x beats y beats z.
        a = np.argmin(tmax, axis=1)
        idx[rows, a] = idx[rows, a] + np.where(alive, step[rows, a], 0)
        oob = (idx[rows, a] < 0) | (idx[rows, a] >= dims[a])
        moved = alive & ~oob
        tcur = np.where(moved, tmax[rows, a], tcur)
        ax = np.where(moved, a.astype(np.int8), ax)
        tmax[rows, a] = np.where(alive, tmax[rows, a] + tdelta[rows, a], tmax[rows, a])
        alive = moved
    return cell_out, axis_out, t_out


def _clamp01(x):
    return np.clip(x, 0.0, 1.0)


def point_tri_dists(points, v0, e1, e2):
    n = points.shape[0]
    out = np.full(n, np.inf)
    px, py, pz = points[:, 0], points[:, 1], points[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        for j in range(v0.shape[0]):
            e1x, e1y, e1z = e1[j, 0], e1[j, 1], e1[j, 2]
            e2x, e2y, e2z = e2[j, 0], e2[j, 1], e2[j, 2]
            dvx, dvy, dvz = v0[j, 0] - px, v0[j, 1] - py, v0[j, 2] - pz
            a = e1x * e1x + e1y * e1y + e1z * e1z
            b = e1x * e2x + e1y * e2y + e1z * e2z
            c = e2x * e2x + e2y * e2y + e2z * e2z
            d = e1x * dvx + e1y * dvy + e1z * dvz
            e = e2x * dvx + e2y * dvy + e2z * dvz
            ff = dvx * dvx + dvy * dvy + dvz * dvz
            det = a * c - b * b
            s_raw = b * e - c * d
            t_raw = b * d - a * e

            s_edge01 = _clamp01(-d / a)   # t = 0 edge
            t_edge02 = _clamp01(-e / c)   # s = 0 edge
            denom = a - 2.0 * b + c
            s_d1 = np.minimum((c + e - (b + d)) / denom, 1.0)  # diagonal, from region 2
            t_d1 = np.minimum((a + d - (b + e)) / denom, 1.0)  # diagonal, from region 6

            inv = 1.0 / det
            in_a = s_raw + t_raw <= det
            s_neg = s_raw < 0.0
            t_neg = t_raw < 0.0
            d_neg = d < 0.0

            a1 = in_a & s_neg & t_neg & d_neg
            a2 = in_a & s_neg & t_neg & ~d_neg
            a3 = in_a & s_neg & ~t_neg
            a4 = in_a & ~s_neg & t_neg
            a5 = in_a & ~s_neg & ~t_neg

            r2_diag = (c + e) > (b + d)
            r6_diag = (a + d) > (b + e)
            b1 = ~in_a & s_neg & r2_diag
            b2 = ~in_a & s_neg & ~r2_diag
            b3 = ~in_a & ~s_neg & t_neg & r6_diag
            b4 = ~in_a & ~s_neg & t_neg & ~r6_diag
            b5 = ~in_a & ~s_neg & ~t_neg
            numer_r1 = c + e - b - d
            s_r1 = np.where(numer_r1 <= 0.0, 0.0, np.minimum(numer_r1 / denom, 1.0))

            s = np.select(
                [a1, a2, a3, a4, a5, b1, b2, b3, b4, b5],
                [
                    s_edge01, 0.0, 0.0, s_edge01, s_raw * inv,
                    s_d1, 0.0, 1.0 - t_d1, s_edge01, s_r1,
                ],
            )
            t = np.select(
                [a1, a2, a3, a4, a5, b1, b2, b3, b4, b5],
                [
                    0.0, t_edge02, t_edge02, 0.0, t_raw * inv,
                    1.0 - s_d1, t_edge02, t_d1, 0.0, 1.0 - s_r1,
                ],
            )
            sq = s * (a * s + b * t + 2.0 * d) + t * (b * s + c * t + 2.0 * e) + ff
            sq = np.sqrt(np.maximum(sq, 0.0))
            out = np.where(sq < out, sq, out)
    return out
