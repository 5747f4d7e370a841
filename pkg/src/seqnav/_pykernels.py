"""Pure-Python implementations of the hot loops.

These mirror ``_ckernels.pyx`` line for line and are used when the compiled
extension is unavailable (or ``SEQNAV_PURE_PYTHON=1``).  Both backends must
return bit-identical results; tests run against each.

Grid convention: cell ``(row, col)`` is centred on world point
``(col * res, row * res)``.  Traversal runs in grid units where the cell
spans ``[col - 0.5, col + 0.5)``.
"""
import math

import numpy as np

INF = float("inf")


def dtw_cost(r, t):
    r = np.ascontiguousarray(r, dtype=np.float64)
    t = np.ascontiguousarray(t, dtype=np.float64)
    n, m = r.shape[0], t.shape[0]
    prev = [INF] * (m + 1)
    prev[0] = 0.0
    rl = r.tolist()
    tl = t.tolist()
    for i in range(n):
        cur = [INF] * (m + 1)
        rx, ry = rl[i]
        for j in range(m):
            tx, ty = tl[j]
            cost = math.sqrt((rx - tx) * (rx - tx) + (ry - ty) * (ry - ty))
            best = prev[j]
            if prev[j + 1] < best:
                best = prev[j + 1]
            if cur[j] < best:
                best = cur[j]
            cur[j + 1] = cost + best
        prev = cur
    return prev[m]


def _dda_setup(x0, y0, dx, dy, res):
    u = x0 / res + 0.5
    v = y0 / res + 0.5
    col = math.floor(u)
    row = math.floor(v)
    if dx > 0.0:
        step_c = 1
        t_max_c = (col + 1 - u) / dx
        t_delta_c = 1.0 / dx
    elif dx < 0.0:
        step_c = -1
        t_max_c = (u - col) / -dx
        t_delta_c = -1.0 / dx
    else:
        step_c = 0
        t_max_c = INF
        t_delta_c = INF
    if dy > 0.0:
        step_r = 1
        t_max_r = (row + 1 - v) / dy
        t_delta_r = 1.0 / dy
    elif dy < 0.0:
        step_r = -1
        t_max_r = (v - row) / -dy
        t_delta_r = -1.0 / dy
    else:
        step_r = 0
        t_max_r = INF
        t_delta_r = INF
    return row, col, step_r, step_c, t_max_r, t_max_c, t_delta_r, t_delta_c


def cast_rays(occ, res, x0, y0, dxs, dys, max_dist):
    """First blocked cell along each ray.

    ``occ`` is a uint8 grid, non-zero meaning blocked; cells outside the grid
    count as blocked.  Returns ``(dist, rows, cols)``; a ray with no hit within
    ``max_dist`` reports ``max_dist`` and row/col ``-1``.
    """
    occ = np.ascontiguousarray(occ, dtype=np.uint8)
    h, w = occ.shape
    k = len(dxs)
    dists = np.empty(k, dtype=np.float64)
    rows = np.full(k, -1, dtype=np.int64)
    cols = np.full(k, -1, dtype=np.int64)
    t_limit = max_dist / res
    for i in range(k):
        row, col, step_r, step_c, t_max_r, t_max_c, t_delta_r, t_delta_c = _dda_setup(
            x0, y0, float(dxs[i]), float(dys[i]), res
        )
        dists[i] = max_dist
        while True:
            if t_max_c < t_max_r:
                t_entry = t_max_c
                col += step_c
                t_max_c += t_delta_c
            else:
                t_entry = t_max_r
                row += step_r
                t_max_r += t_delta_r
            if t_entry >= t_limit:
                break
            if row < 0 or row >= h or col < 0 or col >= w or occ[row, col]:
                dists[i] = t_entry * res
                rows[i] = row
                cols[i] = col
                break
    return dists, rows, cols


def integrate_rays(occ_map, sem_map, row_off, col_off, res, x0, y0, dxs, dys, dists, hit_classes, max_dist):
    """Project depth rays into map arrays in place.

    ``occ_map`` is int8 (-1 unknown, 0 free, 1 blocked) indexed by
    ``world_row - row_off, world_col - col_off``.  Cells entered before the hit
    become free (never overwriting blocked); the hit cell becomes blocked and
    gets its semantic bit.  Returns the number of cells that stopped being
    unknown.
    """
    newly_known = 0
    for i in range(len(dxs)):
        dist = float(dists[i])
        hit_class = int(hit_classes[i])
        row, col, step_r, step_c, t_max_r, t_max_c, t_delta_r, t_delta_c = _dda_setup(
            x0, y0, float(dxs[i]), float(dys[i]), res
        )
        # the agent's own cell
        r, c = row - row_off, col - col_off
        if occ_map[r, c] == -1:
            occ_map[r, c] = 0
            newly_known += 1
        while True:
            if t_max_c < t_max_r:
                t_entry = t_max_c
                col += step_c
                t_max_c += t_delta_c
            else:
                t_entry = t_max_r
                row += step_r
                t_max_r += t_delta_r
            r, c = row - row_off, col - col_off
            if t_entry * res < dist:
                if occ_map[r, c] == -1:
                    occ_map[r, c] = 0
                    newly_known += 1
                continue
            if hit_class >= 0 and dist < max_dist:
                if occ_map[r, c] == -1:
                    newly_known += 1
                occ_map[r, c] = 1
                sem_map[hit_class, r, c] = 1
            break
    return newly_known
