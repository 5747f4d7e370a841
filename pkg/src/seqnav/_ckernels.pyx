# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops; see _pykernels.py for the reference semantics."""
import numpy as np

cimport numpy as cnp
from libc.math cimport floor, sqrt, INFINITY

cnp.import_array()


def dtw_cost(r, t):
    cdef double[:, ::1] rv = np.ascontiguousarray(r, dtype=np.float64)
    cdef double[:, ::1] tv = np.ascontiguousarray(t, dtype=np.float64)
    cdef Py_ssize_t n = rv.shape[0], m = tv.shape[0], i, j
    cdef double[::1] prev = np.full(m + 1, INFINITY)
    cdef double[::1] cur = np.full(m + 1, INFINITY)
    cdef double[::1] tmp
    cdef double rx, ry, ddx, ddy, cost, best
    prev[0] = 0.0
    for i in range(n):
        cur[0] = INFINITY
        rx = rv[i, 0]
        ry = rv[i, 1]
        for j in range(m):
            ddx = rx - tv[j, 0]
            ddy = ry - tv[j, 1]
            cost = sqrt(ddx * ddx + ddy * ddy)
            best = prev[j]
            if prev[j + 1] < best:
                best = prev[j + 1]
            if cur[j] < best:
                best = cur[j]
            cur[j + 1] = cost + best
        tmp = prev
        prev = cur
        cur = tmp
    return prev[m]


cdef struct DDA:
    long row
    long col
    long step_r
    long step_c
    double t_max_r
    double t_max_c
    double t_delta_r
    double t_delta_c


cdef inline void dda_setup(DDA* s, double x0, double y0, double dx, double dy, double res) nogil:
    cdef double u = x0 / res + 0.5
    cdef double v = y0 / res + 0.5
    s.col = <long>floor(u)
    s.row = <long>floor(v)
    if dx > 0.0:
        s.step_c = 1
        s.t_max_c = (s.col + 1 - u) / dx
        s.t_delta_c = 1.0 / dx
    elif dx < 0.0:
        s.step_c = -1
        s.t_max_c = (u - s.col) / -dx
        s.t_delta_c = -1.0 / dx
    else:
        s.step_c = 0
        s.t_max_c = INFINITY
        s.t_delta_c = INFINITY
    if dy > 0.0:
        s.step_r = 1
        s.t_max_r = (s.row + 1 - v) / dy
        s.t_delta_r = 1.0 / dy
    elif dy < 0.0:
        s.step_r = -1
        s.t_max_r = (v - s.row) / -dy
        s.t_delta_r = -1.0 / dy
    else:
        s.step_r = 0
        s.t_max_r = INFINITY
        s.t_delta_r = INFINITY


cdef inline double dda_next(DDA* s) nogil:
    cdef double t_entry
    if s.t_max_c < s.t_max_r:
        t_entry = s.t_max_c
        s.col += s.step_c
        s.t_max_c += s.t_delta_c
    else:
        t_entry = s.t_max_r
        s.row += s.step_r
        s.t_max_r += s.t_delta_r
    return t_entry


def cast_rays(occ, double res, double x0, double y0, dxs, dys, double max_dist):
    cdef cnp.uint8_t[:, ::1] grid = np.ascontiguousarray(occ, dtype=np.uint8)
    cdef double[::1] dxv = np.ascontiguousarray(dxs, dtype=np.float64)
    cdef double[::1] dyv = np.ascontiguousarray(dys, dtype=np.float64)
    cdef Py_ssize_t k = dxv.shape[0], i
    cdef long h = grid.shape[0], w = grid.shape[1]
    out_d = np.empty(k, dtype=np.float64)
    out_r = np.full(k, -1, dtype=np.int64)
    out_c = np.full(k, -1, dtype=np.int64)
    cdef double[::1] dists = out_d
    cdef cnp.int64_t[::1] rows = out_r
    cdef cnp.int64_t[::1] cols = out_c
    cdef double t_limit = max_dist / res
    cdef double t_entry
    cdef DDA s
    with nogil:
        for i in range(k):
            dda_setup(&s, x0, y0, dxv[i], dyv[i], res)
            dists[i] = max_dist
            while True:
                t_entry = dda_next(&s)
                if t_entry >= t_limit:
                    break
                if s.row < 0 or s.row >= h or s.col < 0 or s.col >= w or grid[s.row, s.col]:
                    dists[i] = t_entry * res
                    rows[i] = s.row
                    cols[i] = s.col
                    break
    return out_d, out_r, out_c


def integrate_rays(occ_map, sem_map, long row_off, long col_off, double res, double x0, double y0,
                   dxs, dys, dists, hit_classes, double max_dist):
    cdef cnp.int8_t[:, ::1] om = occ_map
    cdef cnp.uint8_t[:, :, ::1] sm = sem_map
    cdef double[::1] dxv = np.ascontiguousarray(dxs, dtype=np.float64)
    cdef double[::1] dyv = np.ascontiguousarray(dys, dtype=np.float64)
    cdef double[::1] dv = np.ascontiguousarray(dists, dtype=np.float64)
    cdef cnp.int64_t[::1] hc = np.ascontiguousarray(hit_classes, dtype=np.int64)
    cdef Py_ssize_t k = dxv.shape[0], i
    cdef long newly_known = 0, r, c, hit_class
    cdef double t_entry, dist
    cdef DDA s
    with nogil:
        for i in range(k):
            dist = dv[i]
            hit_class = hc[i]
            dda_setup(&s, x0, y0, dxv[i], dyv[i], res)
            r = s.row - row_off
            c = s.col - col_off
            if om[r, c] == -1:
                om[r, c] = 0
                newly_known += 1
            while True:
                t_entry = dda_next(&s)
                r = s.row - row_off
                c = s.col - col_off
                if t_entry * res < dist:
                    if om[r, c] == -1:
                        om[r, c] = 0
                        newly_known += 1
                    continue
                if hit_class >= 0 and dist < max_dist:
                    if om[r, c] == -1:
                        newly_known += 1
                    om[r, c] = 1
                    sm[hit_class, r, c] = 1
                break
    return newly_known
