# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels. Must stay bit-identical to ``_pykernels``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY, fabs

cnp.import_array()


def zbuffer_splat(const cnp.int64_t[::1] target, const double[::1] z, Py_ssize_t n_pixels):
    """Per-pixel minimum depth and the lowest candidate index attaining it."""
    cdef Py_ssize_t n = target.shape[0]
    cdef Py_ssize_t i, p
    depth_np = np.full(n_pixels, np.inf, dtype=np.float64)
    winner_np = np.full(n_pixels, -1, dtype=np.int64)
    cdef double[::1] depth = depth_np
    cdef cnp.int64_t[::1] winner = winner_np
    with nogil:
        for i in range(n):
            p = target[i]
            if p < 0 or p >= n_pixels:
                continue
            # candidates are visited in index order, so strict < keeps the lowest index on ties
            if z[i] < depth[p]:
                depth[p] = z[i]
                winner[p] = i
    return depth_np, winner_np


def fill_holes(const double[:, ::1] values, const cnp.uint8_t[:, ::1] valid,
               const cnp.int64_t[:, ::1] offsets, const double[::1] weights,
               const cnp.int64_t[::1] ring_start):
    """Expanding-ring inverse-distance fill; reads only the original valid set."""
    cdef Py_ssize_t h = values.shape[0], w = values.shape[1]
    cdef Py_ssize_t n_rings = ring_start.shape[0] - 1
    cdef Py_ssize_t y, x, r, o, yy, xx
    cdef double sw, swd, wt
    out_np = np.array(values, dtype=np.float64, copy=True)
    filled_np = np.zeros((h, w), dtype=np.uint8)
    cdef double[:, ::1] out = out_np
    cdef cnp.uint8_t[:, ::1] filled = filled_np
    with nogil:
        for y in range(h):
            for x in range(w):
                if valid[y, x]:
                    continue
                for r in range(n_rings):
                    sw = 0.0
                    swd = 0.0
                    for o in range(ring_start[r], ring_start[r + 1]):
                        yy = y + offsets[o, 0]
                        xx = x + offsets[o, 1]
                        if yy < 0 or yy >= h or xx < 0 or xx >= w:
                            continue
                        if valid[yy, xx]:
                            wt = weights[o]
                            sw = sw + wt
                            swd = swd + wt * values[yy, xx]
                    if sw > 0.0:
                        out[y, x] = swd / sw
                        filled[y, x] = 1
                        break
    return out_np, filled_np.astype(bool)


def diffuse(const double[:, :, ::1] image, const cnp.uint8_t[:, ::1] mask, Py_ssize_t max_sweeps, double tol):
    """Jacobi sweeps over masked pixels; 4-neighbour mean of in-bounds neighbours."""
    cdef Py_ssize_t h = image.shape[0], w = image.shape[1], c = image.shape[2]
    cdef Py_ssize_t y, x, ch, sweep, cnt
    cdef double acc, val, change, max_change
    prev_np = np.array(image, dtype=np.float64, copy=True)
    nxt_np = prev_np.copy()
    cdef double[:, :, ::1] prev = prev_np
    cdef double[:, :, ::1] nxt = nxt_np
    cdef double[:, :, ::1] tmp
    cdef Py_ssize_t sweeps_done = 0
    with nogil:
        for sweep in range(max_sweeps):
            max_change = 0.0
            for y in range(h):
                for x in range(w):
                    if not mask[y, x]:
                        continue
                    cnt = 0
                    if y > 0:
                        cnt = cnt + 1
                    if y < h - 1:
                        cnt = cnt + 1
                    if x > 0:
                        cnt = cnt + 1
                    if x < w - 1:
                        cnt = cnt + 1
                    for ch in range(c):
                        acc = 0.0
                        if y > 0:
                            acc = acc + prev[y - 1, x, ch]
                        if y < h - 1:
                            acc = acc + prev[y + 1, x, ch]
                        if x > 0:
                            acc = acc + prev[y, x - 1, ch]
                        if x < w - 1:
                            acc = acc + prev[y, x + 1, ch]
                        val = acc / cnt
                        change = fabs(val - prev[y, x, ch])
                        if change > max_change:
                            max_change = change
                        nxt[y, x, ch] = val
            with gil:
                tmp = prev
                prev = nxt
                nxt = tmp
            sweeps_done = sweep + 1
            if max_change < tol:
                break
    return np.asarray(prev), sweeps_done
