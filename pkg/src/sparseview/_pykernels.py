"""NumPy implementations of the hot kernels.

Each function mirrors ``_ckernels`` operation-for-operation (same
accumulation order) so both backends produce bit-identical output.
"""

import numpy as np


def zbuffer_splat(target, z, n_pixels):
    target = np.asarray(target, dtype=np.int64)
    z = np.asarray(z, dtype=np.float64)
    keep = (target >= 0) & (target < n_pixels)
    idx = np.nonzero(keep)[0]
    t = target[idx]
    depth = np.full(n_pixels, np.inf)
    np.minimum.at(depth, t, z[idx])
    winner = np.full(n_pixels, np.iinfo(np.int64).max, dtype=np.int64)
    hit = z[idx] == depth[t]
    np.minimum.at(winner, t[hit], idx[hit])
    winner[winner == np.iinfo(np.int64).max] = -1
    return depth, winner


def fill_holes(values, valid, offsets, weights, ring_start):
    values = np.asarray(values, dtype=np.float64)
    valid = np.asarray(valid, dtype=bool)
    h, w = values.shape
    out = values.copy()
    filled = np.zeros((h, w), dtype=bool)
    ys, xs = np.nonzero(~valid)
    for r in range(len(ring_start) - 1):
        if ys.size == 0:
            break
        sw = np.zeros(ys.size)
        swd = np.zeros(ys.size)
        for o in range(ring_start[r], ring_start[r + 1]):
            yy = ys + offsets[o, 0]
            xx = xs + offsets[o, 1]
            inside = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
            yyc = np.where(inside, yy, 0)
            xxc = np.where(inside, xx, 0)
            hit = inside & valid[yyc, xxc]
            wt = weights[o]
            sw = np.where(hit, sw + wt, sw)
            swd = np.where(hit, swd + wt * values[yyc, xxc], swd)
        done = sw > 0.0
        out[ys[done], xs[done]] = swd[done] / sw[done]
        filled[ys[done], xs[done]] = True
        ys, xs = ys[~done], xs[~done]
    return out, filled


def diffuse(image, mask, max_sweeps, tol):
    prev = np.array(image, dtype=np.float64, copy=True)
    mask = np.asarray(mask, dtype=bool)
    h, w, _ = prev.shape
    ys, xs = np.nonzero(mask)
    up, down, left, right = ys > 0, ys < h - 1, xs > 0, xs < w - 1
    cnt = (up.astype(np.int64) + down + left + right).astype(np.float64)[:, None]
    yu, yd = np.maximum(ys - 1, 0), np.minimum(ys + 1, h - 1)
    xl, xr = np.maximum(xs - 1, 0), np.minimum(xs + 1, w - 1)
    sweeps = 0
    for sweep in range(max_sweeps):
        acc = np.zeros((ys.size, prev.shape[2]))
        acc = np.where(up[:, None], acc + prev[yu, xs], acc)
        acc = np.where(down[:, None], acc + prev[yd, xs], acc)
        acc = np.where(left[:, None], acc + prev[ys, xl], acc)
        acc = np.where(right[:, None], acc + prev[ys, xr], acc)
        val = acc / cnt
        max_change = float(np.max(np.abs(val - prev[ys, xs]))) if ys.size else 0.0
        prev[ys, xs] = val
        sweeps = sweep + 1
        if max_change < tol:
            break
    return prev, sweeps
