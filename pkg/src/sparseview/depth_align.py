"""Scale/offset recovery of relative monocular depth against sparse metric depths."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .depthmap import DepthMap, bilinear_sample
from .errors import DegenerateFit, InsufficientSamples


@dataclass(eq=False)
class SparseDepthSamples:
    pixels: np.ndarray
    depths: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64).reshape(-1, 2)
        self.depths = np.asarray(self.depths, dtype=np.float64).reshape(-1)
        self.mask = np.asarray(self.mask, dtype=bool).reshape(-1)
        if not (len(self.pixels) == len(self.depths) == len(self.mask)):
            raise ValueError("sample arrays must be parallel")
        if np.any(self.depths[self.mask] <= 0):
            raise ValueError("masked-in sample depths must be positive")

    def __len__(self):
        return len(self.depths)


@dataclass
class AffineDepthFit:
    scale: float
    offset: float
    inlier_mask: np.ndarray
    rms_residual: float

    @property
    def valid(self) -> bool:
        return self.scale > 0


def _solve_affine(x, y):
    # 2x2 normal equations for y ~ s*x + b, solved in centred form
    x_mean, y_mean = x.mean(), y.mean()
    dx = x - x_mean
    sxx = float(np.dot(dx, dx))
    if not sxx > 1e-24 * max(float(np.dot(x, x)), 1e-300):
        raise DegenerateFit("monocular depth is constant over the masked samples")
    s = float(np.dot(dx, y - y_mean)) / sxx
    b = float(y_mean - s * x_mean)
    return s, b


def fit_scale_offset(mono: DepthMap, samples: SparseDepthSamples, rounds: int = 3,
                     trim_fraction: float = 0.1) -> AffineDepthFit:
    """Trimmed least-squares fit of ``depth ~ s * mono + b``.

    Each round fits on the current inliers, then drops the ``trim_fraction``
    of them with the largest absolute residual. The returned fit is the one
    from the final round's inlier set.
    """
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    if not 0 <= trim_fraction < 1:
        raise ValueError("trim_fraction must be in [0, 1)")
    mono_vals, ok = bilinear_sample(mono.values, samples.pixels, mono.valid)
    use = samples.mask & ok
    if use.sum() < 2:
        raise InsufficientSamples(f"need >= 2 usable samples, got {int(use.sum())}")
    idx = np.nonzero(use)[0]
    x_all, y_all = mono_vals, samples.depths
    s, b = _solve_affine(x_all[idx], y_all[idx])
    for _ in range(rounds - 1):
        res = np.abs(y_all[idx] - (s * x_all[idx] + b))
        n_drop = int(np.floor(trim_fraction * idx.size))
        if n_drop == 0 or idx.size - n_drop < 2:
            break
        # stable sort keeps the lowest-index sample on equal residuals
        keep = np.sort(np.argsort(res, kind="stable")[: idx.size - n_drop])
        idx = idx[keep]
        s, b = _solve_affine(x_all[idx], y_all[idx])
    inliers = np.zeros(len(samples), dtype=bool)
    inliers[idx] = True
    rms = float(np.sqrt(np.mean((y_all[idx] - (s * x_all[idx] + b)) ** 2)))
    return AffineDepthFit(s, b, inliers, rms)


def apply_affine(mono: DepthMap, fit: AffineDepthFit) -> DepthMap:
    """Pointwise ``s * d + b``; results that are not positive become invalid."""
    vals = fit.scale * mono.values + fit.offset
    valid = mono.valid & np.isfinite(vals) & (vals > 0)
    return DepthMap(np.where(valid, vals, 0.0), valid)
