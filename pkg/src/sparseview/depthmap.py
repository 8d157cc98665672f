"""Dense depth images and bilinear sampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(eq=False)
class DepthMap:
    values: np.ndarray
    valid: np.ndarray = None  # default: finite and positive

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.valid is None:
            self.valid = np.isfinite(self.values) & (self.values > 0)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.values.ndim != 2 or self.values.shape != self.valid.shape:
            raise ValueError("depth values and mask must be matching 2-d arrays")
        bad = self.valid & ~(np.isfinite(self.values) & (self.values > 0))
        if bad.any():
            raise ValueError(f"{int(bad.sum())} valid pixels have non-positive or non-finite depth")

    @classmethod
    def from_array(cls, values):
        return cls(values, None)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self):
        return self.values.shape

    def masked(self, fill=0.0) -> np.ndarray:
        return np.where(self.valid, self.values, fill)

    def copy(self) -> "DepthMap":
        return DepthMap(self.values.copy(), self.valid.copy())


def bilinear_sample(image, pixels, valid=None):
    """Sample ``image`` (H, W[, C]) at continuous pixel coordinates.

    Returns ``(values, ok)``. A sample is ok when it lies inside
    ``[0, W-1] x [0, H-1]`` and, if ``valid`` is given, every corner with
    non-zero weight is valid.
    """
    image = np.asarray(image, dtype=np.float64)
    pixels = np.asarray(pixels, dtype=np.float64)
    h, w = image.shape[:2]
    u, v = pixels[..., 0], pixels[..., 1]
    ok = np.isfinite(u) & np.isfinite(v) & (u >= 0) & (u <= w - 1) & (v >= 0) & (v <= h - 1)
    uc = np.where(ok, u, 0.0)
    vc = np.where(ok, v, 0.0)
    x0 = np.minimum(np.floor(uc).astype(np.int64), max(w - 2, 0))
    y0 = np.minimum(np.floor(vc).astype(np.int64), max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = uc - x0
    fy = vc - y0
    w00 = (1 - fx) * (1 - fy)
    w01 = fx * (1 - fy)
    w10 = (1 - fx) * fy
    w11 = fx * fy
    if valid is not None:
        valid = np.asarray(valid, dtype=bool)
        for wt, yy, xx in ((w00, y0, x0), (w01, y0, x1), (w10, y1, x0), (w11, y1, x1)):
            ok &= (wt == 0) | valid[yy, xx]
    extra = (slice(None),) * (image.ndim - 2)
    def corner(yy, xx, wt):
        val = image[(yy, xx) + extra] if image.ndim > 2 else image[yy, xx]
        return val * (wt[..., None] if image.ndim > 2 else wt)
    out = corner(y0, x0, w00) + corner(y0, x1, w01) + corner(y1, x0, w10) + corner(y1, x1, w11)
    if image.ndim > 2:
        out = np.where(ok[..., None], out, 0.0)
    else:
        out = np.where(ok, out, 0.0)
    return out, ok
