"""Depth-difference occlusion masks and background inpainting."""

from __future__ import annotations

import shlex
import subprocess
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import kernels
from .depthmap import DepthMap
from .errors import DegenerateRange, SparseViewError
from .geometry import perspective, to_camera

SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
SOBEL_Y = SOBEL_X.T


@dataclass(frozen=True)
class OcclusionConfig:
    n_slices: int = 8
    edge_threshold: float = 0.1
    min_region_area: int = 16

    def __post_init__(self):
        if self.n_slices < 2:
            raise ValueError("n_slices must be >= 2")
        if not 0 < self.edge_threshold < 1:
            raise ValueError("edge_threshold must be in (0, 1)")
        if self.min_region_area < 0:
            raise ValueError("min_region_area must be >= 0")


@dataclass(eq=False)
class OcclusionMaskSet:
    edge_map: np.ndarray
    slice_index: np.ndarray
    local_fg: np.ndarray
    slice_mask: np.ndarray
    candidate: np.ndarray = None
    rectangles: list = field(default_factory=list)  # (y0, x0, y1, x1, slice) inclusive bounds

    @classmethod
    def empty(cls, shape):
        z = np.zeros(shape, dtype=bool)
        return cls(np.zeros(shape), np.zeros(shape, dtype=np.int64), z, z.copy(), z.copy(), [])


def _fill_for_edges(depth: DepthMap):
    # invalid pixels take the value of the nearest valid one so they do not create fake edges
    if depth.valid.all() or not depth.valid.any():
        return depth.values
    _, (iy, ix) = ndimage.distance_transform_edt(~depth.valid, return_indices=True)
    return depth.values[iy, ix]


def sobel_magnitude(depth: DepthMap) -> np.ndarray:
    """Sobel gradient magnitude normalised by its maximum (replicate borders)."""
    d = _fill_for_edges(depth)
    gx = ndimage.correlate(d, SOBEL_X, mode="nearest")
    gy = ndimage.correlate(d, SOBEL_Y, mode="nearest")
    mag = np.hypot(gx, gy)
    peak = mag.max()
    return mag / peak if peak > 0 else np.zeros_like(mag)


def slice_depth(depth: DepthMap, n: int) -> np.ndarray:
    """Equal-width depth bins over the valid range; invalid pixels get -1."""
    if n < 2:
        raise ValueError("n must be >= 2")
    if not depth.valid.any():
        raise DegenerateRange("no valid depth to slice")
    vals = depth.values[depth.valid]
    lo, hi = vals.min(), vals.max()
    if hi <= lo:
        raise DegenerateRange(f"depth range is empty ({lo} .. {hi})")
    width = (hi - lo) / n
    idx = np.floor((depth.values - lo) / width).astype(np.int64)
    idx = np.clip(idx, 0, n - 1)
    return np.where(depth.valid, idx, -1)


def local_foreground_mask(depth: DepthMap, config: OcclusionConfig = OcclusionConfig()) -> OcclusionMaskSet:
    """Foreground regions bordered by strong depth edges.

    Edge pixels above the threshold form candidate regions (8-connected,
    small ones dropped). For each region the near-side slice is the
    plurality slice of the minimum depth in each edge pixel's 3x3
    neighbourhood, and the region's bounding rectangle crops the pixels at
    or nearer than that slice.
    """
    shape = depth.shape
    edge = sobel_magnitude(depth)
    try:
        slices = slice_depth(depth, config.n_slices)
    except DegenerateRange:
        out = OcclusionMaskSet.empty(shape)
        out.edge_map = edge
        return out
    cand = (edge > config.edge_threshold) & depth.valid
    labels, n_comp = ndimage.label(cand, structure=np.ones((3, 3), dtype=bool))
    filled = _fill_for_edges(depth)
    near = ndimage.minimum_filter(filled, size=3, mode="nearest")
    near_slice = slice_of(near, depth, config.n_slices)

    local_fg = np.zeros(shape, dtype=bool)
    slice_mask = np.zeros(shape, dtype=bool)
    kept = np.zeros(shape, dtype=bool)
    rects = []
    objects = ndimage.find_objects(labels)
    for lab, sl in enumerate(objects, start=1):
        if sl is None:
            continue
        region = labels[sl] == lab
        if region.sum() < config.min_region_area:
            continue
        kept[sl] |= region
        votes = np.bincount(near_slice[sl][region], minlength=config.n_slices)
        b = int(np.argmax(votes))  # lowest slice wins a tie
        y0, y1 = sl[0].start, sl[0].stop - 1
        x0, x1 = sl[1].start, sl[1].stop - 1
        rects.append((y0, x0, y1, x1, b))
        in_slice = (slices >= 0) & (slices <= b)
        local_fg[sl] |= in_slice[sl]
        slice_mask |= in_slice
    return OcclusionMaskSet(edge, slices, local_fg, slice_mask, kept, rects)


def slice_of(values, depth: DepthMap, n: int) -> np.ndarray:
    """Bin arbitrary depth values with the slicing of ``depth``."""
    vals = depth.values[depth.valid]
    lo, hi = vals.min(), vals.max()
    idx = np.floor((values - lo) / ((hi - lo) / n)).astype(np.int64)
    return np.clip(idx, 0, n - 1)


def filter_background_points(points, masks: OcclusionMaskSet, cam):
    """Drop points whose projection lands on the occluding foreground.

    A point is removed when its nearest pixel has ``local_fg`` and
    ``slice_mask`` set. Points outside the frame or behind the camera are
    kept. Returns ``(kept_points, keep_flags)``.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    keep = np.ones(len(pts), dtype=bool)
    if len(pts) == 0:
        return pts, keep
    cam_pts = to_camera(cam.pose, pts)
    front = cam_pts[:, 2] > 1e-9
    px = np.full((len(pts), 2), -1.0)
    px[front] = perspective(cam.intrinsics, cam_pts[front])
    h, w = masks.local_fg.shape
    xi = np.round(px[:, 0]).astype(np.int64)
    yi = np.round(px[:, 1]).astype(np.int64)
    inside = front & (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
    occl = masks.local_fg & masks.slice_mask
    keep[inside] = ~occl[yi[inside], xi[inside]]
    return pts[keep], keep


class DiffusionInpainter:
    """Deterministic fallback: ring-average initialisation, then Jacobi diffusion."""

    def __init__(self, max_sweeps=500, tol=1e-4):
        self.max_sweeps = max_sweeps
        self.tol = tol
        self.sweeps = 0

    def __call__(self, image, mask):
        img = np.asarray(image, dtype=np.float64)
        squeeze = img.ndim == 2
        work = img[..., None] if squeeze else img
        mask = np.asarray(mask, dtype=bool)
        if not mask.any() or mask.all():
            return np.array(image, copy=True)
        h, w = mask.shape
        radius = int(max(h, w))
        init = np.empty_like(work)
        for c in range(work.shape[2]):
            vals, _ = kernels.fill_holes(work[..., c], ~mask, radius)
            init[..., c] = vals
        out, self.sweeps = kernels.diffuse(init, mask, self.max_sweeps, self.tol)
        out = out[..., 0] if squeeze else out
        return out


class ExternalInpainter:
    """Pipe image and mask through an external command.

    The command is run as ``<command> <image.png> <mask.png> <output.png>``.
    """

    def __init__(self, command: str):
        self.command = shlex.split(command)
        if not self.command:
            raise ValueError("empty inpainting command")

    def __call__(self, image, mask):
        from .io import read_png, write_png

        with tempfile.TemporaryDirectory() as tmp:
            tmp = Path(tmp)
            write_png(tmp / "image.png", image)
            write_png(tmp / "mask.png", np.asarray(mask, dtype=bool))
            proc = subprocess.run(
                self.command + [str(tmp / "image.png"), str(tmp / "mask.png"), str(tmp / "out.png")],
                capture_output=True, text=True,
            )
            if proc.returncode != 0 or not (tmp / "out.png").exists():
                raise SparseViewError(
                    f"external inpainter failed ({proc.returncode}): {proc.stderr.strip()}"
                )
            out = read_png(tmp / "out.png")
        if np.issubdtype(np.asarray(image).dtype, np.integer):
            out = out * 255.0
        if np.asarray(image).ndim == 2 and out.ndim == 3:
            out = out.mean(axis=2)
        return out


def get_inpainter(spec: str | None):
    """``None``/``"diffusion"`` -> fallback; ``"external:<command>"`` -> subprocess."""
    if spec in (None, "", "diffusion"):
        return DiffusionInpainter()
    if spec.startswith("external:"):
        return ExternalInpainter(spec[len("external:"):])
    raise ValueError(f"unknown inpainting backend {spec!r}")


def inpaint(image, mask, inpainter=None):
    """Replace masked pixels; unmasked pixels are returned bit-identical."""
    image = np.asarray(image)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != image.shape[:2]:
        raise ValueError("mask must match the image's spatial shape")
    if not mask.any():
        return image.copy()
    painter = inpainter or DiffusionInpainter()
    filled = np.asarray(painter(image, mask), dtype=np.float64)
    out = image.copy()
    if np.issubdtype(image.dtype, np.integer):
        info = np.iinfo(image.dtype)
        out[mask] = np.clip(np.round(filled[mask]), info.min, info.max).astype(image.dtype)
    else:
        out[mask] = filled[mask]
    return out
