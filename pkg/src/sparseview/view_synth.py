"""Virtual view synthesis by bidirectional warping.

Depth is forward-warped from a source view into the virtual camera
(z-buffered 4-neighbour splat, then ring hole filling); colour is then
fetched backward from the source with bilinear sampling through the warped
depth. Several single-source warps at one pose are fused base-first by
pose score.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation, Slerp

from . import kernels
from .depthmap import DepthMap, bilinear_sample
from .errors import InsufficientViews, PoseMismatch
from .geometry import Camera, CameraIntrinsics, CameraPose, camera_rays, perspective, relative_pose, rotation_angle

DEFAULT_FILL_RADIUS = 16
_SNAP = 1e-9
_FOOTPRINT_EPS = 1e-6


@dataclass(eq=False)
class VirtualView:
    pose: CameraPose
    intrinsics: CameraIntrinsics
    image: np.ndarray
    depth: DepthMap
    mask: np.ndarray
    sources: list = field(default_factory=list)

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=bool)
        if np.any(self.mask & ~self.depth.valid):
            raise ValueError("visibility mask must be a subset of the valid depth")

    @property
    def score(self) -> float:
        return max((s for _, s in self.sources), default=0.0)

    @property
    def coverage(self) -> float:
        return float(self.mask.mean())

    @property
    def camera(self) -> Camera:
        return Camera(self.intrinsics, self.pose)


@dataclass(eq=False)
class ForwardWarp:
    depth: DepthMap
    covered: np.ndarray  # pixels hit by a splat before hole filling


def pose_distance(src: CameraPose, vir: CameraPose, w_rot: float = 1.0) -> float:
    rel = relative_pose(src, vir)
    return float(np.linalg.norm(rel.translation) + w_rot * rotation_angle(rel.rotation))


def pose_score(src: CameraPose, vir: CameraPose, w_rot: float = 1.0) -> float:
    """Similarity in (0, 1]; 1 iff the poses coincide."""
    if w_rot < 0:
        raise ValueError("w_rot must be non-negative")
    return 1.0 / (1.0 + pose_distance(src, vir, w_rot))


def _snap(px):
    r = np.round(px)
    return np.where(np.abs(px - r) < _SNAP, r, px)


def _reproject(depth_values, valid, src: Camera, dst: Camera):
    """Warp valid pixels of a depth map into ``dst``: (pixels, dst_depth, src_flat_index)."""
    h, w = depth_values.shape
    ys, xs = np.nonzero(valid)
    px = np.stack([xs, ys], axis=-1).astype(np.float64)
    cam = camera_rays(src.intrinsics, px) * depth_values[ys, xs][:, None]
    rel = relative_pose(src.pose, dst.pose)
    dst_cam = cam @ rel.rotation.T + rel.translation
    z = dst_cam[:, 2]
    front = z > 1e-9
    pix = perspective(dst.intrinsics, dst_cam[front])
    return _snap(pix), z[front], (ys * w + xs)[front]


def _splat_targets(pix, z, h, w):
    """4-neighbour footprint of each point; corners with negligible bilinear weight are skipped."""
    u, v = pix[:, 0], pix[:, 1]
    x0, y0 = np.floor(u), np.floor(v)
    fu, fv = u - x0, v - y0
    targets, depths = [], []
    for dx, dy, wt in (
        (0, 0, (1 - fu) * (1 - fv)), (1, 0, fu * (1 - fv)),
        (0, 1, (1 - fu) * fv), (1, 1, fu * fv),
    ):
        xx = x0 + dx
        yy = y0 + dy
        ok = (wt > _FOOTPRINT_EPS) & (xx >= 0) & (xx < w) & (yy >= 0) & (yy < h)
        targets.append((yy[ok] * w + xx[ok]).astype(np.int64))
        depths.append(z[ok])
    return np.concatenate(targets), np.concatenate(depths)


def fill_holes(depth: DepthMap, max_radius: int = DEFAULT_FILL_RADIUS) -> DepthMap:
    """Fill invalid pixels from the nearest Chebyshev ring holding valid pixels.

    The filled value is the inverse-distance weighted mean over that ring.
    Pixels with no valid pixel within ``max_radius`` stay invalid; valid
    pixels are never modified.
    """
    if max_radius <= 0 or depth.valid.all() or not depth.valid.any():
        return depth.copy()
    values, filled = kernels.fill_holes(depth.values, depth.valid, max_radius)
    valid = depth.valid | filled
    return DepthMap(np.where(valid, values, 0.0), valid)


def warp_depth_forward(src_depth: DepthMap, src_cam: Camera, vir_cam: Camera,
                       fill_radius: int = DEFAULT_FILL_RADIUS) -> ForwardWarp:
    h, w = vir_cam.intrinsics.shape
    pix, z, _ = _reproject(src_depth.values, src_depth.valid, src_cam, vir_cam)
    if z.size == 0:
        empty = np.zeros((h, w), dtype=bool)
        return ForwardWarp(DepthMap(np.zeros((h, w)), empty), empty)
    target, cand_z = _splat_targets(pix, z, h, w)
    zbuf, winner = kernels.zbuffer_splat(target, cand_z, h * w)
    covered = (winner >= 0).reshape(h, w)
    sparse = DepthMap(np.where(covered, zbuf.reshape(h, w), 0.0), covered)
    return ForwardWarp(fill_holes(sparse, fill_radius), covered)


def warp_image_backward(src_image, src_cam: Camera, vir_cam: Camera, vir_depth: DepthMap,
                        src_depth: DepthMap | None = None, depth_tol: float | None = 0.02):
    """Fetch source colours for every valid virtual pixel.

    The mask is false where the lookup leaves the source frame or lands
    behind the source camera. When ``src_depth`` is given, lookups whose
    depth disagrees with the source depth by more than ``depth_tol``
    (relative) are treated as occluded in the source and masked out too.
    """
    src_image = np.asarray(src_image, dtype=np.float64)
    h, w = vir_cam.intrinsics.shape
    out = np.zeros((h, w) + src_image.shape[2:])
    mask = np.zeros((h, w), dtype=bool)
    ys, xs = np.nonzero(vir_depth.valid)
    if ys.size == 0:
        return out, mask
    px = np.stack([xs, ys], axis=-1).astype(np.float64)
    cam = camera_rays(vir_cam.intrinsics, px) * vir_depth.values[ys, xs][:, None]
    rel = relative_pose(vir_cam.pose, src_cam.pose)
    src_pts = cam @ rel.rotation.T + rel.translation
    z = src_pts[:, 2]
    front = z > 1e-9
    src_px = np.full((ys.size, 2), np.nan)
    src_px[front] = _snap(perspective(src_cam.intrinsics, src_pts[front]))
    colors, ok = bilinear_sample(src_image, src_px)
    ok &= front
    if src_depth is not None and depth_tol is not None:
        d_src, d_ok = bilinear_sample(src_depth.values, src_px, src_depth.valid)
        consistent = np.zeros_like(ok)
        sel = ok & d_ok
        consistent[sel] = np.abs(d_src[sel] - z[sel]) <= depth_tol * z[sel]
        ok &= consistent
    out[ys[ok], xs[ok]] = colors[ok]
    mask[ys[ok], xs[ok]] = True
    return out, mask


def warp_image_forward(src_image, src_depth: DepthMap, src_cam: Camera, vir_cam: Camera):
    """Plain forward splat: each source pixel to its nearest virtual pixel, z-buffered.

    Returns ``(image, mask, depth)``; the baseline that bidirectional
    warping is compared against.
    """
    src_image = np.asarray(src_image, dtype=np.float64)
    h, w = vir_cam.intrinsics.shape
    pix, z, src_idx = _reproject(src_depth.values, src_depth.valid, src_cam, vir_cam)
    xi = np.round(pix[:, 0]).astype(np.int64)
    yi = np.round(pix[:, 1]).astype(np.int64)
    inside = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
    target = np.where(inside, yi * w + xi, -1)
    zbuf, winner = kernels.zbuffer_splat(target, z, h * w)
    mask = (winner >= 0).reshape(h, w)
    flat_src = src_image.reshape((-1,) + src_image.shape[2:])
    out = np.zeros((h * w,) + src_image.shape[2:])
    hit = winner >= 0
    out[hit] = flat_src[src_idx[winner[hit]]]
    depth = DepthMap(np.where(mask, zbuf.reshape(h, w), 0.0), mask)
    return out.reshape((h, w) + src_image.shape[2:]), mask, depth


def fuse_topk(views, k: int = 2) -> VirtualView:
    """Base-first fusion of the ``k`` best-scoring single-source warps."""
    views = list(views)
    if not views:
        raise ValueError("no views to fuse")
    if k < 1:
        raise ValueError("k must be >= 1")
    ref = views[0]
    for v in views[1:]:
        if not v.pose.allclose(ref.pose, atol=1e-9) or v.intrinsics != ref.intrinsics:
            raise PoseMismatch("views to fuse must share pose and intrinsics")
    ranked = sorted(
        range(len(views)),
        key=lambda n: (-views[n].score, min((sid for sid, _ in views[n].sources), default=0), n),
    )[:k]
    base = views[ranked[0]]
    image = base.image.copy()
    dvals, dvalid = base.depth.values.copy(), base.depth.valid.copy()
    mask = base.mask.copy()
    sources = list(base.sources)
    for n in ranked[1:]:
        v = views[n]
        take = v.mask & ~mask
        image[take] = v.image[take]
        dvals[take] = v.depth.values[take]
        dvalid[take] = True
        mask |= v.mask
        sources.extend(v.sources)
    return VirtualView(base.pose, base.intrinsics, image, DepthMap(dvals, dvalid), mask, sources)


def generate_virtual_poses(rig, count: int, seed: int = 0, t_range=(0.1, 0.9)) -> list[CameraPose]:
    """Poses interpolated between random pairs of training views."""
    ids = rig.view_ids
    if len(ids) < 2:
        raise InsufficientViews(f"need at least 2 training views, got {len(ids)}")
    rng = np.random.default_rng(seed)
    poses = []
    for _ in range(int(count)):
        a, b = rng.choice(len(ids), size=2, replace=False)
        t = float(rng.uniform(*t_range))
        poses.append(interpolate_pose(rig[ids[a]].pose, rig[ids[b]].pose, t))
    return poses


def interpolate_pose(p0: CameraPose, p1: CameraPose, t: float) -> CameraPose:
    """Slerp of rotation, linear interpolation of the optical centre."""
    rots = Rotation.from_matrix(np.stack([p0.rotation, p1.rotation]))
    R = Slerp([0.0, 1.0], rots)([t]).as_matrix()[0]
    center = (1.0 - t) * p0.center + t * p1.center
    return CameraPose.from_center(R, center)


def rank_sources(rig, source_ids, vir_pose: CameraPose, w_rot: float = 1.0):
    """``(view_id, score)`` sorted by descending score, ties to the lower id."""
    scored = [(vid, pose_score(rig[vid].pose, vir_pose, w_rot)) for vid in source_ids]
    return sorted(scored, key=lambda s: (-s[1], s[0]))


def warp_single(src_image, src_depth: DepthMap, src_cam: Camera, vir_cam: Camera, score,
                view_id, fill_radius=DEFAULT_FILL_RADIUS, depth_tol=0.02) -> VirtualView:
    fw = warp_depth_forward(src_depth, src_cam, vir_cam, fill_radius)
    img, mask = warp_image_backward(src_image, src_cam, vir_cam, fw.depth, src_depth, depth_tol)
    return VirtualView(vir_cam.pose, vir_cam.intrinsics, img, fw.depth, mask & fw.depth.valid,
                       [(int(view_id), float(score))])


def synthesize(rig, sources, vir_pose: CameraPose, k: int = 2, intrinsics=None, w_rot: float = 1.0,
               fill_radius: int = DEFAULT_FILL_RADIUS, depth_tol: float | None = 0.02) -> VirtualView:
    """Warp the ``k`` best-scoring sources to ``vir_pose`` and fuse them.

    ``sources`` maps view id to ``(image, aligned DepthMap)``.
    """
    if k < 1 or k > len(sources):
        raise ValueError(f"k must be in [1, {len(sources)}], got {k}")
    ranked = rank_sources(rig, sorted(sources), vir_pose, w_rot)[:k]
    intr = intrinsics if intrinsics is not None else rig[ranked[0][0]].intrinsics
    vir_cam = Camera(intr, vir_pose)
    views = []
    for vid, score in ranked:
        image, depth = sources[vid]
        views.append(warp_single(image, depth, rig[vid], vir_cam, score, vid, fill_radius, depth_tol))
    return fuse_topk(views, k)
