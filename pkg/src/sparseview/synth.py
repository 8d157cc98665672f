"""Synthetic scenes with analytic ground truth.

Scenes are built from finite planes, spheres and axis-aligned boxes, so
every depth, colour and correspondence is computed in closed form. Camera
rays are generated with unit camera-frame z, which makes the ray parameter
of an intersection equal to its camera depth.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .correspondence import MatchGraph, MatchSet
from .depthmap import DepthMap
from .errors import NoOverlap
from .geometry import Camera, CameraIntrinsics, CameraPose, CameraRig, camera_rays, look_at, project

_HIT_EPS = 1e-9


@dataclass(frozen=True)
class Texture:
    kind: str = "sine"  # sine | checker | gradient
    frequency: float = 6.0
    phase: tuple = (0.0, 1.3, 2.6)
    base: tuple = (0.5, 0.5, 0.5)

    def color(self, X):
        X = np.asarray(X, dtype=np.float64)
        base = np.asarray(self.base)
        if self.kind == "sine":
            dirs = np.array([[1.0, 0.35, 0.2], [-0.3, 1.0, 0.45], [0.25, -0.4, 1.0]])
            dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
            proj = X @ dirs.T
            c = base + 0.2 * np.sin(self.frequency * proj + np.asarray(self.phase))
            c += 0.1 * np.sin(0.5 * self.frequency * proj[:, [1, 2, 0]] + 0.7)
        elif self.kind == "checker":
            cells = np.floor(X * self.frequency / np.pi).astype(np.int64).sum(axis=1) % 2
            c = base + np.where(cells[:, None] == 1, 0.3, -0.3)
        elif self.kind == "gradient":
            c = base + 0.05 * self.frequency * X @ np.array([[1.0, 0.0, 0.5], [0.0, 1.0, 0.5], [0.5, 0.5, 0.0]]).T
        else:
            raise ValueError(f"unknown texture {self.kind!r}")
        return np.clip(c, 0.0, 1.0)


@dataclass(frozen=True)
class Plane:
    """Finite rectangle: ``center + s*axis_u + t*axis_v`` with ``|s|<=half_u``, ``|t|<=half_v``."""

    center: tuple
    axis_u: tuple
    axis_v: tuple
    half_u: float
    half_v: float
    texture: Texture = Texture()

    def intersect(self, o, d):
        c, u, v = (np.asarray(a, dtype=np.float64) for a in (self.center, self.axis_u, self.axis_v))
        n = np.cross(u, v)
        denom = d @ n
        with np.errstate(divide="ignore", invalid="ignore"):
            t = ((c - o) @ n) / denom
        X = o + t[:, None] * d
        rel = X - c
        ok = (np.abs(denom) > 1e-15) & (t > _HIT_EPS)
        ok &= (np.abs(rel @ u) <= self.half_u) & (np.abs(rel @ v) <= self.half_v)
        return np.where(ok, t, np.inf)


@dataclass(frozen=True)
class Sphere:
    center: tuple
    radius: float
    texture: Texture = Texture()

    def intersect(self, o, d):
        oc = o - np.asarray(self.center, dtype=np.float64)
        a = np.einsum("ij,ij->i", d, d)
        b = d @ oc
        c = oc @ oc - self.radius ** 2
        disc = b * b - a * c
        ok = disc >= 0
        sq = np.sqrt(np.where(ok, disc, 0.0))
        t0 = (-b - sq) / a
        t1 = (-b + sq) / a
        t = np.where(t0 > _HIT_EPS, t0, np.where(t1 > _HIT_EPS, t1, np.inf))
        return np.where(ok, t, np.inf)


@dataclass(frozen=True)
class Box:
    center: tuple
    half_size: tuple
    texture: Texture = Texture()

    def intersect(self, o, d):
        lo = np.asarray(self.center) - np.asarray(self.half_size)
        hi = np.asarray(self.center) + np.asarray(self.half_size)
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / d
            t_a = (lo - o) * inv
            t_b = (hi - o) * inv
        t_near = np.nanmax(np.minimum(t_a, t_b), axis=1)
        t_far = np.nanmin(np.maximum(t_a, t_b), axis=1)
        hit = t_far >= np.maximum(t_near, _HIT_EPS)
        t = np.where(t_near > _HIT_EPS, t_near, t_far)
        return np.where(hit, t, np.inf)


@dataclass(frozen=True)
class NoiseSpec:
    match_sigma: float = 0.0
    outlier_fraction: float = 0.0
    depth_noise_sigma: float = 0.0

    def __post_init__(self):
        if not 0 <= self.outlier_fraction <= 1:
            raise ValueError("outlier_fraction must be in [0, 1]")
        if self.match_sigma < 0 or self.depth_noise_sigma < 0:
            raise ValueError("noise sigmas must be non-negative")


@dataclass(eq=False)
class SyntheticScene:
    primitives: list
    rig: CameraRig
    seed: int = 0
    name: str = "custom"
    info: dict = field(default_factory=dict)

    def rng(self, *stream):
        return np.random.default_rng([self.seed, *stream])


@dataclass(eq=False)
class MatchSample:
    matches: MatchSet
    inlier: np.ndarray
    z_i: np.ndarray  # true camera depth of points_i
    z_j: np.ndarray  # true camera depth of points_j (nan for outliers)


def cast(scene: SyntheticScene, view_id, pixels):
    """Nearest hit along each pixel ray: ``(depth, primitive_index)``; misses give ``(inf, -1)``."""
    cam = scene.rig[view_id]
    pixels = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    d = camera_rays(cam.intrinsics, pixels) @ cam.pose.rotation
    o = cam.pose.center
    best = np.full(len(pixels), np.inf)
    prim = np.full(len(pixels), -1, dtype=np.int64)
    for n, p in enumerate(scene.primitives):
        t = p.intersect(o, d)
        closer = t < best
        best = np.where(closer, t, best)
        prim = np.where(closer, n, prim)
    return best, prim


def _pixel_grid(intr: CameraIntrinsics):
    ys, xs = np.mgrid[0:intr.height, 0:intr.width]
    return np.stack([xs.ravel(), ys.ravel()], axis=-1).astype(np.float64)


def render_depth(scene: SyntheticScene, view_id) -> DepthMap:
    intr = scene.rig[view_id].intrinsics
    depth, _ = cast(scene, view_id, _pixel_grid(intr))
    depth = depth.reshape(intr.height, intr.width)
    valid = np.isfinite(depth)
    return DepthMap(np.where(valid, depth, 0.0), valid)


def render_labels(scene: SyntheticScene, view_id) -> np.ndarray:
    intr = scene.rig[view_id].intrinsics
    _, prim = cast(scene, view_id, _pixel_grid(intr))
    return prim.reshape(intr.height, intr.width)


def surface_points(scene: SyntheticScene, view_id, pixels):
    """World points and primitive ids hit by the rays through ``pixels``."""
    cam = scene.rig[view_id]
    depth, prim = cast(scene, view_id, pixels)
    d = camera_rays(cam.intrinsics, pixels) @ cam.pose.rotation
    X = cam.pose.center + np.where(np.isfinite(depth), depth, 0.0)[:, None] * d
    return X, depth, prim


def shade(scene: SyntheticScene, X, prim):
    out = np.zeros((len(X), 3))
    for n, p in enumerate(scene.primitives):
        sel = prim == n
        if sel.any():
            out[sel] = p.texture.color(X[sel])
    return out


def render_image(scene: SyntheticScene, view_id) -> np.ndarray:
    """Point-sampled texture colour of the hit primitive; black on misses."""
    intr = scene.rig[view_id].intrinsics
    X, _, prim = surface_points(scene, view_id, _pixel_grid(intr))
    return shade(scene, X, prim).reshape(intr.height, intr.width, 3)


def render_camera(scene: SyntheticScene, camera: Camera):
    """Render depth and image for an arbitrary camera (e.g. a virtual pose)."""
    tmp = SyntheticScene(scene.primitives, CameraRig({0: camera}), scene.seed, scene.name)
    return render_depth(tmp, 0), render_image(tmp, 0)


def visible_in(scene: SyntheticScene, view_id, X, rel_tol=1e-6):
    """Project world points into a view; visible if in frame and not occluded."""
    cam = scene.rig[view_id]
    intr = cam.intrinsics
    cam_pts = cam.pose.apply(X)
    z = cam_pts[:, 2]
    ok = z > 1e-6
    px = np.full((len(X), 2), -1.0)
    if ok.any():
        px[ok], _ = project(intr, cam.pose, X[ok])
    ok &= (px[:, 0] >= 0) & (px[:, 0] <= intr.width - 1) & (px[:, 1] >= 0) & (px[:, 1] <= intr.height - 1)
    hit = np.full(len(X), np.inf)
    if ok.any():
        hit[ok], _ = cast(scene, view_id, px[ok])
    ok &= np.abs(hit - z) <= rel_tol * np.maximum(z, 1e-12)
    return ok, px, z


def _random_pixels(rng, intr, n):
    return np.stack(
        [rng.uniform(0, intr.width - 1, n), rng.uniform(0, intr.height - 1, n)], axis=-1
    )


def _collect_visible(scene, views, count, rng, max_rounds=200):
    """World points visible in every view of ``views`` (sampled in the first)."""
    first = views[0]
    intr = scene.rig[first].intrinsics
    pts, zs = [], []
    have = 0
    for _ in range(max_rounds):
        if have >= count:
            break
        px = _random_pixels(rng, intr, max(4 * (count - have), 64))
        X, depth, prim = surface_points(scene, first, px)
        ok = prim >= 0
        for v in views[1:]:
            vis, _, _ = visible_in(scene, v, X)
            ok &= vis
        X = X[ok]
        pts.append(X)
        have += len(X)
    if have == 0:
        raise NoOverlap(f"views {views} share no visible surface")
    X = np.vstack(pts)
    if len(X) < count:
        raise NoOverlap(f"only {len(X)} co-visible points found in views {views}, wanted {count}")
    return X[:count]


def _projections(scene, view_id, X):
    cam = scene.rig[view_id]
    px, z = project(cam.intrinsics, cam.pose, X)
    return px, z


def _make_outliers(scene, vi, vj, n, rng):
    intr_i, intr_j = scene.rig[vi].intrinsics, scene.rig[vj].intrinsics
    pi, zi = [], []
    while sum(len(p) for p in pi) < n:
        px = _random_pixels(rng, intr_i, 2 * n + 8)
        depth, prim = cast(scene, vi, px)
        keep = prim >= 0
        pi.append(px[keep])
        zi.append(depth[keep])
    pi = np.vstack(pi)[:n]
    zi = np.concatenate(zi)[:n]
    pj = _random_pixels(rng, intr_j, n)
    return pi, pj, zi


def _jitter(rng, pts, sigma, intr):
    if sigma <= 0 or len(pts) == 0:
        return pts
    out = pts + rng.normal(0.0, sigma, pts.shape)
    out[:, 0] = np.clip(out[:, 0], 0, intr.width - 1)
    out[:, 1] = np.clip(out[:, 1], 0, intr.height - 1)
    return out


def _assemble(scene, vi, vj, X, n_out, noise, rng):
    pi, zi = _projections(scene, vi, X)
    pj, zj = _projections(scene, vj, X)
    pi = _jitter(rng, pi, noise.match_sigma, scene.rig[vi].intrinsics)
    pj = _jitter(rng, pj, noise.match_sigma, scene.rig[vj].intrinsics)
    oi, oj, ozi = _make_outliers(scene, vi, vj, n_out, rng) if n_out else (np.zeros((0, 2)),) * 2 + (np.zeros(0),)
    P_i = np.vstack([pi, oi])
    P_j = np.vstack([pj, oj])
    inl = np.concatenate([np.ones(len(pi), bool), np.zeros(n_out, bool)])
    Z_i = np.concatenate([zi, ozi])
    Z_j = np.concatenate([zj, np.full(n_out, np.nan)])
    order = rng.permutation(len(P_i))
    return MatchSample(MatchSet(vi, vj, P_i[order], P_j[order]), inl[order], Z_i[order], Z_j[order])


def sample_matches(scene: SyntheticScene, view_i, view_j, count, noise: NoiseSpec = NoiseSpec(), rng=None):
    """``count`` matches between two views, ``round(outlier_fraction*count)`` of them outliers.

    Inliers are surface points visible in both views; outliers keep a true
    surface point in view i and pair it with a uniform random pixel in view j.
    """
    rng = rng if rng is not None else scene.rng(1, view_i, view_j)
    n_out = int(round(noise.outlier_fraction * count))
    X = _collect_visible(scene, [view_i, view_j], count - n_out, rng) if count - n_out else np.zeros((0, 3))
    return _assemble(scene, view_i, view_j, X, n_out, noise, rng)


def sample_tracks(scene: SyntheticScene, count, noise: NoiseSpec = NoiseSpec(), views=None, rng=None):
    """Matches for every view pair built from one shared set of co-visible points.

    Each pair gets ``count`` matches; the inliers are projections of the
    same world points in all pairs, so bridge points of propagation
    chains coincide exactly. Returns ``(MatchGraph, {pair: MatchSample})``.
    """
    views = list(views if views is not None else scene.rig.view_ids)
    rng = rng if rng is not None else scene.rng(2)
    n_out = int(round(noise.outlier_fraction * count))
    X = _collect_visible(scene, views, count - n_out, rng) if count - n_out else np.zeros((0, 3))
    graph = MatchGraph()
    samples = {}
    for a in range(len(views)):
        for b in range(a + 1, len(views)):
            s = _assemble(scene, views[a], views[b], X, n_out, noise, rng)
            graph.add(s.matches)
            samples[(views[a], views[b])] = s
    return graph, samples


def mono_depth(scene: SyntheticScene, view_id, scale=2.0, offset=0.5, noise_sigma=0.0, rng=None) -> DepthMap:
    """Relative depth ``(gt - offset) / scale`` with optional multiplicative noise."""
    gt = render_depth(scene, view_id)
    vals = (gt.values - offset) / scale
    if noise_sigma > 0:
        rng = rng if rng is not None else scene.rng(3, view_id)
        vals = vals * (1.0 + rng.normal(0.0, noise_sigma, vals.shape))
    valid = gt.valid & (vals > 0)
    return DepthMap(np.where(valid, vals, 0.0), valid)


# ---------------------------------------------------------------- presets

def _intrinsics(width=160, height=120, f=150.0):
    return CameraIntrinsics(f, f, (width - 1) / 2.0, (height - 1) / 2.0, width, height)


def _parallel_rig(centers, intr):
    return CameraRig({n: Camera(intr, CameraPose.from_center(np.eye(3), c)) for n, c in enumerate(centers)})


def _phase(rng):
    return tuple(float(x) for x in rng.uniform(0, 2 * np.pi, 3))


def plane3view(seed=0):
    """Three forward-facing cameras; textured back plane at z=8 and a sphere in front."""
    rng = np.random.default_rng([seed, 0])
    intr = _intrinsics()
    rig = _parallel_rig([(-0.4, -0.05, 0.0), (0.0, 0.0, 0.0), (0.4, 0.05, 0.0)], intr)
    prims = [
        Plane((0.0, 0.0, 8.0), (1.0, 0.0, 0.0), (0.0, 1.0, 0.0), 30.0, 30.0,
              Texture("sine", 6.0, _phase(rng), (0.45, 0.5, 0.55))),
        Sphere((0.3, 0.2, 5.0), 1.2, Texture("sine", 7.0, _phase(rng), (0.6, 0.45, 0.4))),
    ]
    return SyntheticScene(prims, rig, seed, "plane3view", {"sphere": 1, "background": 0})


def occluder_square(seed=0):
    """Fronto-parallel square occluder at z=4 in front of a back plane at z=10."""
    rng = np.random.default_rng([seed, 1])
    intr = _intrinsics()
    rig = _parallel_rig([(-0.3, 0.0, 0.0), (0.0, 0.0, 0.0), (0.3, 0.0, 0.0)], intr)
    prims = [
        Plane((0.0, 0.0, 10.0), (1.0, 0.0, 0.0), (0.0, 1.0, 0.0), 40.0, 40.0,
              Texture("sine", 5.0, _phase(rng), (0.4, 0.5, 0.45))),
        Plane((0.0, 0.0, 4.0), (1.0, 0.0, 0.0), (0.0, 1.0, 0.0), 0.8, 0.8,
              Texture("sine", 8.0, _phase(rng), (0.65, 0.4, 0.35))),
    ]
    return SyntheticScene(prims, rig, seed, "occluder-square", {"occluder": 1, "background": 0, "mask_view": 1})


def sphere_ring_8(seed=0, n_views=8, radius=6.0, height=4.0):
    """Cameras on a ring around a sphere resting on a large ground plane (y up)."""
    rng = np.random.default_rng([seed, 2])
    intr = _intrinsics()
    target = np.array([0.0, 0.8, 0.0])
    cams = {}
    for n in range(n_views):
        a = 2 * np.pi * n / n_views
        c = np.array([radius * np.cos(a), height, radius * np.sin(a)])
        cams[n] = Camera(intr, look_at(c, target, up=(0.0, 1.0, 0.0)))
    prims = [
        Plane((0.0, 0.0, 0.0), (1.0, 0.0, 0.0), (0.0, 0.0, 1.0), 100.0, 100.0,
              Texture("sine", 4.0, _phase(rng), (0.45, 0.5, 0.4))),
        Sphere((0.0, 1.0, 0.0), 1.0, Texture("sine", 7.0, _phase(rng), (0.6, 0.4, 0.45))),
    ]
    return SyntheticScene(prims, CameraRig(cams), seed, "sphere-ring-8", {"sphere": 1, "background": 0})


PRESETS = {
    "plane3view": plane3view,
    "occluder-square": occluder_square,
    "sphere-ring-8": sphere_ring_8,
}


def make_preset(name: str, seed: int = 0) -> SyntheticScene:
    try:
        return PRESETS[name](seed)
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
