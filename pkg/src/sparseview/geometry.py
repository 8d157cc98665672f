"""Pinhole camera algebra.

Conventions
-----------
* Poses are world-to-camera: ``x_cam = R @ x_world + t``.
* Pixel coordinates are continuous with ``(0, 0)`` at the centre of the
  top-left pixel; ``u`` runs along columns, ``v`` along rows.
* Depth ``z`` is the camera-frame z coordinate, not the along-ray distance.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import MissingInput, NonPositiveDepth, ParseError

MIN_DEPTH = 1e-9
_ORTHO_TOL = 1e-9


def _frozen(a, shape=None):
    arr = np.array(a, dtype=np.float64)
    if shape is not None:
        arr = arr.reshape(shape)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError(
                f"principal point ({self.cx}, {self.cy}) outside {self.width}x{self.height} image"
            )

    @property
    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    def scaled(self, k: float) -> "CameraIntrinsics":
        return CameraIntrinsics(
            self.fx * k, self.fy * k, self.cx * k, self.cy * k,
            int(round(self.width * k)), int(round(self.height * k)),
        )


@dataclass(frozen=True, eq=False)
class CameraPose:
    """World-to-camera rigid transform."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = _frozen(self.rotation, (3, 3))
        t = _frozen(self.translation, (3,))
        if not np.allclose(R.T @ R, np.eye(3), rtol=0.0, atol=_ORTHO_TOL):
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > _ORTHO_TOL:
            raise ValueError("rotation has determinant != 1")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "CameraPose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_center(cls, rotation, center) -> "CameraPose":
        R = np.asarray(rotation, dtype=np.float64)
        return cls(R, -R @ np.asarray(center, dtype=np.float64))

    @property
    def center(self) -> np.ndarray:
        """Optical centre in world coordinates."""
        return -self.rotation.T @ self.translation

    def inverse(self) -> "CameraPose":
        return CameraPose(self.rotation.T, -self.rotation.T @ self.translation)

    def apply(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation.T + self.translation

    def allclose(self, other: "CameraPose", atol: float = 1e-9) -> bool:
        return bool(
            np.allclose(self.rotation, other.rotation, rtol=0.0, atol=atol)
            and np.allclose(self.translation, other.translation, rtol=0.0, atol=atol)
        )

    def __eq__(self, other):
        if not isinstance(other, CameraPose):
            return NotImplemented
        return bool(
            np.array_equal(self.rotation, other.rotation)
            and np.array_equal(self.translation, other.translation)
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class Ray:
    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        d = _frozen(self.direction, (3,))
        if abs(np.linalg.norm(d) - 1.0) > 1e-9:
            raise ValueError("ray direction must be unit length")
        object.__setattr__(self, "origin", _frozen(self.origin, (3,)))
        object.__setattr__(self, "direction", d)

    def at(self, s):
        return self.origin + np.multiply.outer(np.asarray(s, dtype=np.float64), self.direction)


@dataclass(frozen=True)
class Camera:
    intrinsics: CameraIntrinsics
    pose: CameraPose

    @property
    def shape(self):
        return self.intrinsics.shape


def compose(outer: CameraPose, inner: CameraPose) -> CameraPose:
    """Transform applying ``inner`` first, then ``outer``."""
    R = outer.rotation @ inner.rotation
    t = outer.rotation @ inner.translation + outer.translation
    return CameraPose(_reorthonormalize(R), t)


def relative_pose(from_pose: CameraPose, to_pose: CameraPose) -> CameraPose:
    """Map from ``from_pose``'s camera frame to ``to_pose``'s camera frame."""
    R = to_pose.rotation @ from_pose.rotation.T
    t = to_pose.translation - R @ from_pose.translation
    return CameraPose(_reorthonormalize(R), t)


def _reorthonormalize(R):
    # keeps long composition chains inside the pose validation tolerance
    u, _, vt = np.linalg.svd(R)
    out = u @ vt
    if np.linalg.det(out) < 0:
        u[:, -1] *= -1
        out = u @ vt
    return out


def rotation_angle(R) -> float:
    """Geodesic angle of a rotation matrix in radians."""
    c = (np.trace(np.asarray(R)) - 1.0) / 2.0
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


def to_camera(pose: CameraPose, points) -> np.ndarray:
    return pose.apply(points)


def perspective(intrinsics: CameraIntrinsics, cam_points) -> np.ndarray:
    """Pixel coordinates of camera-frame points (no depth check)."""
    cam_points = np.asarray(cam_points, dtype=np.float64)
    z = cam_points[..., 2]
    u = intrinsics.fx * cam_points[..., 0] / z + intrinsics.cx
    v = intrinsics.fy * cam_points[..., 1] / z + intrinsics.cy
    return np.stack([u, v], axis=-1)


def project(intrinsics: CameraIntrinsics, pose: CameraPose, point):
    """Project world point(s) into the image.

    Works on a single 3-vector or an ``(..., 3)`` array. Returns
    ``(pixel, camera_depth)``. Raises :class:`NonPositiveDepth` if any point
    has camera-frame depth at or below 1e-9.
    """
    cam = to_camera(pose, point)
    z = cam[..., 2]
    if np.any(z <= MIN_DEPTH):
        raise NonPositiveDepth("point at or behind the camera plane", depth=float(np.min(z)))
    return perspective(intrinsics, cam), z


def camera_rays(intrinsics: CameraIntrinsics, pixels) -> np.ndarray:
    """Camera-frame direction with unit z for each pixel: ``K^-1 [u, v, 1]``."""
    pixels = np.asarray(pixels, dtype=np.float64)
    x = (pixels[..., 0] - intrinsics.cx) / intrinsics.fx
    y = (pixels[..., 1] - intrinsics.cy) / intrinsics.fy
    return np.stack([x, y, np.ones_like(x)], axis=-1)


def back_project(intrinsics: CameraIntrinsics, pose: CameraPose, pixel, z):
    """World point at camera depth ``z`` along the ray through ``pixel``."""
    z = np.asarray(z, dtype=np.float64)
    if np.any(z <= 0):
        raise NonPositiveDepth("back-projection depth must be positive", depth=float(np.min(z)))
    cam = camera_rays(intrinsics, pixel) * z[..., None]
    return (cam - pose.translation) @ pose.rotation


def pixel_ray(intrinsics: CameraIntrinsics, pose: CameraPose, pixel) -> Ray:
    d_cam = camera_rays(intrinsics, pixel)
    d = pose.rotation.T @ d_cam
    return Ray(pose.center, d / np.linalg.norm(d))


class CameraRig:
    """Ordered collection of cameras keyed by integer view id."""

    FIELDS = ("view_id", "fx", "fy", "cx", "cy", "width", "height", "rotation", "translation")

    def __init__(self, cameras=None):
        self._cameras: dict[int, Camera] = {}
        for view_id, cam in (cameras or {}).items():
            self.add(view_id, cam)

    def add(self, view_id: int, camera: Camera):
        self._cameras[int(view_id)] = camera

    @property
    def view_ids(self) -> list[int]:
        return sorted(self._cameras)

    def __getitem__(self, view_id) -> Camera:
        return self._cameras[int(view_id)]

    def __contains__(self, view_id):
        return int(view_id) in self._cameras

    def __len__(self):
        return len(self._cameras)

    def __iter__(self):
        return iter(self.view_ids)

    def relative(self, i, j) -> CameraPose:
        return relative_pose(self[i].pose, self[j].pose)

    def to_records(self) -> list[dict]:
        records = []
        for vid in self.view_ids:
            cam = self[vid]
            k = cam.intrinsics
            records.append(
                {
                    "view_id": vid,
                    "fx": k.fx, "fy": k.fy, "cx": k.cx, "cy": k.cy,
                    "width": k.width, "height": k.height,
                    "rotation": [float(x) for x in cam.pose.rotation.ravel()],
                    "translation": [float(x) for x in cam.pose.translation],
                }
            )
        return records

    @classmethod
    def from_records(cls, records, source="<records>") -> "CameraRig":
        rig = cls()
        for n, rec in enumerate(records):
            missing = [f for f in cls.FIELDS if f not in rec]
            if missing:
                raise ParseError(f"{source}: view record {n} missing fields {missing}", path=str(source))
            try:
                rig.add(rec["view_id"], camera_from_record(rec))
            except (TypeError, ValueError) as exc:
                raise ParseError(f"{source}: view record {n}: {exc}", path=str(source)) from exc
        return rig

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_records(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "CameraRig":
        path = Path(path)
        if not path.exists():
            raise MissingInput(f"camera rig file not found: {path}", path=str(path))
        try:
            records = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: {exc}", path=str(path)) from exc
        if not isinstance(records, list):
            raise ParseError(f"{path}: expected a list of view objects", path=str(path))
        return cls.from_records(records, source=path)


def camera_from_record(rec) -> Camera:
    intr = CameraIntrinsics(
        float(rec["fx"]), float(rec["fy"]), float(rec["cx"]), float(rec["cy"]),
        int(rec["width"]), int(rec["height"]),
    )
    pose = CameraPose(np.reshape(rec["rotation"], (3, 3)), np.reshape(rec["translation"], (3,)))
    return Camera(intr, pose)


def look_at(center, target, up=(0.0, -1.0, 0.0)) -> CameraPose:
    """World-to-camera pose at ``center`` looking toward ``target``.

    ``up`` is the world direction that should appear toward the top of the
    image (the camera's -y axis).
    """
    center = np.asarray(center, dtype=np.float64)
    z = np.asarray(target, dtype=np.float64) - center
    z /= np.linalg.norm(z)
    down = -np.asarray(up, dtype=np.float64)
    x = np.cross(down, z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    R = np.stack([x, y, z])
    return CameraPose.from_center(R, center)
