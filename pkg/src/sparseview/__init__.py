"""Sparse-view geometry toolkit: match depths, depth alignment, virtual views, occlusion masks."""

__version__ = "0.1.0"

from .depthmap import DepthMap, bilinear_sample
from .errors import SparseViewError
from .geometry import Camera, CameraIntrinsics, CameraPose, CameraRig
from .kernels import BACKEND

__all__ = [
    "BACKEND", "Camera", "CameraIntrinsics", "CameraPose", "CameraRig", "DepthMap",
    "SparseViewError", "bilinear_sample", "__version__",
]
