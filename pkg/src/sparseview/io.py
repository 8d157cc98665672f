"""File formats: PFM depth maps, PNG images/masks, depth-field CSVs and pose lists."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np
from PIL import Image

from .depthmap import DepthMap
from .errors import MissingInput, ParseError
from .geometry import CameraPose


def _require(path):
    path = Path(path)
    if not path.exists():
        raise MissingInput(f"{path}: no such file", path=str(path))
    return path


def write_pfm(path, depth):
    """Little-endian single-channel PFM; invalid pixels are written as 0."""
    if isinstance(depth, DepthMap):
        depth = depth.masked(0.0)
    arr = np.asarray(depth, dtype="<f4")
    if arr.ndim != 2:
        raise ValueError("PFM writer expects a single-channel map")
    h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(b"Pf\n")
        fh.write(f"{w} {h}\n".encode("ascii"))
        fh.write(b"-1.0\n")
        fh.write(np.ascontiguousarray(arr[::-1]).tobytes())


def read_pfm(path) -> np.ndarray:
    path = _require(path)
    with open(path, "rb") as fh:
        try:
            header = fh.readline().strip()
            dims = fh.readline().split()
            scale = float(fh.readline().strip())
            w, h = int(dims[0]), int(dims[1])
        except (ValueError, IndexError) as exc:
            raise ParseError(f"{path}: malformed PFM header", path=str(path)) from exc
        if header not in (b"Pf", b"PF"):
            raise ParseError(f"{path}: not a PFM file", path=str(path))
        channels = 3 if header == b"PF" else 1
        dtype = "<f4" if scale < 0 else ">f4"
        data = np.frombuffer(fh.read(), dtype=dtype)
    if data.size != w * h * channels:
        raise ParseError(f"{path}: expected {w * h * channels} floats, got {data.size}", path=str(path))
    shape = (h, w, channels) if channels == 3 else (h, w)
    return data.reshape(shape)[::-1].astype(np.float64)


def read_depth(path) -> DepthMap:
    """PFM to DepthMap; non-positive or non-finite pixels are invalid."""
    return DepthMap.from_array(read_pfm(path))


def to_uint8(image) -> np.ndarray:
    img = np.asarray(image)
    if img.dtype == np.uint8:
        return img
    if img.dtype == bool:
        return img.astype(np.uint8) * 255
    return np.clip(np.round(np.asarray(img, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def write_png(path, image):
    """8-bit PNG. Float images are taken to be in [0, 1]; boolean masks become 0/255."""
    img = to_uint8(image)
    mode = "L" if img.ndim == 2 else "RGB"
    # fixed encoder settings keep output byte-stable
    Image.fromarray(img, mode=mode).save(path, format="PNG", optimize=False, compress_level=6)


def read_png(path, as_float=True) -> np.ndarray:
    path = _require(path)
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("L" if im.mode in ("L", "1", "I", "I;16") else "RGB"))
    except OSError as exc:
        raise ParseError(f"{path}: {exc}", path=str(path)) from exc
    return arr.astype(np.float64) / 255.0 if as_float else arr


def read_mask(path) -> np.ndarray:
    arr = read_png(path, as_float=False)
    if arr.ndim == 3:
        arr = arr[..., 0]
    return arr >= 128


DEPTH_FIELD_HEADER = ["view_i", "view_j", "index", "x", "y", "z", "rc_mask"]
CHAIN_HEADER = ["view_i", "bridge_j", "view_k", "index_ij", "index_jk", "bridge_gap", "ppc_mask"]


def _fmt(x):
    return repr(float(x))


def write_depth_field(path, field):
    """One row per depth variable, then a blank line and one row per chain entry."""
    problem = field.problem
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DEPTH_FIELD_HEADER)
        for key in problem.graph.pairs():
            m = problem.graph.stored(key)
            mask = field.rc_masks[key]
            for side, (a, b, pts) in enumerate([(key[0], key[1], m.points_i), (key[1], key[0], m.points_j)]):
                ids = problem.offsets[key + (side,)] + np.arange(len(m))
                for n, vid in enumerate(ids):
                    w.writerow([a, b, n, _fmt(pts[n, 0]), _fmt(pts[n, 1]), _fmt(field.z[vid]), int(mask[n])])
        fh.write("\n")
        w.writerow(CHAIN_HEADER)
        for cs, pm in zip(field.chains, field.ppc_masks):
            i, j, k = cs.triple
            for n in range(len(cs)):
                w.writerow([i, j, k, int(cs.indices_ij[n]), int(cs.indices_jk[n]), _fmt(cs.bridge_gap[n]), int(pm[n])])


def read_depth_field(path):
    """Returns ``(variables, chains)`` as lists of dicts with typed values."""
    path = _require(path)
    text = Path(path).read_text().split("\n\n", 1)
    rows = list(csv.DictReader(text[0].splitlines()))
    chains = list(csv.DictReader(text[1].splitlines())) if len(text) > 1 else []
    try:
        variables = [
            {"view_i": int(r["view_i"]), "view_j": int(r["view_j"]), "index": int(r["index"]),
             "x": float(r["x"]), "y": float(r["y"]), "z": float(r["z"]), "rc_mask": r["rc_mask"] == "1"}
            for r in rows
        ]
        chain_rows = [
            {"view_i": int(r["view_i"]), "bridge_j": int(r["bridge_j"]), "view_k": int(r["view_k"]),
             "index_ij": int(r["index_ij"]), "index_jk": int(r["index_jk"]),
             "bridge_gap": float(r["bridge_gap"]), "ppc_mask": r["ppc_mask"] == "1"}
            for r in chains
        ]
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"{path}: malformed depth-field row ({exc})", path=str(path)) from exc
    return variables, chain_rows


def samples_from_rows(variables, view_id):
    """Sparse (pixels, depths, mask) of one view from depth-field rows."""
    from .depth_align import SparseDepthSamples

    sel = [r for r in variables if r["view_i"] == view_id]
    px = np.array([[r["x"], r["y"]] for r in sel], dtype=np.float64).reshape(-1, 2)
    z = np.array([r["z"] for r in sel], dtype=np.float64)
    m = np.array([r["rc_mask"] for r in sel], dtype=bool)
    return SparseDepthSamples(px, z, m & (z > 0))


def write_poses(path, poses):
    recs = [{"rotation": p.rotation.ravel().tolist(), "translation": p.translation.tolist()} for p in poses]
    Path(path).write_text(json.dumps(recs, indent=1) + "\n")


def read_poses(path) -> list[CameraPose]:
    path = _require(path)
    try:
        recs = json.loads(Path(path).read_text())
        return [CameraPose(np.reshape(r["rotation"], (3, 3)), np.reshape(r["translation"], (3,))) for r in recs]
    except (ValueError, KeyError, TypeError) as exc:
        raise ParseError(f"{path}: {exc}", path=str(path)) from exc


def write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")
