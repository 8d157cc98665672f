"""Hot-loop kernels with backend selection at import.

The compiled Cython extension is used when it was built; otherwise the
NumPy fallback is used. Setting ``SPARSEVIEW_PURE_PYTHON=1`` forces the
fallback. Both backends are bit-identical.
"""

import os
from functools import lru_cache

import numpy as np

from . import _pykernels

if os.environ.get("SPARSEVIEW_PURE_PYTHON") == "1":
    _impl = _pykernels
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _pykernels
        BACKEND = "python"

BACKENDS = {"python": _pykernels}
if BACKEND == "cython":
    BACKENDS["cython"] = _impl


@lru_cache(maxsize=32)
def ring_offsets(max_radius: int):
    """Chebyshev rings 1..max_radius as (offsets, inverse-distance weights, ring_start)."""
    offsets, weights, starts = [], [], [0]
    for r in range(1, max_radius + 1):
        for dy in range(-r, r + 1):
            for dx in range(-r, r + 1):
                if max(abs(dy), abs(dx)) != r:
                    continue
                offsets.append((dy, dx))
                weights.append(1.0 / np.hypot(dy, dx))
        starts.append(len(offsets))
    off = np.array(offsets, dtype=np.int64).reshape(-1, 2)
    wts = np.array(weights, dtype=np.float64)
    st = np.array(starts, dtype=np.int64)
    for a in (off, wts, st):
        a.setflags(write=False)
    return off, wts, st


def zbuffer_splat(target, z, n_pixels, backend=None):
    """Nearest-depth resolution of splat candidates.

    Returns ``(depth, winner)`` over the flattened pixel grid; ``winner`` is
    the lowest candidate index attaining the minimum, -1 where empty.
    """
    impl = BACKENDS[backend] if backend else _impl
    target = np.ascontiguousarray(target, dtype=np.int64)
    z = np.ascontiguousarray(z, dtype=np.float64)
    return impl.zbuffer_splat(target, z, int(n_pixels))


def fill_holes(values, valid, max_radius, backend=None):
    impl = BACKENDS[backend] if backend else _impl
    off, wts, st = ring_offsets(int(max_radius))
    values = np.ascontiguousarray(np.where(valid, values, 0.0), dtype=np.float64)
    valid = np.ascontiguousarray(valid, dtype=np.uint8)
    if backend == "python" or impl is _pykernels:
        return _pykernels.fill_holes(values, valid.astype(bool), off, wts, st)
    return impl.fill_holes(values, valid, off, wts, st)


def diffuse(image, mask, max_sweeps=500, tol=1e-4, backend=None):
    impl = BACKENDS[backend] if backend else _impl
    image = np.ascontiguousarray(image, dtype=np.float64)
    mask = np.ascontiguousarray(mask, dtype=np.uint8)
    out, sweeps = impl.diffuse(image, mask, int(max_sweeps), float(tol))
    return np.asarray(out), int(sweeps)
