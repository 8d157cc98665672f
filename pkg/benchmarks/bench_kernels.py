"""Compare the compiled and NumPy kernel backends.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--size 480x640]

Prints the median wall time of each kernel per backend and checks that
both backends return identical arrays.
"""

import argparse
import statistics
import time

import numpy as np

from sparseview import kernels


def _inputs(h, w, seed=0):
    rng = np.random.default_rng(seed)
    n = h * w
    target = rng.integers(-1, n, 4 * n)
    z = rng.uniform(1.0, 10.0, 4 * n)
    depth = rng.uniform(1.0, 10.0, (h, w))
    valid = rng.uniform(size=(h, w)) > 0.3
    image = rng.uniform(size=(h, w, 3))
    mask = np.zeros((h, w), bool)
    mask[h // 3: 2 * h // 3, w // 3: 2 * w // 3] = True
    return {
        "zbuffer_splat": lambda b: kernels.zbuffer_splat(target, z, n, backend=b),
        "fill_holes": lambda b: kernels.fill_holes(depth, valid, 16, backend=b),
        "diffuse": lambda b: kernels.diffuse(image, mask, max_sweeps=50, tol=0.0, backend=b),
    }


def _time(fn, repeat):
    out = fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times), out


def _same(a, b):
    if isinstance(a, tuple):
        return all(_same(x, y) for x, y in zip(a, b))
    return np.array_equal(np.asarray(a), np.asarray(b))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--size", default="240x320", help="HxW")
    args = ap.parse_args(argv)
    h, w = (int(x) for x in args.size.split("x"))
    backends = sorted(kernels.BACKENDS)
    print(f"default backend: {kernels.BACKEND}; available: {', '.join(backends)}; image {h}x{w}")
    print(f"{'kernel':<16}" + "".join(f"{b:>12}" for b in backends) + f"{'speedup':>10}  identical")
    for name, fn in _inputs(h, w).items():
        res = {b: _time(lambda: fn(b), args.repeat) for b in backends}
        row = f"{name:<16}" + "".join(f"{res[b][0] * 1e3:>10.2f}ms" for b in backends)
        if "cython" in res:
            row += f"{res['python'][0] / res['cython'][0]:>9.1f}x"
            row += f"  {_same(res['python'][1], res['cython'][1])}"
        else:
            row += f"{'n/a':>10}  n/a"
        print(row)


if __name__ == "__main__":
    main()
