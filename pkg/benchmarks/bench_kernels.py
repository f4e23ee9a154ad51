"""Compare the compiled and numpy kernel backends on map-sized inputs.

    python3 benchmarks/bench_kernels.py [--repeat N] [--json out.json]

Each kernel is timed on identical inputs for both backends (best of N runs)
and the outputs are checked for agreement before the timings are reported.
"""
import argparse
import json
import sys
import timeit

import numpy as np

from bev import kernels


def _cases(rng):
    vol_shape = (64, 64, 64)
    centers = rng.uniform(0, 63, (10, 3))
    volume = np.zeros(vol_shape)
    for c in centers:
        kernels.python_backend.gaussian_splat_max(volume, c, 2.0)
    volume += 0.01 * rng.random(vol_shape)
    n_pairs = 200_000
    pairs = (rng.uniform(0.5, 20, n_pairs), rng.uniform(0.5, 20, n_pairs),
             rng.integers(0, 5, n_pairs), rng.integers(0, 5, n_pairs), 0.3)

    def splat(backend):
        out = np.zeros(vol_shape)
        for c in centers:
            backend.gaussian_splat_max(out, c, 2.0)
        return out

    return {
        "gaussian_splat_max (10 people, 64^3)": splat,
        "local_maxima_3d (64^3)": lambda b: b.local_maxima_3d(volume, 0.2),
        f"depth_layer_loss_batch ({n_pairs} pairs)": lambda b: b.depth_layer_loss_batch(*pairs),
    }


def _agree(a, b):
    if isinstance(a, tuple):
        return all(_agree(x, y) for x, y in zip(a, b))
    return np.allclose(a, b, rtol=1e-12, atol=1e-12)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", dest="json_out")
    args = ap.parse_args(argv)

    if kernels.compiled_backend is None:
        print("compiled backend unavailable; build with `pip install -e . --no-build-isolation`",
              file=sys.stderr)
        return 1
    rng = np.random.default_rng(0)
    rows = []
    print(f"{'kernel':42s} {'python ms':>10s} {'cython ms':>10s} {'speedup':>8s}")
    for name, fn in _cases(rng).items():
        if not _agree(fn(kernels.python_backend), fn(kernels.compiled_backend)):
            print(f"{name}: backends disagree", file=sys.stderr)
            return 1
        t = {}
        for label, backend in (("python", kernels.python_backend), ("cython", kernels.compiled_backend)):
            t[label] = min(timeit.repeat(lambda: fn(backend), number=1, repeat=args.repeat)) * 1e3
        rows.append({"kernel": name, "python_ms": t["python"], "cython_ms": t["cython"],
                     "speedup": t["python"] / t["cython"]})
        print(f"{name:42s} {t['python']:10.2f} {t['cython']:10.2f} {rows[-1]['speedup']:7.1f}x")
    if args.json_out:
        with open(args.json_out, "w") as fh:
            json.dump(rows, fh, indent=2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
