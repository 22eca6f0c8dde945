#!/usr/bin/env python3
"""Time the compiled kernels against their numpy fallbacks.

Run ``python3 benchmarks/bench_kernels.py [--quick]``.  Every kernel is
called once per backend to warm up (numba compilation is excluded), then
timed as the best of ``--repeat`` runs.  Results of both backends are
checked against each other before timing.
"""

import argparse
import time

import numpy as np

from fstucker import _accel, kernels


def best_of(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def cases(scale):
    rng = np.random.default_rng(0)
    q = int(200_000 * scale)
    ranks = (8, 6, 10)
    core = rng.standard_normal(ranks)
    vlist = [rng.standard_normal((q, r)) for r in ranks]
    yield "tucker_eval", lambda: kernels.tucker_eval(core, vlist)

    qk = int(50_000 * scale)
    vsmall = [v[:qk] for v in vlist]
    yield "khatri_rao_rows", lambda: kernels.khatri_rao_rows(vsmall)

    x = rng.standard_normal((1 << 16, 64))
    yield "fwht", lambda: kernels.fwht(x)

    n = int(100_000 * scale)
    pts = rng.random((n, 3))
    vals = np.sin(6 * pts).sum(axis=1)
    side = max(8, int(48 * scale ** (1 / 3)))
    sizes = (side, side, side)
    yield "idw_grid", lambda: kernels.idw_grid(pts, vals, sizes, k=8)[0]
    yield "idw_grid linear", lambda: kernels.idw_grid(pts, vals, sizes, k=8, degree=1)[0]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--quick", action="store_true", help="small problem sizes")
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    if not _accel.HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")
    scale = 0.1 if args.quick else 1.0

    print(f"{'kernel':<18}{'numpy [s]':>12}{'numba [s]':>12}{'speedup':>10}")
    for name, fn in cases(scale):
        times, outs = {}, {}
        for backend in ("numpy", "numba"):
            _accel.set_backend(backend)
            outs[backend] = fn()  # warm-up / compile
            times[backend] = best_of(fn, args.repeat)
        err = np.max(np.abs(outs["numpy"] - outs["numba"]))
        assert err < 1e-9 * max(1.0, np.max(np.abs(outs["numpy"]))), (name, err)
        print(
            f"{name:<18}{times['numpy']:>12.4f}{times['numba']:>12.4f}"
            f"{times['numpy'] / times['numba']:>9.1f}x"
        )
    _accel.set_backend("numba")


if __name__ == "__main__":
    main()
