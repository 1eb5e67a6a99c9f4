"""Time the numba and pure-numpy kernel backends on the same inputs.

Run with ``python3 benchmarks/bench_kernels.py [--n 200000] [--repeat 5]``.
The first numba call is excluded from timing (it compiles or loads the
on-disk cache). Reported times are the best of ``--repeat`` runs.
"""

import argparse
import time

import numpy as np

from hazardlens import _kernels


def _best(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def cases(n, seed=0):
    rng = np.random.default_rng(seed)
    times = np.sort(np.round(rng.exponential(size=n), 4))
    status = rng.random(n) < 0.8
    x = np.column_stack([np.ones(n), rng.integers(0, 2, n), rng.normal(size=n)])
    ev = np.unique(times[status])
    w = np.exp(x[:, 1:] @ np.array([-0.5, 0.3]))
    y = rng.permutation(n)
    return {
        "count_inversions": lambda b: _kernels.count_inversions(y, b),
        "risk_set_sums": lambda b: _kernels.risk_set_sums(ev, times, w, x[:, 1:], backend=b),
        "aalen_increments": lambda b: _kernels.aalen_increments(times, x, status, ev, backend=b),
    }


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--n", type=int, default=200000)
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)
    if "numba" not in _kernels.BACKENDS:
        print("numba is not installed; only the numpy backend is available")
    print(f"n = {args.n}, best of {args.repeat}")
    print(f"{'kernel':<18}{'numba (s)':>12}{'numpy (s)':>12}{'speedup':>10}")
    for name, run in cases(args.n).items():
        t = {}
        for backend in _kernels.BACKENDS:
            run(backend)  # warm-up
            t[backend] = _best(lambda: run(backend), args.repeat)
        nb = t.get("numba", np.nan)
        print(f"{name:<18}{nb:>12.4f}{t['numpy']:>12.4f}{t['numpy'] / nb:>9.1f}x")


if __name__ == "__main__":
    main()
