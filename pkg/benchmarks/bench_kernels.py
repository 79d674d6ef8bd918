"""Compiled vs pure-Python loop kernels.

Run with ``python benchmarks/bench_kernels.py``. Both backends are imported
directly, so the ``SUMMIT_KERNELS`` switch does not matter here. Outputs are
checked for equality before any timing is reported.
"""
from __future__ import annotations

import argparse
import time

import numpy as np
from scipy.stats import rankdata

from summit import kernels


def _best_of(fn, repeat: int) -> float:
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def summarize_case(n_samples: int, rng: np.random.Generator):
    """Raw rows of ``n_samples`` series: 4 numerical + 1 categorical feature, 24 windows."""
    cases = []
    kinds = np.array([0, 0, 0, 0, 1], dtype=np.int8)
    for _ in range(n_samples):
        m = int(rng.poisson(40)) + 1
        win = np.sort(rng.integers(0, 24, size=m)).astype(np.int64)
        vals = rng.normal(size=(m, 5))
        vals[:, 4] = rng.integers(0, 3, size=m)
        vals[rng.random((m, 5)) < 0.5] = np.nan
        cases.append((win, vals))
    return cases, kinds


def concordance_case(n: int, rng: np.random.Generator):
    t = rng.exponential(size=n).round(2)
    order = np.argsort(t, kind="mergesort")
    y = (rng.random(n) < 0.3).astype(np.int64)[order]
    r = (rankdata(rng.random(n), method="dense").astype(np.int64) - 1)[order]
    return np.ascontiguousarray(t[order]), y, np.ascontiguousarray(r), int(r.max()) + 1


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--samples", type=int, default=2000, help="series for summarize_rows")
    ap.add_argument("--points", type=int, default=10_000, help="points for concordance_counts")
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    backends = {"python": kernels.python_backend}
    if kernels.compiled_backend is not None:
        backends["cython"] = kernels.compiled_backend
    else:
        print("compiled extension not built; timing the pure-Python backend only")

    rng = np.random.default_rng(0)
    cases, kinds = summarize_case(args.samples, rng)
    conc = concordance_case(args.points, rng)

    results = {}
    for name, be in backends.items():
        summ = [be.summarize_rows(w, v, kinds, 24, 3) for w, v in cases]
        counts = be.concordance_counts(*conc)
        results[name] = (summ, counts)
    if "cython" in results:
        (ps, pc), (cs, cc) = results["python"], results["cython"]
        assert pc == cc, "concordance counts differ between backends"
        for (po, pm), (co, cm) in zip(ps, cs):
            assert np.array_equal(pm, cm) and np.array_equal(po, co, equal_nan=True)
        print("backends agree on every output")

    print(f"{'kernel':34s}" + "".join(f"{n:>12s}" for n in backends) + "     speedup")
    rows = [
        (f"summarize_rows x{args.samples}",
         lambda be: [be.summarize_rows(w, v, kinds, 24, 3) for w, v in cases]),
        (f"concordance_counts n={args.points}", lambda be: be.concordance_counts(*conc)),
    ]
    for label, work in rows:
        times = {n: _best_of(lambda be=be: work(be), args.repeat) for n, be in backends.items()}
        speed = f"{times['python'] / times['cython']:10.1f}x" if "cython" in times else ""
        print(f"{label:34s}" + "".join(f"{t * 1e3:10.1f}ms" for t in times.values()) + speed)


if __name__ == "__main__":
    main()
