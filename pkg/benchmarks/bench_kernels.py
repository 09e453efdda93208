"""Compare the compiled and pure-numpy CART kernels.

Usage::

    python3 benchmarks/bench_kernels.py [--rows 4000] [--features 29] [--trees 20] [--repeat 3]

Both backends grow the same forest (identical seeds and bootstrap draws);
the script checks that the trees are bit-identical and reports the best
wall time per backend for fitting and for prediction.
"""

from __future__ import annotations

import argparse
import logging
import time

import numpy as np

from shuttle_eta import kernels
from shuttle_eta.models import Forest

logger = logging.getLogger("bench_kernels")


def _best(fn, repeat: int) -> float:
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def run(rows: int, features: int, trees: int, repeat: int, seed: int = 0) -> dict:
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(rows, features))
    X[:, : features // 2] = np.round(X[:, : features // 2], 1)  # some tied values, as one-hot and lag columns have
    y = 20.0 * (X[:, 0] > 0) + 5.0 * np.sin(X[:, 1]) + rng.normal(0, 1.0, rows)

    results = {}
    forests = {}
    for backend in kernels.available_backends():
        prev = kernels.use_backend(backend)
        try:
            forest = Forest(n_trees=trees, max_depth=12, min_leaf=2, max_features="sqrt", seed=seed)
            fit = _best(lambda: forest.fit(X, y), repeat)
            pred = _best(lambda: forest.predict(X), repeat)
        finally:
            kernels.use_backend(prev)
        forests[backend] = forest
        results[backend] = {"fit_s": fit, "predict_s": pred}

    if len(forests) == 2:
        a, b = forests.values()
        same = all(
            u.tobytes() == v.tobytes() for ta, tb in zip(a.trees, b.trees) for u, v in zip(ta, tb)
        )
        results["identical_trees"] = same
    return results


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    p.add_argument("--rows", type=int, default=4000)
    p.add_argument("--features", type=int, default=29)
    p.add_argument("--trees", type=int, default=20)
    p.add_argument("--repeat", type=int, default=3)
    a = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    res = run(a.rows, a.features, a.trees, a.repeat)
    logger.info("%d rows x %d features, %d trees, best of %d", a.rows, a.features, a.trees, a.repeat)
    logger.info("%-10s %10s %12s", "backend", "fit [s]", "predict [s]")
    for backend in kernels.available_backends():
        r = res[backend]
        logger.info("%-10s %10.3f %12.4f", backend, r["fit_s"], r["predict_s"])
    if "identical_trees" in res:
        c, py = res["compiled"], res["python"]
        logger.info("speedup: fit x%.1f, predict x%.1f", py["fit_s"] / c["fit_s"], py["predict_s"] / c["predict_s"])
        logger.info("trees identical across backends: %s", res["identical_trees"])
    else:
        logger.info("compiled backend not available; only the numpy fallback was timed")


if __name__ == "__main__":
    main()
