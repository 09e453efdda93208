"""Random forest and least-squares gradient boosting on the shared CART kernels."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .. import kernels
from .base import Model, ModelError, register

Tree = Tuple[np.ndarray, ...]  # feature, threshold, left, right, value, counts

_TREE_FIELDS = ("feature", "threshold", "left", "right", "value", "counts")


def resolve_max_features(spec, d: int) -> int:
    if spec is None or spec == "all":
        k = d
    elif spec == "sqrt":
        k = max(1, int(math.sqrt(d)))
    elif isinstance(spec, float) and not float(spec).is_integer():
        k = max(1, int(spec * d))
    else:
        k = int(spec)
    if k < 1:
        raise ModelError("max_features must be >= 1")
    if k > d:
        raise ModelError(f"max_features={k} exceeds the feature count {d}")
    return k


def _depth(max_depth) -> int:
    return -1 if max_depth is None else int(max_depth)


def pack_trees(trees: Sequence[Tree]) -> Dict[str, np.ndarray]:
    sizes = [len(t[0]) for t in trees]
    out = {"tree_offsets": np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)}
    for i, name in enumerate(_TREE_FIELDS):
        parts = [t[i] for t in trees]
        dtype = np.float64 if name in ("threshold", "value") else np.int64
        out[f"tree_{name}"] = np.concatenate(parts).astype(dtype) if parts else np.empty(0, dtype)
    return out


def unpack_trees(arrays: Dict[str, np.ndarray]) -> List[Tree]:
    off = arrays["tree_offsets"]
    return [
        tuple(arrays[f"tree_{name}"][off[i] : off[i + 1]].copy() for name in _TREE_FIELDS)
        for i in range(len(off) - 1)
    ]


class Forest:
    """Bagged CART ensemble; usable on bare arrays (the hurdle model reuses it)."""

    def __init__(self, n_trees=200, max_depth=12, min_leaf=2, max_features="sqrt",
                 bootstrap=True, task="regression", n_jobs=1, seed=0):
        if task not in ("regression", "binary_classification"):
            raise ModelError(f"unknown task {task!r}")
        if int(n_trees) < 1:
            raise ModelError("n_trees must be >= 1")
        self.n_trees = int(n_trees)
        self.max_depth = _depth(max_depth)
        self.min_leaf = int(min_leaf)
        self.max_features = max_features
        self.bootstrap = bool(bootstrap)
        self.task = task
        self.n_jobs = max(1, int(n_jobs))
        self.seed = int(seed)
        self.trees: List[Tree] = []

    def _tree_seeds(self) -> List[Tuple[int, int]]:
        # one child sequence per tree, so results do not depend on n_jobs
        children = np.random.SeedSequence(self.seed).spawn(self.n_trees)
        out = []
        for c in children:
            a, b = c.generate_state(2, dtype=np.uint64)
            out.append((int(a), int(b)))
        return out

    def fit(self, X: np.ndarray, y: np.ndarray) -> "Forest":
        X = np.ascontiguousarray(X, dtype=float)
        y = np.ascontiguousarray(y, dtype=float)
        n, d = X.shape
        if n == 0:
            raise ModelError("random forest needs at least one row")
        if self.task == "binary_classification" and not np.isin(y, (0.0, 1.0)).all():
            raise ModelError("binary classification targets must be 0 or 1")
        k = resolve_max_features(self.max_features, d)
        crit = kernels.GINI if self.task == "binary_classification" else kernels.SQUARED

        def grow(seeds):
            boot_seed, feat_seed = seeds
            if self.bootstrap:
                rng = np.random.default_rng(boot_seed)
                samples = np.sort(rng.integers(0, n, size=n))
            else:
                samples = np.arange(n)
            return kernels.build_tree(X, y, samples, self.max_depth, self.min_leaf, k, crit, 0.0, feat_seed)

        seeds = self._tree_seeds()
        if self.n_jobs > 1:
            with ThreadPoolExecutor(self.n_jobs) as pool:
                self.trees = list(pool.map(grow, seeds))
        else:
            self.trees = [grow(s) for s in seeds]
        return self

    def votes(self, X: np.ndarray) -> np.ndarray:
        return kernels.predict_sum(np.ascontiguousarray(X, dtype=float), self.trees)

    def predict(self, X: np.ndarray) -> np.ndarray:
        s = self.votes(X)
        if self.task == "binary_classification":
            # majority vote, ties go to class 1
            return (2.0 * s >= self.n_trees).astype(float)
        return s / self.n_trees

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return self.votes(X) / self.n_trees


@register
class RandomForestModel(Model):
    kind = "rf"
    defaults = {
        "n_trees": 200,
        "max_depth": 12,
        "min_leaf": 2,
        "max_features": "sqrt",
        "bootstrap": True,
        "task": "regression",
        "n_jobs": 1,
    }

    def _forest(self) -> Forest:
        return Forest(seed=self.seed, **self.params)

    def _fit(self, dataset, history):
        self.forest = self._forest().fit(dataset.X, dataset.y)

    def arrays(self):
        return pack_trees(self.forest.trees)

    def _restore(self, meta, arrays):
        self.forest = self._forest()
        self.forest.trees = unpack_trees(arrays)

    def _predict(self, dataset, history):
        return self.forest.predict(dataset.X)


class Booster:
    """First-order least-squares boosting: base mean plus shrunken residual trees."""

    def __init__(self, n_rounds=300, learning_rate=0.1, max_depth=4, min_leaf=1, l2_leaf=1.0):
        if not learning_rate > 0:
            raise ModelError("learning_rate must be > 0")
        if int(n_rounds) < 0:
            raise ModelError("n_rounds must be >= 0")
        if l2_leaf < 0:
            raise ModelError("l2_leaf must be >= 0")
        self.n_rounds = int(n_rounds)
        self.learning_rate = float(learning_rate)
        self.max_depth = _depth(max_depth)
        self.min_leaf = int(min_leaf)
        self.l2_leaf = float(l2_leaf)
        self.base = 0.0
        self.trees: List[Tree] = []
        self.train_loss: List[float] = []

    def fit(self, X: np.ndarray, y: np.ndarray) -> "Booster":
        X = np.ascontiguousarray(X, dtype=float)
        y = np.ascontiguousarray(y, dtype=float)
        n, d = X.shape
        self.base = float(np.mean(y))
        F = np.full(n, self.base)
        samples = np.arange(n)
        self.trees = []
        self.train_loss = [float(np.mean((y - F) ** 2))]
        for r in range(self.n_rounds):
            resid = y - F
            t = kernels.build_tree(
                X, resid, samples, self.max_depth, self.min_leaf, d, kernels.SQUARED, self.l2_leaf, r
            )
            t = t[:4] + (t[4] * self.learning_rate,) + t[5:]
            self.trees.append(t)
            F = F + kernels.predict_tree(X, *t[:5])
            self.train_loss.append(float(np.mean((y - F) ** 2)))
        return self

    def predict(self, X: np.ndarray) -> np.ndarray:
        return kernels.predict_sum(np.ascontiguousarray(X, dtype=float), self.trees, self.base)


@register
class BoostingModel(Model):
    kind = "gbt"
    defaults = {"n_rounds": 300, "learning_rate": 0.1, "max_depth": 4, "min_leaf": 1, "l2_leaf": 1.0}

    def _fit(self, dataset, history):
        self.booster = Booster(**self.params).fit(dataset.X, dataset.y)

    def arrays(self):
        return pack_trees(self.booster.trees)

    def meta(self):
        m = super().meta()
        m["base"] = self.booster.base
        return m

    def _restore(self, meta, arrays):
        self.booster = Booster(**self.params)
        self.booster.base = float(meta["base"])
        self.booster.trees = unpack_trees(arrays)

    def _predict(self, dataset, history):
        return self.booster.predict(dataset.X)
