"""Common train/predict contract shared by every predictor."""

from __future__ import annotations

import logging
from typing import Any, Dict, Iterable, Optional, Tuple

import numpy as np

from ..core import ShuttleEtaError
from ..features import DWELL, RUN, Dataset, Observation

logger = logging.getLogger(__name__)

# physical lower bounds on predicted seconds
FLOORS = {DWELL: 0.0, RUN: 1.0}


class ModelError(ShuttleEtaError):
    pass


class Standardizer:
    """Column-wise affine scaling fitted on a training matrix.

    Constant columns keep unit scale so they map to zero instead of NaN.
    """

    def __init__(self, mean: np.ndarray, scale: np.ndarray):
        self.mean = np.asarray(mean, dtype=float)
        self.scale = np.asarray(scale, dtype=float)

    @classmethod
    def fit(cls, X: np.ndarray) -> "Standardizer":
        X = np.asarray(X, dtype=float)
        mean = X.mean(axis=0)
        std = X.std(axis=0)
        return cls(mean, np.where(std > 0, std, 1.0))

    def transform(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.mean) / self.scale


class Model:
    """Base predictor.

    Subclasses implement ``_fit``, ``_predict`` and the state hooks. ``predict``
    applies the physical floor of the model's target unless the subclass is a
    pass-through baseline.
    """

    kind = "base"
    floored = True
    needs_graph = False
    defaults: Dict[str, Any] = {}

    def __init__(self, params: Optional[Dict[str, Any]] = None, seed: int = 0):
        unknown = set(params or {}) - set(self.defaults)
        if unknown:
            raise ModelError(f"{self.kind}: unknown hyperparameters {sorted(unknown)}")
        self.params = {**self.defaults, **(params or {})}
        self.seed = int(seed)
        self.target: Optional[str] = None
        self.scope: Optional[str] = None
        self.vehicle_vocab: Tuple[str, ...] = ()
        self.key_vocab: Tuple[str, ...] = ()
        self.fitted = False

    # -- contract -----------------------------------------------------------
    def fit(self, dataset: Dataset, history: Optional[Iterable[Observation]] = None) -> "Model":
        if len(dataset) == 0:
            raise ModelError(f"{self.kind}: empty training set")
        self.target = dataset.target
        self.scope = dataset.scope
        self.vehicle_vocab = tuple(dataset.vehicle_vocab)
        self.key_vocab = tuple(dataset.key_vocab)
        self._fit(dataset, history)
        self.fitted = True
        logger.debug("trained %s on %d rows (%s)", self.kind, len(dataset), self.target)
        return self

    def predict_raw(self, dataset: Dataset, history: Optional[Iterable[Observation]] = None) -> np.ndarray:
        self._check(dataset)
        if len(dataset) == 0:
            return np.empty(0)
        return np.asarray(self._predict(dataset, history), dtype=float)

    def predict(self, dataset: Dataset, history: Optional[Iterable[Observation]] = None) -> np.ndarray:
        out = self.predict_raw(dataset, history)
        if self.floored:
            out = np.maximum(out, FLOORS[self.target])
        return out

    def _check(self, dataset: Dataset) -> None:
        if not self.fitted:
            raise ModelError(f"{self.kind}: model is not trained")
        if dataset.target != self.target:
            raise ModelError(f"{self.kind}: trained for {self.target}, got {dataset.target} rows")
        if tuple(dataset.vehicle_vocab) != self.vehicle_vocab or tuple(dataset.key_vocab) != self.key_vocab:
            raise ModelError(f"{self.kind}: dataset vocabularies differ from the training ones")

    # -- persistence hooks --------------------------------------------------
    def meta(self) -> Dict[str, Any]:
        return {
            "kind": self.kind,
            "params": self.params,
            "seed": self.seed,
            "target": self.target,
            "scope": self.scope,
            "vehicle_vocab": list(self.vehicle_vocab),
            "key_vocab": list(self.key_vocab),
        }

    def arrays(self) -> Dict[str, np.ndarray]:
        return {}

    def _restore(self, meta: Dict[str, Any], arrays: Dict[str, np.ndarray]) -> None:
        pass

    @classmethod
    def from_state(cls, meta: Dict[str, Any], arrays: Dict[str, np.ndarray]) -> "Model":
        m = cls(meta["params"], meta["seed"])
        m.target = meta["target"]
        m.scope = meta["scope"]
        m.vehicle_vocab = tuple(meta["vehicle_vocab"])
        m.key_vocab = tuple(meta["key_vocab"])
        m._restore(meta, arrays)
        m.fitted = True
        return m

    # -- subclass hooks -----------------------------------------------------
    def _fit(self, dataset: Dataset, history) -> None:
        raise NotImplementedError

    def _predict(self, dataset: Dataset, history) -> np.ndarray:
        raise NotImplementedError


REGISTRY: Dict[str, type] = {}


def register(cls):
    REGISTRY[cls.kind] = cls
    return cls


def normalize_kind(kind: str) -> str:
    k = kind.replace("-", "_").lower()
    if k not in REGISTRY:
        raise ModelError(f"unknown model kind {kind!r}; choose from {sorted(REGISTRY)}")
    return k


def make_model(kind: str, params: Optional[Dict[str, Any]] = None, seed: int = 0, graph=None) -> Model:
    cls = REGISTRY[normalize_kind(kind)]
    if cls.needs_graph:
        if graph is None:
            raise ModelError(f"{cls.kind} needs a graph (pass the routes)")
        return cls(params, seed, graph=graph)
    return cls(params, seed)


def train(
    kind: str,
    dataset: Dataset,
    params: Optional[Dict[str, Any]] = None,
    seed: int = 0,
    graph=None,
    history: Optional[Iterable[Observation]] = None,
) -> Model:
    """Build and fit a model of ``kind``; graph models also take the stop or segment graph."""
    return make_model(kind, params, seed, graph).fit(dataset, history)
