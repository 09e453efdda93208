"""Metrics, date-based holdout, the lag-scope experiment and journey error analysis."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .core import ShuttleEtaError, floor_to_day
from .features import FLEET, PER_VEHICLE, Dataset, assemble_dataset, vocabularies
from .journey import Journey, JourneyPredictor
from .models import make_model

logger = logging.getLogger(__name__)

SUM_ABS = "sum_abs"
ABS_SUM = "abs_sum"


class EvaluationError(ShuttleEtaError):
    pass


def _pair(y, y_hat) -> Tuple[np.ndarray, np.ndarray]:
    y = np.asarray(y, dtype=float).ravel()
    y_hat = np.asarray(y_hat, dtype=float).ravel()
    if len(y) == 0:
        raise EvaluationError("metrics need at least one value")
    if len(y) != len(y_hat):
        raise EvaluationError(f"length mismatch: {len(y)} labels vs {len(y_hat)} predictions")
    return y, y_hat


def rmse(y, y_hat) -> float:
    y, y_hat = _pair(y, y_hat)
    e = np.abs(y - y_hat)
    scale = float(e.max())
    if scale == 0.0 or not np.isfinite(scale):
        return scale
    # scaling keeps tiny and huge errors from under- or overflowing when squared
    return scale * float(np.sqrt(np.mean((e / scale) ** 2)))


def mae(y, y_hat) -> float:
    y, y_hat = _pair(y, y_hat)
    return float(np.mean(np.abs(y - y_hat)))


@dataclass(frozen=True)
class MetricsReport:
    model: str
    target: str
    rmse: float
    mae: float
    n: int
    seed: int = 0
    scope: Optional[str] = None

    def to_json(self) -> dict:
        d = asdict(self)
        if d["scope"] is None:
            del d["scope"]
        return d


def evaluate(model, dataset: Dataset, history=None, name: Optional[str] = None) -> MetricsReport:
    pred = model.predict(dataset, history)
    return MetricsReport(
        name or model.kind, dataset.target, rmse(dataset.y, pred), mae(dataset.y, pred),
        len(dataset), model.seed, dataset.scope,
    )


# --------------------------------------------------------------------------
# holdout


def holdout_cutoff(max_start: float, test_days: float) -> float:
    """Start of the test window: the day boundary at or before max start − test_days."""
    if not test_days > 0:
        raise EvaluationError("test duration must be > 0 days")
    return floor_to_day(max_start - test_days * 86400.0)


def split_by_date(events: Sequence, test_days: float) -> Tuple[list, list]:
    """Split events so every training start precedes every test start."""
    events = list(events.events if hasattr(events, "events") else events)
    if not events:
        raise EvaluationError("cannot split an empty event set")
    cut = holdout_cutoff(max(e.start for e in events), test_days)
    train = [e for e in events if e.start < cut]
    test = [e for e in events if e.start >= cut]
    if not train or not test:
        raise EvaluationError(f"date split with {test_days} test days leaves an empty side")
    return train, test


def split_dataset_by_date(dataset: Dataset, test_days: float) -> Tuple[Dataset, Dataset]:
    if len(dataset) == 0:
        raise EvaluationError("cannot split an empty dataset")
    cut = holdout_cutoff(float(dataset.t.max()), test_days)
    train = np.flatnonzero(dataset.t < cut)
    test = np.flatnonzero(dataset.t >= cut)
    if len(train) == 0 or len(test) == 0:
        raise EvaluationError(f"date split with {test_days} test days leaves an empty side")
    return dataset.subset(train), dataset.subset(test)


# --------------------------------------------------------------------------
# experiments


def train_and_score(
    kind: str,
    dataset: Dataset,
    test_days: float,
    params: Optional[dict] = None,
    seed: int = 0,
    graph=None,
) -> Tuple[MetricsReport, object]:
    """Date split, fit on the early part, score on the held-out tail.

    Graph models see the whole observation history when building test
    snapshots; lag lookups are causal, so nothing from the future leaks.
    """
    train, test = split_dataset_by_date(dataset, test_days)
    model = make_model(kind, params, seed, graph).fit(train, train.observations())
    report = evaluate(model, test, dataset.observations())
    return report, model


def lag_scope_experiment(
    stream,
    kinds: Sequence[str],
    target: str,
    test_days: float = 7.0,
    params: Optional[Dict[str, dict]] = None,
    seed: int = 0,
    routes=None,
) -> List[MetricsReport]:
    """Score each model with per-vehicle and fleet lags on the same date split."""
    events = list(stream.events if hasattr(stream, "events") else stream)
    vehicles, keys = vocabularies(events, routes, target)
    if len(vehicles) < 2:
        logger.warning("single vehicle: per-vehicle and fleet lags coincide")
    graph = None
    if routes is not None:
        from .graph import build_segment_graph, build_stop_graph

        graph = build_stop_graph(routes) if target == "dwell" else build_segment_graph(routes)
    out = []
    for scope in (PER_VEHICLE, FLEET):
        ds = assemble_dataset(events, target, scope, vehicles, keys)
        for kind in kinds:
            rep, _ = train_and_score(kind, ds, test_days, (params or {}).get(kind), seed, graph)
            out.append(rep)
    return out


# --------------------------------------------------------------------------
# journeys


@dataclass(frozen=True)
class ErrorProfile:
    stop_index: np.ndarray  # stops ahead of the origin, 1-based
    mean: np.ndarray
    max_pos: np.ndarray
    max_neg: np.ndarray
    mean_abs: np.ndarray
    n_journeys: int

    def rows(self) -> List[Tuple[int, float, float, float, float]]:
        return [
            (int(i), float(m), float(p), float(n), float(a))
            for i, m, p, n, a in zip(self.stop_index, self.mean, self.max_pos, self.max_neg, self.mean_abs)
        ]


def profile_from_errors(errors: np.ndarray) -> ErrorProfile:
    """Aggregate a (journeys × stops-ahead) matrix of signed accumulated errors."""
    E = np.atleast_2d(np.asarray(errors, dtype=float))
    if E.shape[0] == 0:
        raise EvaluationError("no journeys to profile")
    return ErrorProfile(
        np.arange(1, E.shape[1] + 1),
        E.mean(axis=0),
        E.max(axis=0),
        E.min(axis=0),
        np.abs(E).mean(axis=0),
        E.shape[0],
    )


def _complete(journeys: Iterable[Journey]) -> List[Journey]:
    journeys = list(journeys)
    out = [j for j in journeys if j.complete]
    if len(out) < len(journeys):
        logger.warning("%d journeys excluded: missing actual durations or weather", len(journeys) - len(out))
    return out


def accumulated_errors(journeys: Sequence[Journey], predictor: JourneyPredictor) -> np.ndarray:
    """Signed errors T̂ − T from the origin to each downstream stop, one row per journey."""
    journeys = _complete(journeys)
    if not journeys:
        raise EvaluationError("no complete journeys")
    rows = []
    for j in journeys:
        pred = predictor.predict(j)
        rows.append(pred.cumulative[1:] - j.actual_cumulative[1:])
    lengths = {len(r) for r in rows}
    if len(lengths) != 1:
        raise EvaluationError("journeys must have equal length to be profiled together")
    return np.vstack(rows)


def accumulated_error_profile(journeys: Sequence[Journey], predictor: JourneyPredictor) -> ErrorProfile:
    return profile_from_errors(accumulated_errors(journeys, predictor))


def decompose_accumulated_error(
    journeys: Sequence[Journey], predictor: JourneyPredictor, mode: str = SUM_ABS
) -> Tuple[float, float]:
    """Average per-journey dwell and running error totals over the whole journey.

    ``sum_abs`` adds absolute per-event errors; ``abs_sum`` takes the absolute
    value of the summed signed errors.
    """
    if mode not in (SUM_ABS, ABS_SUM):
        raise EvaluationError(f"unknown decomposition mode {mode!r}")
    journeys = _complete(journeys)
    if not journeys:
        raise EvaluationError("no complete journeys")
    dw, rn = [], []
    for j in journeys:
        pred = predictor.predict(j)
        e_d = np.asarray(pred.dwell_preds) - np.asarray(j.actual_dwells)
        e_r = np.asarray(pred.run_preds) - np.asarray(j.actual_runs)
        if mode == SUM_ABS:
            dw.append(float(np.abs(e_d).sum()))
            rn.append(float(np.abs(e_r).sum()))
        else:
            dw.append(abs(float(e_d.sum())))
            rn.append(abs(float(e_r.sum())))
    return float(np.mean(dw)), float(np.mean(rn))


def sample_journeys(journeys: Sequence[Journey], n: int, seed: int = 0) -> List[Journey]:
    """Uniform sample without replacement, returned in chronological order."""
    journeys = _complete(journeys)
    if n >= len(journeys):
        return list(journeys)
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(len(journeys), size=n, replace=False))
    return [journeys[i] for i in idx]
