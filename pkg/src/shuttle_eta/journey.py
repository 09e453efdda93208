"""Journey-level arrival times assembled from per-segment predictions.

The travel time from stop ``i`` to a downstream stop ``j`` is the sum of the
running times of the segments in between plus the dwell times at the
intermediate stops. Neither the origin dwell nor the destination dwell
counts. Predictions for a journey use the lag state frozen at departure:
every segment and stop is predicted with the departure time as its query
time, so nothing observed after departure can influence the result.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .core import DwellEvent, Route, RunEvent, Segment, ShuttleEtaError, WeatherRecord
from .features import DWELL, RUN, Dataset, FeatureEncoder, LagIndex, Observation, observations_from_events, weather_tuple

logger = logging.getLogger(__name__)


class JourneyError(ShuttleEtaError):
    pass


def aggregate_travel_time(run_preds: Sequence[float], dwell_preds: Sequence[float]) -> float:
    """Travel time over ``len(run_preds)`` segments with the intermediate dwells.

    ``dwell_preds`` holds one value per intermediate stop, so it must be one
    shorter than ``run_preds``.
    """
    runs = [float(v) for v in run_preds]
    dwells = [float(v) for v in dwell_preds]
    if not runs:
        raise JourneyError("a journey needs at least one segment")
    if len(dwells) != len(runs) - 1:
        raise JourneyError(
            f"{len(runs)} segments need {len(runs) - 1} intermediate dwell predictions, got {len(dwells)}"
        )
    for v in runs + dwells:
        if not math.isfinite(v):
            raise JourneyError("missing or non-finite segment prediction")
        if v < 0:
            raise JourneyError(f"negative duration prediction {v}")
    return math.fsum(runs) + math.fsum(dwells)


def cumulative_times(run_preds: Sequence[float], dwell_preds: Sequence[float]) -> np.ndarray:
    """Travel times from the origin to every stop along the path, starting with 0."""
    runs = np.asarray(run_preds, dtype=float)
    dwells = np.asarray(dwell_preds, dtype=float)
    if len(dwells) != len(runs) - 1:
        raise JourneyError("dwell predictions must cover exactly the intermediate stops")
    T = [0.0]
    for m in range(1, len(runs) + 1):
        T.append(aggregate_travel_time(runs[:m], dwells[: m - 1]))
    return np.array(T)


@dataclass(frozen=True)
class JourneyPrediction:
    origin: int
    stops: Tuple[str, ...]
    run_preds: Tuple[float, ...]
    dwell_preds: Tuple[float, ...]
    cumulative: np.ndarray = field(compare=False)

    @property
    def T(self) -> List[float]:
        return [float(v) for v in self.cumulative]

    @property
    def dwell_sum(self) -> float:
        return math.fsum(self.dwell_preds)

    @property
    def run_sum(self) -> float:
        return math.fsum(self.run_preds)

    def travel_time(self, m: int, n: int) -> float:
        """Travel time between path positions ``m < n``."""
        if not 0 <= m < n < len(self.stops):
            raise JourneyError(f"invalid path positions {m}, {n}")
        return aggregate_travel_time(self.run_preds[m:n], self.dwell_preds[m : n - 1])


# --------------------------------------------------------------------------
# paths along a route


def route_path(route: Route, i: Union[int, str], j: int) -> List[str]:
    """Stops from route position ``i`` to ``j`` inclusive.

    ``i`` may be a stop id. On a loop, positions past the last distinct stop
    wrap around, so a journey may run for more than one lap.
    """
    ring = list(route.stops[:-1]) if route.is_loop else list(route.stops)
    n = len(ring)
    if isinstance(i, str):
        if i not in ring:
            raise JourneyError(f"stop {i!r} is not on route {route.route_id}")
        i = ring.index(i)
    if not 0 <= i < n:
        raise JourneyError(f"origin position {i} outside route {route.route_id}")
    if j <= i:
        raise JourneyError(f"destination position {j} must come after origin {i}")
    if not route.is_loop and j >= n:
        raise JourneyError(f"destination position {j} outside route {route.route_id}")
    return [ring[k % n] for k in range(i, j + 1)]


def segment_keys(stops: Sequence[str]) -> List[str]:
    return [Segment(a, b).key for a, b in zip(stops[:-1], stops[1:])]


def _as_observations(context, target: str, t0: float) -> List[Observation]:
    items = list(context.events if hasattr(context, "events") else context)
    obs = [o for o in items if isinstance(o, Observation)]
    cls = DwellEvent if target == DWELL else RunEvent
    events = [e for e in items if isinstance(e, cls)]
    obs.extend(observations_from_events(events, target))
    return [o for o in obs if o.end < t0]


def _rows(model, vehicle: str, keys: Sequence[str], t0: float, weather, history) -> Dataset:
    enc = FeatureEncoder(model.vehicle_vocab, model.key_vocab)
    index = LagIndex(history, model.scope)
    X = np.zeros((len(keys), enc.dim))
    for r, key in enumerate(keys):
        lg = index.query(vehicle, key, t0)
        X[r] = enc.encode(vehicle, key, t0, weather, (lg.l1, lg.l2, float(lg.imputed1), float(lg.imputed2)))
    return Dataset(
        target=model.target,
        scope=model.scope,
        vehicle_vocab=enc.vehicle_vocab,
        key_vocab=enc.key_vocab,
        X=X,
        y=np.full(len(keys), np.nan),
        vehicles=np.array([vehicle] * len(keys), dtype=object),
        keys=np.array(list(keys), dtype=object),
        t=np.full(len(keys), float(t0)),
    )


def predict_path(
    dwell_model,
    run_model,
    context,
    stops: Sequence[str],
    vehicle: str,
    t0: float,
    weather: Union[WeatherRecord, Tuple[float, float, float]],
    origin: int = 0,
) -> JourneyPrediction:
    """Predict every segment and intermediate dwell along ``stops`` at departure ``t0``."""
    if len(stops) < 2:
        raise JourneyError("a journey needs at least two stops")
    if dwell_model.target != DWELL or run_model.target != RUN:
        raise JourneyError("expected a dwell model and a run model")
    w = weather_tuple(weather) if isinstance(weather, WeatherRecord) else tuple(float(v) for v in weather)
    run_hist = _as_observations(context, RUN, t0)
    run_ds = _rows(run_model, vehicle, segment_keys(stops), t0, w, run_hist)
    runs = run_model.predict(run_ds, run_hist)
    inner = list(stops[1:-1])
    if inner:
        dwell_hist = _as_observations(context, DWELL, t0)
        dwells = dwell_model.predict(_rows(dwell_model, vehicle, inner, t0, w, dwell_hist), dwell_hist)
    else:
        dwells = np.empty(0)
    return JourneyPrediction(
        origin,
        tuple(stops),
        tuple(float(v) for v in runs),
        tuple(float(v) for v in dwells),
        cumulative_times(runs, dwells),
    )


def predict_journey(
    dwell_model,
    run_model,
    context,
    route: Route,
    i: Union[int, str],
    j: int,
    vehicle: str,
    t0: float,
    weather,
) -> JourneyPrediction:
    """Arrival-time offsets from route position ``i`` to every stop up to ``j``.

    ``context`` is the event (or observation) history available to the
    predictor; only items that ended before ``t0`` are used.
    """
    stops = route_path(route, i, j)
    origin = route.stops.index(stops[0])
    return predict_path(dwell_model, run_model, context, stops, vehicle, t0, weather, origin)


# --------------------------------------------------------------------------
# observed journeys


@dataclass(frozen=True)
class Journey:
    """An observed trip starting at the end of the origin dwell."""

    vehicle_id: str
    stops: Tuple[str, ...]
    departure: float
    weather: Optional[WeatherRecord]
    actual_runs: Tuple[float, ...]
    actual_dwells: Tuple[float, ...]

    @property
    def complete(self) -> bool:
        vals = self.actual_runs + self.actual_dwells
        return self.weather is not None and all(math.isfinite(v) for v in vals)

    @property
    def actual_cumulative(self) -> np.ndarray:
        return cumulative_times(self.actual_runs, self.actual_dwells)


def extract_journeys(stream, horizon: int) -> List[Journey]:
    """Every contiguous chain of ``horizon`` segments that starts with a dwell.

    Each vehicle's events are walked in time order. A journey departs at the
    end of its origin dwell and follows run and dwell events that continue
    exactly where the previous one ended. Chains broken by a day boundary or
    a discarded gap are skipped.
    """
    if horizon < 1:
        raise JourneyError("horizon must be at least one segment")
    events = list(stream.events if hasattr(stream, "events") else stream)
    by_vehicle: Dict[str, list] = {}
    for e in events:
        by_vehicle.setdefault(e.vehicle_id, []).append(e)
    out = []
    for v in sorted(by_vehicle):
        seq = sorted(by_vehicle[v], key=lambda e: (e.start, e.end))
        for p, origin in enumerate(seq):
            if not isinstance(origin, DwellEvent):
                continue
            chain = seq[p : p + 2 * horizon + 1]
            if len(chain) < 2 * horizon:
                continue
            chain = chain[: 2 * horizon]
            if not _contiguous(chain):
                continue
            runs = chain[1::2]
            stops = (origin.stop_id,) + tuple(r.segment.to_stop for r in runs)
            out.append(
                Journey(
                    v, stops, origin.end, origin.weather,
                    tuple(r.duration for r in runs),
                    tuple(d.duration for d in chain[2::2]),
                )
            )
    return out


def _contiguous(chain: Sequence) -> bool:
    """Alternating dwell/run events where each one starts where the last ended."""
    for k, e in enumerate(chain):
        if isinstance(e, DwellEvent) != (k % 2 == 0):
            return False
        if k == 0:
            continue
        prev = chain[k - 1]
        if abs(e.start - prev.end) > 1e-6:
            return False
        here = e.segment.from_stop if isinstance(e, RunEvent) else e.stop_id
        there = prev.stop_id if isinstance(prev, DwellEvent) else prev.segment.to_stop
        if here != there:
            return False
    return True


# --------------------------------------------------------------------------
# predictors used by the evaluation harness


class JourneyPredictor:
    def predict(self, journey: Journey) -> JourneyPrediction:
        raise NotImplementedError


class ModelPredictor(JourneyPredictor):
    """Trained dwell and run models with a fixed event history as context."""

    def __init__(self, dwell_model, run_model, context):
        self.dwell_model = dwell_model
        self.run_model = run_model
        self.context = list(context.events if hasattr(context, "events") else context)

    def predict(self, journey: Journey) -> JourneyPrediction:
        if journey.weather is None:
            raise JourneyError("journey origin carries no weather")
        return predict_path(
            self.dwell_model, self.run_model, self.context, journey.stops,
            journey.vehicle_id, journey.departure, journey.weather,
        )


class OraclePredictor(JourneyPredictor):
    """Returns the observed durations; its errors are exactly zero."""

    def predict(self, journey: Journey) -> JourneyPrediction:
        return JourneyPrediction(
            0, journey.stops, journey.actual_runs, journey.actual_dwells,
            cumulative_times(journey.actual_runs, journey.actual_dwells),
        )
