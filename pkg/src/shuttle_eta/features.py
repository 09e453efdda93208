"""Lag features, one-hot encodings and supervised datasets for dwell and running targets."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .core import DwellEvent, RunEvent, ShuttleEtaError, WeatherRecord, encode_time

PER_VEHICLE = "per_vehicle"
FLEET = "fleet"
SCOPES = (PER_VEHICLE, FLEET)

DWELL = "dwell"
RUN = "run"
TARGETS = (DWELL, RUN)

TIME_COLUMNS = ("tod_sin", "tod_cos", "dow_sin", "dow_cos")
WEATHER_COLUMNS = ("temp_c", "precip_mm", "wind_ms")
LAG_COLUMNS = ("lag1", "lag2", "lag1_imputed", "lag2_imputed")


class VocabularyError(ShuttleEtaError):
    pass


@dataclass(frozen=True)
class LagScope:
    mode: str

    def __post_init__(self):
        if self.mode not in SCOPES:
            raise ValueError(f"unknown lag scope {self.mode!r}")


def normalize_scope(scope) -> str:
    mode = scope.mode if isinstance(scope, LagScope) else str(scope).replace("-", "_")
    LagScope(mode)
    return mode


@dataclass(frozen=True)
class Observation:
    """A realized target value; it becomes visible to features at ``end``."""

    vehicle_id: str
    key: str
    start: float
    end: float
    value: float


@dataclass(frozen=True)
class Lags:
    l1: float
    l2: float
    imputed1: bool
    imputed2: bool
    source1: Optional[float] = None
    source2: Optional[float] = None


def observations_from_events(events: Iterable, target: str) -> List[Observation]:
    cls = DwellEvent if target == DWELL else RunEvent
    return [
        Observation(e.vehicle_id, e.key, e.start, e.end, e.duration)
        for e in events
        if isinstance(e, cls)
    ]


class LagIndex:
    """Causal lag lookup over a fixed observation history.

    Observations are ordered by availability time (their end); a query at
    time ``t`` sees only observations with end < t.
    """

    def __init__(self, observations: Iterable[Observation], scope):
        self.scope = normalize_scope(scope)
        groups: Dict[str, Dict[str, list]] = {}
        glob: Dict[str, list] = {}
        for o in observations:
            g = o.vehicle_id if self.scope == PER_VEHICLE else "*"
            groups.setdefault(g, {}).setdefault(o.key, []).append(o)
            glob.setdefault(g, []).append(o)
        order = lambda o: (o.end, o.start, o.vehicle_id, o.key)
        self._keys: Dict[Tuple[str, str], tuple] = {}
        for g, by_key in groups.items():
            for k, obs in by_key.items():
                self._keys[(g, k)] = self._pack(sorted(obs, key=order))
        self._global = {g: self._pack(sorted(obs, key=order)) for g, obs in glob.items()}

    @staticmethod
    def _pack(obs):
        ends = np.array([o.end for o in obs], dtype=float)
        vals = np.array([o.value for o in obs], dtype=float)
        prefix = np.concatenate([[0.0], np.cumsum(vals)])
        return ends, vals, prefix

    def _group(self, vehicle_id: str) -> str:
        return vehicle_id if self.scope == PER_VEHICLE else "*"

    def query(self, vehicle_id: str, key: str, t: float) -> Lags:
        g = self._group(vehicle_id)
        packed = self._keys.get((g, key))
        n = 0
        if packed is not None:
            ends, vals, prefix = packed
            n = int(np.searchsorted(ends, t, side="left"))
        if n >= 2:
            return Lags(vals[n - 1], vals[n - 2], False, False, ends[n - 1], ends[n - 2])
        fill = self._fill(g, packed, n, t)
        if n == 1:
            return Lags(vals[0], fill, False, True, ends[0], None)
        return Lags(fill, fill, True, True, None, None)

    def _fill(self, g, packed, n, t) -> float:
        if n >= 1:
            return float(packed[2][n] / n)
        gp = self._global.get(g)
        if gp is not None:
            m = int(np.searchsorted(gp[0], t, side="left"))
            if m >= 1:
                return float(gp[2][m] / m)
        return 0.0

    def query_many(self, vehicles: Sequence[str], key: str, ts: np.ndarray) -> np.ndarray:
        """Vectorized lookup for one key; returns an (n, 4) array (l1, l2, flag1, flag2)."""
        ts = np.asarray(ts, dtype=float)
        out = np.empty((len(ts), 4))
        vehicles = np.asarray(vehicles, dtype=object)
        groups = vehicles if self.scope == PER_VEHICLE else np.full(len(ts), "*", dtype=object)
        for g in dict.fromkeys(groups.tolist()):
            sel = np.flatnonzero(groups == g)
            tq = ts[sel]
            packed = self._keys.get((g, key))
            if packed is None:
                ends = np.empty(0)
                vals = np.empty(0)
                prefix = np.zeros(1)
            else:
                ends, vals, prefix = packed
            n = np.searchsorted(ends, tq, side="left")
            gp = self._global.get(g)
            if gp is not None:
                m = np.searchsorted(gp[0], tq, side="left")
                gmean = np.where(m >= 1, gp[2][m] / np.maximum(m, 1), 0.0)
            else:
                gmean = np.zeros(len(tq))
            kmean = np.where(n >= 1, prefix[n] / np.maximum(n, 1), gmean)
            l1 = np.where(n >= 1, vals[np.maximum(n - 1, 0)] if len(vals) else 0.0, kmean)
            l2 = np.where(n >= 2, vals[np.maximum(n - 2, 0)] if len(vals) else 0.0, kmean)
            out[sel, 0] = l1
            out[sel, 1] = l2
            out[sel, 2] = n < 1
            out[sel, 3] = n < 2
        return out


def build_lags(observations: Sequence[Observation], scope) -> Dict[Tuple[str, str, float], Lags]:
    """Lags for every observation, keyed by (vehicle_id, key, start)."""
    index = LagIndex(observations, scope)
    return {(o.vehicle_id, o.key, o.start): index.query(o.vehicle_id, o.key, o.start) for o in observations}


@dataclass(frozen=True)
class FeatureRow:
    vehicle_id: str
    key: str
    timestamp: float
    tau: Tuple[float, float, float, float]
    weather: Tuple[float, float, float]
    vehicle_onehot: Tuple[float, ...]
    key_onehot: Tuple[float, ...]
    l1: float
    l2: float
    lag_imputed: Tuple[bool, bool]
    y: float

    def vector(self) -> np.ndarray:
        return np.array(
            [*self.tau, *self.weather, *self.vehicle_onehot, *self.key_onehot,
             self.l1, self.l2, float(self.lag_imputed[0]), float(self.lag_imputed[1])]
        )


def feature_columns(vehicle_vocab: Sequence[str], key_vocab: Sequence[str]) -> Tuple[str, ...]:
    return (
        *TIME_COLUMNS,
        *WEATHER_COLUMNS,
        *(f"veh:{v}" for v in vehicle_vocab),
        *(f"key:{k}" for k in key_vocab),
        *LAG_COLUMNS,
    )


def weather_tuple(w: Optional[WeatherRecord]) -> Tuple[float, float, float]:
    if w is None:
        raise ValueError("weather missing")
    return (w.temperature, w.precipitation, w.windspeed)


class FeatureEncoder:
    """Lays out feature vectors for fixed vehicle and key vocabularies."""

    def __init__(self, vehicle_vocab: Sequence[str], key_vocab: Sequence[str]):
        self.vehicle_vocab = tuple(vehicle_vocab)
        self.key_vocab = tuple(key_vocab)
        self._v = {v: i for i, v in enumerate(self.vehicle_vocab)}
        self._k = {k: i for i, k in enumerate(self.key_vocab)}
        self.columns = feature_columns(self.vehicle_vocab, self.key_vocab)
        self.dim = len(self.columns)
        self.veh_offset = 7
        self.key_offset = 7 + len(self.vehicle_vocab)
        self.lag_offset = self.key_offset + len(self.key_vocab)

    def vehicle_index(self, v: str) -> int:
        try:
            return self._v[v]
        except KeyError:
            raise VocabularyError(f"vehicle {v!r} not in the training vocabulary") from None

    def key_index(self, k: str) -> int:
        try:
            return self._k[k]
        except KeyError:
            raise VocabularyError(f"key {k!r} not in the training vocabulary") from None

    def encode(self, vehicle: str, key: str, t: float, weather, lags) -> np.ndarray:
        x = np.zeros(self.dim)
        x[0:4] = encode_time(t)
        x[4:7] = weather
        x[self.veh_offset + self.vehicle_index(vehicle)] = 1.0
        x[self.key_offset + self.key_index(key)] = 1.0
        x[self.lag_offset : self.lag_offset + 4] = lags
        return x


@dataclass
class Dataset:
    """Numeric design matrix plus the row metadata the graph models need."""

    target: str
    scope: str
    vehicle_vocab: Tuple[str, ...]
    key_vocab: Tuple[str, ...]
    X: np.ndarray
    y: np.ndarray
    vehicles: np.ndarray
    keys: np.ndarray
    t: np.ndarray

    @property
    def columns(self) -> Tuple[str, ...]:
        return feature_columns(self.vehicle_vocab, self.key_vocab)

    @property
    def encoder(self) -> FeatureEncoder:
        return FeatureEncoder(self.vehicle_vocab, self.key_vocab)

    def __len__(self) -> int:
        return len(self.y)

    def column(self, name: str) -> np.ndarray:
        return self.X[:, self.columns.index(name)]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(
            self.target, self.scope, self.vehicle_vocab, self.key_vocab,
            self.X[idx], self.y[idx], self.vehicles[idx], self.keys[idx], self.t[idx],
        )

    def observations(self) -> List[Observation]:
        return [
            Observation(v, k, float(t), float(t + y), float(y))
            for v, k, t, y in zip(self.vehicles, self.keys, self.t, self.y)
        ]

    def rows(self) -> List[FeatureRow]:
        enc = self.encoder
        out = []
        for i in range(len(self)):
            x = self.X[i]
            out.append(
                FeatureRow(
                    vehicle_id=str(self.vehicles[i]),
                    key=str(self.keys[i]),
                    timestamp=float(self.t[i]),
                    tau=tuple(x[0:4]),
                    weather=tuple(x[4:7]),
                    vehicle_onehot=tuple(x[enc.veh_offset : enc.key_offset]),
                    key_onehot=tuple(x[enc.key_offset : enc.lag_offset]),
                    l1=float(x[enc.lag_offset]),
                    l2=float(x[enc.lag_offset + 1]),
                    lag_imputed=(bool(x[enc.lag_offset + 2]), bool(x[enc.lag_offset + 3])),
                    y=float(self.y[i]),
                )
            )
        return out


def assemble_dataset(
    stream,
    target: str,
    scope,
    vehicle_vocab: Sequence[str],
    key_vocab: Sequence[str],
) -> Dataset:
    """One row per event of ``target`` kind that carries weather.

    Lags come from every event of that kind, including weather-less ones.
    """
    if target not in TARGETS:
        raise ValueError(f"unknown target {target!r}")
    mode = normalize_scope(scope)
    events = list(stream.events if hasattr(stream, "events") else stream)
    cls = DwellEvent if target == DWELL else RunEvent
    chosen = [e for e in events if isinstance(e, cls)]
    enc = FeatureEncoder(vehicle_vocab, key_vocab)
    for e in chosen:
        enc.vehicle_index(e.vehicle_id)
        enc.key_index(e.key)
    index = LagIndex(observations_from_events(chosen, target), mode)
    rows = sorted(
        (e for e in chosen if e.weather is not None),
        key=lambda e: (e.start, e.vehicle_id, e.key, e.end),
    )
    X = np.zeros((len(rows), enc.dim))
    for i, e in enumerate(rows):
        lg = index.query(e.vehicle_id, e.key, e.start)
        X[i] = enc.encode(
            e.vehicle_id, e.key, e.start, weather_tuple(e.weather),
            (lg.l1, lg.l2, float(lg.imputed1), float(lg.imputed2)),
        )
    return Dataset(
        target=target,
        scope=mode,
        vehicle_vocab=enc.vehicle_vocab,
        key_vocab=enc.key_vocab,
        X=X,
        y=np.array([e.duration for e in rows], dtype=float),
        vehicles=np.array([e.vehicle_id for e in rows], dtype=object),
        keys=np.array([e.key for e in rows], dtype=object),
        t=np.array([e.start for e in rows], dtype=float),
    )


def vocabularies(stream, routes=None, target: str = DWELL) -> Tuple[Tuple[str, ...], Tuple[str, ...]]:
    """Sorted vehicle ids from the stream; keys from the routes when given."""
    events = list(stream.events if hasattr(stream, "events") else stream)
    vehicles = tuple(sorted({e.vehicle_id for e in events}))
    if routes is not None:
        from .graph import build_segment_graph, build_stop_graph

        g = build_stop_graph(routes) if target == DWELL else build_segment_graph(routes)
        keys = tuple(g.nodes)
    else:
        cls = DwellEvent if target == DWELL else RunEvent
        keys = tuple(sorted({e.key for e in events if isinstance(e, cls)}))
    return vehicles, keys
