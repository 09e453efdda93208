"""Turn raw GPS/speed traces into alternating dwell and running events."""

from __future__ import annotations

import bisect
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .core import (
    ConfigError,
    DwellEvent,
    GpsFix,
    Route,
    RunEvent,
    Segment,
    Stop,
    WeatherRecord,
    floor_to_hour,
    haversine_array,
    haversine_distance,
    local_xy,
    quantize_us,
)

logger = logging.getLogger(__name__)

SPEED_AND_GPS = "speed_and_gps"
GPS_ONLY = "gps_only"


@dataclass
class PreprocessConfig:
    detection_mode: str = SPEED_AND_GPS
    jitter_threshold: float = 2.0  # meters, gps_only mode
    exclusion_zones: List[Tuple[float, float, float]] = field(default_factory=list)
    max_weather_gap: float = 3.0  # hours
    corridor_m: float = 100.0
    max_fix_gap: float = 120.0  # seconds; longer gaps split a trace
    rate_change_window: int = 21
    rate_change_tolerance: float = 0.5
    rate_change_discard: str = "lower_rate"  # lower_rate | higher_rate | none
    vehicle_routes: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.detection_mode not in (SPEED_AND_GPS, GPS_ONLY):
            raise ConfigError(f"unknown detection_mode {self.detection_mode!r}")
        if self.detection_mode == GPS_ONLY and not self.jitter_threshold > 0:
            raise ConfigError("jitter_threshold must be > 0 in gps_only mode")
        zones = []
        for z in self.exclusion_zones:
            lat, lon, r = (float(v) for v in z)
            if not r > 0:
                raise ConfigError("exclusion zone radius must be > 0")
            zones.append((lat, lon, r))
        self.exclusion_zones = zones
        if self.rate_change_discard not in ("lower_rate", "higher_rate", "none"):
            raise ConfigError(f"unknown rate_change_discard {self.rate_change_discard!r}")

    def route_for(self, vehicle_id: str, routes: Mapping[str, Route]) -> Route:
        if vehicle_id in self.vehicle_routes:
            return routes[self.vehicle_routes[vehicle_id]]
        if len(routes) == 1:
            return next(iter(routes.values()))
        raise ConfigError(
            f"vehicle {vehicle_id}: several routes defined and no vehicle_routes entry"
        )


@dataclass
class EventStream:
    events: List[object] = field(default_factory=list)
    diagnostics: List[str] = field(default_factory=list)

    def __len__(self):
        return len(self.events)

    def __iter__(self):
        return iter(self.events)

    def sorted(self) -> "EventStream":
        return EventStream(sorted(self.events, key=event_sort_key), list(self.diagnostics))

    def dwells(self) -> list:
        return [e for e in self.events if isinstance(e, DwellEvent)]

    def runs(self) -> list:
        return [e for e in self.events if isinstance(e, RunEvent)]

    def vehicles(self) -> list:
        return sorted({e.vehicle_id for e in self.events})

    def for_vehicle(self, vehicle_id: str) -> list:
        return [e for e in self.events if e.vehicle_id == vehicle_id]

    def weather_missing(self) -> list:
        return [e for e in self.events if e.weather is None]

    @classmethod
    def merge(cls, streams: Iterable["EventStream"]) -> "EventStream":
        events, diags = [], []
        for s in streams:
            events.extend(s.events)
            diags.extend(s.diagnostics)
        return cls(events, diags).sorted()


def event_sort_key(e) -> tuple:
    # a zero dwell and the run leaving it share a start; dwell goes first
    return (e.vehicle_id, e.start, 0 if isinstance(e, DwellEvent) else 1, e.end)


def is_stationary(prev: GpsFix, cur: GpsFix, config: PreprocessConfig) -> bool:
    if config.detection_mode == SPEED_AND_GPS:
        if cur.speed is None:
            raise ConfigError("speed_and_gps mode selected but the fix has no speed")
        return cur.speed == 0
    d = haversine_distance((prev.lat, prev.lon), (cur.lat, cur.lon))
    return d < config.jitter_threshold


class _TraceArrays:
    __slots__ = ("vehicle_id", "t", "lat", "lon", "speed")

    def __init__(self, trace: Sequence[GpsFix]):
        self.vehicle_id = trace[0].vehicle_id if len(trace) else ""
        self.t = np.array([f.timestamp for f in trace], dtype=float)
        self.lat = np.array([f.lat for f in trace], dtype=float)
        self.lon = np.array([f.lon for f in trace], dtype=float)
        self.speed = np.array(
            [np.nan if f.speed is None else f.speed for f in trace], dtype=float
        )


def _stationary_flags(arr: _TraceArrays, config: PreprocessConfig) -> np.ndarray:
    n = len(arr.t)
    if config.detection_mode == SPEED_AND_GPS:
        if np.isnan(arr.speed).any():
            raise ConfigError("speed_and_gps mode selected but the trace lacks speed values")
        return arr.speed == 0
    if n == 1:
        return np.zeros(1, dtype=bool)
    disp = haversine_array(arr.lat[:-1], arr.lon[:-1], arr.lat[1:], arr.lon[1:])
    flags = np.empty(n, dtype=bool)
    flags[1:] = disp < config.jitter_threshold
    # first fix has no predecessor: judge it against its successor
    flags[0] = flags[1]
    return flags


def _point_segment_distance(px, py, ax, ay, bx, by) -> np.ndarray:
    dx, dy = bx - ax, by - ay
    len2 = dx * dx + dy * dy
    if len2 == 0:
        return np.hypot(px - ax, py - ay)
    u = np.clip(((px - ax) * dx + (py - ay) * dy) / len2, 0.0, 1.0)
    return np.hypot(px - (ax + u * dx), py - (ay + u * dy))


def route_distance(lat, lon, route: Route, stops: Mapping[str, Stop]) -> np.ndarray:
    """Distance in meters from each point to the stop-to-stop chord polyline."""
    lat = np.atleast_1d(np.asarray(lat, dtype=float))
    lon = np.atleast_1d(np.asarray(lon, dtype=float))
    best = np.full(lat.shape, np.inf)
    for seg in route.segments():
        a, b = stops[seg.from_stop], stops[seg.to_stop]
        px, py = local_xy(lat, lon, a.lat, a.lon)
        bx, by = local_xy(b.lat, b.lon, a.lat, a.lon)
        best = np.minimum(best, _point_segment_distance(px, py, 0.0, 0.0, float(bx), float(by)))
    return best


def _keep_mask(arr: _TraceArrays, route: Route, stops: Mapping[str, Stop], config) -> np.ndarray:
    keep = np.ones(len(arr.t), dtype=bool)
    for lat, lon, r in config.exclusion_zones:
        keep &= haversine_array(arr.lat, arr.lon, lat, lon) > r
    if len(arr.t):
        keep &= route_distance(arr.lat, arr.lon, route, stops) <= config.corridor_m
    return keep


def exclude_off_route(
    trace: Sequence[GpsFix], route: Route, stops: Mapping[str, Stop], config: PreprocessConfig
) -> List[GpsFix]:
    """Drop fixes inside exclusion zones or outside the route corridor; order is kept."""
    trace = list(trace)
    if not trace:
        return []
    keep = _keep_mask(_TraceArrays(trace), route, stops, config)
    return [f for f, k in zip(trace, keep) if k]


def resolve_stop(
    fix: GpsFix,
    route: Route,
    stops: Mapping[str, Stop],
    last_stop: Optional[str],
    current: Optional[str] = None,
) -> Optional[str]:
    """Stop whose radius holds ``fix``, disambiguating overlaps by legal visit order.

    ``last_stop`` is the most recently completed visit; ``current`` the visit in
    progress, which wins whenever its radius still contains the fix.
    """
    candidates = _candidates_at(fix.lat, fix.lon, route, stops)
    return _pick(candidates, route, last_stop, current, fix.timestamp)


def _candidates_at(lat, lon, route, stops) -> list:
    out = []
    for sid in _route_stop_ids(route):
        s = stops[sid]
        if haversine_distance((lat, lon), (s.lat, s.lon)) <= s.radius:
            out.append(sid)
    return out


def _route_stop_ids(route: Route) -> list:
    seen = []
    for s in route.stops:
        if s not in seen:
            seen.append(s)
    return seen


def _pick(candidates, route, last_stop, current, when=None) -> Optional[str]:
    if not candidates:
        return None
    if len(candidates) == 1:
        return candidates[0]
    if current in candidates:
        return current
    if last_stop is not None:
        legal = [c for c in candidates if c in route.successors(last_stop)]
        if len(legal) == 1:
            return legal[0]
    logger.debug("ambiguous stop among %s after %s at %s; fix skipped", candidates, last_stop, when)
    return None


def _split_on_gaps(t: np.ndarray, max_gap: float) -> List[Tuple[int, int]]:
    if len(t) == 0:
        return []
    cuts = np.flatnonzero(np.diff(t) > max_gap) + 1
    bounds = [0, *cuts.tolist(), len(t)]
    return list(zip(bounds[:-1], bounds[1:]))


def detect_events(
    trace: Sequence[GpsFix],
    route: Route,
    stops: Mapping[str, Stop],
    config: PreprocessConfig,
) -> EventStream:
    trace = list(trace)
    if not trace:
        return EventStream()
    vehicle = trace[0].vehicle_id
    full = _TraceArrays(trace)
    if np.any(np.diff(full.t) <= 0):
        raise ValueError(f"trace for {vehicle} is not strictly time-ordered")
    keep = _keep_mask(full, route, stops, config)
    idx = np.flatnonzero(keep)
    arr = _TraceArrays([trace[i] for i in idx]) if len(idx) < len(trace) else full
    if len(arr.t) == 0:
        return EventStream(diagnostics=[f"{vehicle}: no fixes left after exclusion"])

    stop_ids = _route_stop_ids(route)
    slat = np.array([stops[s].lat for s in stop_ids])
    slon = np.array([stops[s].lon for s in stop_ids])
    srad = np.array([stops[s].radius for s in stop_ids])
    dist = haversine_array(arr.lat[:, None], arr.lon[:, None], slat[None, :], slon[None, :])
    inside = dist <= srad[None, :]

    events: list = []
    diagnostics: list = []
    entered_any = bool(inside.any())
    for lo, hi in _split_on_gaps(arr.t, config.max_fix_gap):
        piece = _TraceArrays.__new__(_TraceArrays)
        piece.vehicle_id = vehicle
        piece.t, piece.lat, piece.lon, piece.speed = (
            arr.t[lo:hi], arr.lat[lo:hi], arr.lon[lo:hi], arr.speed[lo:hi]
        )
        stationary = _stationary_flags(piece, config)
        visits = _visits(inside[lo:hi], dist[lo:hi], stop_ids, route, diagnostics)
        dwells = []
        for sid, i0, i1, dmin_idx in visits:
            st = np.flatnonzero(stationary[i0 : i1 + 1])
            if len(st):
                first = i0 + int(st[0])
                last = i0 + int(st[-1])
                if last + 1 >= len(piece.t):
                    dwells.append(None)  # still dwelling when the trace ends
                    continue
                dwells.append(DwellEvent(vehicle, sid, piece.t[first], piece.t[last + 1]))
            else:
                k = stop_ids.index(sid)
                tc = _closest_approach_time(piece.t, dist[lo:hi, k], dmin_idx)
                dwells.append(DwellEvent(vehicle, sid, tc, tc))
        events.extend(_chain(dwells, route, vehicle, diagnostics))
    if not entered_any:
        diagnostics.append(f"{vehicle}: trace never enters a stop radius")
    return EventStream(events, diagnostics).sorted()


def _closest_approach_time(t: np.ndarray, d: np.ndarray, i: int) -> float:
    """Passing time at a stop, refined between the closest fix and its nearer neighbour.

    The two fixes bracketing the stop split the sampling interval in
    proportion to their distances from the centre, which is exact for
    constant speed along straight chords through the stop.
    """
    nbrs = [j for j in (i - 1, i + 1) if 0 <= j < len(t)]
    if not nbrs or d[i] == 0.0:
        return float(t[i])
    j = min(nbrs, key=lambda j: d[j])
    w = d[i] / (d[i] + d[j])
    return quantize_us(float(t[i] + (t[j] - t[i]) * w))


def _visits(inside, dist, stop_ids, route, diagnostics):
    """Group consecutive fixes resolving to the same stop into visits.

    Returns (stop_id, first index, last index, index of closest approach).
    Leaving a radius and re-entering the same stop before any other stop
    continues the earlier visit (boundary flicker under GPS noise).
    """
    visits: list = []
    befores: list = []  # stop completed before each visit
    last_stop: Optional[str] = None
    current: Optional[str] = None
    for i in range(inside.shape[0]):
        row = inside[i]
        if not row.any():
            if current is not None:
                last_stop, current = current, None
            continue
        cands = [stop_ids[k] for k in np.flatnonzero(row)]
        sid = _pick(cands, route, last_stop, current)
        if sid is None:
            diagnostics.append(f"ambiguous overlap {cands} after {last_stop}; fix skipped")
            continue
        k = stop_ids.index(sid)
        if sid == current or (current is None and visits and visits[-1][0] == sid):
            s, i0, _, best = visits[-1]
            if dist[i, k] < dist[best, k]:
                best = i
            visits[-1] = (s, i0, i, best)
            last_stop = befores[-1]
        else:
            if current is not None:
                last_stop = current
            visits.append((sid, i, i, i))
            befores.append(last_stop)
        current = sid
    return visits


def _chain(dwells, route: Route, vehicle: str, diagnostics) -> list:
    out = []
    prev = None
    for d in dwells:
        if d is None:
            prev = None
            continue
        out.append(d)
        if prev is not None:
            if d.stop_id in route.successors(prev.stop_id) and d.start > prev.end:
                out.append(RunEvent(vehicle, Segment(prev.stop_id, d.stop_id), prev.end, d.start))
            else:
                diagnostics.append(
                    f"{vehicle}: no run between {prev.stop_id}@{prev.end:.0f} and "
                    f"{d.stop_id}@{d.start:.0f} (not consecutive on route {route.route_id})"
                )
        prev = d
    return out


def detect_sampling_rate_change(
    trace: Sequence[GpsFix], tolerance: float = 0.5, window: int = 21
) -> List[Tuple[float, float, float]]:
    """Report (instant, old_period, new_period) wherever the rolling median period shifts.

    A shift counts when the rolling median of inter-fix periods moves more
    than ``tolerance`` (a fraction of the current period) away from it.
    """
    t = np.array([f.timestamp for f in trace], dtype=float)
    dt = np.diff(t)
    if len(dt) < window:
        return []
    med = np.median(np.lib.stride_tricks.sliding_window_view(dt, window), axis=1)
    changes = []
    baseline = med[0]
    k = 1
    while k < len(med):
        if abs(med[k] - baseline) > tolerance * baseline:
            i = min(k + window // 2, len(dt) - 1)
            # walk back to the first interval that belongs to the new regime
            while i > k and abs(dt[i - 1] - baseline) > tolerance * baseline:
                i -= 1
            new = float(np.median(dt[i : i + window]))
            changes.append((float(t[i]), float(baseline), new))
            baseline = new
            k = i + 1
        else:
            k += 1
    return changes


def discard_rate_regimes(
    trace: Sequence[GpsFix], changes: Sequence[Tuple[float, float, float]], discard: str = "lower_rate"
) -> List[GpsFix]:
    """Keep only the fixes sampled in the regimes that survive ``discard``."""
    trace = list(trace)
    if not changes or discard == "none":
        return trace
    bounds = [c[0] for c in changes]
    periods = [changes[0][1]] + [c[2] for c in changes]
    target = min(periods) if discard == "lower_rate" else max(periods)
    keep_regime = [math.isclose(p, target, rel_tol=1e-9) for p in periods]
    out = []
    for f in trace:
        r = bisect.bisect_right(bounds, f.timestamp)
        if keep_regime[r]:
            out.append(f)
    return out


def join_weather(
    events: EventStream, weather: Sequence[WeatherRecord], config: PreprocessConfig
) -> EventStream:
    """Attach the weather of the event's start hour, else the nearest earlier hour in range.

    Events with no record within ``max_weather_gap`` hours keep ``weather=None``.
    """
    by_hour: Dict[float, WeatherRecord] = {}
    for w in weather:
        if w.hour in by_hour:
            raise ValueError(f"duplicate weather hour {w.hour}")
        by_hour[w.hour] = w
    hours = sorted(by_hour)
    out = []
    missing = 0
    for e in events.events:
        h = floor_to_hour(e.start)
        j = bisect.bisect_right(hours, h) - 1
        rec = None
        if j >= 0 and h - hours[j] <= config.max_weather_gap * 3600.0 + 1e-9:
            rec = by_hour[hours[j]]
        if rec is None:
            missing += 1
        out.append(replace(e, weather=rec))
    diags = list(events.diagnostics)
    if missing:
        diags.append(f"{missing} events without weather within {config.max_weather_gap} h")
    return EventStream(out, diags)


def preprocess_site(
    traces: Mapping[str, Sequence[GpsFix]],
    routes: Mapping[str, Route],
    stops: Mapping[str, Stop],
    config: PreprocessConfig,
    weather: Optional[Sequence[WeatherRecord]] = None,
) -> EventStream:
    """Run the whole per-vehicle pipeline and merge the results."""
    streams = []
    for vehicle in sorted(traces):
        trace = sorted(traces[vehicle], key=lambda f: f.timestamp)
        changes = detect_sampling_rate_change(
            trace, config.rate_change_tolerance, config.rate_change_window
        )
        if changes:
            logger.info("%s: sampling-rate changes %s", vehicle, changes)
            trace = discard_rate_regimes(trace, changes, config.rate_change_discard)
        route = config.route_for(vehicle, routes)
        streams.append(detect_events(trace, route, stops, config))
    merged = EventStream.merge(streams)
    if weather is not None:
        merged = join_weather(merged, weather, config)
    return merged
