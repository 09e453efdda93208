"""Domain types and geometry/time primitives shared by the whole pipeline.

Instants are POSIX seconds (UTC) stored as floats quantized to whole
microseconds, which keeps ISO-8601 text round trips lossless.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Optional, Sequence, Tuple, Union

import numpy as np

EARTH_RADIUS_M = 6_371_000.0
SECONDS_PER_DAY = 86_400.0
# 1970-01-01 was a Thursday; Monday = 0.
_EPOCH_WEEKDAY = 3

Instant = float


class ShuttleEtaError(Exception):
    """Base class for errors raised by this package."""


class ConfigError(ShuttleEtaError):
    pass


def quantize_us(t: float) -> float:
    """Round an instant to whole microseconds."""
    return round(t * 1e6) / 1e6


def to_iso(t: float) -> str:
    us = int(round(t * 1e6))
    secs, frac = divmod(us, 1_000_000)
    dt = datetime.fromtimestamp(secs, tz=timezone.utc)
    base = dt.strftime("%Y-%m-%dT%H:%M:%S")
    if frac:
        return f"{base}.{frac:06d}Z"
    return base + "Z"


def from_iso(text: str) -> float:
    """Parse an ISO-8601 UTC instant ('Z' or '+00:00' suffix, optional fraction)."""
    s = text.strip()
    if s.endswith("Z"):
        s = s[:-1] + "+00:00"
    dt = datetime.fromisoformat(s)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    dt = dt.astimezone(timezone.utc)
    epoch = datetime(1970, 1, 1, tzinfo=timezone.utc)
    delta = dt - epoch
    us = (delta.days * 86_400 + delta.seconds) * 1_000_000 + delta.microseconds
    return us / 1e6


def as_instant(t: Union[float, int, datetime]) -> float:
    if isinstance(t, datetime):
        if t.tzinfo is None:
            t = t.replace(tzinfo=timezone.utc)
        return t.timestamp()
    return float(t)


def floor_to_hour(t: float) -> float:
    return math.floor(t / 3600.0) * 3600.0


def floor_to_day(t: float) -> float:
    return math.floor(t / SECONDS_PER_DAY) * SECONDS_PER_DAY


@dataclass(frozen=True)
class GpsFix:
    vehicle_id: str
    timestamp: Instant
    lat: float
    lon: float
    speed: Optional[float] = None  # km/h; None on GPS-only sites

    def __post_init__(self):
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"latitude out of range: {self.lat}")
        if not -180.0 <= self.lon <= 180.0:
            raise ValueError(f"longitude out of range: {self.lon}")
        if self.speed is not None and self.speed < 0:
            raise ValueError(f"negative speed: {self.speed}")


@dataclass(frozen=True)
class Stop:
    stop_id: str
    lat: float
    lon: float
    radius: float
    name: str = ""

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(f"stop {self.stop_id}: radius must be > 0")


@dataclass(frozen=True)
class Segment:
    from_stop: str
    to_stop: str

    def __post_init__(self):
        if self.from_stop == self.to_stop:
            raise ValueError(f"degenerate segment {self.from_stop}->{self.to_stop}")

    @property
    def key(self) -> str:
        return f"{self.from_stop}->{self.to_stop}"

    @classmethod
    def parse(cls, key: str) -> "Segment":
        a, sep, b = key.partition("->")
        if not sep:
            raise ValueError(f"not a segment key: {key!r}")
        return cls(a, b)

    def __str__(self) -> str:
        return self.key


@dataclass(frozen=True)
class Route:
    """Ordered stop sequence.

    A route whose last stop equals its first is a closed loop; vehicles
    continue from the last position onto the second one.
    """

    route_id: str
    stops: Tuple[str, ...]
    stop_order_exceptions: Tuple[Tuple[str, ...], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "stops", tuple(self.stops))
        object.__setattr__(
            self, "stop_order_exceptions", tuple(tuple(s) for s in self.stop_order_exceptions)
        )
        if len(self.stops) < 2:
            raise ValueError(f"route {self.route_id}: needs at least two stops")
        for a, b in zip(self.stops, self.stops[1:]):
            if a == b:
                raise ValueError(f"route {self.route_id}: consecutive duplicate stop {a}")

    @property
    def is_loop(self) -> bool:
        return len(self.stops) > 2 and self.stops[0] == self.stops[-1]

    def segments(self) -> list:
        return [Segment(a, b) for a, b in zip(self.stops, self.stops[1:])]

    def successors(self, stop_id: str) -> list:
        """Stops that may legally follow ``stop_id``: route order plus declared exceptions."""
        out = []
        for i, s in enumerate(self.stops):
            if s != stop_id:
                continue
            if i + 1 < len(self.stops):
                out.append(self.stops[i + 1])
            elif self.is_loop:
                out.append(self.stops[1])
        for seq in self.stop_order_exceptions:
            for a, b in zip(seq, seq[1:]):
                if a == stop_id:
                    out.append(b)
        seen = []
        for s in out:
            if s not in seen:
                seen.append(s)
        return seen

    def validate(self, stops: dict) -> None:
        for s in self.stops:
            if s not in stops:
                raise ValueError(f"route {self.route_id}: unknown stop {s}")


@dataclass(frozen=True)
class WeatherRecord:
    hour: Instant
    temperature: float
    precipitation: float
    windspeed: float

    def __post_init__(self):
        if self.precipitation < 0 or self.windspeed < 0:
            raise ValueError("precipitation and windspeed must be >= 0")


@dataclass(frozen=True)
class DwellEvent:
    vehicle_id: str
    stop_id: str
    start: Instant
    end: Instant
    weather: Optional[WeatherRecord] = field(default=None, compare=False)

    kind = "dwell"

    def __post_init__(self):
        if self.end < self.start:
            raise ValueError("dwell end precedes start")

    @property
    def duration(self) -> float:
        return self.end - self.start

    @property
    def key(self) -> str:
        return self.stop_id


@dataclass(frozen=True)
class RunEvent:
    vehicle_id: str
    segment: Segment
    start: Instant
    end: Instant
    weather: Optional[WeatherRecord] = field(default=None, compare=False)

    kind = "run"

    def __post_init__(self):
        if not self.end > self.start:
            raise ValueError("run duration must be > 0")

    @property
    def duration(self) -> float:
        return self.end - self.start

    @property
    def key(self) -> str:
        return self.segment.key


def haversine_distance(a: Sequence[float], b: Sequence[float]) -> float:
    """Great-circle distance in meters between two (lat, lon) pairs in degrees."""
    lat1, lon1 = math.radians(a[0]), math.radians(a[1])
    lat2, lon2 = math.radians(b[0]), math.radians(b[1])
    h = math.sin((lat2 - lat1) / 2) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin(
        (lon2 - lon1) / 2
    ) ** 2
    return 2.0 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(h)))


def haversine_array(lat1, lon1, lat2, lon2) -> np.ndarray:
    """Vectorized haversine; arguments broadcast."""
    p1, l1 = np.radians(lat1), np.radians(lon1)
    p2, l2 = np.radians(lat2), np.radians(lon2)
    h = np.sin((p2 - p1) / 2) ** 2 + np.cos(p1) * np.cos(p2) * np.sin((l2 - l1) / 2) ** 2
    return 2.0 * EARTH_RADIUS_M * np.arcsin(np.minimum(1.0, np.sqrt(h)))


def encode_time(timestamp: Union[float, datetime]) -> Tuple[float, float, float, float]:
    """(sin, cos) of time-of-day followed by (sin, cos) of day-of-week, UTC."""
    t = as_instant(timestamp)
    day = math.floor(t / SECONDS_PER_DAY)
    tod = t - day * SECONDS_PER_DAY
    dow = (day + _EPOCH_WEEKDAY) % 7
    a = 2.0 * math.pi * tod / SECONDS_PER_DAY
    b = 2.0 * math.pi * dow / 7.0
    return (math.sin(a), math.cos(a), math.sin(b), math.cos(b))


def within_stop_radius(fix: GpsFix, stop: Stop) -> bool:
    return haversine_distance((fix.lat, fix.lon), (stop.lat, stop.lon)) <= stop.radius


def offset_position(lat: float, lon: float, north_m: float, east_m: float) -> Tuple[float, float]:
    """Move a point by a local north/east displacement (spherical earth)."""
    dlat = north_m / EARTH_RADIUS_M
    dlon = east_m / (EARTH_RADIUS_M * math.cos(math.radians(lat)))
    return lat + math.degrees(dlat), lon + math.degrees(dlon)


def local_xy(lat, lon, lat0: float, lon0: float):
    """Equirectangular projection in meters around (lat0, lon0)."""
    x = np.radians(np.asarray(lon) - lon0) * EARTH_RADIUS_M * math.cos(math.radians(lat0))
    y = np.radians(np.asarray(lat) - lat0) * EARTH_RADIUS_M
    return x, y
