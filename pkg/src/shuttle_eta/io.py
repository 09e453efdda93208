"""Plain-text file formats read and written by the command line tools.

Floats are written with ``repr`` so every value survives a write/read
cycle exactly; instants are ISO-8601 UTC with microsecond resolution.
Malformed input raises :class:`FormatError` naming the file, line and
column of the offending field.
"""

from __future__ import annotations

import csv
import io as _io
import json
import math
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .core import (
    DwellEvent,
    GpsFix,
    Route,
    RunEvent,
    Segment,
    ShuttleEtaError,
    Stop,
    WeatherRecord,
    floor_to_hour,
    from_iso,
    to_iso,
)
from .features import Dataset, feature_columns

PathLike = Union[str, Path]

TRACE_HEADER = ("vehicle_id", "timestamp", "lat", "lon", "speed_kmh")
STOP_HEADER = ("stop_id", "name", "lat", "lon", "radius_m")
WEATHER_HEADER = ("hour_iso", "temp_c", "precip_mm", "wind_ms")
EVENT_HEADER = ("kind", "vehicle_id", "key", "start_iso", "end_iso", "duration_s", "temp_c", "precip_mm", "wind_ms")
PROFILE_HEADER = ("stop_index", "mean_err_s", "max_pos_s", "max_neg_s", "mean_abs_s")
METRICS_FIELDS = ("model", "target", "rmse", "mae", "n", "seed")
DATASET_PREFIX = "# shuttle-eta dataset "
DATASET_VERSION = 1


class FormatError(ShuttleEtaError):
    def __init__(self, path, line: Optional[int], column: Optional[str], message: str):
        self.path = str(path)
        self.line = line
        self.column = column
        where = self.path
        if line is not None:
            where += f":{line}"
        if column is not None:
            where += f":{column}"
        super().__init__(f"{where}: {message}")


def fmt(v: float) -> str:
    return repr(float(v))


def _writer(handle):
    return csv.writer(handle, lineterminator="\n")


def _write_text(path: PathLike, text: str) -> None:
    Path(path).write_text(text, encoding="utf-8", newline="")


class _Rows:
    """CSV reader that checks the header and reports field positions on errors."""

    def __init__(self, path: PathLike, header: Sequence[str], text: Optional[str] = None, skip_comments=False):
        self.path = str(path)
        if text is None:
            try:
                text = Path(path).read_text(encoding="utf-8")
            except OSError as exc:
                raise FormatError(path, None, None, f"cannot read: {exc.strerror}") from None
        lines = text.splitlines()
        self.offset = 0
        if skip_comments:
            while self.offset < len(lines) and lines[self.offset].startswith("#"):
                self.offset += 1
        reader = csv.reader(lines[self.offset :])
        try:
            got = next(reader)
        except StopIteration:
            raise FormatError(path, self.offset + 1, None, "missing header") from None
        if header is not None and tuple(got) != tuple(header):
            raise FormatError(path, self.offset + 1, None, f"expected header {','.join(header)}, got {','.join(got)}")
        self.header = tuple(got)
        self._reader = reader
        self.line = self.offset + 1

    def __iter__(self):
        for row in self._reader:
            self.line = self.offset + self._reader.line_num
            if not row:
                continue
            if len(row) != len(self.header):
                raise FormatError(self.path, self.line, None, f"expected {len(self.header)} fields, got {len(row)}")
            yield dict(zip(self.header, row))

    def error(self, column: str, message: str) -> FormatError:
        return FormatError(self.path, self.line, column, message)

    def float(self, row, column: str, optional: bool = False) -> Optional[float]:
        text = row[column]
        if optional and text == "":
            return None
        try:
            v = float(text)
        except ValueError:
            raise self.error(column, f"not a number: {text!r}") from None
        if not math.isfinite(v):
            raise self.error(column, f"not finite: {text!r}")
        return v

    def instant(self, row, column: str) -> float:
        try:
            return from_iso(row[column])
        except ValueError:
            raise self.error(column, f"not an ISO-8601 instant: {row[column]!r}") from None

    def text(self, row, column: str) -> str:
        if row[column] == "":
            raise self.error(column, "empty field")
        return row[column]


# --------------------------------------------------------------------------
# traces


def write_traces(path: PathLike, fixes: Iterable[GpsFix]) -> None:
    buf = _io.StringIO()
    w = _writer(buf)
    w.writerow(TRACE_HEADER)
    for f in fixes:
        w.writerow([f.vehicle_id, to_iso(f.timestamp), fmt(f.lat), fmt(f.lon), "" if f.speed is None else fmt(f.speed)])
    _write_text(path, buf.getvalue())


def read_traces(path: PathLike) -> Dict[str, List[GpsFix]]:
    """Fixes grouped by vehicle, from one CSV file or every ``*.csv`` in a directory."""
    p = Path(path)
    files = sorted(p.glob("*.csv")) if p.is_dir() else [p]
    if not files:
        raise FormatError(path, None, None, "no trace files found")
    out: Dict[str, List[GpsFix]] = {}
    for file in files:
        rows = _Rows(file, TRACE_HEADER)
        for row in rows:
            try:
                fix = GpsFix(
                    rows.text(row, "vehicle_id"),
                    rows.instant(row, "timestamp"),
                    rows.float(row, "lat"),
                    rows.float(row, "lon"),
                    rows.float(row, "speed_kmh", optional=True),
                )
            except ValueError as exc:
                raise rows.error(None, str(exc)) from None
            out.setdefault(fix.vehicle_id, []).append(fix)
    for v in out:
        out[v].sort(key=lambda f: f.timestamp)
    return out


# --------------------------------------------------------------------------
# stops and routes


def write_stops(path: PathLike, stops: Iterable[Stop]) -> None:
    buf = _io.StringIO()
    w = _writer(buf)
    w.writerow(STOP_HEADER)
    for s in stops:
        w.writerow([s.stop_id, s.name, fmt(s.lat), fmt(s.lon), fmt(s.radius)])
    _write_text(path, buf.getvalue())


def read_stops(path: PathLike) -> Dict[str, Stop]:
    rows = _Rows(path, STOP_HEADER)
    out: Dict[str, Stop] = {}
    for row in rows:
        sid = rows.text(row, "stop_id")
        if sid in out:
            raise rows.error("stop_id", f"duplicate stop {sid!r}")
        try:
            out[sid] = Stop(sid, rows.float(row, "lat"), rows.float(row, "lon"), rows.float(row, "radius_m"), row["name"])
        except ValueError as exc:
            raise rows.error(None, str(exc)) from None
    return out


def write_routes(path: PathLike, routes: Iterable[Route]) -> None:
    data = [
        {"route_id": r.route_id, "stops": list(r.stops), "stop_order_exceptions": [list(s) for s in r.stop_order_exceptions]}
        for r in routes
    ]
    _write_text(path, json.dumps(data, indent=2) + "\n")


def _load_json(path: PathLike):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise FormatError(path, None, None, f"cannot read: {exc.strerror}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(path, exc.lineno, str(exc.colno), exc.msg) from None


def read_routes(path: PathLike, stops: Optional[Mapping[str, Stop]] = None) -> Dict[str, Route]:
    data = _load_json(path)
    if not isinstance(data, list):
        raise FormatError(path, None, None, "routes file must hold a JSON list")
    out: Dict[str, Route] = {}
    for n, item in enumerate(data):
        try:
            r = Route(item["route_id"], tuple(item["stops"]), tuple(tuple(s) for s in item.get("stop_order_exceptions", [])))
            if stops is not None:
                r.validate(dict(stops))
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(path, None, f"item {n}", f"bad route: {exc}") from None
        if r.route_id in out:
            raise FormatError(path, None, f"item {n}", f"duplicate route {r.route_id!r}")
        out[r.route_id] = r
    return out


# --------------------------------------------------------------------------
# weather


def write_weather(path: PathLike, records: Iterable[WeatherRecord]) -> None:
    buf = _io.StringIO()
    w = _writer(buf)
    w.writerow(WEATHER_HEADER)
    for r in records:
        w.writerow([to_iso(r.hour), fmt(r.temperature), fmt(r.precipitation), fmt(r.windspeed)])
    _write_text(path, buf.getvalue())


def read_weather(path: PathLike) -> List[WeatherRecord]:
    rows = _Rows(path, WEATHER_HEADER)
    out = []
    for row in rows:
        try:
            out.append(
                WeatherRecord(
                    rows.instant(row, "hour_iso"),
                    rows.float(row, "temp_c"),
                    rows.float(row, "precip_mm"),
                    rows.float(row, "wind_ms"),
                )
            )
        except ValueError as exc:
            raise rows.error(None, str(exc)) from None
    return out


# --------------------------------------------------------------------------
# events


def write_events(path: PathLike, events: Iterable) -> None:
    events = events.events if hasattr(events, "events") else events
    buf = _io.StringIO()
    w = _writer(buf)
    w.writerow(EVENT_HEADER)
    for e in events:
        wx = e.weather
        weather = ["", "", ""] if wx is None else [fmt(wx.temperature), fmt(wx.precipitation), fmt(wx.windspeed)]
        w.writerow([e.kind, e.vehicle_id, e.key, to_iso(e.start), to_iso(e.end), fmt(e.duration)] + weather)
    _write_text(path, buf.getvalue())


def read_events(path: PathLike) -> list:
    """Events in file order. Weather records are stamped with the start's hour."""
    rows = _Rows(path, EVENT_HEADER)
    out = []
    for row in rows:
        kind = row["kind"]
        vehicle = rows.text(row, "vehicle_id")
        key = rows.text(row, "key")
        start = rows.instant(row, "start_iso")
        end = rows.instant(row, "end_iso")
        rows.float(row, "duration_s")
        vals = [rows.float(row, c, optional=True) for c in ("temp_c", "precip_mm", "wind_ms")]
        if all(v is None for v in vals):
            weather = None
        elif any(v is None for v in vals):
            raise rows.error("temp_c", "weather fields must be all present or all empty")
        else:
            try:
                weather = WeatherRecord(floor_to_hour(start), *vals)
            except ValueError as exc:
                raise rows.error("precip_mm", str(exc)) from None
        try:
            if kind == "dwell":
                out.append(DwellEvent(vehicle, key, start, end, weather))
            elif kind == "run":
                out.append(RunEvent(vehicle, Segment.parse(key), start, end, weather))
            else:
                raise rows.error("kind", f"unknown event kind {kind!r}")
        except ValueError as exc:
            raise rows.error(None, str(exc)) from None
    return out


# --------------------------------------------------------------------------
# datasets


def write_dataset(path: PathLike, dataset: Dataset) -> None:
    meta = {
        "format_version": DATASET_VERSION,
        "target": dataset.target,
        "scope": dataset.scope,
        "vehicle_vocab": list(dataset.vehicle_vocab),
        "key_vocab": list(dataset.key_vocab),
    }
    buf = _io.StringIO()
    buf.write(DATASET_PREFIX + json.dumps(meta, sort_keys=True) + "\n")
    w = _writer(buf)
    w.writerow(("vehicle_id", "key", "start_iso") + dataset.columns + ("y",))
    for i in range(len(dataset)):
        w.writerow(
            [dataset.vehicles[i], dataset.keys[i], to_iso(dataset.t[i])]
            + [fmt(v) for v in dataset.X[i]]
            + [fmt(dataset.y[i])]
        )
    _write_text(path, buf.getvalue())


def read_dataset(path: PathLike) -> Dataset:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise FormatError(path, None, None, f"cannot read: {exc.strerror}") from None
    first = text.split("\n", 1)[0]
    if not first.startswith(DATASET_PREFIX):
        raise FormatError(path, 1, None, "missing dataset metadata line")
    try:
        meta = json.loads(first[len(DATASET_PREFIX) :])
    except json.JSONDecodeError as exc:
        raise FormatError(path, 1, str(exc.colno + len(DATASET_PREFIX)), exc.msg) from None
    if meta.get("format_version") != DATASET_VERSION:
        raise FormatError(path, 1, None, f"dataset format version {meta.get('format_version')}; expected {DATASET_VERSION}")
    cols = feature_columns(meta["vehicle_vocab"], meta["key_vocab"])
    rows = _Rows(path, ("vehicle_id", "key", "start_iso") + cols + ("y",), text=text, skip_comments=True)
    vehicles, keys, ts, X, y = [], [], [], [], []
    for row in rows:
        vehicles.append(rows.text(row, "vehicle_id"))
        keys.append(rows.text(row, "key"))
        ts.append(rows.instant(row, "start_iso"))
        X.append([rows.float(row, c) for c in cols])
        y.append(rows.float(row, "y"))
    return Dataset(
        target=meta["target"],
        scope=meta["scope"],
        vehicle_vocab=tuple(meta["vehicle_vocab"]),
        key_vocab=tuple(meta["key_vocab"]),
        X=np.array(X, dtype=float).reshape(len(y), len(cols)),
        y=np.array(y, dtype=float),
        vehicles=np.array(vehicles, dtype=object),
        keys=np.array(keys, dtype=object),
        t=np.array(ts, dtype=float),
    )


# --------------------------------------------------------------------------
# metrics and profiles


def write_metrics(path: PathLike, report) -> None:
    d = report.to_json() if hasattr(report, "to_json") else dict(report)
    _write_text(path, json.dumps(d, sort_keys=True, indent=2) + "\n")


def read_metrics(path: PathLike) -> dict:
    d = _load_json(path)
    missing = [k for k in METRICS_FIELDS if k not in d]
    if missing:
        raise FormatError(path, None, None, f"metrics missing fields {missing}")
    return d


def write_profile(path: PathLike, profile) -> None:
    buf = _io.StringIO()
    w = _writer(buf)
    w.writerow(PROFILE_HEADER)
    for i, m, p, n, a in profile.rows():
        w.writerow([i, fmt(m), fmt(p), fmt(n), fmt(a)])
    _write_text(path, buf.getvalue())


def read_profile(path: PathLike) -> List[Tuple[int, float, float, float, float]]:
    rows = _Rows(path, PROFILE_HEADER)
    out = []
    for row in rows:
        try:
            idx = int(row["stop_index"])
        except ValueError:
            raise rows.error("stop_index", f"not an integer: {row['stop_index']!r}") from None
        out.append((idx,) + tuple(rows.float(row, c) for c in PROFILE_HEADER[1:]))
    return out


def write_table(path: PathLike, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    buf = _io.StringIO()
    w = _writer(buf)
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(v) if isinstance(v, float) else v for v in r])
    _write_text(path, buf.getvalue())
