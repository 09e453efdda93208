from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from shuttle_eta import io
from shuttle_eta.core import DwellEvent, GpsFix, Route, RunEvent, Segment, Stop, WeatherRecord, quantize_us
from shuttle_eta.evaluation import MetricsReport, profile_from_errors
from shuttle_eta.features import PER_VEHICLE, RUN, assemble_dataset, vocabularies
from shuttle_eta.io import FormatError

instants = st.floats(1.5e9, 1.9e9, allow_nan=False).map(quantize_us)
reals = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)
ids = st.text("ABCDEFGHJKXYZ0123456789_", min_size=1, max_size=6)


@st.composite
def fixes(draw):
    return GpsFix(
        draw(ids), draw(instants), draw(st.floats(-89, 89)), draw(st.floats(-179, 179)),
        draw(st.none() | st.floats(0, 200)),
    )


@st.composite
def events(draw):
    start = draw(instants)
    end = quantize_us(start + draw(st.floats(0.001, 500)))
    weather = draw(st.none() | st.builds(
        lambda t, p, w: WeatherRecord(0.0, t, p, w), reals, st.floats(0, 50), st.floats(0, 40)))
    if draw(st.booleans()):
        return DwellEvent(draw(ids), draw(ids), start, end, weather)
    a, b = draw(ids), draw(ids)
    if a == b:
        b = b + "x"
    return RunEvent(draw(ids), Segment(a, b), start, end, weather)


@given(st.lists(fixes(), max_size=30))
def test_trace_round_trip(tmp_path, fs):
    p = tmp_path / "t.csv"
    io.write_traces(p, fs)
    if not fs:
        assert io.read_traces(p) == {}
        return
    got = io.read_traces(p)
    expected = {}
    for f in sorted(fs, key=lambda f: f.timestamp):
        expected.setdefault(f.vehicle_id, []).append(f)
    assert {v: sorted(x, key=lambda f: f.timestamp) for v, x in got.items()} == expected


def test_trace_directory(tmp_path):
    (tmp_path / "d").mkdir()
    io.write_traces(tmp_path / "d" / "a.csv", [GpsFix("A", 10.0, 1.0, 2.0, 3.0)])
    io.write_traces(tmp_path / "d" / "b.csv", [GpsFix("B", 5.0, 1.0, 2.0, None)])
    got = io.read_traces(tmp_path / "d")
    assert sorted(got) == ["A", "B"] and got["B"][0].speed is None


@given(st.lists(events(), max_size=30))
def test_event_round_trip(tmp_path, evs):
    p = tmp_path / "e.csv"
    io.write_events(p, evs)
    back = io.read_events(p)
    assert back == evs
    for a, b in zip(evs, back):
        if a.weather is None:
            assert b.weather is None
        else:
            assert (a.weather.temperature, a.weather.precipitation, a.weather.windspeed) == (
                b.weather.temperature, b.weather.precipitation, b.weather.windspeed)


def test_stops_routes_weather(tmp_path):
    stops = [Stop("S1", 58.1, 15.2, 15.0, "First, stop"), Stop("S2", 58.2, 15.3, 20.0, "")]
    io.write_stops(tmp_path / "s.csv", stops)
    got = io.read_stops(tmp_path / "s.csv")
    assert list(got.values()) == stops
    routes = [Route("R", ("S1", "S2", "S1")), Route("Q", ("S1", "S2"), (("S2", "S1"),))]
    io.write_routes(tmp_path / "r.json", routes)
    assert list(io.read_routes(tmp_path / "r.json", got).values()) == routes
    weather = [WeatherRecord(3600.0 * h, 1.5 * h, 0.0, 2.25) for h in range(5)]
    io.write_weather(tmp_path / "w.csv", weather)
    assert io.read_weather(tmp_path / "w.csv") == weather


def test_route_with_unknown_stop(tmp_path):
    io.write_routes(tmp_path / "r.json", [Route("R", ("S1", "S9"))])
    with pytest.raises(FormatError):
        io.read_routes(tmp_path / "r.json", {"S1": Stop("S1", 0.0, 0.0, 10.0)})


def test_dataset_round_trip(tmp_path, small_stream):
    v, k = vocabularies(small_stream, None, RUN)
    ds = assemble_dataset(small_stream, RUN, PER_VEHICLE, v, k)
    io.write_dataset(tmp_path / "d.csv", ds)
    back = io.read_dataset(tmp_path / "d.csv")
    assert (back.target, back.scope, back.vehicle_vocab, back.key_vocab) == (ds.target, ds.scope, ds.vehicle_vocab, ds.key_vocab)
    assert back.X.tobytes() == ds.X.tobytes() and back.y.tobytes() == ds.y.tobytes()
    np.testing.assert_array_equal(back.t, ds.t)
    assert list(back.keys) == list(ds.keys) and list(back.vehicles) == list(ds.vehicles)


def test_metrics_and_profile(tmp_path):
    r = MetricsReport("rf", "dwell", 3.25, 2.5, 40, 7, "fleet")
    io.write_metrics(tmp_path / "m.json", r)
    assert io.read_metrics(tmp_path / "m.json") == r.to_json()
    p = profile_from_errors([[1.0, -2.5], [3.0, 0.125]])
    io.write_profile(tmp_path / "p.csv", p)
    assert io.read_profile(tmp_path / "p.csv") == p.rows()


class TestErrors:
    def test_bad_number_names_line_and_column(self, tmp_path):
        p = tmp_path / "w.csv"
        p.write_text("hour_iso,temp_c,precip_mm,wind_ms\n2023-01-01T00:00:00Z,1.0,0.0,2.0\n2023-01-01T01:00:00Z,warm,0.0,2.0\n")
        with pytest.raises(FormatError) as e:
            io.read_weather(p)
        assert (e.value.line, e.value.column) == (3, "temp_c")
        assert str(e.value).startswith(f"{p}:3:temp_c:")

    def test_bad_header(self, tmp_path):
        p = tmp_path / "s.csv"
        p.write_text("id,lat,lon\n")
        with pytest.raises(FormatError) as e:
            io.read_stops(p)
        assert e.value.line == 1

    def test_wrong_field_count(self, tmp_path):
        p = tmp_path / "s.csv"
        p.write_text("stop_id,name,lat,lon,radius_m\nS1,,1.0,2.0\n")
        with pytest.raises(FormatError) as e:
            io.read_stops(p)
        assert e.value.line == 2

    def test_duplicate_stop(self, tmp_path):
        p = tmp_path / "s.csv"
        p.write_text("stop_id,name,lat,lon,radius_m\nS1,,1.0,2.0,10\nS1,,1.0,2.0,10\n")
        with pytest.raises(FormatError):
            io.read_stops(p)

    def test_bad_instant(self, tmp_path):
        p = tmp_path / "t.csv"
        p.write_text("vehicle_id,timestamp,lat,lon,speed_kmh\nV1,yesterday,1.0,2.0,\n")
        with pytest.raises(FormatError) as e:
            io.read_traces(p)
        assert e.value.column == "timestamp"

    def test_partial_weather(self, tmp_path):
        p = tmp_path / "e.csv"
        p.write_text(",".join(io.EVENT_HEADER) + "\ndwell,V1,S1,2023-01-01T00:00:00Z,2023-01-01T00:00:10Z,10.0,1.0,,\n")
        with pytest.raises(FormatError):
            io.read_events(p)

    def test_broken_json(self, tmp_path):
        p = tmp_path / "r.json"
        p.write_text('[{"route_id": "R",\n "stops": [}]')
        with pytest.raises(FormatError) as e:
            io.read_routes(p)
        assert e.value.line == 2

    def test_missing_file(self, tmp_path):
        with pytest.raises(FormatError):
            io.read_weather(tmp_path / "nope.csv")

    def test_dataset_without_metadata(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("vehicle_id,key\n")
        with pytest.raises(FormatError):
            io.read_dataset(p)
