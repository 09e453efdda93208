from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from shuttle_eta.core import DwellEvent, from_iso
from shuttle_eta.evaluation import (
    ABS_SUM,
    SUM_ABS,
    EvaluationError,
    MetricsReport,
    accumulated_error_profile,
    decompose_accumulated_error,
    lag_scope_experiment,
    mae,
    profile_from_errors,
    rmse,
    sample_journeys,
    split_by_date,
)
from shuttle_eta.journey import Journey, JourneyPrediction, JourneyPredictor, OraclePredictor, cumulative_times
from shuttle_eta.core import WeatherRecord

finite = st.floats(-1e6, 1e6, allow_nan=False)
W = WeatherRecord(0.0, 5.0, 0.0, 1.0)


class TestMetrics:
    def test_perfect(self):
        assert rmse([1.0, 2.0], [1.0, 2.0]) == 0.0 and mae([1.0, 2.0], [1.0, 2.0]) == 0.0

    def test_hand_example(self):
        assert rmse([0, 0], [3, 4]) == pytest.approx(math.sqrt(12.5), abs=1e-12)
        assert rmse([0, 0], [3, 4]) == pytest.approx(3.5355339059327378)
        assert mae([0, 0], [3, 4]) == 3.5

    @pytest.mark.parametrize("y, yh", [([], []), ([1.0], [1.0, 2.0])])
    def test_bad_input(self, y, yh):
        with pytest.raises(EvaluationError):
            rmse(y, yh)
        with pytest.raises(EvaluationError):
            mae(y, yh)

    @given(st.lists(st.tuples(finite, finite), min_size=1, max_size=50))
    def test_brute_force_oracle(self, pairs):
        y = [a for a, _ in pairs]
        yh = [b for _, b in pairs]
        sq = math.fsum((a - b) ** 2 for a, b in pairs) / len(pairs)
        ab = math.fsum(abs(a - b) for a, b in pairs) / len(pairs)
        assert rmse(y, yh) == pytest.approx(math.sqrt(sq), rel=1e-12, abs=1e-12)
        assert mae(y, yh) == pytest.approx(ab, rel=1e-12, abs=1e-12)
        assert rmse(y, yh) >= mae(y, yh) * (1 - 1e-12) >= 0

    @given(st.lists(finite, min_size=1, max_size=30), st.floats(-1e3, 1e3, allow_nan=False))
    def test_constant_offset(self, y, c):
        yh = [v + c for v in y]
        err = [b - a for a, b in zip(y, yh)]
        assert rmse(y, yh) == pytest.approx(abs(err[0]), rel=1e-6, abs=1e-6)
        assert mae(y, yh) == pytest.approx(abs(err[0]), rel=1e-6, abs=1e-6)

    def test_report_json_drops_missing_scope(self):
        assert "scope" not in MetricsReport("lag", "run", 1.0, 1.0, 3).to_json()
        assert MetricsReport("lag", "run", 1.0, 1.0, 3, scope="fleet").to_json()["scope"] == "fleet"


def dwell_at(iso):
    t = from_iso(iso)
    return DwellEvent("v", "A", t, t + 10.0)


class TestSplit:
    def test_thirty_day_holdout_starts_first_of_march(self):
        days = np.arange(np.datetime64("2023-01-01"), np.datetime64("2023-04-01"))
        events = [dwell_at(f"{d}T09:00:00Z") for d in days]
        train, test = split_by_date(events, 30)
        assert min(e.start for e in test) == from_iso("2023-03-01T09:00:00Z")
        assert max(e.start for e in train) == from_iso("2023-02-28T09:00:00Z")

    def test_single_day_fails(self):
        events = [dwell_at(f"2023-05-02T{h:02d}:00:00Z") for h in range(8, 18)]
        with pytest.raises(EvaluationError):
            split_by_date(events, 30)

    def test_empty_fails(self):
        with pytest.raises(EvaluationError):
            split_by_date([], 7)

    @given(st.lists(st.floats(0, 60 * 86400.0), min_size=2, max_size=80), st.floats(0.5, 20))
    def test_no_leakage(self, starts, days):
        events = [DwellEvent("v", "A", s, s + 1.0) for s in starts]
        try:
            train, test = split_by_date(events, days)
        except EvaluationError:
            return
        assert max(e.start for e in train) < min(e.start for e in test)
        assert len(train) + len(test) == len(events)


class Offset(JourneyPredictor):
    """Adds fixed per-event errors to the actual durations."""

    def __init__(self, run_err, dwell_err):
        self.run_err, self.dwell_err = np.asarray(run_err, float), np.asarray(dwell_err, float)

    def predict(self, j):
        runs = np.asarray(j.actual_runs) + self.run_err
        dwells = np.asarray(j.actual_dwells) + self.dwell_err
        return JourneyPrediction(0, j.stops, tuple(runs), tuple(dwells), cumulative_times(runs, dwells))


def journey(runs=(60.0, 60.0, 60.0), dwells=(20.0, 20.0), weather=W):
    return Journey("v", ("A", "B", "C", "D")[: len(runs) + 1], 0.0, weather, tuple(runs), tuple(dwells))


class TestProfiles:
    def test_hand_example(self):
        p = profile_from_errors([[10.0, 20.0], [-10.0, 0.0]])
        np.testing.assert_array_equal(p.mean, [0.0, 10.0])
        np.testing.assert_array_equal(p.max_pos, [10.0, 20.0])
        np.testing.assert_array_equal(p.max_neg, [-10.0, 0.0])
        np.testing.assert_array_equal(p.mean_abs, [10.0, 10.0])
        np.testing.assert_array_equal(p.stop_index, [1, 2])

    def test_single_journey_collapses(self):
        p = profile_from_errors([[3.0, -1.0, 4.0]])
        np.testing.assert_array_equal(p.mean, p.max_pos)
        np.testing.assert_array_equal(p.mean, p.max_neg)

    @given(st.integers(1, 8), st.integers(1, 6), st.integers(0, 10_000))
    def test_ordering(self, n, k, seed):
        E = np.random.default_rng(seed).normal(0, 50, size=(n, k))
        p = profile_from_errors(E)
        assert (p.max_neg <= p.mean + 1e-9).all() and (p.mean <= p.max_pos + 1e-9).all()

    def test_oracle_is_zero(self):
        p = accumulated_error_profile([journey(), journey((30.0, 40.0, 50.0), (0.0, 5.0))], OraclePredictor())
        assert not p.mean.any() and not p.max_pos.any() and not p.max_neg.any()

    def test_errors_accumulate_along_the_journey(self):
        p = accumulated_error_profile([journey()], Offset([1.0, 2.0, 3.0], [10.0, 0.0]))
        np.testing.assert_array_equal(p.mean, [1.0, 13.0, 16.0])

    def test_incomplete_journeys_are_excluded(self, caplog):
        js = [journey(), journey(weather=None), journey((60.0, float("nan"), 60.0))]
        p = accumulated_error_profile(js, OraclePredictor())
        assert p.n_journeys == 1
        assert "2 journeys excluded" in caplog.text
        with pytest.raises(EvaluationError):
            accumulated_error_profile(js[1:], OraclePredictor())


class TestDecomposition:
    def test_hand_example(self):
        assert decompose_accumulated_error([journey()], Offset([10.0, 10.0, 0.0], [5.0, -5.0])) == (10.0, 20.0)

    def test_abs_of_sum_variant(self):
        got = decompose_accumulated_error([journey()], Offset([10.0, 10.0, 0.0], [5.0, -5.0]), ABS_SUM)
        assert got == (0.0, 20.0)

    def test_perfect_dwells(self):
        assert decompose_accumulated_error([journey()], Offset([3.0, -1.0, 0.0], [0.0, 0.0]))[0] == 0.0

    @given(st.lists(st.floats(-60, 100), min_size=3, max_size=3), st.lists(st.floats(-20, 100), min_size=2, max_size=2))
    def test_triangle_inequality(self, run_err, dwell_err):
        j = journey()
        pred = Offset(run_err, dwell_err)
        d, r = decompose_accumulated_error([j], pred, SUM_ABS)
        total = pred.predict(j).cumulative[-1] - j.actual_cumulative[-1]
        assert d + r >= abs(total) - 1e-9

    def test_unknown_mode(self):
        with pytest.raises(EvaluationError):
            decompose_accumulated_error([journey()], OraclePredictor(), "median")


def test_sampling_is_seeded_and_chronological():
    js = [Journey("v", ("A", "B"), float(t), W, (60.0,), ()) for t in range(50)]
    a = sample_journeys(js, 5, seed=3)
    assert a == sample_journeys(js, 5, seed=3)
    assert [j.departure for j in a] == sorted(j.departure for j in a)
    assert len(sample_journeys(js, 500)) == 50


def test_single_vehicle_scopes_coincide(small_stream):
    one = [e for e in small_stream.events if e.vehicle_id == small_stream.vehicles()[0]]
    reports = lag_scope_experiment(one, ["lag", "mean"], "run", test_days=0.5)
    assert len(reports) == 4
    by = {(r.scope, r.model): r for r in reports}
    for kind in ("lag", "mean"):
        a, b = by[("per_vehicle", kind)], by[("fleet", kind)]
        assert (a.rmse, a.mae, a.n) == (b.rmse, b.mae, b.n)
