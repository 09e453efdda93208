from __future__ import annotations

import json

import numpy as np
import pytest

from shuttle_eta import io
from shuttle_eta.cli import main
from shuttle_eta.features import DWELL, PER_VEHICLE, Dataset, feature_columns


def run(*argv):
    assert main([str(a) for a in argv]) == 0


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    d = tmp_path_factory.mktemp("pipe")
    site = d / "site"
    run("synth", "--preset", "lesmureaux_like", "--seed", 4, "--days", 2, "--out", site)
    run("preprocess", "--traces", site / "traces", "--stops", site / "stops.csv", "--routes", site / "routes.json",
        "--weather", site / "weather.csv", "--config", site / "config.json", "--out", d / "events.csv")
    run("features", "--events", d / "events.csv", "--target", "dwell", "--scope", "per-vehicle",
        "--routes", site / "routes.json", "--out", d / "dwell.csv")
    run("features", "--events", d / "events.csv", "--target", "run", "--scope", "fleet", "--out", d / "run.csv")
    run("train", "--dataset", d / "dwell.csv", "--model", "mean", "--out", d / "dwell_mean.bin")
    run("train", "--dataset", d / "run.csv", "--model", "gbt", "--seed", 2, "--out", d / "run_gbt.bin")
    run("evaluate", "--model", d / "dwell_mean.bin", "--dataset", d / "dwell.csv", "--out", d / "metrics" / "dwell.json")
    run("evaluate", "--model", d / "run_gbt.bin", "--dataset", d / "run.csv", "--out", d / "metrics" / "run.json")
    return d


def test_pipeline_metrics(pipeline):
    for name in ("dwell", "run"):
        m = io.read_metrics(pipeline / "metrics" / f"{name}.json")
        assert m["rmse"] >= m["mae"] > 0 and m["n"] > 100
    site = pipeline / "site"
    assert sorted(p.name for p in (site / "traces").iterdir()) == ["V1.csv", "V2.csv"]
    for f in ("truth.csv", "stops.csv", "routes.json", "weather.csv", "config.json"):
        assert (site / f).exists()


def test_manifest_contents(pipeline):
    man = json.loads((pipeline / "run_gbt.bin.manifest.json").read_text())
    assert man["command"] == "train" and man["seed"] == 2
    assert set(man["input_digests"]) >= {"dataset"}
    assert man["output_digests"] and man["config_digest"] and man["tool_version"]


def test_detected_events_match_truth(pipeline):
    detected = io.read_events(pipeline / "events.csv")
    truth = io.read_events(pipeline / "site" / "truth.csv")
    assert len(detected) == len(truth)


def test_oracle_journey_profile_is_zero(pipeline):
    out = pipeline / "oracle.csv"
    run("journey", "--oracle", "--events", pipeline / "events.csv", "--samples", 5, "--seed", 1,
        "--decomposition", pipeline / "metrics" / "oracle_dec.json", "--label", "oracle", "--out", out)
    rows = io.read_profile(out)
    assert len(rows) == 5
    assert all(v == 0.0 for r in rows for v in r[1:])
    dec = json.loads((pipeline / "metrics" / "oracle_dec.json").read_text())
    assert dec["dwell_abs"] == 0.0 and dec["run_abs"] == 0.0


def test_model_journey_and_report(pipeline):
    run("train", "--dataset", pipeline / "run.csv", "--model", "mean", "--out", pipeline / "run_mean.bin")
    out = pipeline / "profile.csv"
    run("journey", "--dwell-model", pipeline / "dwell_mean.bin", "--run-model", pipeline / "run_mean.bin",
        "--events", pipeline / "events.csv", "--samples", 4, "--holdout-days", 1, "--out", out)
    rows = io.read_profile(out)
    assert all(r[3] <= r[1] <= r[2] for r in rows)
    run("report", "--metrics", pipeline / "metrics", "--out", pipeline / "tables.csv")
    text = (pipeline / "tables.csv").read_text().splitlines()
    assert text[0] == "table,model,target,scope,metric,n_runs,mean,min,max"
    assert any(line.startswith("decomposition,oracle") for line in text)


def test_lag_scope_table(pipeline):
    out = pipeline / "lag_scope.csv"
    run("experiment", "lag-scope", "--events", pipeline / "events.csv", "--models", "lag,mean",
        "--holdout-days", 0.5, "--out", out)
    lines = out.read_text().splitlines()
    assert lines[0] == "model,target,per_vehicle_rmse,per_vehicle_mae,fleet_rmse,fleet_mae,n,seed"
    assert [l.split(",")[0] for l in lines[1:]] == ["lag", "mean"]


def test_perfect_lag_fit(tmp_path):
    vv, kv = ("V1",), ("S01", "S02")
    cols = feature_columns(vv, kv)
    n = 12
    X = np.random.default_rng(0).uniform(0, 40, size=(n, len(cols)))
    y = X[:, cols.index("lag1")].copy()
    ds = Dataset(DWELL, PER_VEHICLE, vv, kv, X, y, np.array(["V1"] * n, dtype=object),
                 np.array(["S01", "S02"] * (n // 2), dtype=object), 1.7e9 + 60.0 * np.arange(n))
    io.write_dataset(tmp_path / "d.csv", ds)
    run("train", "--dataset", tmp_path / "d.csv", "--model", "lag", "--out", tmp_path / "lag.bin")
    run("evaluate", "--model", tmp_path / "lag.bin", "--dataset", tmp_path / "d.csv", "--out", tmp_path / "m.json")
    m = io.read_metrics(tmp_path / "m.json")
    assert m["rmse"] == 0.0 and m["mae"] == 0.0


def test_rerun_is_byte_identical(tmp_path, pipeline):
    site = tmp_path / "site"
    run("synth", "--preset", "lesmureaux_like", "--seed", 4, "--days", 2, "--out", site)
    for f in ("truth.csv", "weather.csv", "traces/V1.csv"):
        assert (site / f).read_bytes() == (pipeline / "site" / f).read_bytes()
    run("train", "--dataset", pipeline / "run.csv", "--model", "gbt", "--seed", 2, "--out", tmp_path / "g.bin")
    assert (tmp_path / "g.bin").read_bytes() == (pipeline / "run_gbt.bin").read_bytes()
    a = json.loads((tmp_path / "g.bin.manifest.json").read_text())
    b = json.loads((pipeline / "run_gbt.bin.manifest.json").read_text())
    assert a["config_digest"] == b["config_digest"]
    assert list(a["output_digests"].values()) == list(b["output_digests"].values())


class TestFailures:
    def _error(self, capsys, *argv):
        assert main([str(a) for a in argv]) == 1
        return json.loads(capsys.readouterr().err.strip().splitlines()[-1])

    def test_malformed_file_reports_position(self, tmp_path, capsys):
        bad = tmp_path / "e.csv"
        bad.write_text(",".join(io.EVENT_HEADER) + "\ndwell,V1,S1,not-a-time,2023-01-01T00:00:10Z,10.0,,,\n")
        err = self._error(capsys, "features", "--events", bad, "--target", "dwell", "--out", tmp_path / "o.csv")
        assert err["error"] == "FormatError" and err["command"] == "features"
        assert err["line"] == 2 and err["column"] == "start_iso"

    def test_bad_model_magic(self, tmp_path, capsys, pipeline):
        bad = tmp_path / "m.bin"
        bad.write_bytes(b"NOTAMODEL" + b"\x00" * 20)
        err = self._error(capsys, "evaluate", "--model", bad, "--dataset", pipeline / "dwell.csv", "--out", tmp_path / "x.json")
        assert "magic" in err["message"]

    def test_model_version_mismatch(self, tmp_path, capsys, pipeline):
        blob = bytearray((pipeline / "dwell_mean.bin").read_bytes())
        blob[8:12] = (7).to_bytes(4, "little")
        bad = tmp_path / "m.bin"
        bad.write_bytes(bytes(blob))
        err = self._error(capsys, "evaluate", "--model", bad, "--dataset", pipeline / "dwell.csv", "--out", tmp_path / "x.json")
        assert "version 7" in err["message"]

    def test_graph_model_needs_routes(self, tmp_path, capsys, pipeline):
        err = self._error(capsys, "train", "--dataset", pipeline / "dwell.csv", "--model", "gcn", "--out", tmp_path / "g.bin")
        assert "--routes" in err["message"]

    def test_journey_needs_models(self, tmp_path, capsys, pipeline):
        self._error(capsys, "journey", "--events", pipeline / "events.csv", "--out", tmp_path / "p.csv")
