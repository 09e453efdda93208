"""Command line interface: ``shuttle-eta <command> ...``.

Every command that writes a file also writes ``<out>.manifest.json`` with
the command, its arguments, digests of the inputs and the configuration,
the seed, the tool version and wall-clock timestamps. Failures print one
JSON error line to stderr and exit with status 1.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import sys
import time
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import __version__
from . import io as fio
from .core import ConfigError, ShuttleEtaError, to_iso
from .evaluation import (
    SUM_ABS,
    accumulated_error_profile,
    decompose_accumulated_error,
    holdout_cutoff,
    lag_scope_experiment,
    sample_journeys,
)
from .features import SCOPES, TARGETS, assemble_dataset, normalize_scope, vocabularies
from .graph import build_segment_graph, build_stop_graph
from .journey import ModelPredictor, OraclePredictor, extract_journeys
from .models import KINDS, REGISTRY, load, make_model, normalize_kind, save
from .preprocess import PreprocessConfig, preprocess_site
from .synth import PRESETS, generate_site, preset

logger = logging.getLogger("shuttle_eta")


class CommandError(ShuttleEtaError):
    pass


# --------------------------------------------------------------------------
# manifests


def _digest_bytes(data: bytes) -> str:
    return "sha256:" + hashlib.sha256(data).hexdigest()


def digest_path(path) -> str:
    """Content digest of a file, or of every file under a directory by relative path."""
    p = Path(path)
    if p.is_dir():
        h = hashlib.sha256()
        for f in sorted(q for q in p.rglob("*") if q.is_file()):
            h.update(str(f.relative_to(p)).encode() + b"\0")
            h.update(hashlib.sha256(f.read_bytes()).digest())
        return "sha256:" + h.hexdigest()
    return _digest_bytes(p.read_bytes())


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def write_manifest(out, command: str, args: Dict, inputs: Dict[str, Optional[str]], config, seed, started: float) -> Path:
    outputs = {}
    target = Path(out)
    if target.exists():
        outputs[str(target)] = digest_path(target)
    manifest = {
        "command": command,
        "arguments": args,
        "config_digest": _digest_bytes(_canonical(config).encode()),
        "input_digests": {k: digest_path(v) for k, v in sorted(inputs.items()) if v is not None},
        "output_digests": outputs,
        "seed": seed,
        "tool_version": __version__,
        "started": to_iso(round(started, 6)),
        "finished": to_iso(round(time.time(), 6)),
    }
    path = Path(str(out).rstrip("/") + ".manifest.json")
    path.write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return path


# --------------------------------------------------------------------------
# helpers


def _read_json(path) -> dict:
    data = fio._load_json(path)
    if not isinstance(data, dict):
        raise fio.FormatError(path, None, None, "expected a JSON object")
    return data


def _load_config(path) -> PreprocessConfig:
    if path is None:
        return PreprocessConfig()
    data = _read_json(path)
    known = {f.name for f in dataclasses.fields(PreprocessConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"{path}: unknown config keys {unknown}")
    return PreprocessConfig(**data)


def _config_json(cfg: PreprocessConfig) -> dict:
    d = dataclasses.asdict(cfg)
    d["exclusion_zones"] = [list(z) for z in d["exclusion_zones"]]
    return d


def _mkparent(path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)


def _graph_for(target: str, routes):
    return build_stop_graph(routes) if target == "dwell" else build_segment_graph(routes)


# --------------------------------------------------------------------------
# commands


def cmd_synth(a) -> dict:
    overrides = {}
    name = a.preset
    seed = a.seed
    if a.spec:
        spec_file = _read_json(a.spec)
        name = spec_file.get("preset", name)
        seed = spec_file.get("seed", seed)
        overrides = dict(spec_file.get("overrides", {}))
    if name is None:
        raise CommandError("synth needs --preset or a spec file naming one")
    if a.days is not None:
        overrides["days"] = a.days
    for k in ("service_hours", "peak_hours"):
        if k in overrides:
            overrides[k] = tuple(tuple(v) if isinstance(v, list) else v for v in overrides[k])
    spec = preset(name, seed=seed or 0, **overrides)
    data = generate_site(spec)
    out = Path(a.out)
    (out / "traces").mkdir(parents=True, exist_ok=True)
    for v in sorted(data.traces):
        fio.write_traces(out / "traces" / f"{v}.csv", data.traces[v])
    fio.write_events(out / "truth.csv", data.truth.stream().sorted())
    fio.write_stops(out / "stops.csv", spec.stops)
    fio.write_routes(out / "routes.json", spec.routes)
    fio.write_weather(out / "weather.csv", data.weather)
    (out / "config.json").write_text(
        json.dumps(_config_json(spec.preprocess_config()), sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    return {"config": {"preset": name, "overrides": {k: overrides[k] for k in sorted(overrides)}}, "seed": seed, "inputs": {"spec": a.spec}}


def cmd_preprocess(a) -> dict:
    cfg = _load_config(a.config)
    stops = fio.read_stops(a.stops)
    routes = fio.read_routes(a.routes, stops)
    traces = fio.read_traces(a.traces)
    weather = fio.read_weather(a.weather) if a.weather else None
    stream = preprocess_site(traces, routes, stops, cfg, weather)
    for d in stream.diagnostics:
        logger.info("%s", d)
    _mkparent(a.out)
    fio.write_events(a.out, stream.sorted())
    return {
        "config": _config_json(cfg),
        "inputs": {"traces": a.traces, "stops": a.stops, "routes": a.routes, "weather": a.weather, "config": a.config},
    }


def cmd_features(a) -> dict:
    events = fio.read_events(a.events)
    routes = fio.read_routes(a.routes).values() if a.routes else None
    vehicles, keys = vocabularies(events, list(routes) if routes is not None else None, a.target)
    ds = assemble_dataset(events, a.target, normalize_scope(a.scope), vehicles, keys)
    if len(ds) == 0:
        raise CommandError(f"no {a.target} events with weather in {a.events}")
    _mkparent(a.out)
    fio.write_dataset(a.out, ds)
    return {"config": {"target": a.target, "scope": ds.scope}, "inputs": {"events": a.events, "routes": a.routes}}


def cmd_train(a) -> dict:
    ds = fio.read_dataset(a.dataset)
    params = _read_json(a.params) if a.params else None
    kind = normalize_kind(a.model)
    graph = None
    if REGISTRY[kind].needs_graph:
        if not a.routes:
            raise CommandError(f"model {a.model} needs --routes")
        graph = _graph_for(ds.target, list(fio.read_routes(a.routes).values()))
    model = make_model(kind, params, a.seed, graph).fit(ds)
    _mkparent(a.out)
    save(model, a.out)
    return {"config": {"model": kind, "params": model.params}, "seed": a.seed, "inputs": {"dataset": a.dataset, "params": a.params, "routes": a.routes}}


def cmd_evaluate(a) -> dict:
    from .evaluation import evaluate

    model = load(a.model)
    ds = fio.read_dataset(a.dataset)
    report = evaluate(model, ds)
    _mkparent(a.out)
    fio.write_metrics(a.out, report)
    return {"config": {}, "seed": model.seed, "inputs": {"model": a.model, "dataset": a.dataset}}


def cmd_journey(a) -> dict:
    events = fio.read_events(a.events)
    journeys = extract_journeys(events, a.horizon)
    if a.holdout_days:
        cut = holdout_cutoff(max(e.start for e in events), a.holdout_days)
        journeys = [j for j in journeys if j.departure >= cut]
    if a.oracle:
        predictor = OraclePredictor()
    else:
        if not (a.dwell_model and a.run_model):
            raise CommandError("journey needs --dwell-model and --run-model, or --oracle")
        predictor = ModelPredictor(load(a.dwell_model), load(a.run_model), events)
    sample = sample_journeys(journeys, a.samples, a.seed)
    if not sample:
        raise CommandError("no complete journeys to evaluate")
    profile = accumulated_error_profile(sample, predictor)
    _mkparent(a.out)
    fio.write_profile(a.out, profile)
    if a.decomposition:
        dwell_abs, run_abs = decompose_accumulated_error(sample, predictor, SUM_ABS)
        fio._write_text(
            a.decomposition,
            json.dumps(
                {"model": a.label or ("oracle" if a.oracle else "models"), "dwell_abs": dwell_abs, "run_abs": run_abs,
                 "n": len(sample), "seed": a.seed, "horizon": a.horizon},
                sort_keys=True, indent=2,
            ) + "\n",
        )
    return {
        "config": {"samples": a.samples, "horizon": a.horizon, "holdout_days": a.holdout_days, "oracle": a.oracle},
        "seed": a.seed,
        "inputs": {"events": a.events, "dwell_model": a.dwell_model, "run_model": a.run_model},
    }


LAG_SCOPE_HEADER = ("model", "target", "per_vehicle_rmse", "per_vehicle_mae", "fleet_rmse", "fleet_mae", "n", "seed")


def cmd_lag_scope(a) -> dict:
    events = fio.read_events(a.events)
    kinds = [normalize_kind(k) for k in a.models.split(",")]
    for k in kinds:
        if k not in REGISTRY:
            raise CommandError(f"unknown model {k!r}")
    routes = list(fio.read_routes(a.routes).values()) if a.routes else None
    if any(REGISTRY[k].needs_graph for k in kinds) and routes is None:
        raise CommandError("graph models need --routes")
    params = _read_json(a.params) if a.params else None
    reports = lag_scope_experiment(events, kinds, a.target, a.holdout_days, params, a.seed, routes)
    pv = {r.model: r for r in reports if r.scope == "per_vehicle"}
    fl = {r.model: r for r in reports if r.scope == "fleet"}
    rows = [(k, a.target, pv[k].rmse, pv[k].mae, fl[k].rmse, fl[k].mae, pv[k].n, a.seed) for k in kinds]
    _mkparent(a.out)
    fio.write_table(a.out, LAG_SCOPE_HEADER, rows)
    return {
        "config": {"models": kinds, "target": a.target, "holdout_days": a.holdout_days, "params": params},
        "seed": a.seed,
        "inputs": {"events": a.events, "routes": a.routes, "params": a.params},
    }


REPORT_HEADER = ("table", "model", "target", "scope", "metric", "n_runs", "mean", "min", "max")


def cmd_report(a) -> dict:
    files = sorted(Path(a.metrics).glob("*.json"))
    files = [f for f in files if not f.name.endswith(".manifest.json")]
    groups: Dict[tuple, List[float]] = {}
    for f in files:
        d = fio._load_json(f)
        if not isinstance(d, dict):
            continue
        if "rmse" in d and "mae" in d:
            table = "dwell" if d.get("target") == "dwell" else "run"
            for metric in ("rmse", "mae"):
                key = (table, d["model"], d["target"], d.get("scope", ""), metric)
                groups.setdefault(key, []).append(float(d[metric]))
        elif "dwell_abs" in d and "run_abs" in d:
            for metric in ("dwell_abs", "run_abs"):
                key = ("decomposition", d.get("model", ""), "journey", "", metric)
                groups.setdefault(key, []).append(float(d[metric]))
        else:
            logger.warning("%s: not a metrics file, skipped", f)
    if not groups:
        raise CommandError(f"no metrics files in {a.metrics}")
    rows = []
    for key in sorted(groups):
        v = np.array(groups[key])
        rows.append(key + (len(v), float(v.mean()), float(v.min()), float(v.max())))
    _mkparent(a.out)
    fio.write_table(a.out, REPORT_HEADER, rows)
    return {"config": {}, "inputs": {"metrics": a.metrics}}


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="shuttle-eta", description="Arrival-time prediction for autonomous shuttles.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more log output")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic site with ground truth")
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--preset", choices=sorted(PRESETS))
    g.add_argument("--spec", help="JSON file: {preset, seed, overrides}")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--days", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("preprocess", help="extract dwell and running events from traces")
    s.add_argument("--traces", required=True, help="trace CSV file or directory of CSV files")
    s.add_argument("--stops", required=True)
    s.add_argument("--routes", required=True)
    s.add_argument("--weather")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_preprocess)

    s = sub.add_parser("features", help="assemble a feature dataset from events")
    s.add_argument("--events", required=True)
    s.add_argument("--target", choices=TARGETS, required=True)
    s.add_argument("--scope", choices=[x.replace("_", "-") for x in SCOPES], default="per-vehicle")
    s.add_argument("--routes", help="take the key vocabulary from the route graph (needed for graph models)")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_features)

    s = sub.add_parser("train", help="train a model on a dataset")
    s.add_argument("--dataset", required=True)
    s.add_argument("--model", required=True, choices=sorted(set(KINDS) | {k.replace("_", "-") for k in KINDS}))
    s.add_argument("--params")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--routes")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("evaluate", help="score a model on a dataset")
    s.add_argument("--model", required=True)
    s.add_argument("--dataset", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("journey", help="accumulated arrival-time error along sampled journeys")
    s.add_argument("--dwell-model")
    s.add_argument("--run-model")
    s.add_argument("--oracle", action="store_true", help="use the observed durations as predictions")
    s.add_argument("--events", required=True)
    s.add_argument("--samples", type=int, default=5)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--horizon", type=int, default=5, help="stops ahead of the origin")
    s.add_argument("--holdout-days", type=float, help="sample only journeys departing in the last N days")
    s.add_argument("--decomposition", help="also write the dwell/run absolute error split to this JSON file")
    s.add_argument("--label", help="model label for the decomposition file")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_journey)

    s = sub.add_parser("experiment", help="comparative experiments")
    esub = s.add_subparsers(dest="experiment", required=True)
    e = esub.add_parser("lag-scope", help="per-vehicle versus fleet lags")
    e.add_argument("--events", required=True)
    e.add_argument("--models", default="lag,mean,linreg,rf,gbt,mlp")
    e.add_argument("--target", choices=TARGETS, default="run")
    e.add_argument("--holdout-days", type=float, default=7.0)
    e.add_argument("--params", help="JSON object of per-model hyperparameters")
    e.add_argument("--routes")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_lag_scope)

    s = sub.add_parser("report", help="collect metrics files into one table")
    s.add_argument("--metrics", required=True, help="directory of metrics JSON files")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_report)
    return p


def _arguments(a) -> dict:
    return {k: v for k, v in sorted(vars(a).items()) if k not in ("func", "verbose")}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    a = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(a.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    started = time.time()
    command = a.command if a.command != "experiment" else f"experiment {a.experiment}"
    try:
        info = a.func(a)
        write_manifest(a.out, command, _arguments(a), info.get("inputs", {}), info.get("config", {}), info.get("seed"), started)
    except (ShuttleEtaError, ValueError, KeyError, OSError) as exc:
        line = {"error": type(exc).__name__, "command": command, "message": str(exc)}
        for attr in ("path", "line", "column"):
            if getattr(exc, attr, None) is not None and isinstance(exc, fio.FormatError):
                line[attr] = getattr(exc, attr)
        print(json.dumps(line, sort_keys=True), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
