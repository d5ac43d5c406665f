"""Experiment configuration, single runs, grid sweeps and result aggregation.

Configuration files are flat ``key = value`` text with dotted section
prefixes; ``#`` starts a comment. Every key and its default is listed in
:data:`KEYS`. Grid files use the same keys plus ``grid.<key> = v1, v2, ...``
axes and ``grid.repeats``.
"""

from __future__ import annotations

import csv
import hashlib
import itertools
import json
import logging
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import datagen, engine, metrics
from .dataio import Dataset, load_csv, preprocess, split_phases
from .errors import ConfigurationError, ReportError

log = logging.getLogger(__name__)

INSTANCES = {"A": engine.Strategy.NONE, "B": engine.Strategy.FINE_TUNE,
             "C": engine.Strategy.ONLINE_EWC, "Baseline": None}


def _ints(text):
    return tuple(int(v) for v in str(text).split(",") if v.strip())


def _bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_float(text):
    t = str(text).strip()
    return None if t in ("", "none") else float(t)


def _opt_str(text):
    t = str(text).strip()
    return None if t in ("", "none") else t


def _instance(text):
    t = str(text).strip()
    for name in INSTANCES:
        if t.lower() == name.lower():
            return name
    raise ValueError(f"instance must be one of {sorted(INSTANCES)}")


# key -> (parser, default)
KEYS = {
    "experiment.instance": (_instance, "C"),
    "experiment.seed": (int, 0),
    "data.source": (str, "generated"),
    "data.seed": (int, 0),
    "data.supervised": (_bool, False),
    "data.length": (int, 12000),
    "data.dims": (int, 7),
    "data.amplitude_mean": (float, 1.0),
    "data.amplitude_var": (float, 1.0),
    "data.period_day": (int, 24),
    "data.period_year": (int, 8760),
    "data.target_noise": (float, 0.05),
    "data.capacity": (_opt_float, None),
    "data.preprocess": (_bool, True),
    "phases.warm_up": (int, 1000),
    "phases.update": (int, 10000),
    "phases.evaluation": (int, 1000),
    "model.latent": (int, 4),
    "model.encoder": (_ints, (32, 16, 8)),
    "model.predictor": (_ints, (96, 64, 32, 16, 8)),
    "model.slope": (float, 0.05),
    "model.dropout": (float, 0.0),
    "model.use_predictor": (_bool, True),
    "buffer.novelty_capacity": (int, 1000),
    "buffer.novelty_capacity_p": (_opt_float, None),
    "threshold.alpha": (float, 0.95),
    "threshold.alpha_p": (_opt_float, None),
    "ewc.gamma": (float, 0.9),
    "ewc.lambda_a": (float, 200.0),
    "ewc.lambda_p": (float, 200.0),
    "ewc.rule": (str, "online"),
    "ewc.consolidate_warmup": (_bool, True),
    "train.epochs_a_1": (int, 512),
    "train.epochs_p_1": (int, 512),
    "train.epochs_a_2": (int, 512),
    "train.epochs_p_2": (int, 512),
    "train.batch_1": (int, 32),
    "train.batch_2": (int, 16),
    "train.lr": (float, 1e-3),
    "train.patience": (int, 30),
    "baseline.dropout": (float, 0.2),
    "update.warn_ratio": (float, 2.0),
    "output.sample_errors": (_bool, False),
    "output.checkpoint": (_opt_str, None),
}


def _canonical(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if value is None:
        return "none"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_kv(text: str) -> dict:
    """Raw ``key -> value`` strings of a config file, comments stripped."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected key = value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


@dataclass(frozen=True)
class ExperimentConfig:
    values: tuple  # sorted (key, typed value) pairs

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        vals = {k: d for k, (_, d) in KEYS.items()}
        for key, value in raw.items():
            if key not in KEYS:
                raise ConfigurationError(f"unknown config key {key!r}")
            parser = KEYS[key][0]
            try:
                vals[key] = parser(value) if isinstance(value, str) else value
            except ValueError as exc:
                raise ConfigurationError(f"{key}: {exc}") from None
        cfg = cls(tuple(sorted(vals.items())))
        cfg._validate()
        return cfg

    @classmethod
    def from_text(cls, text: str) -> "ExperimentConfig":
        return cls.from_dict(parse_kv(text))

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from None
        return cls.from_text(text)

    def _validate(self):
        if self["ewc.rule"] not in ("online", "ewcpp"):
            raise ConfigurationError("ewc.rule must be 'online' or 'ewcpp'")
        if not 0 < self["ewc.gamma"] <= 1:
            raise ConfigurationError("ewc.gamma must be in (0, 1]")
        for key in ("phases.warm_up", "phases.update", "phases.evaluation",
                    "buffer.novelty_capacity", "train.batch_1", "train.batch_2"):
            if self[key] < 1:
                raise ConfigurationError(f"{key} must be positive")
        if not 0 <= self["model.dropout"] < 1 or not 0 <= self["baseline.dropout"] < 1:
            raise ConfigurationError("dropout rates must be in [0, 1)")

    def __getitem__(self, key):
        return dict(self.values)[key]

    def replace(self, changes: dict) -> "ExperimentConfig":
        d = dict(self.values)
        d.update(changes)
        return ExperimentConfig.from_dict(d)

    @property
    def instance(self) -> str:
        return self["experiment.instance"]

    @property
    def seed(self) -> int:
        return self["experiment.seed"]

    def to_text(self, include_seed: bool = True) -> str:
        return "".join(f"{k} = {_canonical(v)}\n" for k, v in self.values
                       if include_seed or k != "experiment.seed")

    @property
    def hash(self) -> str:
        """Stable digest of every setting except the seed and the output options."""
        text = "".join(f"{k} = {_canonical(v)}\n" for k, v in self.values
                       if k != "experiment.seed" and not k.startswith("output."))
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def flat(self) -> dict:
        return {k: _canonical(v) for k, v in self.values}

    def generator_config(self) -> datagen.GeneratorConfig:
        return datagen.GeneratorConfig(
            dims=self["data.dims"], length=self["data.length"],
            amplitude_mean=self["data.amplitude_mean"], amplitude_var=self["data.amplitude_var"],
            period_day=self["data.period_day"], period_year=self["data.period_year"],
            seed=self["data.seed"], supervised=self["data.supervised"],
            target_noise=self["data.target_noise"])

    def engine_config(self) -> engine.EngineConfig:
        strategy = INSTANCES[self.instance] or engine.Strategy.NONE
        cap_p = self["buffer.novelty_capacity_p"]
        alpha_p = self["threshold.alpha_p"]
        return engine.EngineConfig(
            strategy=strategy, latent_dim=self["model.latent"],
            encoder_hidden=self["model.encoder"], predictor_hidden=self["model.predictor"],
            slope=self["model.slope"], dropout=self["model.dropout"],
            use_predictor=self["model.use_predictor"],
            capacity_a=self["buffer.novelty_capacity"],
            capacity_p=self["buffer.novelty_capacity"] if cap_p is None else int(cap_p),
            alpha_a=self["threshold.alpha"],
            alpha_p=self["threshold.alpha"] if alpha_p is None else alpha_p,
            gamma=self["ewc.gamma"], lambda_a=self["ewc.lambda_a"], lambda_p=self["ewc.lambda_p"],
            ewc_rule=self["ewc.rule"], consolidate_warmup=self["ewc.consolidate_warmup"],
            epochs_a_1=self["train.epochs_a_1"], epochs_p_1=self["train.epochs_p_1"],
            epochs_a_2=self["train.epochs_a_2"], epochs_p_2=self["train.epochs_p_2"],
            batch_1=self["train.batch_1"], batch_2=self["train.batch_2"], lr=self["train.lr"],
            patience=self["train.patience"], warn_ratio=self["update.warn_ratio"],
            phases=(self["phases.warm_up"], self["phases.update"], self["phases.evaluation"]),
            seed=self.seed)


def load_data(cfg: ExperimentConfig) -> Dataset:
    source = cfg["data.source"]
    if source == "generated":
        return datagen.generate_series(cfg.generator_config())
    path = Path(source)
    if not path.exists():
        raise ConfigurationError(f"data file {source} does not exist")
    data = load_csv(path, dims=cfg["data.dims"])
    if data.supervised and cfg["data.preprocess"]:
        data = preprocess(data, capacity=cfg["data.capacity"])
    return data


def run_baseline(cfg: engine.EngineConfig, data: Dataset, dropout: float) -> engine.ExperimentRecord:
    """Train once on warm-up plus update samples with dropout; no updates."""
    split = split_phases(data, cfg.phases)
    seen = Dataset.concat([split.warm_up, split.update])
    ae, pred, latent_layer = engine.build_networks(data.dims, cfg, data.supervised, dropout)
    engine.pretrain(ae, pred, latent_layer, seen.X, seen.y, cfg.epochs_a_1, cfg.epochs_p_1,
                    cfg.batch_1, cfg.lr, cfg.seed)

    def frozen(net):
        cons = engine.continual.ConsolidationState(net.n_params)
        return engine.SubModel(net, engine.ThresholdState(1.0, 0.0), engine.BufferPair(1), cons)

    model = engine.ClearModel(frozen(ae), latent_layer, None if pred is None else frozen(pred),
                              engine.Strategy.NONE)
    return engine.evaluate(model, seen, split.evaluation, split.warm_up)


def run_experiment(cfg: ExperimentConfig, data: Optional[Dataset] = None) -> dict:
    """Execute one configured run and return its result record (a JSON-ready dict)."""
    start = time.perf_counter()
    if data is None:
        data = load_data(cfg)
    ecfg = cfg.engine_config()
    if len(data) < sum(ecfg.phases):
        raise ConfigurationError(f"dataset has {len(data)} samples, phases need "
                                 f"{sum(ecfg.phases)}")
    if cfg.instance == "Baseline":
        rec = run_baseline(ecfg, data, cfg["baseline.dropout"])
    else:
        rec = engine.run_phases(ecfg, data)
    result = {
        "config_hash": cfg.hash,
        "seed": cfg.seed,
        "instance": cfg.instance,
        "status": "ok",
        "params": cfg.flat(),
        "metrics": rec.metrics.to_dict(),
        "updates": [r.to_dict() for r in rec.reports],
        "windows": {"ae": metrics.window_means(rec.errors_ae)},
    }
    if rec.errors_pred is not None:
        result["windows"]["pred"] = metrics.window_means(rec.errors_pred)
    if cfg["output.sample_errors"]:
        result["sample_errors"] = {"ae": rec.errors_ae.tolist()}
        if rec.errors_pred is not None:
            result["sample_errors"]["pred"] = rec.errors_pred.tolist()
    if cfg["output.checkpoint"]:
        engine.save_checkpoint(rec.model, cfg["output.checkpoint"])
    result["duration_s"] = time.perf_counter() - start
    return result


def dumps(record: dict) -> str:
    return json.dumps(record, sort_keys=True, allow_nan=True)


# --------------------------------------------------------------------------
# grid sweeps


@dataclass(frozen=True)
class GridConfig:
    base: ExperimentConfig
    axes: tuple          # ((key, (values...)), ...) in file order
    repeats: int = 1

    @classmethod
    def from_text(cls, text: str) -> "GridConfig":
        raw = parse_kv(text)
        repeats = int(raw.pop("grid.repeats", 1))
        axes = []
        for key in list(raw):
            if key.startswith("grid."):
                target = key[len("grid."):]
                if target not in KEYS:
                    raise ConfigurationError(f"unknown grid axis {target!r}")
                values = tuple(v.strip() for v in raw.pop(key).split(",") if v.strip())
                if not values:
                    raise ConfigurationError(f"grid axis {target!r} is empty")
                axes.append((target, values))
        if repeats < 1:
            raise ConfigurationError("grid.repeats must be positive")
        return cls(ExperimentConfig.from_dict(raw), tuple(axes), repeats)

    @classmethod
    def from_file(cls, path) -> "GridConfig":
        try:
            return cls.from_text(Path(path).read_text())
        except OSError as exc:
            raise ConfigurationError(f"cannot read grid config {path}: {exc}") from None

    def cells(self) -> list[ExperimentConfig]:
        """Cartesian product of the axes times repetitions; seeds are base seed + repetition."""
        keys = [k for k, _ in self.axes]
        out = []
        for combo in itertools.product(*(v for _, v in self.axes)):
            for rep in range(self.repeats):
                changes = dict(zip(keys, combo))
                changes["experiment.seed"] = str(self.base.seed + rep)
                out.append(self.base.replace(changes))
        return out


def _run_cell(cfg_text: str) -> dict:
    cfg = ExperimentConfig.from_text(cfg_text)
    try:
        return run_experiment(cfg)
    except Exception as exc:  # a failed cell must not stop the sweep
        return {"config_hash": cfg.hash, "seed": cfg.seed, "instance": cfg.instance,
                "status": "failed", "params": cfg.flat(),
                "error": f"{type(exc).__name__}: {exc}",
                "traceback": traceback.format_exc(limit=5), "duration_s": 0.0}


def run_grid(grid: GridConfig, out, parallel: int = 1) -> list[dict]:
    """Run every cell and write the results sorted by (config hash, seed).

    Completed records are appended to ``<out>.partial`` as they arrive; the
    final file excludes wall-clock durations, which go to ``<out>.timing``, so
    it is byte-identical for any degree of parallelism.
    """
    if parallel < 1:
        raise ConfigurationError("parallelism must be positive")
    out = Path(out)
    texts = [c.to_text() for c in grid.cells()]
    partial = out.with_name(out.name + ".partial")
    results = []
    with partial.open("w") as fh:
        if parallel == 1:
            it = map(_run_cell, texts)
            for rec in it:
                fh.write(dumps(rec) + "\n")
                fh.flush()
                results.append(rec)
        else:
            with ProcessPoolExecutor(max_workers=parallel) as pool:
                for rec in pool.map(_run_cell, texts):
                    fh.write(dumps(rec) + "\n")
                    fh.flush()
                    results.append(rec)
    results.sort(key=lambda r: (r["config_hash"], r["seed"]))
    with out.open("w") as fh, out.with_name(out.name + ".timing").open("w") as tf:
        for rec in results:
            rec = dict(rec)
            tf.write(dumps({"config_hash": rec["config_hash"], "seed": rec["seed"],
                            "duration_s": rec.pop("duration_s", None)}) + "\n")
            fh.write(dumps(rec) + "\n")
    partial.unlink()
    return results


# --------------------------------------------------------------------------
# reporting

METRIC_KEYS = ("fitting_error_ae", "prediction_error_ae", "fitting_error_pred",
               "prediction_error_pred", "forgetting_ratio_ae", "forgetting_ratio_pred",
               "update_count_ae", "update_count_pred")


def read_results(path) -> list[dict]:
    path = Path(path)
    if not path.exists():
        raise ReportError(f"results file {path} does not exist")
    records = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise ReportError(f"line {lineno}: {exc}") from None
    if not records:
        raise ReportError(f"results file {path} is empty")
    return records


def record_windows(record: dict, window: int = 1000) -> dict:
    """Windowed error series of one record, recomputed from per-sample errors when stored."""
    if "sample_errors" in record:
        return {k: metrics.window_means(v, window) for k, v in record["sample_errors"].items()}
    return record.get("windows", {})


def summarize(records: list[dict]) -> dict:
    """``{instance: {metric: (mean, min, max, n)}}`` over successful runs."""
    groups = {}
    for r in records:
        if r.get("status") != "ok":
            continue
        g = groups.setdefault(r["instance"], {})
        for k in METRIC_KEYS:
            if k in r["metrics"]:
                g.setdefault(k, []).append(float(r["metrics"][k]))
    return {inst: {k: (float(np.mean(v)), float(np.min(v)), float(np.max(v)), len(v))
                   for k, v in g.items()}
            for inst, g in sorted(groups.items())}


def report(results_path, out_dir) -> dict:
    """Write ``summary.csv``, ``windows.csv`` and ``parallel.csv`` into ``out_dir``."""
    records = read_results(results_path)
    ok = [r for r in records if r.get("status") == "ok"]
    if not ok:
        raise ReportError("no successful runs in results file")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = summarize(ok)
    with (out / "summary.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["instance", "metric", "mean", "min", "max", "n"])
        for inst, stats in summary.items():
            for k, (mean, lo, hi, n) in stats.items():
                w.writerow([inst, k, repr(mean), repr(lo), repr(hi), n])
    windows = {}
    with (out / "windows.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["config_hash", "seed", "instance", "series", "window", "mse"])
        for r in ok:
            for series, vals in record_windows(r).items():
                windows[(r["config_hash"], r["seed"], series)] = vals
                for i, v in enumerate(vals):
                    w.writerow([r["config_hash"], r["seed"], r["instance"], series, i, repr(v)])
    param_keys = sorted({k for r in ok for k in r["params"]})
    metric_keys = [k for k in METRIC_KEYS if any(k in r["metrics"] for r in ok)]
    with (out / "parallel.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["config_hash", "seed"] + param_keys + metric_keys)
        for r in ok:
            w.writerow([r["config_hash"], r["seed"]] + [r["params"].get(k, "") for k in param_keys]
                       + [repr(r["metrics"][k]) if k in r["metrics"] else "" for k in metric_keys])
    return {"summary": summary, "windows": windows}


def format_summary(summary: dict) -> str:
    lines = [f"{'instance':<10} {'metric':<24} {'mean':>12} {'min':>12} {'max':>12} {'n':>4}"]
    for inst, stats in summary.items():
        for k, (mean, lo, hi, n) in stats.items():
            lines.append(f"{inst:<10} {k:<24} {mean:12.5g} {lo:12.5g} {hi:12.5g} {n:4d}")
    return "\n".join(lines)
