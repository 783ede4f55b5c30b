"""Experiment configuration, commands and report writers.

Experiment config
-----------------
Flat UTF-8 ``key = value`` text. ``#`` starts a comment line; blank lines
are ignored; every key may appear once and unknown keys are rejected.

================================  =============================================
key                               meaning (default)
================================  =============================================
``workload``                      CNN_MNIST | MLP_MNIST | KNN_MNIST (required)
``data.test_images``              IDX test images, optionally gzipped (bundled)
``data.test_labels``              IDX test labels (bundled)
``data.train_images``             KNN training images (bundled)
``data.train_labels``             KNN training labels (bundled)
``data.subset_size``              stratified test subset size (whole set)
``data.subset_seed``              subset seed (0)
``data.weights``                  weight file for CNN/MLP (bundled)
``data.manifest``                 region manifest (bundled)
``data.k``                        KNN neighbours (5)
``fault.error_rate``              error rate e (0.001)
``fault.master_seed``             unsigned 64-bit seed (0)
``fault.value_model``             random_bit_pattern | uniform_in_range
``fault.trials``                  Monte Carlo trials (1000)
``select.threshold``              accuracy-loss threshold (0.10)
``sweep.thresholds``              comma list (0.10,0.05,0.03)
``sweep.error_rates``             comma list (0.0001,0.001,0.005,0.01)
``cost.hare_multiplier``          HaRE multiplier h (1.63)
``cost.shr_store_factor``         SHR cost per store fraction (0.05)
``cost.shr_check_cost``           cost per bound check (1e-6)
``cost.switch_penalty``           cost per HaRE toggle (1e-6)
``perf.non_crucial``              ``all``, ``select`` or a comma list (all)
``output.dir``                    artifact directory (``out``)
``output.formats``                comma list of csv, json (csv,json)
``output.audit_log``              true to write every injection event (false)
``region.<id>.time_fraction``     override a manifest time fraction
================================  =============================================

Artifacts
---------
``run``     ``report.json``: configuration, trials, accuracies, loss,
            stderr, per-region losses, event summary by region/action.
``select``  ``selection.json``: the final report plus ``demotion_sequence``
            (list of ``[region, loss]``) and one report per iteration.
``sweep``   ``sweep.csv`` with columns :data:`analysis.SWEEP_COLUMNS`,
            optionally ``sweep.json`` with the same rows.
``perf``    ``perf.json``: BASELINE, HaRE and CL times with breakdowns.

Primary artifacts are pure functions of config and fixtures. Timestamps
and the command line go to ``<artifact>.meta.json`` beside each one.
"""

from __future__ import annotations

import csv
import io
import json
import os
import sys
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from . import __version__
from .analysis import (
    SWEEP_COLUMNS,
    MonteCarlo,
    SelectionConstraints,
    SelectionResult,
    select_configuration,
    sweep,
)
from .core import (
    AccuracyReport,
    Configuration,
    CrossLayerError,
    FaultSpec,
    InvalidRegion,
    TimeFractionSumMismatch,
    ValueModel,
    all_candidates,
    noncrucial_time_fraction,
)
from .faults import EventLog
from .manifest import ManifestError, WeightFileError
from .mnist import DataError, Dataset, load_fixture, subset
from .perf import CostModel, improvement_over_hare, price
from .workloads import WORKLOADS, load_workload

EXIT_OK, EXIT_FAILURE, EXIT_CONFIG, EXIT_DATA = 0, 1, 2, 3


class ConfigParseError(CrossLayerError):
    pass


_FLOAT, _INT, _STR, _LIST, _BOOL = "float", "int", "str", "list", "bool"
_KEYS = {
    "workload": _STR,
    "data.test_images": _STR, "data.test_labels": _STR,
    "data.train_images": _STR, "data.train_labels": _STR,
    "data.subset_size": _INT, "data.subset_seed": _INT,
    "data.weights": _STR, "data.manifest": _STR, "data.k": _INT,
    "fault.error_rate": _FLOAT, "fault.master_seed": _INT, "fault.value_model": _STR, "fault.trials": _INT,
    "select.threshold": _FLOAT,
    "sweep.thresholds": _LIST, "sweep.error_rates": _LIST,
    "cost.hare_multiplier": _FLOAT, "cost.shr_store_factor": _FLOAT,
    "cost.shr_check_cost": _FLOAT, "cost.switch_penalty": _FLOAT,
    "perf.non_crucial": _STR,
    "output.dir": _STR, "output.formats": _STR, "output.audit_log": _BOOL,
}
_PATH_KEYS = ("data.test_images", "data.test_labels", "data.train_images", "data.train_labels",
              "data.weights", "data.manifest")


@dataclass
class ExperimentConfig:
    workload: str
    test_images: Optional[Path] = None
    test_labels: Optional[Path] = None
    train_images: Optional[Path] = None
    train_labels: Optional[Path] = None
    subset_size: Optional[int] = None
    subset_seed: int = 0
    weights: Optional[Path] = None
    manifest: Optional[Path] = None
    k: int = 5
    error_rate: float = 0.001
    master_seed: int = 0
    value_model: ValueModel = ValueModel.RANDOM_BIT_PATTERN
    trials: int = 1000
    threshold: float = 0.10
    thresholds: tuple[float, ...] = (0.10, 0.05, 0.03)
    error_rates: tuple[float, ...] = (0.0001, 0.001, 0.005, 0.01)
    cost: CostModel = field(default_factory=CostModel)
    perf_non_crucial: str = "all"
    out_dir: Path = Path("out")
    formats: tuple[str, ...] = ("csv", "json")
    audit_log: bool = False
    region_time_fractions: dict[str, float] = field(default_factory=dict)

    @property
    def fault_spec(self) -> FaultSpec:
        return FaultSpec(self.error_rate, self.master_seed, self.value_model)

    @property
    def constraints(self) -> SelectionConstraints:
        return SelectionConstraints(self.error_rate, self.threshold, self.trials, self.master_seed, self.value_model)


def _convert(key: str, kind: str, raw: str, lineno: int):
    try:
        if kind == _FLOAT:
            return float(raw)
        if kind == _INT:
            return int(raw, 0)
        if kind == _LIST:
            return tuple(float(v) for v in raw.split(",") if v.strip())
        if kind == _BOOL:
            if raw.lower() not in ("true", "false"):
                raise ValueError(raw)
            return raw.lower() == "true"
    except ValueError:
        raise ConfigParseError(f"line {lineno}: bad {kind} value for {key}: {raw!r}") from None
    return raw


def parse_config(text: str, base_dir: Path = Path(".")) -> ExperimentConfig:
    """Strictly parse experiment config text; relative paths resolve against ``base_dir``."""
    values: dict[str, object] = {}
    regions: dict[str, float] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigParseError(f"line {lineno}: expected key = value")
        if key.startswith("region."):
            parts = key.split(".")
            if len(parts) != 3 or parts[2] != "time_fraction" or not parts[1]:
                raise ConfigParseError(f"line {lineno}: unknown key {key}")
            if parts[1] in regions:
                raise ConfigParseError(f"line {lineno}: duplicate key {key}")
            regions[parts[1]] = _convert(key, _FLOAT, value, lineno)
            continue
        if key not in _KEYS:
            raise ConfigParseError(f"line {lineno}: unknown key {key}")
        if key in values:
            raise ConfigParseError(f"line {lineno}: duplicate key {key}")
        values[key] = _convert(key, _KEYS[key], value, lineno)
    return _build(values, regions, base_dir)


def _build(values: dict, regions: dict[str, float], base_dir: Path) -> ExperimentConfig:
    if "workload" not in values:
        raise ConfigParseError("missing required key workload")
    if values["workload"] not in WORKLOADS:
        raise ConfigParseError(f"unknown workload {values['workload']!r}; choose from {', '.join(WORKLOADS)}")
    for key in _PATH_KEYS:
        if key in values:
            p = Path(values[key])
            values[key] = p if p.is_absolute() else base_dir / p
            if not values[key].exists():
                raise DataError(f"{key}: no such file {values[key]}")
    try:
        vm = ValueModel(values.get("fault.value_model", ValueModel.RANDOM_BIT_PATTERN.value))
    except ValueError:
        raise ConfigParseError(f"unknown value model {values['fault.value_model']!r}") from None
    formats = tuple(f.strip() for f in str(values.get("output.formats", "csv,json")).split(",") if f.strip())
    if not formats or set(formats) - {"csv", "json"}:
        raise ConfigParseError(f"output.formats must list csv and/or json, got {formats}")
    try:
        cost = CostModel(**{k.split(".", 1)[1]: v for k, v in values.items() if k.startswith("cost.")})
        cfg = ExperimentConfig(
            workload=values["workload"],
            test_images=values.get("data.test_images"), test_labels=values.get("data.test_labels"),
            train_images=values.get("data.train_images"), train_labels=values.get("data.train_labels"),
            subset_size=values.get("data.subset_size"), subset_seed=values.get("data.subset_seed", 0),
            weights=values.get("data.weights"), manifest=values.get("data.manifest"), k=values.get("data.k", 5),
            error_rate=values.get("fault.error_rate", 0.001), master_seed=values.get("fault.master_seed", 0),
            value_model=vm, trials=values.get("fault.trials", 1000), threshold=values.get("select.threshold", 0.10),
            thresholds=values.get("sweep.thresholds", (0.10, 0.05, 0.03)),
            error_rates=values.get("sweep.error_rates", (0.0001, 0.001, 0.005, 0.01)),
            cost=cost, perf_non_crucial=values.get("perf.non_crucial", "all"),
            out_dir=Path(values.get("output.dir", "out")), formats=formats,
            audit_log=values.get("output.audit_log", False), region_time_fractions=regions,
        )
        # construct once so range errors surface as config errors
        cfg.fault_spec, cfg.constraints
    except (ValueError, CrossLayerError) as exc:
        raise ConfigParseError(str(exc)) from None
    if not cfg.out_dir.is_absolute():
        cfg.out_dir = base_dir / cfg.out_dir
    if not cfg.thresholds or not cfg.error_rates:
        raise ConfigParseError("sweep grids must be non-empty")
    if (cfg.test_images is None) != (cfg.test_labels is None):
        raise ConfigParseError("data.test_images and data.test_labels go together")
    if (cfg.train_images is None) != (cfg.train_labels is None):
        raise ConfigParseError("data.train_images and data.train_labels go together")
    return cfg


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigParseError(f"cannot read config {path}: {exc.strerror}") from None
    except UnicodeDecodeError:
        raise ConfigParseError(f"config {path} is not UTF-8") from None
    return parse_config(text, path.parent)


# ---------------------------------------------------------------------------
# experiment setup


@dataclass
class Experiment:
    config: ExperimentConfig
    workload: object
    dataset: Dataset


def prepare(cfg: ExperimentConfig) -> Experiment:
    try:
        if cfg.test_images is not None:
            test = Dataset.from_files(cfg.test_images, cfg.test_labels)
        else:
            test = load_fixture("test")
        if cfg.subset_size is not None:
            test = subset(test, cfg.subset_size, cfg.subset_seed)
        train = None
        if cfg.workload == "KNN_MNIST" and cfg.train_images is not None:
            train = Dataset.from_files(cfg.train_images, cfg.train_labels)
        overrides = {"time_fraction": cfg.region_time_fractions} if cfg.region_time_fractions else None
        workload = load_workload(cfg.workload, manifest=cfg.manifest, weights=cfg.weights, train=train,
                                 k=cfg.k, region_overrides=overrides)
    except (ManifestError, WeightFileError, OSError) as exc:
        raise DataError(str(exc)) from exc
    except (TimeFractionSumMismatch, InvalidRegion) as exc:
        # only reachable through region.* overrides; bundled manifests validate
        raise ConfigParseError(f"region override: {exc}") from exc
    return Experiment(cfg, workload, test)


# ---------------------------------------------------------------------------
# serialization


def report_dict(report: AccuracyReport, regions=None) -> dict:
    cfg = report.configuration
    out = {
        "workload": cfg.workload,
        "non_crucial": sorted(cfg.non_crucial),
        "trials": report.trials,
        "fault_free_accuracy": report.fault_free_accuracy,
        "mean_accuracy": report.mean_accuracy,
        "accuracy_loss": report.accuracy_loss,
        "stderr": report.stderr,
        "suspicious_gain": report.suspicious_gain,
        "per_region_loss": {k: report.per_region_loss[k] for k in sorted(report.per_region_loss)},
        "per_region_stderr": {k: report.per_region_stderr[k] for k in sorted(report.per_region_stderr)},
        "events": report.events,
    }
    if regions is not None:
        out["noncrucial_time_fraction"] = noncrucial_time_fraction(cfg, regions)
    return out


def selection_dict(result: SelectionResult, regions) -> dict:
    return {
        "final_config": sorted(result.final_config.non_crucial),
        "demotion_sequence": [[rid, loss] for rid, loss in result.demotion_sequence],
        "final_report": report_dict(result.final_report, regions),
        "iterations": [report_dict(r, regions) for r in result.history],
        "warnings": list(result.warnings),
    }


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def sweep_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SWEEP_COLUMNS)
    for row in rows:
        writer.writerow([repr(v) if isinstance(v, float) else v for v in (getattr(row, c) for c in SWEEP_COLUMNS)])
    return buf.getvalue()


def atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_artifact(path: Path, text: str, command: str, cfg: ExperimentConfig) -> Path:
    atomic_write(path, text)
    meta = {
        "artifact": path.name,
        "command": command,
        "version": __version__,
        "workload": cfg.workload,
        "trials": cfg.trials,
        "master_seed": cfg.master_seed,
        "written_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "argv": sys.argv,
    }
    atomic_write(path.with_name(path.name + ".meta.json"), dumps(meta))
    return path


# ---------------------------------------------------------------------------
# commands


class _EventCollector:
    """Aggregates event logs of full-configuration trials."""

    def __init__(self, active: frozenset[str], keep_lines: bool):
        self.active = active
        self.keep_lines = keep_lines
        self.totals: dict[str, dict[str, int]] = {}
        self.lines: list[str] = []
        self.requested = self.deviations = 0

    def __call__(self, key, trial, result) -> None:
        if key != self.active:
            return
        log: EventLog = result.events
        for region, counts in log.summary().items():
            agg = self.totals.setdefault(region, {})
            for action, n in counts.items():
                agg[action] = agg.get(action, 0) + n
        self.requested += log.stores.requested
        self.deviations += log.stores.deviations
        if self.keep_lines:
            self.lines.extend(log.to_lines(trial=trial))

    def summary(self) -> dict:
        return {r: dict(sorted(self.totals[r].items())) for r in sorted(self.totals)}


def cmd_run(cfg: ExperimentConfig) -> dict:
    exp = prepare(cfg)
    regions = exp.workload.regions
    config = all_candidates(regions)
    events = _EventCollector(config.non_crucial, cfg.audit_log)
    runner = MonteCarlo(exp.workload, exp.dataset, cfg.fault_spec, cfg.trials, observer=events)
    report = runner.evaluate(config)
    out = report_dict(report, regions)
    out["fault"] = {"error_rate": cfg.error_rate, "master_seed": cfg.master_seed,
                    "value_model": cfg.value_model.value}
    out["event_summary"] = events.summary()
    out["store_audit"] = {"requested": events.requested, "deviations": events.deviations}
    write_artifact(cfg.out_dir / "report.json", dumps(out), "run", cfg)
    if cfg.audit_log:
        write_artifact(cfg.out_dir / "audit.log", "".join(line + "\n" for line in events.lines), "run", cfg)
    return out


def cmd_select(cfg: ExperimentConfig) -> dict:
    exp = prepare(cfg)
    result = select_configuration(exp.workload, exp.dataset, cfg.constraints)
    out = selection_dict(result, exp.workload.regions)
    out["constraints"] = {"error_rate": cfg.error_rate, "threshold": cfg.threshold, "trials": cfg.trials,
                          "master_seed": cfg.master_seed, "value_model": cfg.value_model.value}
    write_artifact(cfg.out_dir / "selection.json", dumps(out), "select", cfg)
    return out


def cmd_sweep(cfg: ExperimentConfig) -> list:
    exp = prepare(cfg)
    rows = sweep(exp.workload, exp.dataset, cfg.thresholds, cfg.error_rates, cfg.trials,
                 cfg.master_seed, cfg.value_model, cfg.cost)
    if "csv" in cfg.formats:
        write_artifact(cfg.out_dir / "sweep.csv", sweep_csv(rows), "sweep", cfg)
    if "json" in cfg.formats:
        payload = [dict({c: getattr(r, c) for c in SWEEP_COLUMNS}, non_crucial=list(r.non_crucial)) for r in rows]
        write_artifact(cfg.out_dir / "sweep.json", dumps(payload), "sweep", cfg)
    return rows


def _perf_config(exp: Experiment) -> Configuration:
    cfg, regions = exp.config, exp.workload.regions
    choice = cfg.perf_non_crucial.strip()
    if choice == "all":
        return all_candidates(regions)
    if choice == "select":
        return select_configuration(exp.workload, exp.dataset, cfg.constraints).final_config
    ids = frozenset(r.strip() for r in choice.split(",") if r.strip())
    config = Configuration(regions.workload, ids)
    try:
        exp.workload.check_config(config)
    except CrossLayerError as exc:
        raise ConfigParseError(f"perf.non_crucial: {exc}") from None
    return config


def cmd_perf(cfg: ExperimentConfig) -> dict:
    exp = prepare(cfg)
    regions = exp.workload.regions
    config = _perf_config(exp)
    rows = {
        "BASELINE": {"normalized_time": 1.0, "breakdown": {}},
        "HaRE": _priced(Configuration(regions.workload), regions, cfg.cost),
        "CL": _priced(config, regions, cfg.cost),
    }
    out = {
        "workload": regions.workload,
        "cl_non_crucial": sorted(config.non_crucial),
        "noncrucial_time_fraction": noncrucial_time_fraction(config, regions),
        "cost_model": {"hare_multiplier": cfg.cost.hare_multiplier, "shr_store_factor": cfg.cost.shr_store_factor,
                       "shr_check_cost": cfg.cost.shr_check_cost, "switch_penalty": cfg.cost.switch_penalty},
        "times": rows,
        "improvement_pct": improvement_over_hare(config, regions, cfg.cost),
    }
    write_artifact(cfg.out_dir / "perf.json", dumps(out), "perf", cfg)
    return out


def _priced(config, regions, cm) -> dict:
    rep = price(config, regions, cm)
    return {"normalized_time": rep.normalized_time, "breakdown": dict(rep.breakdown)}


def format_perf(out: dict) -> str:
    lines = [f"{out['workload']}  CL = {' + '.join(out['cl_non_crucial']) or '(none)'}"
             f"  ({out['noncrucial_time_fraction']:.1%} non-crucial time)"]
    for name, row in out["times"].items():
        lines.append(f"  {name:<8} {row['normalized_time']:.4f}")
        for part, v in row["breakdown"].items():
            lines.append(f"      {part:<20} {v:.4f}")
    lines.append(f"  improvement over HaRE: {out['improvement_pct']:.1f}%")
    return "\n".join(lines)


COMMANDS = {"run": cmd_run, "select": cmd_select, "sweep": cmd_sweep, "perf": cmd_perf}
