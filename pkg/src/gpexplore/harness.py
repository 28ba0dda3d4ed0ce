"""Seeded trials, sweeps, persistence and figure-series export.

Per-trial seeds are the ``replicate + 1``-th output of a SplitMix64 stream
started at ``base_seed`` (see :func:`derive_seed`), so a record's
``(config, replicate)`` pair replays the trial exactly.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import re
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import yaml

from . import __version__
from .grid import GLOBAL, GridSpec, cell_to_coord
from .metrics import (
    ConvergenceReport,
    MinIdReport,
    improvement_ratio,
    min_identification,
    settling_convergence,
    summarize_trials,
)
from .policies import EvalConfig, GpSchedule, PolicyConfig, TrajectoryLog, run_policy
from .surfaces import NoiseModel, build_surface

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
SERIES = ("path", "rms", "variance")
SERIES_HEADERS = {
    "path": ("step", "i", "j", "x1", "x2"),
    "rms": ("samples", "local_rms", "global_rms"),
    "variance": ("samples", "local_mean", "local_max", "global_mean", "global_max"),
}
SUMMARY_METRICS = ("samples", "distance", "rms", "min_error")
SUMMARY_COLUMNS = ("surface", "noise", "policy", "horizon", "trials", "converged",
                   "converged_fraction", "min", "q1", "median", "q3", "max", "mean", "count")


class ConfigError(ValueError):
    """Malformed experiment or sweep configuration."""


class RecordLoadError(ValueError):
    pass


class RecordVersionError(RecordLoadError):
    pass


class TrialError(RuntimeError):
    """A trial failed; the message names the config label and replicate."""


def splitmix64(x: int) -> int:
    z = (x + GOLDEN_GAMMA) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_seed(base_seed: int, replicate: int) -> int:
    """SplitMix64 output number ``replicate`` for a stream seeded at ``base_seed``.

    ``base + replicate * gamma`` is injective in ``replicate`` (gamma is odd)
    and the mixer is a bijection, so replicates never share a seed.
    """
    if replicate < 0:
        raise ValueError("replicate index must be >= 0")
    return splitmix64((base_seed + replicate * GOLDEN_GAMMA) & MASK64)


@dataclass(frozen=True)
class ExperimentConfig:
    surface: str
    policy: PolicyConfig
    noise: float = 0.0
    eval: EvalConfig = field(default_factory=EvalConfig)
    replicates: int = 1
    base_seed: int = 0
    label: Optional[str] = None

    def __post_init__(self):
        if self.replicates < 1:
            raise ConfigError(f"replicates must be >= 1, got {self.replicates}")
        if not (self.noise >= 0 and math.isfinite(self.noise)):
            raise ConfigError(f"noise variance must be >= 0, got {self.noise}")

    @property
    def surface_name(self) -> str:
        if self.surface in ("parabola", "townsend", "crater"):
            return self.surface
        return os.path.splitext(os.path.basename(self.surface))[0]

    @property
    def name(self) -> str:
        if self.label:
            return self.label
        return f"{self.surface_name}-noise{self.noise:g}-{self.policy.kind}-h{self.policy.horizon}"

    def group_key(self) -> tuple:
        return (self.surface_name, self.noise, self.policy.kind, str(self.policy.horizon))

    def to_dict(self) -> dict:
        return {"surface": self.surface, "noise": self.noise, "policy": self.policy.to_dict(),
                "eval": {"warmup": self.eval.warmup, "metrics_every": self.eval.metrics_every},
                "replicates": self.replicates, "base_seed": self.base_seed, "label": self.label}

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        return cls(surface=d["surface"], policy=PolicyConfig.from_dict(d["policy"]),
                   noise=float(d["noise"]), eval=EvalConfig(**d["eval"]),
                   replicates=int(d["replicates"]), base_seed=int(d["base_seed"]),
                   label=d.get("label"))


@dataclass(eq=False)
class TrialRecord:
    config: ExperimentConfig
    replicate: int
    seed: int
    grid: GridSpec
    log: TrajectoryLog
    convergence: ConvergenceReport
    min_id: Optional[MinIdReport]
    improvement: Optional[float]
    duration_s: float = 0.0
    version: str = __version__

    def to_dict(self, include_timing: bool = True) -> dict:
        imp = self.improvement
        d = {
            "schema_version": SCHEMA_VERSION,
            "artifact_version": self.version,
            "config": self.config.to_dict(),
            "replicate": self.replicate,
            "seed": self.seed,
            "grid": self.grid.to_dict(),
            "log": self.log.to_dict(),
            "convergence": self.convergence.to_dict(),
            "min_identification": self.min_id.to_dict() if self.min_id else None,
            "improvement_ratio": "inf" if imp is not None and math.isinf(imp) else imp,
        }
        if include_timing:
            d["duration_s"] = self.duration_s
        return d

    def to_json(self, include_timing: bool = True) -> str:
        return json.dumps(self.to_dict(include_timing), indent=1, sort_keys=True) + "\n"

    def __eq__(self, other):
        if not isinstance(other, TrialRecord):
            return NotImplemented
        return self.to_dict(False) == other.to_dict(False)

    @classmethod
    def from_dict(cls, d: dict, source: str = "<record>") -> "TrialRecord":
        version = d.get("schema_version") if isinstance(d, dict) else None
        if version != SCHEMA_VERSION:
            raise RecordVersionError(
                f"{source}: schema_version {version!r} is not supported (expected {SCHEMA_VERSION})")
        current = "?"
        try:
            current = "config"
            config = ExperimentConfig.from_dict(d["config"])
            current = "grid"
            grid = GridSpec.from_dict(d["grid"])
            current = "log"
            trajectory = TrajectoryLog.from_dict(d["log"])
            current = "convergence"
            conv = ConvergenceReport.from_dict(d["convergence"])
            current = "min_identification"
            mid = d["min_identification"]
            mid = MinIdReport.from_dict(mid) if mid is not None else None
            current = "improvement_ratio"
            imp = d["improvement_ratio"]
            imp = float(imp) if imp is not None else None
            current = "replicate"
            replicate = int(d["replicate"])
            current = "seed"
            seed = int(d["seed"])
        except (KeyError, TypeError, ValueError) as exc:
            raise RecordLoadError(f"{source}: bad field {current!r}: {exc!r}") from exc
        return cls(config, replicate, seed, grid, trajectory, conv, mid, imp,
                   float(d.get("duration_s", 0.0)), str(d.get("artifact_version", "")))


@dataclass(frozen=True)
class TrialFailure:
    label: str
    replicate: int
    error: str

    def to_dict(self) -> dict:
        return {"label": self.label, "replicate": self.replicate, "error": self.error}


def _convergence(trajectory: TrajectoryLog) -> ConvergenceReport:
    errors = trajectory.series("global_rms")
    if len(errors) >= 3:
        return settling_convergence(errors, trajectory.series("distance"),
                                    trajectory.series("samples"))
    if not errors:
        return ConvergenceReport(False, None, math.nan, math.nan, math.nan)
    e0, ef = errors[0], errors[-1]
    return ConvergenceReport(False, None, e0, ef, 0.02 * (e0 - ef))


def run_trial(cfg: ExperimentConfig, replicate_index: int) -> TrialRecord:
    """Run one replicate of ``cfg`` and compute every metric for it."""
    seed = derive_seed(cfg.base_seed, replicate_index)
    t0 = time.perf_counter()
    try:
        surface = build_surface(cfg.surface)
        trajectory = run_policy(surface, cfg.policy, NoiseModel(cfg.noise), cfg.eval, seed=seed)
    except Exception as exc:
        raise TrialError(f"{cfg.name} replicate {replicate_index}: "
                         f"{type(exc).__name__}: {exc}") from exc
    conv = _convergence(trajectory)
    mid = None
    if trajectory.final_posterior is not None:
        mid = min_identification(trajectory.final_posterior, surface)
    imp = None
    if trajectory.records:
        imp = improvement_ratio(trajectory.records[0].global_rms, trajectory.records[-1].global_rms)
    trajectory.final_posterior = None
    return TrialRecord(cfg, replicate_index, seed, surface.spec, trajectory, conv, mid, imp,
                       time.perf_counter() - t0)


def _run_job(job):
    cfg, rep = job
    try:
        return run_trial(cfg, rep)
    except Exception as exc:
        return TrialFailure(cfg.name, rep, str(exc))


@dataclass
class SweepResult:
    records: list
    failures: list
    summaries: dict


def run_sweep(configs: Sequence[ExperimentConfig], workers: int = 1) -> SweepResult:
    """Run every (config, replicate) pair; failed trials are collected, not raised."""
    configs = list(configs)
    if not configs:
        raise ValueError("run_sweep needs at least one config")
    if workers < 1:
        raise ValueError("workers must be >= 1")
    jobs = [(cfg, r) for cfg in configs for r in range(cfg.replicates)]
    if workers == 1:
        outcomes = [_run_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_run_job, jobs))
    records = [o for o in outcomes if isinstance(o, TrialRecord)]
    failures = [o for o in outcomes if isinstance(o, TrialFailure)]
    for f in failures:
        log.warning("trial failed: %s replicate %d: %s", f.label, f.replicate, f.error)
    return SweepResult(records, failures, summarize_records(records))


def _metric_value(rec: TrialRecord, metric: str):
    c = rec.convergence
    if metric == "samples":
        return c.samples_at_convergence if c.converged else None
    if metric == "distance":
        return c.distance_at_convergence if c.converged else None
    if metric == "rms":
        return c.e_at_convergence if c.converged else None
    if metric == "min_error":
        return rec.min_id.position_error if rec.min_id else None
    raise ValueError(f"unknown summary metric {metric!r}")


def _group_order(key: tuple) -> tuple:
    surface, noise, policy, horizon = key
    h = (0, int(horizon)) if horizon.isdigit() else (1, 0)
    return (surface, noise, policy, h)


def summarize_records(records: Iterable[TrialRecord]) -> dict:
    """Per-metric summary rows grouped by (surface, noise, policy, horizon).

    Convergence metrics summarise converged trials only; groups with none
    leave the statistic columns empty.
    """
    groups: dict = {}
    for rec in records:
        groups.setdefault(rec.config.group_key(), []).append(rec)
    out = {}
    for metric in SUMMARY_METRICS:
        rows = []
        for key in sorted(groups, key=_group_order):
            recs = groups[key]
            converged = sum(r.convergence.converged for r in recs)
            values = [v for v in (_metric_value(r, metric) for r in recs) if v is not None]
            row = dict(zip(SUMMARY_COLUMNS[:4], key))
            row.update(trials=len(recs), converged=converged,
                       converged_fraction=converged / len(recs))
            stats = summarize_trials(values) if values else dict.fromkeys(SUMMARY_COLUMNS[7:])
            row.update(stats)
            rows.append(row)
        out[metric] = rows
    return out


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def summary_csv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    for row in rows:
        w.writerow([_cell(row[c]) for c in SUMMARY_COLUMNS])
    return buf.getvalue()


def record_filename(rec: TrialRecord) -> str:
    stem = re.sub(r"[^A-Za-z0-9_.+-]", "_", rec.config.name)
    return f"{stem}_r{rec.replicate:02d}.json"


def persist(records: Sequence[TrialRecord], directory: str,
            failures: Sequence[TrialFailure] = ()) -> list[str]:
    """Write one JSON file per record plus ``summary_<metric>.csv`` tables."""
    os.makedirs(directory, exist_ok=True)
    written = []
    for rec in records:
        path = os.path.join(directory, record_filename(rec))
        with open(path, "w") as fh:
            fh.write(rec.to_json())
        written.append(path)
    for metric, rows in summarize_records(records).items():
        path = os.path.join(directory, f"summary_{metric}.csv")
        with open(path, "w", newline="") as fh:
            fh.write(summary_csv(rows))
        written.append(path)
    if failures:
        path = os.path.join(directory, "failures.json")
        with open(path, "w") as fh:
            json.dump([f.to_dict() for f in failures], fh, indent=1)
            fh.write("\n")
        written.append(path)
    return written


def load_record(path: str) -> TrialRecord:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise RecordLoadError(f"{path}: not valid JSON: {exc}") from exc
    return TrialRecord.from_dict(data, source=path)


def load(directory: str) -> list[TrialRecord]:
    """Load every ``*.json`` trial record in ``directory`` (sorted by filename)."""
    names = sorted(n for n in os.listdir(directory)
                   if n.endswith(".json") and n != "failures.json")
    return [load_record(os.path.join(directory, n)) for n in names]


def export_series(record: TrialRecord, which: str) -> str:
    """CSV text for one figure panel.

    ``samples`` in the ``rms`` and ``variance`` series counts sampling events
    (revisits included) at the time of each model fit.
    """
    if which not in SERIES:
        raise ValueError(f"unknown series {which!r}; expected one of {SERIES}")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SERIES_HEADERS[which])
    if which == "path":
        for step, cell in enumerate(record.log.visited):
            x1, x2 = cell_to_coord(record.grid, cell)
            w.writerow([step, cell[0], cell[1], repr(round(x1, 12) + 0.0), repr(round(x2, 12) + 0.0)])
    elif which == "rms":
        for r in record.log.records:
            w.writerow([r.events, repr(r.local_rms), repr(r.global_rms)])
    else:
        for r in record.log.records:
            w.writerow([r.events, repr(r.local_mean_variance), repr(r.local_max_variance),
                        repr(r.global_mean_variance), repr(r.global_max_variance)])
    return buf.getvalue()


# ---------------------------------------------------------------- sweep files

_POLICY_KEYS = {"n0", "n_max", "variance_threshold"}
_EXPERIMENT_KEYS = {"surface", "noise", "policy", "horizons", "horizon", "replicates",
                    "base_seed", "eval", "gp", "label"} | _POLICY_KEYS
_TOP_KEYS = (_EXPERIMENT_KEYS - {"policy", "horizons", "horizon", "label"}) | {"name", "experiments"}


def parse_horizon(value) -> object:
    if isinstance(value, str):
        if value.strip().lower() == GLOBAL:
            return GLOBAL
        try:
            value = int(value)
        except ValueError:
            raise ConfigError(f"horizon must be an integer or {GLOBAL!r}, got {value!r}") from None
    if isinstance(value, bool) or not isinstance(value, int) or value < 1:
        raise ConfigError(f"horizon must be an integer >= 1 or {GLOBAL!r}, got {value!r}")
    return value


def configs_from_mapping(doc: dict) -> list[ExperimentConfig]:
    """Expand a sweep document into one config per (experiment, horizon).

    Top-level keys are defaults that every experiment entry may override.
    """
    if not isinstance(doc, dict) or "experiments" not in doc:
        raise ConfigError("sweep file must be a mapping with an 'experiments' list")
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown sweep keys: {sorted(unknown)}")
    defaults = {k: v for k, v in doc.items() if k not in ("name", "experiments")}
    experiments = doc["experiments"]
    if not isinstance(experiments, list) or not experiments:
        raise ConfigError("'experiments' must be a non-empty list")
    out = []
    for n, entry in enumerate(experiments):
        if not isinstance(entry, dict):
            raise ConfigError(f"experiment #{n} must be a mapping")
        unknown = set(entry) - _EXPERIMENT_KEYS
        if unknown:
            raise ConfigError(f"experiment #{n}: unknown keys {sorted(unknown)}")
        e = {**defaults, **entry}
        if "policy" not in e or "surface" not in e:
            raise ConfigError(f"experiment #{n}: 'policy' and 'surface' are required")
        horizons = e.get("horizons", e.get("horizon", 1))
        horizons = horizons if isinstance(horizons, list) else [horizons]
        gp = GpSchedule.from_dict(e.get("gp") or {})
        ev = EvalConfig(**(e.get("eval") or {}))
        for h in horizons:
            try:
                policy = PolicyConfig(
                    kind=e["policy"], horizon=parse_horizon(h),
                    n0=int(e.get("n0", 5)), n_max=e.get("n_max"),
                    variance_threshold=e.get("variance_threshold"), gp=gp)
                cfg = ExperimentConfig(
                    surface=str(e["surface"]), policy=policy, noise=float(e.get("noise", 0.0)),
                    eval=ev, replicates=int(e.get("replicates", 1)),
                    base_seed=int(e.get("base_seed", 0)), label=e.get("label"))
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"experiment #{n}: {exc}") from exc
            out.append(cfg)
    return out


def load_sweep(path: str) -> list[ExperimentConfig]:
    """Read a YAML sweep file (see ``sweeps/`` in the package for examples)."""
    try:
        with open(path) as fh:
            doc = yaml.safe_load(fh)
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read sweep file {path}: {exc}") from exc
    return configs_from_mapping(doc)


def bundled_sweep(name: str) -> str:
    from importlib import resources

    return str(resources.files("gpexplore") / "sweeps" / f"{name}.yaml")
