"""Rover exploration policies and the trial loops that run them.

Science-blind policies (spiral, boustrophedon) follow a precomputed waypoint
list. GPAL steps one cell toward the highest-variance cell in its prediction
horizon after every model fit. Both record the same per-fit metrics in a
:class:`TrajectoryLog`.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .gp import (
    GpPosterior,
    GridTracker,
    Hyperparams,
    fit,
    mean_variance_over,
    summarize_variance,
)
from .grid import (
    GLOBAL,
    CellIndex,
    GridSpec,
    Radius,
    cell_to_coord,
    neighbors,
    step_toward,
    window,
)
from .metrics import rms_error
from .surfaces import NoiseModel, SurfaceField, sample

SCIENCE_BLIND = ("spiral", "boustrophedon")
POLICIES = SCIENCE_BLIND + ("gpal",)
STOP_REASONS = ("variance_threshold", "n_max", "path_exhausted")
DEFAULT_N0 = 5
DEFAULT_N_MAX_FRACTION = 0.6
LOOP_CAP_FACTOR = 4


@dataclass(frozen=True)
class GpSchedule:
    """How often and how hard the GP hyperparameters are trained during a trial.

    Hyperparameters are trained on the first fit and again once the training
    set has grown by ``max(retrain_every, ceil(retrain_growth * n_last))``
    samples since the last training; fits in between condition on the new
    data with the hyperparameters held. With ``warm_start`` each training
    starts from the previous result instead of ``init``.
    """

    iterations: int = 50
    step_size: float = 0.1
    init: Optional[Hyperparams] = None
    retrain_every: int = 5
    retrain_growth: float = 0.25
    warm_start: bool = False
    noise_floor: float = 1e-6
    normalize: bool = True

    def __post_init__(self):
        if self.iterations < 0 or self.retrain_every < 1 or self.retrain_growth < 0:
            raise ValueError(f"invalid GP schedule: {self}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["init"] = self.init.to_dict() if self.init else None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GpSchedule":
        d = dict(d)
        if d.get("init") is not None:
            d["init"] = Hyperparams.from_dict(d["init"])
        return cls(**d)


@dataclass(frozen=True)
class EvalConfig:
    warmup: int = 3
    metrics_every: int = 1

    def __post_init__(self):
        if self.warmup < 0 or self.metrics_every < 1:
            raise ValueError(f"invalid evaluation settings: {self}")


@dataclass(frozen=True)
class PolicyConfig:
    """``horizon`` is the waypoint spacing k for science-blind policies and the
    prediction horizon (cells or ``GLOBAL``) for GPAL."""

    kind: str
    horizon: Radius = 1
    n0: int = DEFAULT_N0
    n_max: Optional[int] = None
    variance_threshold: Optional[float] = None
    seed: int = 0
    gp: GpSchedule = field(default_factory=GpSchedule)

    def __post_init__(self):
        if self.kind not in POLICIES:
            raise ValueError(f"unknown policy {self.kind!r}; expected one of {POLICIES}")
        if self.horizon == GLOBAL:
            if self.kind != "gpal":
                raise ValueError(f"{self.kind} needs an integer spacing, not {GLOBAL!r}")
        elif isinstance(self.horizon, bool) or not isinstance(self.horizon, int) or self.horizon < 1:
            raise ValueError(f"horizon must be an integer >= 1 or {GLOBAL!r}, got {self.horizon!r}")
        if self.n0 < 1:
            raise ValueError("n0 must be >= 1")
        if self.n_max is not None and self.n_max < (self.n0 if self.kind == "gpal" else 1):
            raise ValueError("n_max must be >= n0")

    def resolved_n_max(self, spec: GridSpec) -> Optional[int]:
        if self.n_max is not None or self.kind != "gpal":
            return self.n_max
        return max(self.n0, math.ceil(DEFAULT_N_MAX_FRACTION * spec.n_cells))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["gp"] = self.gp.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PolicyConfig":
        d = dict(d)
        d["gp"] = GpSchedule.from_dict(d.get("gp", {}))
        return cls(**d)


@dataclass(frozen=True)
class IterationRecord:
    """Model quality after one fit. ``events`` counts sampling events so far,
    ``samples`` the distinct cells among them."""

    events: int
    samples: int
    distance: float
    local_rms: float
    global_rms: float
    local_mean_variance: float
    local_max_variance: float
    global_mean_variance: float
    global_max_variance: float
    hyperparams: Hyperparams
    trained: bool

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hyperparams"] = self.hyperparams.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "IterationRecord":
        d = dict(d)
        d["hyperparams"] = Hyperparams.from_dict(d["hyperparams"])
        return cls(**d)


@dataclass(eq=False)
class TrajectoryLog:
    visited: list = field(default_factory=list)
    measurements: list = field(default_factory=list)
    records: list = field(default_factory=list)
    targets: list = field(default_factory=list)
    stop_reason: Optional[str] = None
    final_posterior: Optional[GpPosterior] = field(default=None, repr=False)

    def __eq__(self, other):
        if not isinstance(other, TrajectoryLog):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    def series(self, name: str) -> list:
        return [getattr(r, name) for r in self.records]

    def to_dict(self) -> dict:
        return {
            "visited": [list(c) for c in self.visited],
            "measurements": list(self.measurements),
            "targets": [list(c) for c in self.targets],
            "stop_reason": self.stop_reason,
            "records": [r.to_dict() for r in self.records],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrajectoryLog":
        return cls(
            visited=[CellIndex(*c) for c in d["visited"]],
            measurements=[float(y) for y in d["measurements"]],
            records=[IterationRecord.from_dict(r) for r in d["records"]],
            targets=[CellIndex(*c) for c in d.get("targets", [])],
            stop_reason=d["stop_reason"],
        )


# ---------------------------------------------------------------- paths

def _stride(n: int, k: int) -> list[int]:
    idx = list(range(0, n, k))
    if idx[-1] != n - 1:
        idx.append(n - 1)
    return idx


def boustrophedon_path(spec: GridSpec, k: int) -> list[CellIndex]:
    """Serpentine sweep over the stride-``k`` sub-lattice, column by column from (0, 0)."""
    if k < 1:
        raise ValueError("spacing must be >= 1")
    rows = _stride(spec.n1, k)
    path = []
    for c, j in enumerate(_stride(spec.n2, k)):
        for i in (rows if c % 2 == 0 else rows[::-1]):
            path.append(CellIndex(i, j))
    return path


def spiral_path(spec: GridSpec, k: int) -> list[CellIndex]:
    """Clockwise inward spiral over the stride-``k`` sub-lattice, from (0, 0) to the center."""
    if k < 1:
        raise ValueError("spacing must be >= 1")
    rows, cols = _stride(spec.n1, k), _stride(spec.n2, k)
    top, bottom, left, right = 0, len(rows) - 1, 0, len(cols) - 1
    order = []
    while top <= bottom and left <= right:
        order += [(top, c) for c in range(left, right + 1)]
        order += [(r, right) for r in range(top + 1, bottom + 1)]
        if top < bottom:
            order += [(bottom, c) for c in range(right - 1, left - 1, -1)]
        if left < right:
            order += [(r, left) for r in range(bottom - 1, top, -1)]
        top, bottom, left, right = top + 1, bottom - 1, left + 1, right - 1
    return [CellIndex(rows[r], cols[c]) for r, c in order]


def random_walk_init(field: SurfaceField, start: Sequence[int], n0: int,
                     rng: np.random.Generator, noise: NoiseModel = NoiseModel()):
    """Sample ``start`` then walk to random unvisited neighbours until ``n0`` samples.

    When every neighbour has been visited the walk steps to a random visited
    neighbour instead; that step still samples and counts.
    """
    spec = field.spec
    if n0 < 1:
        raise ValueError("n0 must be >= 1")
    if n0 > spec.n_cells:
        raise ValueError(f"n0={n0} exceeds the {spec.n_cells} cells of the grid")
    cur = CellIndex(int(start[0]), int(start[1]))
    visited = [cur]
    ys = [sample(field, cur, noise, rng)]
    seen = {cur}
    while len(visited) < n0:
        nbs = neighbors(spec, cur)
        fresh = [c for c in nbs if c not in seen]
        pool = fresh or nbs
        cur = pool[int(rng.integers(len(pool)))]
        visited.append(cur)
        ys.append(sample(field, cur, noise, rng))
        seen.add(cur)
    return visited, ys


# ---------------------------------------------------------------- model loop

class _ModelLoop:
    """GP state plus metric recording shared by both trial runners."""

    def __init__(self, field: SurfaceField, schedule: GpSchedule, eval_cfg: EvalConfig,
                 local_radius: Radius, n_expected: int):
        self.field = field
        self.spec = field.spec
        self.schedule = schedule
        self.eval = eval_cfg
        self.local_radius = local_radius
        self.init = schedule.init or Hyperparams.default_for(field.spec)
        self.tracker = GridTracker(field.spec, self.init, normalize=schedule.normalize,
                                   capacity=max(16, n_expected))
        self.last_trained: Optional[int] = None
        self.fits = 0
        self.means = None
        self.variances = None

    def observe(self, cell: CellIndex, y: float) -> None:
        self.tracker.add(cell_to_coord(self.spec, cell), y)

    def _training_due(self, n: int) -> bool:
        s = self.schedule
        if s.iterations == 0:
            return False
        if self.last_trained is None:
            return True
        need = max(s.retrain_every, math.ceil(s.retrain_growth * self.last_trained))
        return n - self.last_trained >= need

    def refit(self) -> bool:
        s = self.schedule
        n = self.tracker.n
        trained = self._training_due(n)
        if trained:
            init = self.tracker.hp if (s.warm_start and self.last_trained is not None) else self.init
            post = fit(self.tracker.training_set(), init, s.iterations, s.step_size,
                       normalize=s.normalize, noise_floor=s.noise_floor)
            self.tracker.load(post)
            self.last_trained = n
        self.means, self.variances = self.tracker.grid_predictions()
        self.fits += 1
        return trained

    def record(self, log: TrajectoryLog, current: CellIndex, events: int, unique: int,
               distance: float, trained: bool, force: bool = False) -> None:
        if not force and (self.fits - 1) % self.eval.metrics_every != 0:
            return
        spec = self.spec
        truth = self.field.values
        if self.local_radius == GLOBAL:
            local = np.arange(spec.n_cells)
        else:
            cells = window(spec, current, self.local_radius) + [current]
            local = np.array(sorted(spec.linear(c) for c in cells))
        lv, gv = self.variances[local], self.variances
        log.records.append(IterationRecord(
            events=events,
            samples=unique,
            distance=distance,
            local_rms=rms_error(self.means[local], truth[local]),
            global_rms=rms_error(self.means, truth),
            local_mean_variance=float(np.mean(lv)),
            local_max_variance=float(np.max(lv)),
            global_mean_variance=float(np.mean(gv)),
            global_max_variance=float(np.max(gv)),
            hyperparams=self.tracker.hp,
            trained=trained,
        ))


def _segment(spec: GridSpec, a: Sequence[int], b: Sequence[int]) -> float:
    return math.hypot(b[0] - a[0], b[1] - a[1]) * spec.dx


def run_science_blind(field: SurfaceField, path: Sequence[Sequence[int]],
                      noise: NoiseModel = NoiseModel(), rng: Optional[np.random.Generator] = None,
                      schedule: GpSchedule = GpSchedule(), eval_cfg: EvalConfig = EvalConfig(),
                      n_max: Optional[int] = None, local_radius: Radius = 1) -> TrajectoryLog:
    """Sample every waypoint of ``path`` in order, refitting the GP after each
    sample once more than ``eval_cfg.warmup`` samples exist."""
    if len(path) == 0:
        raise ValueError("path must not be empty")
    rng = rng if rng is not None else np.random.default_rng(0)
    spec = field.spec
    model = _ModelLoop(field, schedule, eval_cfg, local_radius, len(path))
    log = TrajectoryLog()
    seen = set()
    distance = 0.0
    trained = False
    for step, raw in enumerate(path):
        cell = CellIndex(int(raw[0]), int(raw[1]))
        if log.visited:
            distance += _segment(spec, log.visited[-1], cell)
        y = sample(field, cell, noise, rng)
        log.visited.append(cell)
        log.measurements.append(y)
        seen.add(cell)
        model.observe(cell, y)
        last = step == len(path) - 1
        capped = n_max is not None and len(seen) >= n_max
        if len(log.visited) > eval_cfg.warmup:
            trained = model.refit()
            model.record(log, cell, len(log.visited), len(seen), distance, trained,
                         force=last or capped)
        if last:
            log.stop_reason = "path_exhausted"
        elif capped:
            log.stop_reason = "n_max"
            break
    if model.fits:
        log.final_posterior = model.tracker.posterior()
    return log


def gpal_next(post: Optional[GpPosterior], current: Sequence[int], horizon: Radius,
              spec: GridSpec, variances: Optional[np.ndarray] = None):
    """Highest-variance cell in the horizon window and the one-cell step toward it.

    ``variances`` may carry precomputed posterior variances for every grid cell
    (linear order); otherwise they are predicted from ``post``.
    """
    current = CellIndex(int(current[0]), int(current[1]))
    cells = window(spec, current, horizon)
    if variances is None:
        target = mean_variance_over(post, cells, spec).argmax
    else:
        lin = [spec.linear(c) for c in cells]
        target = summarize_variance(np.asarray(variances)[lin], cells, spec).argmax
    return target, step_toward(spec, current, target)


def run_gpal(field: SurfaceField, cfg: PolicyConfig, noise: NoiseModel = NoiseModel(),
             eval_cfg: EvalConfig = EvalConfig(),
             rng: Optional[np.random.Generator] = None) -> TrajectoryLog:
    """Random-walk initialisation followed by the variance-seeking loop.

    Stops once ``n_max`` distinct cells are sampled, when the global maximum
    variance drops to ``variance_threshold`` (if set), or after
    ``4 * n_max`` sampling events. Revisits are sampled and appended.
    """
    if cfg.kind != "gpal":
        raise ValueError(f"run_gpal needs a gpal config, got {cfg.kind!r}")
    spec = field.spec
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    n_max = cfg.resolved_n_max(spec)
    start = spec.unlinear(int(rng.integers(spec.n_cells)))
    visited, ys = random_walk_init(field, start, cfg.n0, rng, noise)

    model = _ModelLoop(field, cfg.gp, eval_cfg, cfg.horizon, n_max + 8)
    log = TrajectoryLog(visited=list(visited), measurements=list(ys))
    seen = set(visited)
    distance = 0.0
    for a, b in zip(visited, visited[1:]):
        distance += _segment(spec, a, b)
    for c, y in zip(visited, ys):
        model.observe(c, y)

    current = visited[-1]
    while True:
        trained = model.refit()
        stop = None
        if cfg.variance_threshold is not None and float(np.max(model.variances)) <= cfg.variance_threshold:
            stop = "variance_threshold"
        elif len(seen) >= n_max or len(log.visited) >= LOOP_CAP_FACTOR * n_max:
            stop = "n_max"
        model.record(log, current, len(log.visited), len(seen), distance, trained,
                     force=stop is not None)
        if stop:
            log.stop_reason = stop
            break
        target, nxt = gpal_next(None, current, cfg.horizon, spec, model.variances)
        y = sample(field, nxt, noise, rng)
        distance += _segment(spec, current, nxt)
        log.targets.append(target)
        log.visited.append(nxt)
        log.measurements.append(y)
        seen.add(nxt)
        model.observe(nxt, y)
        current = nxt
    log.final_posterior = model.tracker.posterior()
    return log


def run_policy(field: SurfaceField, cfg: PolicyConfig, noise: NoiseModel = NoiseModel(),
               eval_cfg: EvalConfig = EvalConfig(), seed: Optional[int] = None) -> TrajectoryLog:
    """Run any policy with a generator seeded from ``seed`` (default ``cfg.seed``)."""
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    if cfg.kind == "gpal":
        return run_gpal(field, cfg, noise, eval_cfg, rng)
    make = spiral_path if cfg.kind == "spiral" else boustrophedon_path
    return run_science_blind(field, make(field.spec, cfg.horizon), noise, rng, cfg.gp, eval_cfg,
                             n_max=cfg.n_max, local_radius=cfg.horizon)
