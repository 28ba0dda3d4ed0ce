"""Evaluation metrics: RMS error, 2% settling convergence, minimum identification."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from .gp import TIE_RTOL, GpPosterior, predict
from .grid import CellIndex, GridSpec, cell_to_coord
from .surfaces import SurfaceField, true_argmin

SETTLING_BAND = 0.02
TAIL_GUARD = 0.9


def rms_error(predicted, truth) -> float:
    p = np.asarray(predicted, dtype=float).ravel()
    t = np.asarray(truth, dtype=float).ravel()
    if p.size == 0 or p.size != t.size:
        raise ValueError(f"rms_error needs equal non-empty lengths, got {p.size} and {t.size}")
    return float(np.sqrt(np.mean((p - t) ** 2)))


@dataclass(frozen=True)
class ConvergenceReport:
    converged: bool
    index: Optional[int]
    e0: float
    ef: float
    band: float
    e_at_convergence: Optional[float] = None
    distance_at_convergence: Optional[float] = None
    samples_at_convergence: Optional[int] = None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ConvergenceReport":
        return cls(**d)


def settling_convergence(errors: Sequence[float], distances: Sequence[float],
                         uniques: Sequence[int]) -> ConvergenceReport:
    """Find the first index after which the error stays inside the 2% settling band.

    The band sits above the final error ``ef`` with half-width
    ``0.02 * (e0 - ef)``. The series only counts as converged when that index
    falls in the first 90% of the series; otherwise the final value itself may
    not be settled. ``index`` is still reported for a late settle.
    """
    e = [float(v) for v in errors]
    n = len(e)
    if n < 3:
        raise ValueError(f"settling_convergence needs at least 3 entries, got {n}")
    if len(distances) != n or len(uniques) != n:
        raise ValueError("errors, distances and uniques must have equal lengths")
    e0, ef = e[0], e[-1]
    band = SETTLING_BAND * (e0 - ef)
    limit = ef + band
    i = n
    while i > 0 and e[i - 1] <= limit:
        i -= 1
    index = i if i < n else None
    if index is None or not index < TAIL_GUARD * n:
        return ConvergenceReport(False, index, e0, ef, band)
    return ConvergenceReport(True, index, e0, ef, band, e[index],
                             float(distances[index]), int(uniques[index]))


def improvement_ratio(e0: float, ef: float) -> float:
    """``e0 / ef``; a perfect final model (``ef == 0``) returns ``math.inf``."""
    if ef < 0 or e0 < 0:
        raise ValueError("RMS errors cannot be negative")
    if ef == 0:
        return math.inf
    return e0 / ef


@dataclass(frozen=True)
class MinIdReport:
    predicted: CellIndex
    true: CellIndex
    position_error: float
    value_error: float

    def to_dict(self) -> dict:
        return {"predicted": list(self.predicted), "true": list(self.true),
                "position_error": self.position_error, "value_error": self.value_error}

    @classmethod
    def from_dict(cls, d: dict) -> "MinIdReport":
        return cls(CellIndex(*d["predicted"]), CellIndex(*d["true"]),
                   float(d["position_error"]), float(d["value_error"]))


def argmin_cell(values: np.ndarray, spec: GridSpec) -> CellIndex:
    """Grid argmin over a full linear-order array; near-ties go to the lowest index."""
    v = np.asarray(values, dtype=float)
    low = float(np.min(v))
    cand = np.flatnonzero(v <= low + TIE_RTOL * max(abs(low), 1e-300))
    return spec.unlinear(int(cand[0]))


def min_identification_from_means(means: np.ndarray, field: SurfaceField) -> MinIdReport:
    spec = field.spec
    means = np.asarray(means, dtype=float).ravel()
    if means.size != spec.n_cells:
        raise ValueError(f"expected {spec.n_cells} predictions, got {means.size}")
    pred = argmin_cell(means, spec)
    true, true_value = true_argmin(field)
    a, b = cell_to_coord(spec, pred), cell_to_coord(spec, true)
    return MinIdReport(pred, true, math.hypot(a[0] - b[0], a[1] - b[1]),
                       abs(float(means[spec.linear(pred)]) - true_value))


def _check_on_grid(post: GpPosterior, spec: GridSpec) -> None:
    u = (post.X - np.array([spec.x1_min, spec.x2_min])) / spec.dx
    k = np.round(u)
    off_lattice = np.abs(u - k) > 1e-6
    outside = (k[:, 0] < 0) | (k[:, 0] >= spec.n1) | (k[:, 1] < 0) | (k[:, 1] >= spec.n2)
    if np.any(off_lattice) or np.any(outside):
        raise ValueError("posterior training inputs do not lie on the field's grid")


def min_identification(post: GpPosterior, field: SurfaceField) -> MinIdReport:
    """Compare the argmin of the posterior mean over every cell with the true argmin."""
    _check_on_grid(post, field.spec)
    means, _ = predict(post, field.spec.coords())
    return min_identification_from_means(means, field)


def summarize_trials(values: Sequence[float]) -> dict:
    """Five-number summary plus mean and count.

    Quartiles use linear interpolation between order statistics
    (``numpy.percentile`` with ``method="linear"``).
    """
    v = np.asarray(list(values), dtype=float)
    if v.size == 0:
        raise ValueError("summarize_trials needs at least one value")
    q = np.percentile(v, [0, 25, 50, 75, 100], method="linear")
    return {"min": float(q[0]), "q1": float(q[1]), "median": float(q[2]),
            "q3": float(q[3]), "max": float(q[4]), "mean": float(np.mean(v)),
            "count": int(v.size)}
