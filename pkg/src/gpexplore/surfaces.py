"""Ground-truth environments and the sampling noise model.

Analytic surfaces are stored noise-free. Measurement noise is drawn fresh on
every call to :func:`sample`, from the trial's own ``numpy.random.Generator``
via ``Generator.normal`` (NumPy's ziggurat transform of a PCG64 stream). That
transform is part of the reproducibility contract: changing it changes every
seeded trial.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass
from importlib import resources
from typing import Optional, Sequence

import numpy as np

from .grid import CRATER_GRID, PARABOLA_GRID, TOWNSEND_GRID, CellIndex, GridSpec, cell_to_coord

CSV_HEADER = ("x1", "x2", "y")
SPACING_RTOL = 1e-9


class SurfaceLoadError(ValueError):
    """Base class for gridded-surface file problems."""


class UnreadableSurfaceFile(SurfaceLoadError):
    pass


class NonRectangularSurface(SurfaceLoadError):
    pass


class NonUniformSpacing(SurfaceLoadError):
    pass


class MissingCells(SurfaceLoadError):
    def __init__(self, missing: list[tuple[float, float]], path: str):
        self.missing = missing
        shown = ", ".join(f"({a:g}, {b:g})" for a, b in missing[:10])
        more = f" and {len(missing) - 10} more" if len(missing) > 10 else ""
        super().__init__(f"{path}: {len(missing)} missing cell(s) at {shown}{more}")


@dataclass(frozen=True, eq=False)
class SurfaceField:
    """True scalar value at every cell, stored flat in linear-index order."""

    spec: GridSpec
    values: np.ndarray
    kind: str
    source: Optional[str] = None

    def __post_init__(self):
        values = np.array(self.values, dtype=float).ravel()
        if values.size != self.spec.n_cells:
            raise ValueError(f"expected {self.spec.n_cells} values, got {values.size}")
        if not np.all(np.isfinite(values)):
            raise ValueError("surface values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def value_at(self, idx: Sequence[int]) -> float:
        cell_to_coord(self.spec, idx)  # bounds check
        return float(self.values[self.spec.linear(idx)])

    def grid(self) -> np.ndarray:
        """Values reshaped to ``(n1, n2)``."""
        return self.values.reshape(self.spec.n1, self.spec.n2)


@dataclass(frozen=True)
class NoiseModel:
    variance: float = 0.0

    def __post_init__(self):
        if not (self.variance >= 0 and math.isfinite(self.variance)):
            raise ValueError(f"noise variance must be finite and >= 0, got {self.variance}")

    @property
    def std(self) -> float:
        return math.sqrt(self.variance)


def parabola(x1, x2):
    return x1 ** 2 + x2 ** 2


def townsend(x1, x2):
    return -np.cos((x1 - 0.1) * x2) ** 2 - x1 * np.sin(3 * x1 + x2)


def _analytic(spec: GridSpec, fn, kind: str) -> SurfaceField:
    xy = spec.coords()
    return SurfaceField(spec, fn(xy[:, 0], xy[:, 1]), kind)


def build_parabola() -> SurfaceField:
    """x1^2 + x2^2 on [-1:0.1:1]^2 (441 cells)."""
    return _analytic(PARABOLA_GRID, parabola, "parabola")


def build_townsend() -> SurfaceField:
    """Townsend function on [-2.5:0.1:2.5]^2 (2601 cells)."""
    return _analytic(TOWNSEND_GRID, townsend, "townsend")


def bundled_crater_path() -> str:
    """Path of the synthetic crater CSV shipped with the package."""
    return str(resources.files("gpexplore") / "data" / "synthetic_crater.csv")


def _axis_step(values: np.ndarray) -> float:
    diffs = np.diff(values)
    return float(diffs.min()) if diffs.size else math.nan


def load_gridded(file_path: str) -> SurfaceField:
    """Read an ``x1,x2,y`` CSV into a field, inferring the grid from its coordinates.

    Rows must be sorted by x1 then x2. Spacing is inferred as the smallest
    coordinate gap over both axes; every coordinate must sit on that lattice
    to within a relative error of 1e-9.
    """
    path = os.fspath(file_path)
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except (OSError, UnicodeDecodeError) as exc:
        raise UnreadableSurfaceFile(f"cannot read surface file {path}: {exc}") from exc

    if not rows or tuple(c.strip() for c in rows[0]) != CSV_HEADER:
        raise UnreadableSurfaceFile(f"{path}: header must be exactly 'x1,x2,y'")
    data = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 3:
            raise UnreadableSurfaceFile(f"{path}:{lineno}: expected 3 columns, got {len(row)}")
        try:
            data.append(tuple(float(c) for c in row))
        except ValueError as exc:
            raise UnreadableSurfaceFile(f"{path}:{lineno}: {exc}") from exc
    if not data:
        raise UnreadableSurfaceFile(f"{path}: no data rows")
    arr = np.array(data)
    if not np.all(np.isfinite(arr)):
        raise UnreadableSurfaceFile(f"{path}: non-finite entries")

    keys = [(r[0], r[1]) for r in data]
    if keys != sorted(keys):
        raise UnreadableSurfaceFile(f"{path}: rows must be sorted by x1 then x2")
    if len(set(keys)) != len(keys):
        raise NonRectangularSurface(f"{path}: duplicate coordinates")

    u1, u2 = np.unique(arr[:, 0]), np.unique(arr[:, 1])
    if u1.size < 2 or u2.size < 2:
        raise NonRectangularSurface(f"{path}: need at least two distinct values on each axis")
    dx = min(_axis_step(u1), _axis_step(u2))
    # normalise the inferred step to 12 significant digits so decimal steps round-trip exactly
    dx = float(f"{dx:.12g}")

    def lattice(u: np.ndarray, axis: str) -> np.ndarray:
        k = (u - u[0]) / dx
        off = np.abs(k - np.round(k))
        bad = off > SPACING_RTOL * np.maximum(1.0, np.abs(k))
        if np.any(bad):
            raise NonUniformSpacing(
                f"{path}: {axis} value {u[bad][0]!r} is off the inferred step {dx!r}")
        return np.round(k).astype(int)

    k1, k2 = lattice(u1, "x1"), lattice(u2, "x2")
    spec = GridSpec(float(u1[0]), float(u2[0]), dx, int(k1[-1]) + 1, int(k2[-1]) + 1)

    pos1 = dict(zip(u1.tolist(), k1.tolist()))
    pos2 = dict(zip(u2.tolist(), k2.tolist()))
    grid = np.full((spec.n1, spec.n2), np.nan)
    for a, b, y in data:
        grid[pos1[a], pos2[b]] = y
    holes = np.argwhere(np.isnan(grid))
    if holes.size:
        missing = [cell_to_coord(spec, CellIndex(int(i), int(j))) for i, j in holes]
        raise MissingCells(missing, path)
    return SurfaceField(spec, grid.ravel(), "gridded", source=path)


def _fmt_coord(v: float) -> str:
    return repr(round(v, 12) + 0.0)


def write_gridded(field: SurfaceField, file_path: str) -> None:
    """Write ``field`` in the CSV layout :func:`load_gridded` reads."""
    spec = field.spec
    with open(file_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for k, cell in enumerate(spec.cells()):
            a, b = cell_to_coord(spec, cell)
            w.writerow([_fmt_coord(a), _fmt_coord(b), repr(float(field.values[k]))])


def sample(field: SurfaceField, idx: Sequence[int], noise: NoiseModel,
           rng: np.random.Generator) -> float:
    """Measure the field at ``idx``, adding a fresh Gaussian draw when noise is on.

    A zero-variance model consumes no random numbers and returns the true value.
    """
    y = field.value_at(idx)
    if noise.variance == 0:
        return y
    return y + float(rng.normal(0.0, noise.std))


def true_argmin(field: SurfaceField) -> tuple[CellIndex, float]:
    k = int(np.argmin(field.values))  # first occurrence = lowest linear index
    return field.spec.unlinear(k), float(field.values[k])


def build_surface(selector: str) -> SurfaceField:
    """Resolve ``parabola``, ``townsend``, ``crater`` (bundled CSV) or a CSV path."""
    if selector == "parabola":
        return build_parabola()
    if selector == "townsend":
        return build_townsend()
    if selector == "crater":
        return load_gridded(bundled_crater_path())
    return load_gridded(selector)


def synthetic_crater(spec: GridSpec = None, seed: int = 7) -> SurfaceField:
    """Crater-like hydration stand-in for the 3 km swath: [-1.5:0.25:1.5]^2, 169 cells.

    Hydration is raised in the shadowed bowl and depressed on the rim, with a
    small fixed texture so the field is not perfectly smooth.
    """
    spec = spec or CRATER_GRID
    xy = spec.coords()
    r = np.hypot(xy[:, 0] - 0.2, xy[:, 1] + 0.1) / 1.1
    bowl = 0.22 * np.exp(-(r / 0.55) ** 2)
    rim = -0.06 * np.exp(-((r - 1.0) / 0.18) ** 2)
    tilt = 0.015 * xy[:, 1]
    texture = np.random.default_rng(seed).normal(0.0, 0.008, size=spec.n_cells)
    values = np.round(0.09 + bowl + rim + tilt + texture, 6)
    return SurfaceField(spec, values, "gridded", source="synthetic_crater")
