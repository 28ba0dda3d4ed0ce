"""Discrete sampling lattice shared by surfaces, policies and metrics.

Cells are addressed by ``CellIndex(i, j)`` with ``i`` along x1 and ``j`` along
x2. The linear (row-major) index of a cell is ``i * n2 + j``; every function
that returns several cells returns them in ascending linear-index order so
tie-breaking is reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence, Union

import numpy as np

GLOBAL = "global"

Radius = Union[int, str]


class GridBoundsError(IndexError):
    """A cell index lies outside the grid."""


class GridDomainError(ValueError):
    """A coordinate lies outside the grid (plus half a cell of slack)."""


class CellIndex(NamedTuple):
    i: int
    j: int


@dataclass(frozen=True)
class GridSpec:
    """Rectangular lattice with a single step ``dx`` on both axes."""

    x1_min: float
    x2_min: float
    dx: float
    n1: int
    n2: int

    def __post_init__(self):
        if not (self.dx > 0 and math.isfinite(self.dx)):
            raise ValueError(f"dx must be positive and finite, got {self.dx}")
        if self.n1 < 2 or self.n2 < 2:
            raise ValueError(f"grid needs at least 2 cells per axis, got {self.n1}x{self.n2}")
        if not (math.isfinite(self.x1_min) and math.isfinite(self.x2_min)):
            raise ValueError("grid origin must be finite")

    @classmethod
    def from_range(cls, lo1: float, hi1: float, lo2: float, hi2: float, dx: float) -> "GridSpec":
        """Build a grid from MATLAB-style ``lo:dx:hi`` ranges on both axes."""
        n1 = int(round((hi1 - lo1) / dx)) + 1
        n2 = int(round((hi2 - lo2) / dx)) + 1
        return cls(float(lo1), float(lo2), float(dx), n1, n2)

    @property
    def n_cells(self) -> int:
        return self.n1 * self.n2

    @property
    def x1_max(self) -> float:
        return self.x1_min + (self.n1 - 1) * self.dx

    @property
    def x2_max(self) -> float:
        return self.x2_min + (self.n2 - 1) * self.dx

    @property
    def diagonal(self) -> float:
        """Length of the domain diagonal in surface units."""
        return math.hypot((self.n1 - 1) * self.dx, (self.n2 - 1) * self.dx)

    @property
    def center(self) -> CellIndex:
        return CellIndex((self.n1 - 1) // 2, (self.n2 - 1) // 2)

    def contains(self, idx: Sequence[int]) -> bool:
        return 0 <= idx[0] < self.n1 and 0 <= idx[1] < self.n2

    def linear(self, idx: Sequence[int]) -> int:
        return int(idx[0]) * self.n2 + int(idx[1])

    def unlinear(self, k: int) -> CellIndex:
        return CellIndex(int(k) // self.n2, int(k) % self.n2)

    def cells(self) -> list[CellIndex]:
        """All cells in linear-index order."""
        return [CellIndex(i, j) for i in range(self.n1) for j in range(self.n2)]

    def coords(self) -> np.ndarray:
        """``(n1*n2, 2)`` array of cell coordinates in linear-index order."""
        i, j = np.meshgrid(np.arange(self.n1), np.arange(self.n2), indexing="ij")
        return np.column_stack([
            self.x1_min + i.ravel() * self.dx,
            self.x2_min + j.ravel() * self.dx,
        ])

    def to_dict(self) -> dict:
        return {"x1_min": self.x1_min, "x2_min": self.x2_min, "dx": self.dx,
                "n1": self.n1, "n2": self.n2}

    @classmethod
    def from_dict(cls, d: dict) -> "GridSpec":
        return cls(float(d["x1_min"]), float(d["x2_min"]), float(d["dx"]),
                   int(d["n1"]), int(d["n2"]))


PARABOLA_GRID = GridSpec.from_range(-1.0, 1.0, -1.0, 1.0, 0.1)
TOWNSEND_GRID = GridSpec.from_range(-2.5, 2.5, -2.5, 2.5, 0.1)
LUNAR_GRID = GridSpec.from_range(-1.5, 1.5, -3.0, 3.0, 0.25)
CRATER_GRID = GridSpec.from_range(-1.5, 1.5, -1.5, 1.5, 0.25)


def _check(spec: GridSpec, idx: Sequence[int]) -> None:
    if not spec.contains(idx):
        raise GridBoundsError(f"cell {tuple(idx)} outside {spec.n1}x{spec.n2} grid")


def cell_to_coord(spec: GridSpec, idx: Sequence[int]) -> tuple[float, float]:
    _check(spec, idx)
    return (spec.x1_min + idx[0] * spec.dx, spec.x2_min + idx[1] * spec.dx)


def coord_to_cell(spec: GridSpec, coord: Sequence[float]) -> CellIndex:
    """Nearest lattice cell; exact midpoints round up."""
    out = []
    for value, lo, n in ((coord[0], spec.x1_min, spec.n1), (coord[1], spec.x2_min, spec.n2)):
        u = (value - lo) / spec.dx
        if not math.isfinite(u) or u < -0.5 or u > n - 0.5:
            raise GridDomainError(f"coordinate {tuple(coord)} outside grid")
        k = math.floor(u + 0.5)
        out.append(min(max(k, 0), n - 1))
    return CellIndex(*out)


def window(spec: GridSpec, center: Sequence[int], radius_cells: Radius) -> list[CellIndex]:
    """Cells within Chebyshev distance ``radius_cells`` of ``center``, center excluded.

    ``GLOBAL`` returns every other cell of the grid.
    """
    _check(spec, center)
    ci, cj = int(center[0]), int(center[1])
    if radius_cells == GLOBAL:
        return [c for c in spec.cells() if c != (ci, cj)]
    if isinstance(radius_cells, bool) or not isinstance(radius_cells, (int, np.integer)):
        raise ValueError(f"radius must be a positive integer or {GLOBAL!r}, got {radius_cells!r}")
    r = int(radius_cells)
    if r < 1:
        raise ValueError(f"radius must be >= 1, got {r}")
    return [
        CellIndex(i, j)
        for i in range(max(ci - r, 0), min(ci + r, spec.n1 - 1) + 1)
        for j in range(max(cj - r, 0), min(cj + r, spec.n2 - 1) + 1)
        if (i, j) != (ci, cj)
    ]


def neighbors(spec: GridSpec, idx: Sequence[int]) -> list[CellIndex]:
    """Moore (8-connected) neighborhood clipped to the grid."""
    return window(spec, idx, 1)


def step_toward(spec: GridSpec, start: Sequence[int], target: Sequence[int]) -> CellIndex:
    """Neighbor of ``start`` closest (Euclidean) to ``target``; lowest linear index wins ties."""
    _check(spec, target)
    if tuple(start) == tuple(target):
        _check(spec, start)
        return CellIndex(int(start[0]), int(start[1]))
    best, best_d = None, math.inf
    for nb in neighbors(spec, start):
        # cells share dx, so squared cell offsets order the same as coordinate distance
        d = (nb.i - target[0]) ** 2 + (nb.j - target[1]) ** 2
        if d < best_d:
            best, best_d = nb, d
    return best


def chebyshev(a: Sequence[int], b: Sequence[int]) -> int:
    return max(abs(a[0] - b[0]), abs(a[1] - b[1]))


def path_length(spec: GridSpec, cells: Iterable[Sequence[int]]) -> float:
    """Sum of straight-line segment lengths between consecutive cells."""
    cells = list(cells)
    if not cells:
        raise ValueError("path_length needs at least one cell")
    total = 0.0
    for a, b in zip(cells, cells[1:]):
        total += math.hypot(b[0] - a[0], b[1] - a[1]) * spec.dx
    return total
