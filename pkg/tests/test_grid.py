import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from gpexplore.grid import (
    GLOBAL, PARABOLA_GRID, TOWNSEND_GRID, CRATER_GRID, CellIndex, GridBoundsError,
    GridDomainError, GridSpec, cell_to_coord, chebyshev, coord_to_cell, neighbors,
    path_length, step_toward, window,
)

grids = st.sampled_from([PARABOLA_GRID, TOWNSEND_GRID, CRATER_GRID])


def test_grid_sizes():
    assert (PARABOLA_GRID.n1, PARABOLA_GRID.n2) == (21, 21)
    assert TOWNSEND_GRID.n_cells == 2601
    assert CRATER_GRID.n_cells == 169
    assert PARABOLA_GRID.x1_max == pytest.approx(1.0)


def test_cell_to_coord_corner_and_center():
    assert cell_to_coord(PARABOLA_GRID, (0, 0)) == (-1.0, -1.0)
    x1, x2 = cell_to_coord(PARABOLA_GRID, (10, 10))
    assert abs(x1) < 1e-12 and abs(x2) < 1e-12


def test_cell_to_coord_out_of_range():
    with pytest.raises(GridBoundsError):
        cell_to_coord(PARABOLA_GRID, (21, 0))
    with pytest.raises(GridBoundsError):
        cell_to_coord(PARABOLA_GRID, (0, -1))


def test_coord_to_cell_rounds_midpoint_up():
    # 0.05 is halfway between cells 10 and 11
    assert coord_to_cell(PARABOLA_GRID, (0.05, -1.0)) == (11, 0)
    assert coord_to_cell(PARABOLA_GRID, (1.04, 1.04)) == (20, 20)
    with pytest.raises(GridDomainError):
        coord_to_cell(PARABOLA_GRID, (1.2, 0.0))
    with pytest.raises(GridDomainError):
        coord_to_cell(PARABOLA_GRID, (math.nan, 0.0))


@given(grids, st.data())
def test_coord_roundtrip(spec, data):
    i = data.draw(st.integers(0, spec.n1 - 1))
    j = data.draw(st.integers(0, spec.n2 - 1))
    assert coord_to_cell(spec, cell_to_coord(spec, (i, j))) == (i, j)


def test_window_corner_and_interior():
    assert len(window(PARABOLA_GRID, (0, 0), 1)) == 3
    assert len(window(PARABOLA_GRID, (10, 10), 3)) == 48
    w = window(PARABOLA_GRID, (5, 5), 2)
    assert (5, 5) not in w
    assert w == sorted(w, key=PARABOLA_GRID.linear)


def test_window_global_and_bad_radius():
    assert len(window(PARABOLA_GRID, (3, 4), GLOBAL)) == 440
    with pytest.raises(ValueError):
        window(PARABOLA_GRID, (3, 4), 0)
    with pytest.raises(ValueError):
        window(PARABOLA_GRID, (3, 4), "far")


@given(grids, st.data(), st.integers(1, 6))
def test_window_is_chebyshev_ball(spec, data, r):
    c = (data.draw(st.integers(0, spec.n1 - 1)), data.draw(st.integers(0, spec.n2 - 1)))
    got = set(window(spec, c, r))
    want = {cell for cell in spec.cells() if 0 < chebyshev(cell, c) <= r}
    assert got == want


def test_neighbors_counts():
    assert len(neighbors(TOWNSEND_GRID, (0, 0))) == 3
    assert len(neighbors(TOWNSEND_GRID, (0, 7))) == 5
    assert len(neighbors(TOWNSEND_GRID, (7, 7))) == 8


def test_step_toward_examples():
    assert step_toward(PARABOLA_GRID, (0, 0), (5, 5)) == (1, 1)
    assert step_toward(PARABOLA_GRID, (0, 0), (0, 9)) == (0, 1)
    assert step_toward(PARABOLA_GRID, (4, 4), (4, 4)) == (4, 4)


@given(grids, st.data())
def test_step_toward_reduces_distance(spec, data):
    a = (data.draw(st.integers(0, spec.n1 - 1)), data.draw(st.integers(0, spec.n2 - 1)))
    b = (data.draw(st.integers(0, spec.n1 - 1)), data.draw(st.integers(0, spec.n2 - 1)))
    nxt = step_toward(spec, a, b)
    if a == b:
        assert nxt == a
    else:
        assert chebyshev(nxt, a) == 1
        assert chebyshev(nxt, b) == chebyshev(a, b) - 1


def test_path_length():
    assert path_length(PARABOLA_GRID, [(0, 0), (1, 1), (1, 2)]) == pytest.approx(0.1 * (math.sqrt(2) + 1))
    assert path_length(PARABOLA_GRID, [(3, 3)]) == 0.0
    with pytest.raises(ValueError):
        path_length(PARABOLA_GRID, [])


def test_spec_validation_and_roundtrip():
    with pytest.raises(ValueError):
        GridSpec(0.0, 0.0, 0.0, 3, 3)
    with pytest.raises(ValueError):
        GridSpec(0.0, 0.0, 0.1, 1, 3)
    assert GridSpec.from_dict(TOWNSEND_GRID.to_dict()) == TOWNSEND_GRID


def test_coords_matches_cell_to_coord():
    xy = CRATER_GRID.coords()
    for k in (0, 17, 168):
        assert tuple(xy[k]) == cell_to_coord(CRATER_GRID, CRATER_GRID.unlinear(k))
    assert isinstance(CRATER_GRID.unlinear(14), CellIndex)
    assert np.all(np.diff([CRATER_GRID.linear(c) for c in CRATER_GRID.cells()]) == 1)


cells_on_parabola = st.tuples(st.integers(0, 20), st.integers(0, 20))


@given(st.lists(cells_on_parabola, min_size=1, max_size=12),
       st.lists(cells_on_parabola, min_size=1, max_size=12))
def test_path_length_reversal_and_concatenation(a, b):
    spec = PARABOLA_GRID
    assert path_length(spec, a) == pytest.approx(path_length(spec, a[::-1]))
    joined = a + [a[-1]] + b  # repeat the shared endpoint explicitly
    b2 = [a[-1]] + b
    assert path_length(spec, joined) == pytest.approx(path_length(spec, a) + path_length(spec, b2))


@given(grids, st.data())
def test_neighbor_counts_and_window_agreement(spec, data):
    c = (data.draw(st.integers(0, spec.n1 - 1)), data.draw(st.integers(0, spec.n2 - 1)))
    nb = neighbors(spec, c)
    interior = 0 < c[0] < spec.n1 - 1 and 0 < c[1] < spec.n2 - 1
    assert len(nb) in (3, 5, 8)
    assert (len(nb) == 8) == interior
    assert nb == window(spec, c, 1)
