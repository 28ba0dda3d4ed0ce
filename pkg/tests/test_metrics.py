import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from gpexplore.gp import Hyperparams, TrainingSet, condition
from gpexplore.metrics import (
    ConvergenceReport, MinIdReport, argmin_cell, improvement_ratio, min_identification,
    min_identification_from_means, rms_error, settling_convergence, summarize_trials,
)
from gpexplore.surfaces import build_parabola, build_townsend


def _conv(errors):
    n = len(errors)
    return settling_convergence(errors, [0.1 * k for k in range(n)], list(range(5, 5 + n)))


def test_rms_error():
    assert rms_error([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert rms_error([0.0, 0.0], [3.0, 4.0]) == pytest.approx(math.sqrt(12.5))
    with pytest.raises(ValueError):
        rms_error([], [])
    with pytest.raises(ValueError):
        rms_error([1.0], [1.0, 2.0])


def test_settling_hand_case():
    rep = _conv([10, 5, 2, 1.1, 1.05, 1.0, 1.0])
    assert rep.converged and rep.index == 3
    assert rep.band == pytest.approx(0.18)
    assert rep.e_at_convergence == 1.1
    assert rep.samples_at_convergence == 8
    assert rep.distance_at_convergence == pytest.approx(0.3)


def test_settling_late_and_monotone_increasing():
    # settles only at the last entry: inside the tail guard, not converged
    late = _conv([10, 9, 8, 7, 6, 5, 4, 3, 2, 1])
    assert not late.converged and late.index == 9
    up = _conv([1, 2, 3, 4, 5])
    assert not up.converged and up.samples_at_convergence is None


def test_settling_flat_series_converges_immediately():
    rep = _conv([0.5, 0.5, 0.5])
    assert rep.converged and rep.index == 0


def test_settling_validation():
    with pytest.raises(ValueError):
        _conv([1.0, 0.5])
    with pytest.raises(ValueError):
        settling_convergence([3, 2, 1], [0, 1], [1, 2, 3])


@given(st.lists(st.floats(0, 100, allow_nan=False), min_size=3, max_size=60))
def test_settling_index_is_first_of_settled_tail(errors):
    rep = _conv(errors)
    if rep.index is not None:
        limit = rep.ef + rep.band
        assert all(e <= limit for e in errors[rep.index:])
        if rep.index > 0:
            assert errors[rep.index - 1] > limit
        assert rep.converged == (rep.index < 0.9 * len(errors))


def test_improvement_ratio():
    assert improvement_ratio(2.0, 0.5) == 4.0
    assert improvement_ratio(1.0, 0.0) == math.inf
    with pytest.raises(ValueError):
        improvement_ratio(-1.0, 1.0)


def test_summarize_trials_quartiles():
    s = summarize_trials([1, 2, 3, 4])
    assert (s["min"], s["q1"], s["median"], s["q3"], s["max"]) == (1, 1.75, 2.5, 3.25, 4)
    assert s["mean"] == 2.5 and s["count"] == 4
    single = summarize_trials([7.0])
    assert single["q1"] == single["q3"] == 7.0
    with pytest.raises(ValueError):
        summarize_trials([])


def test_argmin_cell_near_tie_goes_low():
    f = build_parabola()
    v = np.full(f.spec.n_cells, 5.0)
    v[30] = 1.0
    v[12] = 1.0 * (1 + 1e-14)
    assert argmin_cell(v, f.spec) == f.spec.unlinear(12)


def test_min_identification_exact_means():
    f = build_townsend()
    rep = min_identification_from_means(f.values, f)
    assert rep.predicted == rep.true == (50, 26)
    assert rep.position_error == 0.0 and rep.value_error == 0.0


def test_min_identification_offset():
    f = build_parabola()
    means = np.array(f.values)
    means[f.spec.linear((13, 14))] = -1.0
    rep = min_identification_from_means(means, f)
    assert rep.position_error == pytest.approx(0.5)
    assert rep.value_error == pytest.approx(1.0)
    with pytest.raises(ValueError):
        min_identification_from_means(means[:-1], f)


def test_min_identification_rejects_off_grid_posterior():
    f = build_parabola()
    post = condition(TrainingSet(np.array([[0.033, 0.0]]), np.zeros(1)), Hyperparams(0.3, 1, 0.01))
    with pytest.raises(ValueError):
        min_identification(post, f)


def test_report_roundtrips():
    c = _conv([10, 5, 2, 1.1, 1.05, 1.0, 1.0])
    assert ConvergenceReport.from_dict(c.to_dict()) == c
    m = min_identification_from_means(build_parabola().values, build_parabola())
    assert MinIdReport.from_dict(m.to_dict()) == m


finite = st.floats(-1e3, 1e3, allow_nan=False)


@given(st.lists(st.tuples(finite, finite), min_size=1, max_size=30), st.floats(0.1, 10))
def test_rms_error_metric_properties(pairs, scale):
    p, t = np.array(pairs).T
    assert rms_error(p, t) == pytest.approx(rms_error(t, p))
    assert (rms_error(p, t) == 0) == bool(np.all(p == t))
    assert rms_error(scale * p, scale * t) == pytest.approx(scale * rms_error(p, t), rel=1e-9, abs=1e-9)


@given(st.floats(1e-6, 1e3), st.floats(0, 1e3))
def test_improvement_ratio_at_least_one(ef, gap):
    assert improvement_ratio(ef + gap, ef) >= 1


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=25), st.randoms())
def test_summarize_trials_permutation_invariant(values, rnd):
    shuffled = list(values)
    rnd.shuffle(shuffled)
    a, b = summarize_trials(values), summarize_trials(shuffled)
    for k in ("min", "q1", "median", "q3", "max", "count"):
        assert a[k] == b[k]
    assert a["mean"] == pytest.approx(b["mean"], rel=1e-12, abs=1e-6)


@given(st.floats(-100, 100))
def test_min_identification_shift_invariant(shift):
    from gpexplore.surfaces import SurfaceField

    f = build_parabola()
    shifted = SurfaceField(f.spec, np.asarray(f.values) + shift, "gridded")
    idx = [0, 37, 120, 220, 300, 440]
    X = f.spec.coords()[idx]
    hp = Hyperparams(0.5, 1.0, 0.01)
    a = min_identification(condition(TrainingSet(X, f.values[idx]), hp), f)
    b = min_identification(condition(TrainingSet(X, shifted.values[idx]), hp), shifted)
    assert a.position_error == b.position_error
