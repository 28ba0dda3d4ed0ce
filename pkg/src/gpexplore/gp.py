"""Exact Gaussian-process regression with an RBF covariance.

Targets are standardised (zero mean, unit variance over the current training
set) before inference and mapped back at prediction time, so
:class:`Hyperparams` live in standardised units: ``signal_variance`` and
``noise_variance`` are fractions of the sample variance and ``mean`` is in
units of the sample standard deviation. Pass ``normalize=False`` to work in raw
target units.

Training ascends the log marginal likelihood in the parameter vector
``theta = (log l, log sf2, log sn2, m)`` with the rule used by :func:`fit`:
an Adam direction (beta1=0.9, beta2=0.999, eps=1e-8, learning rate
``step_size``), projected onto :data:`LOG_BOUNDS`, accepted only if the
likelihood does not decrease; otherwise the step is halved up to
``MAX_HALVINGS`` times and the iteration is skipped if none is accepted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np
from scipy import linalg
from scipy.linalg import lapack

from .grid import CellIndex, GridSpec

JITTER_START = 1e-10
JITTER_CAP = 1e-4
VARIANCE_TOL = 1e-9
TIE_RTOL = 1e-12
MAX_HALVINGS = 2
ADAM_B1, ADAM_B2, ADAM_EPS = 0.9, 0.999, 1e-8
DEFAULT_NOISE_FLOOR = 1e-6
LOG_2PI = math.log(2 * math.pi)

# box constraints for the trainable vector, in standardised units
LOG_BOUNDS = np.array([
    [math.log(1e-3), math.log(1e3)],   # log lengthscale
    [math.log(1e-4), math.log(1e2)],   # log signal variance
    [math.log(1e-12), math.log(1e2)],  # log noise variance (raised to the noise floor in fit)
    [-1e3, 1e3],                        # constant mean
])


class NumericalError(ArithmeticError):
    """Covariance matrix could not be factorised even with the maximum jitter."""


class TrainingError(RuntimeError):
    def __init__(self, iteration: int, message: str):
        self.iteration = iteration
        super().__init__(f"iteration {iteration}: {message}")


@dataclass(frozen=True)
class Hyperparams:
    lengthscale: float
    signal_variance: float
    noise_variance: float
    mean: float = 0.0

    def __post_init__(self):
        vals = (self.lengthscale, self.signal_variance, self.noise_variance, self.mean)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"hyperparameters must be finite: {self}")
        if self.lengthscale <= 0 or self.signal_variance <= 0 or self.noise_variance < 0:
            raise ValueError(f"invalid hyperparameters: {self}")

    @classmethod
    def default_for(cls, spec: GridSpec) -> "Hyperparams":
        """Lengthscale at 20% of the domain diagonal, unit signal, 0.01 noise."""
        return cls(0.2 * spec.diagonal, 1.0, 0.01, 0.0)

    def to_theta(self, noise_floor: float = 0.0) -> np.ndarray:
        return np.array([math.log(self.lengthscale), math.log(self.signal_variance),
                         math.log(max(self.noise_variance, noise_floor, 1e-300)), self.mean])

    @classmethod
    def from_theta(cls, theta: Sequence[float]) -> "Hyperparams":
        return cls(math.exp(theta[0]), math.exp(theta[1]), math.exp(theta[2]), float(theta[3]))

    def to_dict(self) -> dict:
        return {"lengthscale": self.lengthscale, "signal_variance": self.signal_variance,
                "noise_variance": self.noise_variance, "mean": self.mean}

    @classmethod
    def from_dict(cls, d: dict) -> "Hyperparams":
        return cls(float(d["lengthscale"]), float(d["signal_variance"]),
                   float(d["noise_variance"]), float(d.get("mean", 0.0)))


@dataclass(frozen=True, eq=False)
class TrainingSet:
    """Stacked inputs ``X`` (n, 2) and targets ``Y`` (n,). Duplicate inputs are allowed."""

    X: np.ndarray
    Y: np.ndarray

    def __post_init__(self):
        X = np.array(self.X, dtype=float).reshape(-1, 2)
        Y = np.array(self.Y, dtype=float).ravel()
        if X.shape[0] < 1:
            raise ValueError("training set needs at least one point")
        if X.shape[0] != Y.shape[0]:
            raise ValueError(f"{X.shape[0]} inputs but {Y.shape[0]} targets")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
            raise ValueError("training data must be finite")
        X.setflags(write=False)
        Y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)

    def __len__(self) -> int:
        return self.Y.shape[0]


def sq_dists(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    A = np.asarray(A, dtype=float).reshape(-1, 2)
    B = np.asarray(B, dtype=float).reshape(-1, 2)
    d0 = A[:, None, 0] - B[None, :, 0]
    d1 = A[:, None, 1] - B[None, :, 1]
    return d0 * d0 + d1 * d1


def kernel(a: Sequence[float], b: Sequence[float], hp: Hyperparams) -> float:
    """RBF covariance ``sf2 * exp(-|a-b|^2 / (2 l^2))`` between two points."""
    d2 = (a[0] - b[0]) ** 2 + (a[1] - b[1]) ** 2
    return hp.signal_variance * math.exp(-d2 / (2.0 * hp.lengthscale ** 2))


def kernel_matrix(A, B, hp: Hyperparams) -> np.ndarray:
    return hp.signal_variance * np.exp(sq_dists(A, B) / (-2.0 * hp.lengthscale ** 2))


def factorize(K: np.ndarray, noise_variance: float, signal_variance: float,
              jitter: float = 0.0) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of ``K + (noise + jitter) I``.

    On failure jitter escalates from ``1e-10*sf2`` by factors of ten up to
    ``1e-4*sf2``. Returns the factor and the jitter actually used.
    """
    n = K.shape[0]
    levels = [jitter] if jitter > 0 else [0.0]
    j = JITTER_START * signal_variance
    while j <= JITTER_CAP * signal_variance * (1 + 1e-12):
        if j > levels[-1]:
            levels.append(j)
        j *= 10
    diag = np.arange(n)
    for jit in levels:
        A = K.copy()
        A[diag, diag] += noise_variance + jit
        try:
            return linalg.cholesky(A, lower=True, check_finite=False), jit
        except linalg.LinAlgError:
            continue
    raise NumericalError(f"covariance of {n} points not positive definite with jitter "
                         f"up to {JITTER_CAP * signal_variance:g}")


def _standardize(Y: np.ndarray, normalize: bool) -> tuple[float, float]:
    if not normalize:
        return 0.0, 1.0
    shift = float(np.mean(Y))
    scale = float(np.std(Y))
    if not scale > 0:
        scale = 1.0
    return shift, scale


def _lml_core(D: np.ndarray, z: np.ndarray, hp: Hyperparams, want_grad: bool = True):
    K = hp.signal_variance * np.exp(D / (-2.0 * hp.lengthscale ** 2))
    L, jit = factorize(K, hp.noise_variance, hp.signal_variance)
    r = z - hp.mean
    alpha = linalg.cho_solve((L, True), r, check_finite=False)
    n = z.shape[0]
    value = -0.5 * float(r @ alpha) - float(np.sum(np.log(np.diag(L)))) - 0.5 * n * LOG_2PI
    if not want_grad:
        return value, None
    # dpotri leaves the inverse in the lower triangle; L's upper triangle is zero
    Kinv_low, info = lapack.dpotri(L, lower=1)
    if info != 0:
        raise NumericalError(f"dpotri failed with info={info}")
    Kinv_diag = np.diag(Kinv_low)

    def trace_inv_times(M, M_diag):
        # tr(Kinv @ M) for symmetric M, using only the lower triangle of Kinv
        return 2.0 * float(np.vdot(Kinv_low, M)) - float(Kinv_diag @ M_diag)

    KD = K * D
    grad = np.array([
        0.5 * (float(alpha @ KD @ alpha) - trace_inv_times(KD, np.zeros(n))) / hp.lengthscale ** 2,
        0.5 * (float(alpha @ K @ alpha) - trace_inv_times(K, np.diag(K))),
        0.5 * hp.noise_variance * (float(alpha @ alpha) - float(np.sum(Kinv_diag))),
        float(np.sum(alpha)),
    ])
    return value, grad


def log_marginal_likelihood(ts: TrainingSet, hp: Hyperparams) -> tuple[float, np.ndarray]:
    """Gaussian log marginal likelihood of ``ts.Y`` (raw units) and its gradient.

    The gradient is with respect to ``(log l, log sf2, log sn2, m)``. Any jitter
    needed to factorise the covariance is treated as a constant.
    """
    return _lml_core(sq_dists(ts.X, ts.X), np.asarray(ts.Y, dtype=float), hp)


@dataclass(frozen=True, eq=False)
class GpPosterior:
    """A conditioned GP. Arrays are read-only; instances are safe to share."""

    X: np.ndarray
    Y: np.ndarray
    hyperparams: Hyperparams
    chol: np.ndarray
    alpha: np.ndarray
    y_shift: float
    y_scale: float
    jitter: float
    lml_history: tuple = field(default=())

    @property
    def n(self) -> int:
        return self.Y.shape[0]

    @property
    def training_set(self) -> TrainingSet:
        return TrainingSet(self.X, self.Y)


def _readonly(*arrays):
    for a in arrays:
        a.setflags(write=False)


def condition(ts: TrainingSet, hp: Hyperparams, normalize: bool = True,
              lml_history: tuple = ()) -> GpPosterior:
    """Posterior for fixed hyperparameters (no training)."""
    shift, scale = _standardize(ts.Y, normalize)
    z = (ts.Y - shift) / scale
    K = kernel_matrix(ts.X, ts.X, hp)
    L, jit = factorize(K, hp.noise_variance, hp.signal_variance)
    alpha = linalg.cho_solve((L, True), z - hp.mean, check_finite=False)
    X, Y = np.array(ts.X), np.array(ts.Y)
    _readonly(X, Y, L, alpha)
    return GpPosterior(X, Y, hp, L, alpha, shift, scale, jit, tuple(lml_history))


def fit(ts: TrainingSet, init: Hyperparams, iterations: int = 50, step_size: float = 0.1,
        normalize: bool = True, noise_floor: float = DEFAULT_NOISE_FLOOR) -> GpPosterior:
    """Train hyperparameters for exactly ``iterations`` ascent steps and condition on ``ts``.

    ``iterations=0`` conditions on ``init`` unchanged. The recorded
    ``lml_history`` holds the likelihood after every iteration and is
    non-decreasing by construction.
    """
    if iterations < 0:
        raise ValueError("iterations must be >= 0")
    if iterations == 0:
        return condition(ts, init, normalize)

    shift, scale = _standardize(ts.Y, normalize)
    z = (ts.Y - shift) / scale
    D = sq_dists(ts.X, ts.X)
    lo, hi = LOG_BOUNDS[:, 0].copy(), LOG_BOUNDS[:, 1].copy()
    lo[2] = max(lo[2], math.log(noise_floor)) if noise_floor > 0 else lo[2]

    def evaluate(theta, want_grad=True):
        return _lml_core(D, z, Hyperparams.from_theta(theta), want_grad)

    theta = np.clip(init.to_theta(noise_floor), lo, hi)
    try:
        value, grad = evaluate(theta)
    except NumericalError as exc:
        raise TrainingError(0, str(exc)) from exc
    if not (math.isfinite(value) and np.all(np.isfinite(grad))):
        raise TrainingError(0, "non-finite log marginal likelihood")

    m1 = np.zeros(4)
    m2 = np.zeros(4)
    history = []
    for t in range(1, iterations + 1):
        m1 = ADAM_B1 * m1 + (1 - ADAM_B1) * grad
        m2 = ADAM_B2 * m2 + (1 - ADAM_B2) * grad * grad
        step = step_size * (m1 / (1 - ADAM_B1 ** t)) / (np.sqrt(m2 / (1 - ADAM_B2 ** t)) + ADAM_EPS)
        for h in range(MAX_HALVINGS + 1):
            cand = np.clip(theta + step / 2 ** h, lo, hi)
            try:
                v, _ = evaluate(cand, want_grad=False)
            except NumericalError:
                continue
            if math.isfinite(v) and v >= value:
                try:
                    v, g = evaluate(cand)
                except NumericalError as exc:
                    raise TrainingError(t, str(exc)) from exc
                if not np.all(np.isfinite(g)):
                    raise TrainingError(t, "non-finite likelihood gradient")
                theta, value, grad = cand, v, g
                break
        history.append(value)
    return condition(ts, Hyperparams.from_theta(theta), normalize, tuple(history))


def _finalize_variance(var: np.ndarray) -> np.ndarray:
    if np.any(var < -VARIANCE_TOL):
        raise NumericalError(f"negative posterior variance {float(var.min()):.3e}")
    return np.maximum(var, 0.0)


def predict(post: GpPosterior, queries) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and (noisy-observation) variance at ``queries``, in target units."""
    Q = np.asarray(queries, dtype=float).reshape(-1, 2)
    if Q.shape[0] == 0:
        raise ValueError("predict needs at least one query")
    if not np.all(np.isfinite(Q)):
        raise ValueError("queries must be finite")
    hp = post.hyperparams
    Ks = kernel_matrix(post.X, Q, hp)
    mean = hp.mean + Ks.T @ post.alpha
    V = linalg.solve_triangular(post.chol, Ks, lower=True, check_finite=False)
    var = _finalize_variance(hp.signal_variance + hp.noise_variance - np.einsum("ij,ij->j", V, V))
    return post.y_shift + post.y_scale * mean, post.y_scale ** 2 * var


class VarianceSummary(NamedTuple):
    max_variance: float
    mean_variance: float
    argmax: CellIndex


def argmax_lowest_index(values: np.ndarray, linear_ids: np.ndarray) -> int:
    """Position of the maximum; near-ties (relative 1e-12) go to the lowest linear index."""
    top = float(np.max(values))
    tied = values >= top - TIE_RTOL * max(abs(top), 1e-300)
    cand = np.flatnonzero(tied)
    return int(cand[np.argmin(linear_ids[cand])])


def summarize_variance(variances: np.ndarray, cells: Sequence[Sequence[int]],
                       spec: GridSpec) -> VarianceSummary:
    lin = np.array([spec.linear(c) for c in cells])
    k = argmax_lowest_index(variances, lin)
    c = cells[k]
    return VarianceSummary(float(np.max(variances)), float(np.mean(variances)),
                           CellIndex(int(c[0]), int(c[1])))


def mean_variance_over(post: GpPosterior, cells: Sequence[Sequence[int]],
                       spec: GridSpec) -> VarianceSummary:
    if len(cells) == 0:
        raise ValueError("mean_variance_over needs at least one cell")
    coords = spec.coords()[[spec.linear(c) for c in cells]]
    _, var = predict(post, coords)
    return summarize_variance(var, cells, spec)


class GridTracker:
    """Mutable GP state for one running trial, with predictions cached over a grid.

    Appending a point with unchanged hyperparameters extends the Cholesky
    factor by one row and updates the cached grid variance in O(n*N) work;
    :meth:`reset` rebuilds everything after hyperparameters change. Results
    match :func:`condition` + :func:`predict` to rounding error. Not thread-safe;
    each trial owns its tracker.
    """

    def __init__(self, spec: GridSpec, hp: Hyperparams, normalize: bool = True,
                 capacity: int = 64):
        self.spec = spec
        self.grid = spec.coords()
        self.normalize = normalize
        self.hp = hp
        self.n = 0
        self.jitter = 0.0
        self._alloc(max(capacity, 8))
        self._alpha = None
        self._shift, self._scale = 0.0, 1.0
        self.lml_history: tuple = ()

    def _alloc(self, cap: int) -> None:
        N = self.grid.shape[0]
        self._X = np.zeros((cap, 2))
        self._Y = np.zeros(cap)
        self._L = np.zeros((cap, cap))
        self._Kq = np.zeros((cap, N))
        self._Vq = np.zeros((cap, N))
        self._vsum = np.zeros(N)

    def _grow(self) -> None:
        n, old = self.n, (self._X, self._Y, self._L, self._Kq, self._Vq)
        self._alloc(2 * self._X.shape[0])
        self._X[:n], self._Y[:n] = old[0][:n], old[1][:n]
        self._L[:n, :n] = old[2][:n, :n]
        self._Kq[:n], self._Vq[:n] = old[3][:n], old[4][:n]
        self._vsum = np.einsum("ij,ij->j", self._Vq[:n], self._Vq[:n])

    @property
    def X(self) -> np.ndarray:
        return self._X[:self.n]

    @property
    def Y(self) -> np.ndarray:
        return self._Y[:self.n]

    def training_set(self) -> TrainingSet:
        return TrainingSet(self.X.copy(), self.Y.copy())

    def reset(self, hp: Hyperparams, lml_history: tuple = (),
              chol: Optional[np.ndarray] = None, jitter: float = 0.0) -> None:
        """Refactor from scratch under new hyperparameters (or adopt ``chol``)."""
        self.hp = hp
        self.lml_history = tuple(lml_history)
        n = self.n
        # fresh buffers so earlier posterior snapshots stay valid
        old_X, old_Y = self._X[:n].copy(), self._Y[:n].copy()
        self._alloc(self._X.shape[0])
        self._X[:n], self._Y[:n] = old_X, old_Y
        if n == 0:
            return
        if chol is None:
            K = kernel_matrix(old_X, old_X, hp)
            L, self.jitter = factorize(K, hp.noise_variance, hp.signal_variance)
        else:
            L, self.jitter = chol, jitter
        self._L[:n, :n] = L
        self._Kq[:n] = kernel_matrix(old_X, self.grid, hp)
        self._Vq[:n] = linalg.solve_triangular(L, self._Kq[:n], lower=True, check_finite=False)
        self._vsum = np.einsum("ij,ij->j", self._Vq[:n], self._Vq[:n])
        self._alpha = None

    def add(self, x: Sequence[float], y: float) -> None:
        hp = self.hp
        if self.n == self._X.shape[0]:
            self._grow()
        n = self.n
        x = np.asarray(x, dtype=float)
        self._X[n], self._Y[n] = x, y
        self.n = n + 1
        self._alpha = None
        if n == 0:
            self.reset(hp, self.lml_history)
            return
        k = kernel_matrix(self._X[:n], x[None, :], hp)[:, 0]
        l = linalg.solve_triangular(self._L[:n, :n], k, lower=True, check_finite=False)
        d2 = hp.signal_variance + hp.noise_variance + self.jitter - float(l @ l)
        if not d2 > JITTER_START * hp.signal_variance:
            self.reset(hp, self.lml_history)
            return
        d = math.sqrt(d2)
        self._L[n, :n] = l
        self._L[n, n] = d
        kq = kernel_matrix(x[None, :], self.grid, hp)[0]
        vq = (kq - l @ self._Vq[:n]) / d
        self._Kq[n] = kq
        self._Vq[n] = vq
        self._vsum += vq * vq

    def _solve(self) -> None:
        if self._alpha is not None:
            return
        self._shift, self._scale = _standardize(self.Y, self.normalize)
        z = (self.Y - self._shift) / self._scale
        self._alpha = linalg.cho_solve((self._L[:self.n, :self.n], True), z - self.hp.mean,
                                       check_finite=False)

    def grid_predictions(self) -> tuple[np.ndarray, np.ndarray]:
        """Mean and variance at every grid cell (linear-index order), target units."""
        if self.n == 0:
            raise ValueError("no training data")
        self._solve()
        hp = self.hp
        mean = hp.mean + self._alpha @ self._Kq[:self.n]
        var = _finalize_variance(hp.signal_variance + hp.noise_variance - self._vsum)
        return self._shift + self._scale * mean, self._scale ** 2 * var

    def posterior(self) -> GpPosterior:
        """Snapshot of the current state; later appends do not alter it."""
        self._solve()
        n = self.n
        X, Y, alpha = self.X.copy(), self.Y.copy(), self._alpha.copy()
        L = self._L[:n, :n]
        _readonly(X, Y, alpha)
        L = L.view()
        L.setflags(write=False)
        return GpPosterior(X, Y, self.hp, L, alpha, self._shift, self._scale, self.jitter,
                           self.lml_history)

    def load(self, post: GpPosterior) -> None:
        """Adopt a freshly fitted posterior (same training data) and rebuild caches."""
        if post.n != self.n:
            raise ValueError("posterior was fitted on a different training set")
        self.reset(post.hyperparams, post.lml_history, post.chol, post.jitter)
