"""Leverage-score row sketches, sketched least squares, and online
regression with absolute loss."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize, sparse

from .core import LossModel, Stream, run_online
from .coreset import DrawCoupler, categorical, perturbed_rescaling, sample_size
from .rng import substream


@dataclass(frozen=True)
class RowMatrix:
    """Design rows ``a_i`` stacked as an ``(n, d)`` array with targets ``b``."""

    rows: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=float)
        if rows.ndim == 1:
            rows = rows.reshape(-1, 1)
        targets = np.asarray(self.targets, dtype=float).reshape(-1)
        if len(rows) != len(targets):
            raise ValueError("rows and targets differ in length")
        if not (np.all(np.isfinite(rows)) and np.all(np.isfinite(targets))):
            raise ValueError("entries must be finite")
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "targets", targets)

    @classmethod
    def from_points(cls, points):
        """Split ``[a, b]`` stream points into rows and targets."""
        points = np.asarray(points, dtype=float)
        return cls(points[:, :-1], points[:, -1])

    @property
    def n(self):
        return self.rows.shape[0]

    @property
    def d(self):
        return self.rows.shape[1]


@dataclass(frozen=True)
class RowSketch:
    """Sparse sketch ``S``: slot ``j`` is ``weights[j] * e_{indices[j]}^T``."""

    indices: np.ndarray
    weights: np.ndarray

    @property
    def m(self):
        return len(self.indices)

    @property
    def selected(self):
        return list(zip(self.indices.tolist(), self.weights.tolist()))

    def apply(self, M):
        M = np.asarray(M, dtype=float)
        w = self.weights if M.ndim == 1 else self.weights[:, None]
        return M[self.indices] * w

    @classmethod
    def identity(cls, n):
        return cls(np.arange(n), np.ones(n))


def _rows(A):
    if isinstance(A, RowMatrix):
        return A.rows
    A = np.asarray(A, dtype=float)
    return A.reshape(-1, 1) if A.ndim == 1 else A


def _rank(s, shape):
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.count_nonzero(s > max(shape) * np.finfo(float).eps * s[0]))


def leverage_scores(A, full_output=False):
    """Squared row norms of an orthonormal basis for the column space of A."""
    A = _rows(A)
    if A.shape[0] == 0:
        raise ValueError("empty matrix")
    U, s, _ = np.linalg.svd(A, full_matrices=False)
    r = _rank(s, A.shape)
    tau = np.clip((U[:, :r] ** 2).sum(axis=1), 0.0, 1.0)
    return (tau, r == 0) if full_output else tau


def sketch_rows(A, m, epsilon, seed, *, scheme="normalized", coupler=None, key="rows") -> RowSketch:
    """Draw ``m`` rows by leverage and rescale them (see
    :func:`perturbed_rescaling`)."""
    A = _rows(A)
    if m < 1:
        raise ValueError("m must be at least 1")
    tau = leverage_scores(A, full_output=True)[0]
    total = tau.sum()
    if total <= 0:
        raise ValueError("zero leverage mass")
    rng = seed if isinstance(seed, np.random.Generator) else substream(seed, "sketch_rows")
    p = tau / total
    idx = categorical(p, m, rng) if coupler is None else coupler.draw(key, p, m, rng)
    return RowSketch(idx, perturbed_rescaling(p[idx], m, len(A), epsilon, rng, scheme))


def sketched_solve(S: RowSketch, A: RowMatrix, full_output=False):
    """Minimum-norm least squares for ``min ||S A x - S b||`` (SVD based).

    With ``full_output`` also returns whether ``S A`` was rank deficient.
    """
    SA, Sb = S.apply(A.rows), S.apply(A.targets)
    if not np.any(SA):
        raise ValueError("sketched matrix is zero")
    x, _, rank, _ = np.linalg.lstsq(SA, Sb, rcond=None)
    return (x, rank < A.d) if full_output else x


def regression_loss(x, a, b, clip=False) -> float:
    x, a = np.asarray(x, dtype=float), np.asarray(a, dtype=float)
    if x.shape != a.shape:
        raise ValueError("dimension mismatch")
    v = abs(float(a @ x) - float(b))
    return min(v, 1.0) if clip else v


def _residuals(x, points):
    return np.abs(points[:, :-1] @ np.asarray(x, dtype=float) - points[:, -1])


def regression_loss_model(clip=True):
    """Loss over stream points ``[a, b]``."""
    return LossModel(_residuals, clip=clip)


class RegressionSolver:
    """Offline step: leverage sketch of the prefix rows, sketched solve."""

    def __init__(self, epsilon, m, mode="fresh", scheme="normalized"):
        if mode not in ("fresh", "lazy"):
            raise ValueError(f"unknown mode {mode!r}")
        self.epsilon, self.m, self.mode, self.scheme = epsilon, m, mode, scheme
        self.coupler = DrawCoupler() if mode == "lazy" else None
        self._last = None
        self.rank_deficient = 0

    def __call__(self, prefix, rng):
        d = prefix.shape[1] - 1
        if len(prefix) == 0:
            return np.zeros(d)
        A = RowMatrix.from_points(prefix)
        tau = leverage_scores(A.rows, full_output=True)[0]
        if tau.sum() <= 0:
            return np.zeros(d)
        m = min(self.m, len(prefix))
        p = tau / tau.sum()
        idx = categorical(p, m, rng) if self.coupler is None else self.coupler.draw("rows", p, m, rng)
        key = tuple(np.sort(idx).tolist())
        if self.mode == "lazy" and self._last is not None and self._last[0] == key:
            return self._last[1]
        S = RowSketch(idx, perturbed_rescaling(p[idx], m, len(prefix), self.epsilon, rng, self.scheme))
        x, deficient = sketched_solve(S, A, full_output=True)
        self.rank_deficient += int(deficient)
        self._last = (key, x)
        return x


def online_regression(stream: Stream, epsilon, mode="fresh", seed=0, *, scheme="normalized",
                      const_m=1.0, clip=True, prefix_opt=None, timing=False):
    """Online regression over a stream of ``[a, b]`` points.

    Each step samples ``m = ceil(c eps^-2 d ln(d / delta))`` prefix rows
    (``delta = eps / (10 n)``, capped at ``t - 1``) and plays the sketched
    least-squares solution; ``x = 0`` before any data.
    """
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must lie in (0, 1)")
    n, d = len(stream), stream.source.dim - 1
    if d < 1:
        raise ValueError("points need at least one feature and a target")
    m = sample_size(epsilon, d, epsilon / (10.0 * n), const_m)
    solver = RegressionSolver(epsilon, m, mode, scheme)
    loss = regression_loss_model(clip)
    ledger = run_online(solver, stream, loss, seed, prefix_opt=prefix_opt, timing=timing,
                        epsilon=epsilon)
    ledger.extras.update(clip_events=loss.clip_events, m=m, rank_deficient=solver.rank_deficient)
    return ledger


def least_absolute_deviation(A: RowMatrix):
    """Exact minimiser of ``sum_i |a_i^T x - b_i|`` by linear programming."""
    n, d = A.n, A.d
    # variables (x, e); a x - e <= b and -a x - e <= -b
    I = sparse.identity(n, format="csr")
    Ar = sparse.csr_matrix(A.rows)
    A_ub = sparse.vstack([sparse.hstack([Ar, -I]), sparse.hstack([-Ar, -I])], format="csr")
    b_ub = np.concatenate([A.targets, -A.targets])
    c = np.concatenate([np.zeros(d), np.ones(n)])
    bounds = [(None, None)] * d + [(0, None)] * n
    res = optimize.linprog(c, A_ub=A_ub, b_ub=b_ub, bounds=bounds, method="highs")
    if res.status != 0:
        raise RuntimeError(f"LAD solve failed: {res.message}")
    return res.x[:d]


def regression_opt(points, clip=True, oracle="lad"):
    """Best fixed ``x`` for the summed absolute loss and its loss.

    ``oracle="lad"`` solves the unclipped problem exactly; ``"lstsq"`` uses
    ordinary least squares, which only upper-bounds the optimum.
    """
    A = RowMatrix.from_points(points)
    if oracle == "lad":
        x = least_absolute_deviation(A)
    elif oracle == "lstsq":
        x = np.linalg.lstsq(A.rows, A.targets, rcond=None)[0]
    else:
        raise ValueError(f"unknown oracle {oracle!r}")
    return x, regression_loss_model(clip).aggregate(x, points)
