"""Ridge leverage scores, projection-cost preserving column samples, and
online rank-k subspace tracking."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .core import LossModel, Stream, run_online
from .coreset import DrawCoupler, categorical, perturbed_rescaling, sample_size
from .rng import substream

# relative eigenvalue cutoff for pseudoinverses
PINV_RTOL = 1e-12


class DegenerateMatrixWarning(UserWarning):
    pass


@dataclass(frozen=True)
class ColumnSketch:
    matrix: np.ndarray
    source_indices: np.ndarray
    weights: np.ndarray

    @property
    def m(self):
        return len(self.weights)


@dataclass(frozen=True)
class Projector:
    """Orthonormal basis ``Z`` (d x k) of a rank-k subspace."""

    basis: np.ndarray

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.basis, dtype=dtype)

    @property
    def k(self):
        return self.basis.shape[1]

    def matrix(self):
        return self.basis @ self.basis.T


def _columns(A):
    A = np.asarray(A, dtype=float)
    if A.ndim != 2:
        raise ValueError("expected a d x t matrix")
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix entries must be finite")
    return A


def ridge_leverage_scores(A, k, full_output=False):
    """``tau_i = a_i^T (A A^T + (||A - A_k||_F^2 / k) I)^+ a_i`` per column.

    The pseudoinverse drops eigenvalues below ``1e-12`` times the largest.
    An all-zero ``A`` gives all-zero scores and ``degenerate=True``.
    """
    A = _columns(A)
    d, t = A.shape
    if not 1 <= k <= min(d, t):
        raise ValueError(f"need 1 <= k <= min(d, t) = {min(d, t)}, got {k}")
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    if s.size == 0 or s[0] == 0:
        if full_output:
            return np.zeros(t), True
        warnings.warn("all-zero matrix: ridge leverage scores are all 0", DegenerateMatrixWarning)
        return np.zeros(t)
    ridge = math.fsum(s[k:] ** 2) / k
    eig = s ** 2 + ridge
    inv = np.where(eig > PINV_RTOL * eig.max(), 1.0 / eig, 0.0)
    # a_i = U diag(s) v_i, so tau_i = sum_j s_j^2 v_ij^2 / (s_j^2 + ridge)
    tau = (Vt ** 2).T @ (s ** 2 * inv)
    tau = np.clip(tau, 0.0, 1.0)
    return (tau, False) if full_output else tau


def pcp_sample(A, k, m, epsilon, seed, *, scheme="normalized", coupler=None, key="pcp") -> ColumnSketch:
    """Sample ``m`` columns by ridge leverage and rescale them (see
    :func:`perturbed_rescaling` for ``scheme``; ``"source"`` normalises by the
    column count of ``A``).  Repeated draws occupy separate slots."""
    A = _columns(A)
    if m < 1:
        raise ValueError("m must be at least 1")
    tau = ridge_leverage_scores(A, k, full_output=True)[0]
    total = tau.sum()
    if total <= 0:
        raise ValueError("zero leverage mass")
    rng = seed if isinstance(seed, np.random.Generator) else substream(seed, "pcp_sample")
    p = tau / total
    idx = categorical(p, m, rng) if coupler is None else coupler.draw(key, p, m, rng)
    w = perturbed_rescaling(p[idx], m, A.shape[1], epsilon, rng, scheme)
    return ColumnSketch(A[:, idx] * w, idx, w)


def _fix_signs(Z):
    pivot = np.argmax(np.abs(Z), axis=0)
    signs = np.sign(Z[pivot, np.arange(Z.shape[1])])
    signs[signs == 0] = 1.0
    return Z * signs


def top_k_left_singular(M, k, full_output=False):
    """Top-k left singular subspace of ``M``, each basis column signed so its
    largest-magnitude entry is positive.  Missing rank is padded with
    orthonormal complement directions and reported as ``padded``."""
    M = _columns(M)
    d = M.shape[0]
    if not 1 <= k <= d:
        raise ValueError(f"need 1 <= k <= d = {d}, got {k}")
    if M.shape[1] == 0:
        Z, padded = np.eye(d)[:, :k], True
    else:
        U, s, _ = np.linalg.svd(M, full_matrices=True)
        tol = max(M.shape) * np.finfo(float).eps * (s[0] if s.size else 0.0)
        rank = int(np.count_nonzero(s > tol))
        Z, padded = U[:, :k], rank < k
    Z = _fix_signs(Z)
    if full_output:
        return Projector(Z), padded
    return Projector(Z)


def projection_residuals(Z, points):
    """``||a - Z Z^T a||`` for each row ``a`` of ``points``."""
    B = np.asarray(Z, dtype=float)
    points = np.asarray(points, dtype=float)
    if points.shape[-1] != B.shape[0]:
        raise ValueError("dimension mismatch between vector and projector")
    resid = points - (points @ B) @ B.T
    return np.sqrt((resid ** 2).sum(axis=-1))


def projection_loss(Z: Projector, a) -> float:
    return float(projection_residuals(Z, np.asarray(a, dtype=float)[None, :])[0])


def projection_loss_model(clip=False):
    return LossModel(projection_residuals, clip=clip)


def frobenius_residual(Z, A):
    """``||A - Z Z^T A||_F`` for a d x t matrix ``A``."""
    A = _columns(A)
    B = np.asarray(Z, dtype=float)
    return float(np.linalg.norm(A - B @ (B.T @ A)))


def default_projector(d, k):
    return Projector(np.eye(d)[:, :k])


class LowRankSolver:
    """Offline step: ridge-leverage sketch of the prefix, top-k subspace."""

    def __init__(self, k, epsilon, m, mode="fresh", scheme="normalized"):
        if mode not in ("fresh", "lazy"):
            raise ValueError(f"unknown mode {mode!r}")
        self.k, self.epsilon, self.m = k, epsilon, m
        self.mode, self.scheme = mode, scheme
        self.coupler = DrawCoupler() if mode == "lazy" else None
        self._last = None

    def __call__(self, prefix, rng):
        t1, d = prefix.shape
        if t1 == 0:
            return default_projector(d, self.k)
        A = prefix.T
        k_eff = min(self.k, t1, d)
        tau = ridge_leverage_scores(A, k_eff, full_output=True)[0]
        if tau.sum() <= 0:
            return default_projector(d, self.k)
        m = min(self.m, t1)
        p = tau / tau.sum()
        idx = categorical(p, m, rng) if self.coupler is None else self.coupler.draw("pcp", p, m, rng)
        key = tuple(np.sort(idx).tolist())
        if self.mode == "lazy" and self._last is not None and self._last[0] == key:
            return self._last[1]
        w = perturbed_rescaling(p[idx], m, t1, self.epsilon, rng, self.scheme)
        Z = top_k_left_singular(A[:, idx] * w, self.k, full_output=True)[0]
        self._last = (key, Z)
        return Z


def online_lowrank(stream: Stream, k, epsilon, mode="fresh", seed=0, *, scheme="normalized",
                   const_m=1.0, clip=False, prefix_opt=None, timing=False):
    """Online rank-k approximation of a column stream.

    The stream's points are the columns ``a_t``.  Each step samples
    ``m = ceil(c eps^-2 k ln(k / delta))`` columns of the prefix
    (``delta = eps / (10 n)``, capped at ``t - 1``) and plays the top-k left
    singular subspace of the sketch.
    """
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must lie in (0, 1)")
    n = len(stream)
    m = sample_size(epsilon, k, epsilon / (10.0 * n), const_m)
    solver = LowRankSolver(k, epsilon, m, mode, scheme)
    loss = projection_loss_model(clip)
    ledger = run_online(solver, stream, loss, seed, prefix_opt=prefix_opt, timing=timing,
                        epsilon=epsilon)
    ledger.extras.update(clip_events=loss.clip_events, m=m)
    return ledger


def lowrank_opt(columns, k, clip=False, refine=50):
    """Best fixed rank-k subspace for the summed column loss.

    Starts from the exact top-k subspace (optimal for the Frobenius
    objective) and runs ``refine`` reweighted-SVD steps on the unsquared
    objective; each step cannot increase it.  The result is an upper bound
    on the true optimum.
    """
    columns = np.asarray(columns, dtype=float)
    loss = projection_loss_model(clip)
    Z = top_k_left_singular(columns.T, k)
    best = math.fsum(projection_residuals(Z, columns))
    for _ in range(refine):
        r = projection_residuals(Z, columns)
        w = 1.0 / np.sqrt(np.maximum(r, 1e-12))
        cand = top_k_left_singular(columns.T * w, k)
        val = math.fsum(projection_residuals(cand, columns))
        if val >= best * (1 - 1e-12):
            break
        Z, best = cand, val
    return Z, loss.aggregate(Z, columns)
