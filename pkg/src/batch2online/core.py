"""Problem abstractions and the generic batch-to-online driver.

The driver in :func:`run_online` is the whole online algorithm: at step ``t``
it hands the offline solver the points seen so far, records the loss of the
returned parameter on the next point, and moves on.  Everything else here is
bookkeeping for regret and inconsistency.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

from .rng import substream


class EmptyStreamError(ValueError):
    pass


class SolverError(RuntimeError):
    """An offline solver failed inside :func:`run_online`."""

    def __init__(self, step, cause):
        super().__init__(f"solver failed at step {step}: {cause!r}")
        self.step = step
        self.cause = cause


@dataclass(frozen=True)
class Dataset:
    """An ordered collection of ``n`` points in ``R^dim``.

    ``ids`` are the original 0-based indices of the points.  Deletion views
    keep them, so outputs computed on ``X`` and on ``X`` minus one point can
    be compared outcome by outcome.
    """

    points: np.ndarray
    ids: Optional[np.ndarray] = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts.reshape(-1, 1)
        if pts.ndim != 2:
            raise ValueError(f"points must be a 2-d array, got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("points must be finite")
        ids = np.arange(len(pts)) if self.ids is None else np.asarray(self.ids, dtype=np.int64)
        if ids.shape != (len(pts),):
            raise ValueError("ids must have one entry per point")
        pts.setflags(write=False)
        ids.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "ids", ids)

    @classmethod
    def empty(cls, dim):
        return cls(np.empty((0, dim)))

    @property
    def n(self):
        return self.points.shape[0]

    @property
    def dim(self):
        return self.points.shape[1]

    def __len__(self):
        return self.n

    def without(self, i):
        """The deletion view ``X^(i)``: drop the point at position ``i``."""
        if not 0 <= i < self.n:
            raise IndexError(i)
        keep = np.r_[0:i, i + 1:self.n]
        return Dataset(self.points[keep], self.ids[keep])

    def take(self, positions):
        positions = np.asarray(positions, dtype=np.int64)
        return Dataset(self.points[positions], self.ids[positions])


class LossModel:
    """A per-point loss ``l(theta, x)`` and its sum over a dataset.

    ``batch(theta, points)`` must return one loss per row of ``points``.  With
    ``clip=True`` the values are clipped to ``[0, 1]`` and every clipped value
    increments ``clip_events``; library users who certify boundedness leave it
    off.
    """

    def __init__(self, batch: Callable, clip: bool = False):
        self._batch = batch
        self.clip = clip
        self.clip_events = 0

    def values(self, theta, points):
        points = points.points if isinstance(points, Dataset) else np.asarray(points, dtype=float)
        if points.ndim == 1:
            points = points[None, :]
        vals = np.asarray(self._batch(theta, points), dtype=float)
        if self.clip:
            over = (vals > 1.0) | (vals < 0.0)
            self.clip_events += int(np.count_nonzero(over))
            vals = np.clip(vals, 0.0, 1.0)
        return vals

    def evaluate(self, theta, x):
        return float(self.values(theta, np.asarray(x, dtype=float)[None, :])[0])

    def aggregate(self, theta, points):
        return math.fsum(self.values(theta, points))


@dataclass
class RegretLedger:
    """Per-step record of one online run."""

    step_losses: list = field(default_factory=list)
    prefix_opt: list = field(default_factory=list)
    changed: list = field(default_factory=list)
    epsilon: float = 0.0
    seed: Optional[int] = None
    wall_ms: list = field(default_factory=list)
    extras: dict = field(default_factory=dict)

    @property
    def n(self):
        return len(self.step_losses)

    def cumulative(self):
        """Running totals, accumulated left to right exactly as written to CSV."""
        out, acc = [], 0.0
        for v in self.step_losses:
            acc = acc + v
            out.append(acc)
        return out

    def total_loss(self):
        return math.fsum(self.step_losses)


@dataclass(frozen=True)
class Stream:
    """A dataset presented in a fixed order, one point at a time."""

    order: np.ndarray
    source: Dataset

    def __post_init__(self):
        order = np.asarray(self.order, dtype=np.int64)
        if sorted(order.tolist()) != list(range(self.source.n)):
            raise ValueError("order must be a permutation of range(n)")
        object.__setattr__(self, "order", order)

    def __len__(self):
        return len(self.order)

    def __iter__(self) -> Iterator[np.ndarray]:
        for i in self.order:
            yield self.source.points[i]

    def ordered(self):
        return self.source.take(self.order)


def random_order(dataset: Dataset, seed) -> Stream:
    """Uniformly random arrival order (Fisher-Yates on the seeded stream)."""
    if dataset.n == 0:
        raise EmptyStreamError("empty stream")
    rng = substream(seed, "order")
    order = np.arange(dataset.n)
    for i in range(dataset.n - 1, 0, -1):
        j = int(rng.integers(0, i + 1))
        order[i], order[j] = order[j], order[i]
    return Stream(order, dataset)


def fixed_order(dataset: Dataset, order=None) -> Stream:
    if dataset.n == 0:
        raise EmptyStreamError("empty stream")
    return Stream(np.arange(dataset.n) if order is None else order, dataset)


def _as_array(theta):
    return np.asarray(theta, dtype=float)


def params_equal(a, b):
    """Bitwise equality of two parameters."""
    a, b = _as_array(a), _as_array(b)
    return a.shape == b.shape and a.tobytes() == b.tobytes()


def params_close(a, b, tol=1e-12):
    a, b = _as_array(a), _as_array(b)
    return a.shape == b.shape and bool(np.all(np.abs(a - b) <= tol))


def run_online(
    solver: Callable,
    stream: Stream,
    loss: LossModel,
    seed,
    *,
    same: Callable = params_equal,
    prefix_opt: Optional[Callable] = None,
    timing: bool = False,
    epsilon: float = 0.0,
) -> RegretLedger:
    """Run an offline solver online over ``stream``.

    ``solver(prefix, rng)`` receives the ``(t-1, dim)`` array of points seen
    before step ``t`` (empty at ``t = 1``) and a generator drawn from the
    ``("step", t)`` substream of ``seed``.  It must return a parameter for any
    prefix, including the empty one.  ``prefix_opt(prefix)``, when given, is
    called on ``X_t`` after the loss is recorded.
    """
    dim = stream.source.dim
    seen = np.empty((len(stream), dim))
    ledger = RegretLedger(epsilon=epsilon, seed=seed)
    prev = None
    for t, x in enumerate(stream, start=1):
        start = time.perf_counter()
        try:
            theta = solver(seen[: t - 1], substream(seed, "step", t))
        except Exception as exc:
            raise SolverError(t, exc) from exc
        ledger.step_losses.append(loss.evaluate(theta, x))
        # x only joins the visible prefix after its loss is recorded
        seen[t - 1] = x
        if prev is not None:
            ledger.changed.append(not same(prev, theta))
        prev = theta
        ledger.prefix_opt.append(None if prefix_opt is None else float(prefix_opt(seen[:t])))
        if timing:
            ledger.wall_ms.append((time.perf_counter() - start) * 1e3)
    return ledger


def epsilon_regret(ledger: RegretLedger, opt_n: float, epsilon: float) -> float:
    """Cumulative loss minus ``(1 + epsilon)`` times the hindsight optimum."""
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    if opt_n < 0:
        raise ValueError("opt_n must be non-negative")
    return ledger.total_loss() - (1.0 + epsilon) * opt_n


def inconsistency(ledger: RegretLedger) -> int:
    return int(sum(bool(c) for c in ledger.changed))


def brute_force_opt(loss: LossModel, dataset, candidates: Sequence):
    """Best candidate parameter by aggregate loss; ties go to the lowest index."""
    if len(candidates) == 0:
        raise ValueError("empty candidate set")
    best, best_val = None, math.inf
    for theta in candidates:
        val = loss.aggregate(theta, dataset)
        if val < best_val:
            best, best_val = theta, val
    return best, best_val
