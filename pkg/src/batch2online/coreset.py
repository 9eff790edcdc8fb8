"""Sensitivity sampling, total variation, and average-sensitivity estimation."""
from __future__ import annotations

import itertools
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .core import Dataset
from .rng import substream


class DegenerateProfileError(ValueError):
    pass


@dataclass(frozen=True)
class SensitivityProfile:
    sigma: np.ndarray
    total: float
    probs: np.ndarray

    @classmethod
    def from_sigma(cls, sigma):
        sigma = np.asarray(sigma, dtype=float)
        if np.any(sigma < 0) or not np.all(np.isfinite(sigma)):
            raise ValueError("sensitivities must be finite and non-negative")
        total = math.fsum(sigma)
        if total <= 0:
            raise DegenerateProfileError("degenerate sensitivities")
        return cls(sigma, total, sigma / total)

    @classmethod
    def uniform(cls, n):
        return cls.from_sigma(np.ones(n))

    def __len__(self):
        return len(self.sigma)


@dataclass
class WeightedCoreset:
    """Positions into a dataset with positive weights.

    ``draws`` keeps the sampled positions in draw order; repeated draws of a
    point accumulate onto a single entry of ``entries``.
    """

    entries: dict = field(default_factory=dict)
    m: int = 0
    epsilon: float = 0.0
    draws: tuple = ()

    @property
    def indices(self):
        return np.fromiter(self.entries.keys(), dtype=np.int64, count=len(self.entries))

    @property
    def weights(self):
        return np.fromiter(self.entries.values(), dtype=float, count=len(self.entries))

    def multiset(self):
        return tuple(sorted(self.draws))

    def total_weight(self):
        return math.fsum(self.entries.values())


def categorical(p, size, rng):
    """Inverse-CDF draws; zero-probability entries are never returned."""
    cdf = np.cumsum(p)
    cdf = cdf / cdf[-1]
    idx = np.searchsorted(cdf, rng.random(size), side="right")
    return np.minimum(idx, len(p) - 1)


class DrawCoupler:
    """Maximal coupling of categorical draws across successive calls.

    Each slot ``j`` remembers the index it drew last time and the law it was
    drawn from.  Under a new law ``p`` the old index ``i`` is kept with
    probability ``min(1, p[i] / p_old[i])`` and otherwise replaced by a draw
    from the normalised surplus ``(p - p_old)_+``.  The new draw has law ``p``
    exactly, and it differs from the old one with probability ``TV(p_old, p)``.
    Laws may grow by appending outcomes (new points arriving in a stream).
    """

    def __init__(self):
        self._state = {}

    def draw(self, key, p, m, rng):
        p = np.asarray(p, dtype=float)
        p = p / p.sum()
        prev = self._state.get(key)
        out = np.empty(m, dtype=np.int64)
        start = 0
        if prev is not None and len(prev[0]) <= len(p):
            p_old = np.zeros_like(p)
            p_old[: len(prev[0])] = prev[0]
            old = prev[1][:m]
            start = len(old)
            u = rng.random(start)
            keep = u * p_old[old] < p[old]
            out[:start] = old
            n_swap = int(np.count_nonzero(~keep))
            if n_swap:
                surplus = np.maximum(p - p_old, 0.0)
                out[:start][~keep] = categorical(surplus, n_swap, rng)
        if start < m:
            out[start:] = categorical(p, m - start, rng)
        self._state[key] = (p, out.copy())
        return out

    def reset(self):
        self._state.clear()


def sensitivity_sample(X, profile: SensitivityProfile, m, epsilon, seed, *,
                       verbatim=False, coupler=None, key="sample"):
    """Importance-sample ``m`` points of ``X`` by sensitivity.

    Each draw of ``x`` picks ``p_tilde`` uniformly from
    ``[p(x), (1 + epsilon/2) p(x)]`` and adds ``1 / (m p_tilde)`` to the
    weight of ``x``, so the weighted loss estimates the full loss.  With
    ``verbatim=True`` the increment is ``1 / p_tilde`` (no ``1/m``).
    ``seed`` may be an int or a Generator.
    """
    n = X.n if isinstance(X, Dataset) else len(X)
    if m < 1:
        raise ValueError("m must be at least 1")
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must lie in (0, 1)")
    if len(profile) != n:
        raise ValueError("profile does not match dataset")
    rng = seed if isinstance(seed, np.random.Generator) else substream(seed, "sensitivity_sample")
    p = profile.probs
    if coupler is None:
        draws = categorical(p, m, rng)
    else:
        draws = coupler.draw(key, p, m, rng)
    p_tilde = p[draws] * (1.0 + rng.random(m) * (epsilon / 2.0))
    inc = 1.0 / p_tilde if verbatim else 1.0 / (m * p_tilde)
    entries = {}
    for i, w in zip(draws.tolist(), inc.tolist()):
        entries[i] = entries.get(i, 0.0) + w
    return WeightedCoreset(entries, m, epsilon, tuple(draws.tolist()))


def coreset_loss(coreset: WeightedCoreset, X, theta, loss) -> float:
    """Weighted loss ``sum_y w(y) l(theta, y)`` of a coreset of ``X``."""
    if not coreset.entries:
        return 0.0
    points = X.points if isinstance(X, Dataset) else np.asarray(X, dtype=float)
    idx = coreset.indices
    if idx.min() < 0 or idx.max() >= len(points):
        raise IndexError("coreset index outside dataset")
    vals = loss.values(theta, points[idx])
    return math.fsum(coreset.weights * vals)


@dataclass(frozen=True)
class DiscreteDistribution:
    support: tuple
    mass: tuple

    def __post_init__(self):
        mass = tuple(float(v) for v in self.mass)
        if len(mass) != len(self.support):
            raise ValueError("support and mass lengths differ")
        if any(v < 0 for v in mass) or abs(math.fsum(mass) - 1.0) > 1e-12:
            raise ValueError("masses must be non-negative and sum to 1")
        object.__setattr__(self, "support", tuple(self.support))
        object.__setattr__(self, "mass", mass)

    @classmethod
    def from_counts(cls, counts):
        total = sum(counts.values())
        keys = list(counts)
        return cls(keys, [counts[k] / total for k in keys])

    def as_dict(self):
        out = {}
        for s, v in zip(self.support, self.mass):
            out[s] = out.get(s, 0.0) + v
        return out

    def tv(self, other):
        return tv_distance(self, other)


def tv_distance(P: DiscreteDistribution, Q: DiscreteDistribution) -> float:
    p, q = P.as_dict(), Q.as_dict()
    diff = math.fsum(abs(p.get(s, 0.0) - q.get(s, 0.0)) for s in set(p) | set(q))
    return min(1.0, 0.5 * diff)


def uniform_interval_tv(B, B_prime, epsilon) -> float:
    """Exact TV between Uniform[B, (1+eps)B] and Uniform[B', (1+eps)B']."""
    if B <= 0 or B_prime <= 0:
        raise ValueError("interval lower ends must be positive")
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if B == B_prime:
        return 0.0
    lo, hi = max(B, B_prime), min(B, B_prime) * (1.0 + epsilon)
    if hi <= lo:
        return 1.0
    # on the overlap the smaller density belongs to the wider (larger B) interval
    return min(1.0, max(0.0, 1.0 - (hi - lo) / (epsilon * lo)))


def _scaled_uniform_l1(a, B, b, C, rel):
    """Integral of |a U[B,(1+rel)B] - b U[C,(1+rel)C]| over the line."""
    fa = a / (rel * B) if a > 0 else 0.0
    fb = b / (rel * C) if b > 0 else 0.0
    cuts = sorted({B, B * (1 + rel), C, C * (1 + rel)})
    total = 0.0
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        mid = 0.5 * (lo + hi)
        da = fa if B <= mid <= B * (1 + rel) else 0.0
        db = fb if C <= mid <= C * (1 + rel) else 0.0
        total += abs(da - db) * (hi - lo)
    return total


@dataclass(frozen=True)
class PerturbedSelection:
    """Law of one sensitivity-sample draw together with its perturbed probability.

    Outcome ``s`` is chosen with ``mass[s]`` and then ``p_tilde`` is uniform
    on ``[lower[s], (1 + rel) lower[s]]``.
    """

    mass: dict
    lower: dict
    rel: float

    def tv(self, other):
        if other.rel != self.rel:
            raise ValueError("perturbation widths differ")
        total = 0.0
        for s in set(self.mass) | set(other.mass):
            a, b = self.mass.get(s, 0.0), other.mass.get(s, 0.0)
            if a == 0.0 or b == 0.0:
                total += a + b
            else:
                total += _scaled_uniform_l1(a, self.lower[s], b, other.lower[s], self.rel)
        return min(1.0, 0.5 * total)


def selection_distribution(X: Dataset, profile_fn: Callable, m, epsilon, include_weights=False):
    """Exact output law of :func:`sensitivity_sample` on a tiny dataset.

    Outcomes are labelled by dataset ids.  Without weights the outcome is
    the sorted multiset of selected ids (multinomial law).  With weights only
    ``m = 1`` is supported; the outcome is the id together with ``p_tilde``.
    """
    profile = profile_fn(X)
    p = profile.probs
    ids = X.ids.tolist()
    if include_weights:
        if m != 1:
            raise ValueError("weight-inclusive laws are only enumerated for m = 1")
        mass = {ids[i]: float(p[i]) for i in range(X.n) if p[i] > 0}
        lower = {ids[i]: float(p[i]) for i in range(X.n) if p[i] > 0}
        return PerturbedSelection(mass, lower, epsilon / 2.0)
    support, mass = [], []
    log_fact_m = math.lgamma(m + 1)
    for combo in itertools.combinations_with_replacement(range(X.n), m):
        counts = Counter(combo)
        if any(p[i] == 0 for i in counts):
            continue
        logp = log_fact_m + sum(c * math.log(p[i]) - math.lgamma(c + 1) for i, c in counts.items())
        support.append(tuple(sorted(ids[i] for i in combo)))
        mass.append(math.exp(logp))
    s = math.fsum(mass)
    return DiscreteDistribution(support, [v / s for v in mass])


class SensitivityEstimate(NamedTuple):
    value: float
    error: float

    def __float__(self):
        return float(self.value)


EXHAUSTIVE_MAX_N = 8


def estimate_average_sensitivity(algorithm, X: Dataset, mode="exhaustive", trials=1000, seed=0):
    """Average over ``i`` of ``TV(A(X), A(X^(i)))``.

    ``mode="exhaustive"``: ``algorithm(X)`` returns the full output law (an
    object with a ``tv`` method, e.g. :class:`DiscreteDistribution`); the
    result is exact and ``error`` is 0.

    ``mode="monte-carlo"``: ``algorithm(X, rng)`` returns one hashable output
    summary; laws are replaced by empirical distributions over ``trials``
    runs (plug-in estimator, no smoothing).  ``error`` is the mean of
    ``sqrt(|support| / trials)`` over deletions.
    """
    n = X.n
    if n < 2:
        raise ValueError("need at least two points")
    if mode == "exhaustive":
        if n > EXHAUSTIVE_MAX_N:
            raise ValueError(f"exhaustive mode supports n <= {EXHAUSTIVE_MAX_N}")
        full = algorithm(X)
        tvs = [full.tv(algorithm(X.without(i))) for i in range(n)]
        return SensitivityEstimate(math.fsum(tvs) / n, 0.0)
    if mode != "monte-carlo":
        raise ValueError(f"unknown mode {mode!r}")
    if trials < 100:
        raise ValueError("insufficient trials")

    def empirical(data, tag):
        counts = Counter(algorithm(data, substream(seed, "trial", tag, j)) for j in range(trials))
        return DiscreteDistribution.from_counts(counts)

    full = empirical(X, 0)
    tvs, errs = [], []
    for i in range(n):
        dele = empirical(X.without(i), i + 1)
        tvs.append(tv_distance(full, dele))
        errs.append(math.sqrt(len(set(full.support) | set(dele.support)) / trials))
    return SensitivityEstimate(math.fsum(tvs) / n, math.fsum(errs) / n)


def grid_sensitivities(points, thetas, loss_batch):
    """``sigma(x) = max_theta l(theta, x) / l(theta, X)`` over a finite grid.

    Grid parameters with zero total loss are skipped.
    """
    points = np.asarray(points, dtype=float)
    best = np.zeros(len(points))
    for theta in thetas:
        vals = np.asarray(loss_batch(theta, points), dtype=float)
        total = vals.sum()
        if total > 0:
            np.maximum(best, vals / total, out=best)
    return best


WEIGHT_SCHEMES = ("normalized", "m", "source")


def perturbed_rescaling(p_selected, m, n_source, epsilon, rng, scheme="normalized"):
    """Rescaling factors for leverage-style sketches.

    Each selected row or column with probability ``p`` gets
    ``w ~ Uniform[s, (1 + epsilon) s]`` with ``s = 1 / sqrt(m p)``.

    ``"m"``          exactly that interval.  ``E[w^2] = (1 + eps + eps^2/3) / (m p)``,
                     so squared norms come out inflated.
    ``"normalized"`` the same interval scaled by ``1 / sqrt(1 + eps + eps^2/3)``,
                     which makes ``E[w^2] = 1 / (m p)``; the ratio of the interval
                     ends is still ``1 + eps``.
    ``"source"``     ``s = 1 / sqrt(n_source p)`` with the raw interval.
    """
    if scheme not in WEIGHT_SCHEMES:
        raise ValueError(f"unknown weight scheme {scheme!r}")
    p_selected = np.asarray(p_selected, dtype=float)
    count = n_source if scheme == "source" else m
    w = (1.0 + epsilon * rng.random(len(p_selected))) / np.sqrt(count * p_selected)
    if scheme == "normalized":
        w = w / math.sqrt(1.0 + epsilon + epsilon * epsilon / 3.0)
    return w


def sample_size(epsilon, dim, delta, const=1.0):
    """``ceil(const * eps^-2 * dim * ln(dim / delta))``."""
    return max(1, math.ceil(const * dim * math.log(dim / delta) / epsilon ** 2))
