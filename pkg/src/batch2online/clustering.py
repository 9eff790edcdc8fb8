"""(k, z)-clustering: losses, D^z seeding, the two-stage coreset, a weighted
solver, and the online pipeline built on them."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import Dataset, LossModel, Stream, run_online
from .coreset import DrawCoupler, categorical
from .rng import substream

# The coreset construction first divides epsilon by a large constant c.  Any
# c >= 12 gives (1 + 10 eps/c)(1 + eps/c) <= 1 + eps for eps < 1; the center
# mass inflation 10 eps/c is charged at the center's own cost, which can be
# several times its cluster's average, hence the extra margin.
DEFAULT_EPS_SCALE = 40.0


@dataclass(frozen=True)
class CenterSet:
    centers: np.ndarray
    z: float = 2.0
    indices: Optional[tuple] = None

    def __post_init__(self):
        c = np.array(self.centers, dtype=float)
        if c.ndim != 2 or len(c) == 0:
            raise ValueError("centers must be a non-empty (k, d) array")
        if not np.all(np.isfinite(c)):
            raise ValueError("centers must be finite")
        if self.z < 1:
            raise ValueError("z must be at least 1")
        c.setflags(write=False)
        object.__setattr__(self, "centers", c)

    @property
    def k(self):
        return len(self.centers)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.centers, dtype=dtype)


def _as_points(X):
    return X.points if isinstance(X, Dataset) else np.asarray(X, dtype=float)


def kz_costs(centers, points, z):
    """Per-point ``min_j ||x - c_j||^z`` and the minimising center index."""
    centers = np.asarray(centers, dtype=float)
    points = np.asarray(points, dtype=float)
    if points.shape[1] != centers.shape[1]:
        raise ValueError("dimension mismatch between points and centers")
    sq = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    assign = np.argmin(sq, axis=1)
    d2 = sq[np.arange(len(points)), assign]
    cost = d2 if z == 2 else np.sqrt(d2) ** z
    return cost, assign


def kz_loss(Z: CenterSet, x) -> float:
    x = np.asarray(x, dtype=float).reshape(1, -1)
    if x.shape[1] != Z.centers.shape[1]:
        raise ValueError("dimension mismatch between point and centers")
    return float(kz_costs(Z.centers, x, Z.z)[0][0])


def kz_loss_model(clip=False):
    return LossModel(lambda Z, pts: kz_costs(Z.centers, pts, Z.z)[0], clip=clip)


def weighted_cost(centers, points, weights, z):
    return math.fsum(np.asarray(weights) * kz_costs(centers, points, z)[0])


def dz_sampling(X, k, z, seed, *, weights=None, coupler=None, key="dz") -> CenterSet:
    """D^z seeding: first center uniform (or by weight), then each next center
    with probability proportional to ``weight * dist^z`` to the chosen ones.

    If every residual distance is zero before ``k`` centers exist, the rest
    are drawn uniformly from ``X``.  The chosen positions are kept in
    ``CenterSet.indices``.
    """
    pts = _as_points(X)
    n = len(pts)
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= n, got k={k}, n={n}")
    rng = seed if isinstance(seed, np.random.Generator) else substream(seed, "dz_sampling")
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)

    def pick(j, p):
        if coupler is None:
            return int(categorical(p, 1, rng)[0])
        return int(coupler.draw((key, j), p, 1, rng)[0])

    chosen = [pick(0, w)]
    resid = np.full(n, np.inf)
    for j in range(1, k):
        d2 = ((pts - pts[chosen[-1]]) ** 2).sum(axis=1)
        resid = np.minimum(resid, d2 if z == 2 else np.sqrt(d2) ** z)
        mass = w * resid
        chosen.append(pick(j, mass if mass.sum() > 0 else np.ones(n)))
    return CenterSet(pts[chosen], z, tuple(chosen))


@dataclass
class ClusteringCoreset:
    points: np.ndarray
    weights: np.ndarray
    provenance: list
    clamped: int = 0
    selection: tuple = ()
    n1: int = 0
    n2: int = 0
    stage1_weight: float = 0.0
    exhaustive: tuple = (False, False)

    def __len__(self):
        return len(self.weights)

    def loss(self, Z: CenterSet) -> float:
        return weighted_cost(Z.centers, self.points, self.weights, Z.z)


def _capped_size(log_size, n):
    if log_size >= math.log(max(n, 1)):
        return n
    return max(1, min(n, math.ceil(math.exp(log_size))))


def stage_sizes(n, k, z, epsilon, delta, const_n1=1.0, const_n2=1.0):
    """Sample sizes of the two stages, hidden constants explicit, capped at n.

    ``N1 = c1 (168 z)^{10 z} eps^{-5z-15} k^5 ln(k/delta)`` and
    ``N2 = c2 eps^{-2z-2} k ln(k) ln(k/(eps delta))``; ``ln k`` is floored at
    1 so ``k = 1`` still gets a second stage.
    """
    log_n1 = (math.log(const_n1) + 10 * z * math.log(168 * z) - (5 * z + 15) * math.log(epsilon)
              + 5 * math.log(k) + math.log(math.log(k / delta)))
    log_n2 = (math.log(const_n2) - (2 * z + 2) * math.log(epsilon) + math.log(k)
              + math.log(max(math.log(k), 1.0)) + math.log(math.log(k / (epsilon * delta))))
    return _capped_size(log_n1, n), _capped_size(log_n2, n)


def two_stage_coreset(X, k, z, epsilon, delta, seed, *, const_n1=1.0, const_n2=1.0,
                      eps_scale=DEFAULT_EPS_SCALE, verbatim=False, coupler=None) -> ClusteringCoreset:
    """Two-stage importance-sampling coreset for (k, z)-clustering.

    Stage 1 samples ``N1`` points by ``sigma_1`` (distance share to the
    bicriteria centers plus inverse cluster size) with weights perturbed
    within a factor ``1 + eps``.  Stage 2 resamples ``N2`` of them by weighted
    cost to the centers.  Each bicriteria center then absorbs the stage-1
    mass of its cluster not carried by stage-2 samples, inflated by
    ``1 + 10 eps``; negative center weights are clamped to 0 and counted.

    A stage whose size formula reaches ``n`` keeps every candidate point
    once with unit base weight (still perturbed) instead of sampling.

    ``epsilon`` is divided by ``eps_scale`` before use.  Stage-2 weights are
    ``u(x) / (N2 q(x))`` so they estimate the stage-1 weighted mass;
    ``verbatim=True`` drops the ``u(x)`` factor, giving ``1 / (N2 q(x))``.
    """
    pts = _as_points(X)
    n = len(pts)
    if k > n:
        raise ValueError(f"k={k} exceeds n={n}")
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must lie in (0, 1)")
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    rng = seed if isinstance(seed, np.random.Generator) else substream(seed, "two_stage_coreset")
    eps = epsilon / eps_scale

    cstar = dz_sampling(pts, k, z, rng, coupler=coupler)
    cost, assign = kz_costs(cstar.centers, pts, z)
    sizes = np.bincount(assign, minlength=k)
    total = math.fsum(cost)
    dist_term = cost / total if total > 0 else np.zeros(n)
    sigma1 = 2.0 ** (2 * z + 2) * eps ** 2 * (dist_term + 1.0 / sizes[assign])

    n1, n2 = stage_sizes(n, k, z, eps, delta, const_n1, const_n2)
    if n1 >= n:
        # a sample as large as X is X itself
        draws1 = np.arange(n)
        u_draw = 1.0 + eps * rng.random(n)
    else:
        p1 = sigma1 / sigma1.sum()
        draws1 = categorical(p1, n1, rng) if coupler is None else coupler.draw("stage1", p1, n1, rng)
        u_draw = sigma1.sum() / (n1 * sigma1[draws1]) * (1.0 + eps * rng.random(n1))
    d1, inv = np.unique(draws1, return_inverse=True)
    u = np.bincount(inv, weights=u_draw, minlength=len(d1))

    mass = u * cost[d1]
    w = np.zeros(len(d1))
    draws2 = np.empty(0, dtype=np.int64)
    if mass.sum() > 0 and n2 >= n:
        local = np.flatnonzero(mass > 0)
        draws2 = d1[local]
        base = u[local] if not verbatim else np.ones(len(local))
        w[local] = base * (1.0 + eps * rng.random(len(local)))
    elif mass.sum() > 0:
        sigma2 = mass / mass.sum()
        p2 = np.zeros(n)
        p2[d1] = sigma2
        draws2 = categorical(p2, n2, rng) if coupler is None else coupler.draw("stage2", p2, n2, rng)
        local = np.searchsorted(d1, draws2)
        base = 1.0 / (n2 * sigma2[local])
        if not verbatim:
            base = base * u[local]
        w = np.bincount(local, weights=base * (1.0 + eps * rng.random(n2)), minlength=len(d1))

    d1_cluster = assign[d1]
    center_w = ((1.0 + 10.0 * eps) * np.bincount(d1_cluster, weights=u, minlength=k)
                - np.bincount(d1_cluster, weights=w, minlength=k))
    clamped = int(np.count_nonzero(center_w < 0))
    center_w = np.maximum(center_w, 0.0)

    keep = w > 0
    points = np.vstack([pts[d1[keep]], cstar.centers])
    weights = np.concatenate([w[keep], center_w])
    provenance = ["stage2-sample"] * int(keep.sum()) + ["bicriteria-center"] * k
    selection = (cstar.indices, tuple(np.sort(draws1).tolist()), tuple(np.sort(draws2).tolist()))
    return ClusteringCoreset(points, weights, provenance, clamped, selection, n1, n2,
                             float(u_draw.sum()), (n1 >= n, n2 >= n))


def _lloyd(points, weights, centers, max_iter):
    assign = None
    for _ in range(max_iter):
        _, new = kz_costs(centers, points, 2)
        if assign is not None and np.array_equal(new, assign):
            break
        assign = new
        centers = centers.copy()
        for j in range(len(centers)):
            mask = assign == j
            wj = weights[mask].sum()
            if wj > 0:
                centers[j] = weights[mask] @ points[mask] / wj
    return centers


def _local_search(points, weights, idx, z, max_iter):
    """Single-swap local search with centers restricted to the points."""
    diff = points[:, None, :] - points[None, :, :]
    dist = np.sqrt((diff ** 2).sum(axis=2)) ** z
    idx = list(idx)
    cur = float(weights @ dist[:, idx].min(axis=1))
    for _ in range(max_iter):
        improved = False
        for j in range(len(idx)):
            others = [c for i, c in enumerate(idx) if i != j]
            base = dist[:, others].min(axis=1) if others else np.full(len(points), np.inf)
            cand = weights @ np.minimum(base[:, None], dist)
            best = int(np.argmin(cand))
            if cand[best] < cur * (1 - 1e-12):
                idx[j], cur, improved = best, float(cand[best]), True
        if not improved:
            break
    return points[idx]


def weighted_kz_solve(coreset, k, z, restarts=5, seed=0, max_iter=100) -> CenterSet:
    """Best of ``restarts`` weighted D^z seedings refined by weighted Lloyd
    (``z = 2``) or swap local search over coreset points (other ``z``).

    ``coreset`` is a :class:`ClusteringCoreset` or a ``(points, weights)`` pair.
    """
    if isinstance(coreset, ClusteringCoreset):
        points, weights = coreset.points, coreset.weights
    else:
        points, weights = (np.asarray(a, dtype=float) for a in coreset)
    if len(points) == 0:
        raise ValueError("empty coreset")
    rng = seed if isinstance(seed, np.random.Generator) else substream(seed, "weighted_kz_solve")
    live = weights > 0
    if not live.any():
        live = np.ones(len(points), dtype=bool)
        weights = np.ones(len(points))
    points, weights = points[live], weights[live]
    distinct = np.unique(points, axis=0)
    if len(distinct) <= k:
        if len(distinct) < k:
            warnings.warn(f"only {len(distinct)} distinct coreset points for k={k}; padding with duplicates")
        reps = np.resize(np.arange(len(distinct)), k)
        return CenterSet(distinct[reps], z)

    best, best_cost = None, math.inf
    for _ in range(max(1, restarts)):
        seeded = dz_sampling(points, k, z, rng, weights=weights)
        if z == 2:
            centers = _lloyd(points, weights, seeded.centers, max_iter)
        else:
            centers = _local_search(points, weights, seeded.indices, z, max_iter)
        c = weighted_cost(centers, points, weights, z)
        if c < best_cost:
            best, best_cost = centers, c
    return CenterSet(best, z)


def _prefix_centers(prefix, k, z):
    rows = np.resize(np.arange(len(prefix)), k)
    return CenterSet(prefix[rows], z)


class ClusteringSolver:
    """Offline step of the online pipeline: coreset of the prefix, then solve.

    In ``lazy`` mode coreset draws are maximally coupled across steps and the
    previous centers are returned unchanged whenever the selected indices
    (bicriteria centers, stage-1 and stage-2 multisets) are unchanged.
    """

    def __init__(self, k, z, epsilon, delta, mode="fresh", restarts=3, const_n1=1.0,
                 const_n2=1.0, eps_scale=DEFAULT_EPS_SCALE, verbatim=False):
        if mode not in ("fresh", "lazy"):
            raise ValueError(f"unknown mode {mode!r}")
        self.k, self.z, self.epsilon, self.delta = k, z, epsilon, delta
        self.mode, self.restarts = mode, restarts
        self.opts = dict(const_n1=const_n1, const_n2=const_n2, eps_scale=eps_scale, verbatim=verbatim)
        self.coupler = DrawCoupler() if mode == "lazy" else None
        self.clamped = 0
        self._last = None

    def __call__(self, prefix, rng):
        d = prefix.shape[1]
        if len(prefix) == 0:
            return CenterSet(np.zeros((self.k, d)), self.z)
        if len(prefix) <= self.k:
            return _prefix_centers(prefix, self.k, self.z)
        cs = two_stage_coreset(prefix, self.k, self.z, self.epsilon, self.delta, rng,
                               coupler=self.coupler, **self.opts)
        self.clamped += cs.clamped
        if self.mode == "lazy" and self._last is not None and self._last[0] == cs.selection:
            return self._last[1]
        theta = weighted_kz_solve(cs, self.k, self.z, self.restarts, rng)
        self._last = (cs.selection, theta)
        return theta


def online_clustering(stream: Stream, k, z, epsilon, mode="fresh", seed=0, *, restarts=3,
                      clip=False, prefix_opt=None, timing=False, **opts):
    """Online (k, z)-clustering: coreset with ``epsilon/3`` and
    ``delta = epsilon / (10 n)`` at every step, then the weighted solver."""
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must lie in (0, 1)")
    n = len(stream)
    solver = ClusteringSolver(k, z, epsilon / 3.0, epsilon / (10.0 * n), mode, restarts, **opts)
    loss = kz_loss_model(clip)
    ledger = run_online(solver, stream, loss, seed, prefix_opt=prefix_opt, timing=timing,
                        epsilon=epsilon)
    ledger.extras.update(clip_events=loss.clip_events, clamped=solver.clamped)
    return ledger


def clustering_opt(points, k, z, restarts=50, seed=0, clip=False):
    """Upper bound on OPT: best of ``restarts`` solver runs on the full data."""
    pts = _as_points(points)
    Z = weighted_kz_solve((pts, np.ones(len(pts))), k, z, restarts, substream(seed, "opt"))
    return Z, kz_loss_model(clip).aggregate(Z, pts)
