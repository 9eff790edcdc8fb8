"""Experiment harness: synthetic data, stream orderings, online runs, OPT
oracles, and CSV/JSON reports."""
from __future__ import annotations

import csv
import dataclasses
import json
import math
import os
import shutil
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .clustering import clustering_opt, online_clustering
from .core import Dataset, RegretLedger, Stream, epsilon_regret, fixed_order, inconsistency, random_order
from .coreset import (
    DiscreteDistribution,
    SensitivityProfile,
    estimate_average_sensitivity,
    selection_distribution,
    sensitivity_sample,
)
from .lowrank import lowrank_opt, online_lowrank
from .regression import online_regression, regression_opt
from .rng import substream

PROBLEMS = ("cluster", "lowrank", "regress", "sensitivity")
ORDERINGS = ("random", "as-given", "sorted-norm")
MODES = ("fresh", "lazy")
LEDGER_HEADER = ("t", "step_loss", "cum_loss", "prefix_opt", "changed", "wall_ms")

# per-problem defaults for fields left as None
_DEFAULTS = {
    "cluster": dict(d=2, noise=1.0, rank=None),
    "lowrank": dict(d=20, noise=0.05, rank=None),
    "regress": dict(d=5, noise=0.1, rank=None),
    "sensitivity": dict(d=2, noise=1.0, rank=None),
}


class ConfigError(ValueError):
    """Invalid experiment configuration; ``field`` names the offending key."""

    def __init__(self, field_name, message):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass
class ExperimentConfig:
    problem: str
    n: int = 200
    d: Optional[int] = None
    k: int = 3
    z: float = 2.0
    epsilon: float = 0.3
    seeds: list = field(default_factory=lambda: [0])
    ordering: str = "random"
    mode: str = "fresh"
    separation: float = 4.0
    noise: Optional[float] = None
    rank: Optional[int] = None
    const_n1: float = 1.0
    const_n2: float = 1.0
    const_m: float = 1.0
    paper_verbatim_weights: bool = False
    restarts: int = 3
    opt_restarts: int = 50
    prefix_opt: bool = False
    timing: bool = False
    workers: int = 1
    out: Optional[str] = None
    data: Optional[str] = None
    # sensitivity reports
    sizes: list = field(default_factory=lambda: [4, 8])
    estimator: str = "exhaustive"
    trials: int = 1000
    m: int = 1
    profile: str = "uniform"
    sampler: str = "coreset"
    with_weights: bool = False

    @classmethod
    def from_dict(cls, raw):
        names = {f.name for f in dataclasses.fields(cls)}
        for key in raw:
            if key not in names:
                raise ConfigError(key, "unknown key")
        if "problem" not in raw:
            raise ConfigError("problem", "missing")
        cfg = cls(**raw)
        cfg.validate()
        return cfg

    @classmethod
    def from_json(cls, path, **overrides):
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError("config", str(exc)) from exc
        if not isinstance(raw, dict):
            raise ConfigError("config", "top level must be an object")
        raw.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_dict(raw)

    def validate(self):
        def need(ok, name, msg):
            if not ok:
                raise ConfigError(name, msg)

        need(self.problem in PROBLEMS, "problem", f"must be one of {PROBLEMS}")
        for key, val in _DEFAULTS[self.problem].items():
            if getattr(self, key) is None and val is not None:
                setattr(self, key, val)
        if self.rank is None:
            self.rank = self.k
        ints = ("n", "d", "k", "rank", "restarts", "opt_restarts", "workers", "trials", "m")
        for name in ints:
            v = getattr(self, name)
            need(isinstance(v, int) and not isinstance(v, bool) and v >= 1, name, "must be a positive integer")
        for name in ("z", "epsilon", "separation", "noise", "const_n1", "const_n2", "const_m"):
            v = getattr(self, name)
            need(isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v), name,
                 "must be a finite number")
        need(0 < self.epsilon < 1, "epsilon", "must lie in (0, 1)")
        need(self.z >= 1, "z", "must be at least 1")
        need(self.noise >= 0, "noise", "must be non-negative")
        need(self.separation >= 0, "separation", "must be non-negative")
        for name in ("const_n1", "const_n2", "const_m"):
            need(getattr(self, name) > 0, name, "must be positive")
        need(isinstance(self.seeds, list) and len(self.seeds) > 0
             and all(isinstance(s, int) and not isinstance(s, bool) and s >= 0 for s in self.seeds),
             "seeds", "must be a non-empty list of non-negative integers")
        need(len(set(self.seeds)) == len(self.seeds), "seeds", "must be distinct")
        need(self.ordering in ORDERINGS, "ordering", f"must be one of {ORDERINGS}")
        need(self.mode in MODES, "mode", f"must be one of {MODES}")
        if self.problem == "lowrank":
            need(self.k <= self.d, "k", "must not exceed d")
            need(self.rank <= self.d, "rank", "must not exceed d")
        need(isinstance(self.sizes, list) and len(self.sizes) > 0
             and all(isinstance(s, int) and s >= 2 for s in self.sizes), "sizes",
             "must be a non-empty list of integers >= 2")
        need(self.estimator in ("exhaustive", "monte-carlo"), "estimator",
             "must be exhaustive or monte-carlo")
        need(self.profile in ("uniform", "norm"), "profile", "must be uniform or norm")
        need(self.sampler in ("coreset", "constant"), "sampler", "must be coreset or constant")
        if self.problem == "sensitivity" and self.estimator == "monte-carlo":
            need(not self.with_weights, "with_weights", "only supported by the exhaustive estimator")
            need(self.trials >= 100, "trials", "insufficient trials")
        return self

    def to_dict(self):
        return dataclasses.asdict(self)

    def result_key(self):
        """The fields that determine results; output location and worker
        count are left out so reports are byte-identical across them."""
        d = self.to_dict()
        d.pop("out")
        d.pop("workers")
        return d


# data ---------------------------------------------------------------------

def generate(problem, params, seed, return_truth=False):
    """Synthetic dataset for ``problem``.

    ``params`` is an :class:`ExperimentConfig` or a dict with ``n, d`` and
    optionally ``k, separation, noise, rank``.

    cluster  Gaussian mixture, centred and scaled to radius 0.5, so every
             pairwise distance is at most 1.
    lowrank  rank-r signal plus Gaussian noise, unit-norm columns (returned
             as rows of the dataset).
    regress  rows ``[a, b]`` with ``a ~ N(0, I/d)``, unit planted ``x``,
             noise clipped to three standard deviations.
    """
    if isinstance(params, dict):
        base = {"problem": problem, **params}
        params = ExperimentConfig.from_dict(base)
    n, d = params.n, params.d
    rng = substream(seed, "generate", problem)
    truth = None
    if problem in ("cluster", "sensitivity"):
        centers = rng.normal(0.0, params.separation, (params.k, d))
        labels = rng.integers(0, params.k, n)
        pts = centers[labels] + rng.normal(0.0, params.noise, (n, d))
        pts = pts - pts.mean(axis=0)
        radius = np.sqrt((pts ** 2).sum(axis=1)).max()
        if radius > 0:
            pts = pts * (0.5 / radius)
        truth = labels
    elif problem == "lowrank":
        signal = rng.normal(size=(d, params.rank)) @ rng.normal(size=(params.rank, n))
        signal /= np.linalg.norm(signal, axis=0)
        A = signal + params.noise * rng.normal(size=(d, n))
        A /= np.linalg.norm(A, axis=0)
        pts = A.T
    elif problem == "regress":
        a = rng.normal(0.0, 1.0 / math.sqrt(d), (n, d))
        xbar = rng.normal(size=d)
        xbar /= np.linalg.norm(xbar)
        e = np.clip(params.noise * rng.normal(size=n), -3 * params.noise, 3 * params.noise)
        pts = np.column_stack([a, a @ xbar + e])
        truth = xbar
    else:
        raise ConfigError("problem", f"unknown problem {problem!r}")
    data = Dataset(pts)
    return (data, truth) if return_truth else data


def load_csv(path):
    """One point per row, comma separated, no header."""
    try:
        pts = np.loadtxt(path, delimiter=",", ndmin=2)
    except (OSError, ValueError) as exc:
        raise ConfigError("data", str(exc)) from exc
    if pts.size == 0:
        raise ConfigError("data", "no rows")
    return Dataset(pts)


def make_stream(data: Dataset, ordering, seed) -> Stream:
    if ordering == "random":
        return random_order(data, seed)
    if ordering == "as-given":
        return fixed_order(data)
    if ordering == "sorted-norm":
        norms = np.sqrt((data.points ** 2).sum(axis=1))
        return fixed_order(data, np.argsort(norms, kind="stable"))
    raise ConfigError("ordering", f"unknown ordering {ordering!r}")


# ledger files ---------------------------------------------------------------

def _fmt(v):
    return "" if v is None else repr(float(v))


def write_ledger_csv(ledger: RegretLedger, path):
    """``changed`` at row ``t`` is 1 when the parameter played at ``t``
    differs from the one played at ``t - 1`` (row 1 is always 0)."""
    changed = [False] + list(ledger.changed)
    cum = ledger.cumulative()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LEDGER_HEADER)
        for t, loss in enumerate(ledger.step_losses, start=1):
            wall = ledger.wall_ms[t - 1] if ledger.wall_ms else None
            w.writerow([t, _fmt(loss), _fmt(cum[t - 1]), _fmt(ledger.prefix_opt[t - 1]),
                        int(changed[t - 1]), _fmt(wall)])


def read_ledger_csv(path):
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for r in reader:
            rows.append({
                "t": int(r["t"]),
                "step_loss": float(r["step_loss"]),
                "cum_loss": float(r["cum_loss"]),
                "prefix_opt": float(r["prefix_opt"]) if r["prefix_opt"] else None,
                "changed": int(r["changed"]),
                "wall_ms": float(r["wall_ms"]) if r["wall_ms"] else None,
            })
    return rows


# runs -----------------------------------------------------------------------

def _scheme(cfg):
    return "source" if cfg.paper_verbatim_weights else "normalized"


def _online(cfg, stream, seed, prefix_opt):
    common = dict(prefix_opt=prefix_opt, timing=cfg.timing)
    if cfg.problem == "cluster":
        return online_clustering(stream, cfg.k, cfg.z, cfg.epsilon, cfg.mode, seed,
                                 restarts=cfg.restarts, clip=True, const_n1=cfg.const_n1,
                                 const_n2=cfg.const_n2, verbatim=cfg.paper_verbatim_weights, **common)
    if cfg.problem == "lowrank":
        return online_lowrank(stream, cfg.k, cfg.epsilon, cfg.mode, seed, scheme=_scheme(cfg),
                              const_m=cfg.const_m, clip=True, **common)
    return online_regression(stream, cfg.epsilon, cfg.mode, seed, scheme=_scheme(cfg),
                             const_m=cfg.const_m, clip=True, **common)


def _opt(cfg, points):
    if cfg.problem == "cluster":
        return clustering_opt(points, cfg.k, cfg.z, cfg.opt_restarts, clip=True)[1]
    if cfg.problem == "lowrank":
        return lowrank_opt(points, cfg.k, clip=True)[1]
    return regression_opt(points, clip=True)[1]


def _dataset(cfg, seed):
    if cfg.data is not None:
        return load_csv(cfg.data)
    return generate(cfg.problem, cfg, seed)


def run_seed(cfg: ExperimentConfig, seed):
    """One online run; returns ``(ledger, record)``."""
    start = time.perf_counter()
    data = _dataset(cfg, seed)
    stream = make_stream(data, cfg.ordering, seed)
    prefix_opt = (lambda pts: _opt(cfg, pts)) if cfg.prefix_opt else None
    ledger = _online(cfg, stream, seed, prefix_opt)
    opt = _opt(cfg, data.points)
    regret = epsilon_regret(ledger, opt, cfg.epsilon)
    record = {
        "seed": seed,
        "n": data.n,
        "total_loss": ledger.total_loss(),
        "opt": opt,
        "regret": regret,
        "regret_per_n": regret / data.n,
        "inconsistency": inconsistency(ledger),
        "clip_events": ledger.extras.get("clip_events", 0),
        "clamped": ledger.extras.get("clamped", 0),
    }
    if "m" in ledger.extras:
        record["m"] = ledger.extras["m"]
    if cfg.timing:
        record["wall_s"] = time.perf_counter() - start
    return ledger, record


def _seed_job(args):
    cfg, seed = args
    return run_seed(cfg, seed)


def ledger_path(out, n, seed):
    return os.path.join(out, f"ledger_n{n}_seed{seed}.csv")


def run_experiment(cfg: ExperimentConfig):
    """Run every seed, write one ledger CSV per seed plus ``summary.json``.

    Returns the summary dict.  Without ``cfg.out`` nothing is written.  On
    failure every file written so far is removed.
    """
    if cfg.problem == "sensitivity":
        return sensitivity_report(cfg)
    created_dir = False
    written = []
    if cfg.out is not None and not os.path.isdir(cfg.out):
        os.makedirs(cfg.out)
        created_dir = True
    try:
        jobs = [(cfg, s) for s in cfg.seeds]
        if cfg.workers > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(cfg.workers) as pool:
                results = list(pool.map(_seed_job, jobs))
        else:
            results = [_seed_job(j) for j in jobs]
        records = []
        for ledger, rec in results:
            if cfg.out is not None:
                path = ledger_path(cfg.out, rec["n"], rec["seed"])
                written.append(path)
                write_ledger_csv(ledger, path)
            records.append(rec)
        summary = {
            "config": cfg.result_key(),
            "guarantee": "none" if cfg.ordering == "sorted-norm" else "random-order",
            "runs": records,
            "median_regret_per_n": float(np.median([r["regret_per_n"] for r in records])),
            "median_inconsistency": float(np.median([r["inconsistency"] for r in records])),
        }
        if cfg.out is not None:
            path = os.path.join(cfg.out, "summary.json")
            written.append(path)
            with open(path, "w") as fh:
                json.dump(summary, fh, indent=2, sort_keys=True)
                fh.write("\n")
        return summary
    except BaseException:
        for path in written:
            if os.path.exists(path):
                os.remove(path)
        if created_dir:
            shutil.rmtree(cfg.out, ignore_errors=True)
        raise


# sensitivity ----------------------------------------------------------------

def _profile(kind):
    if kind == "uniform":
        return lambda X: SensitivityProfile.uniform(X.n)

    def norm_profile(X):
        sq = (X.points ** 2).sum(axis=1)
        total = sq.sum()
        return SensitivityProfile.from_sigma(1.0 / X.n + (sq / total if total > 0 else 0.0))

    return norm_profile


def _sampler(cfg):
    """The algorithm handed to the average-sensitivity estimator."""
    if cfg.sampler == "constant":
        point = DiscreteDistribution([()], [1.0])
        if cfg.estimator == "exhaustive":
            return lambda X: point
        return lambda X, rng: ()
    profile_fn = _profile(cfg.profile)
    if cfg.estimator == "exhaustive":
        return lambda X: selection_distribution(X, profile_fn, cfg.m, cfg.epsilon, cfg.with_weights)

    def draw(X, rng):
        cs = sensitivity_sample(X, profile_fn(X), cfg.m, cfg.epsilon, rng)
        return tuple(sorted(int(X.ids[i]) for i in cs.draws))

    return draw


def fit_exponent(sizes, values):
    """Slope of ``log beta`` against ``log n``; None unless every beta > 0."""
    if len(sizes) < 2 or any(v <= 0 for v in values):
        return None
    return float(np.polyfit(np.log(sizes), np.log(values), 1)[0])


def sensitivity_report(cfg: ExperimentConfig):
    """Average sensitivity of the configured sampler for each ``n`` in
    ``cfg.sizes`` and the fitted exponent of ``n``."""
    if cfg.estimator == "exhaustive" and max(cfg.sizes) > 8:
        raise ConfigError("sizes", "exhaustive estimation needs n <= 8")
    algo = _sampler(cfg)
    runs = []
    for seed in cfg.seeds:
        betas, errors = [], []
        for n in cfg.sizes:
            sub = dataclasses.replace(cfg, n=n)
            data = generate("sensitivity", sub, seed)
            est = estimate_average_sensitivity(algo, data, cfg.estimator, cfg.trials, seed)
            betas.append(est.value)
            errors.append(est.error)
        runs.append({"seed": seed, "sizes": list(cfg.sizes), "beta": betas, "error": errors,
                     "exponent": fit_exponent(cfg.sizes, betas)})
    report = {"config": cfg.result_key(), "runs": runs}
    if cfg.out is not None:
        os.makedirs(cfg.out, exist_ok=True)
        with open(os.path.join(cfg.out, "sensitivity.json"), "w") as fh:
            json.dump(report, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return report
