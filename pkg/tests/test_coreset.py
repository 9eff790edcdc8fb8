import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from batch2online.core import Dataset, LossModel
from batch2online.coreset import (
    DegenerateProfileError,
    DiscreteDistribution,
    DrawCoupler,
    SensitivityProfile,
    WeightedCoreset,
    coreset_loss,
    estimate_average_sensitivity,
    perturbed_rescaling,
    sample_size,
    selection_distribution,
    sensitivity_sample,
    tv_distance,
    uniform_interval_tv,
)

SQ = LossModel(lambda c, P: ((P - c) ** 2).sum(axis=1))


def uniform_profile(X):
    return SensitivityProfile.uniform(X.n)


# profiles and sampling ------------------------------------------------------------

def test_profile_normalises_and_rejects_degenerate():
    prof = SensitivityProfile.from_sigma([1.0, 3.0])
    assert prof.total == 4.0
    assert prof.probs.tolist() == [0.25, 0.75]
    with pytest.raises(DegenerateProfileError, match="degenerate sensitivities"):
        SensitivityProfile.from_sigma([0.0, 0.0])
    with pytest.raises(ValueError):
        SensitivityProfile.from_sigma([-1.0, 2.0])


def test_point_mass_profile_accumulates_on_one_entry():
    X = Dataset(np.arange(4.0))
    cs = sensitivity_sample(X, SensitivityProfile.from_sigma([1, 0, 0, 0]), 3, 0.2, seed=0)
    assert list(cs.entries) == [0]
    assert cs.draws == (0, 0, 0)
    # each increment is 1/(3 p_tilde) with p_tilde in [1, 1.1]
    assert 1 / 1.1 <= cs.total_weight() <= 1.0


def test_single_point_total_weight_band():
    for seed in range(20):
        cs = sensitivity_sample(Dataset([[0.0]]), SensitivityProfile.uniform(1), 25, 0.2, seed)
        assert 1 / 1.1 - 1e-12 <= cs.total_weight() <= 1.0 + 1e-12


def test_mean_total_weight_matches_integral():
    # E[1/p_tilde] = ln(1 + eps/2) / (p eps / 2), so E[total] = n ln(1.1) / 0.1
    X = Dataset(np.arange(4.0))
    totals = [sensitivity_sample(X, SensitivityProfile.uniform(4), 1000, 0.2, s).total_weight()
              for s in range(200)]
    mean = float(np.mean(totals))
    assert 3.63 <= mean <= 4.0
    assert mean == pytest.approx(4 * math.log(1.1) / 0.1, abs=0.05)


def test_verbatim_weights_scale_by_m():
    X = Dataset(np.arange(5.0))
    a = sensitivity_sample(X, SensitivityProfile.uniform(5), 40, 0.2, 3)
    b = sensitivity_sample(X, SensitivityProfile.uniform(5), 40, 0.2, 3, verbatim=True)
    assert a.draws == b.draws
    assert b.total_weight() == pytest.approx(40 * a.total_weight())


def test_sampling_argument_checks():
    X = Dataset(np.arange(3.0))
    prof = SensitivityProfile.uniform(3)
    with pytest.raises(ValueError):
        sensitivity_sample(X, prof, 0, 0.2, 0)
    with pytest.raises(ValueError):
        sensitivity_sample(X, prof, 2, 1.5, 0)
    with pytest.raises(ValueError):
        sensitivity_sample(X, SensitivityProfile.uniform(4), 2, 0.2, 0)


@given(st.lists(st.floats(0, 10), min_size=1, max_size=12).filter(lambda s: sum(s) > 1e-6),
       st.integers(1, 50), st.floats(0.01, 0.99), st.integers(0, 2**31))
def test_sample_structure(sigma, m, eps, seed):
    X = Dataset(np.zeros((len(sigma), 1)))
    prof = SensitivityProfile.from_sigma(sigma)
    cs = sensitivity_sample(X, prof, m, eps, seed)
    assert len(cs.entries) <= m and len(cs.draws) == m
    assert all(w > 0 and math.isfinite(w) for w in cs.weights)
    assert all(prof.probs[i] > 0 for i in cs.draws)
    # every increment lies in [1/(m p (1 + eps/2)), 1/(m p)]
    lo = sum(1 / (m * prof.probs[i] * (1 + eps / 2)) for i in cs.draws)
    hi = sum(1 / (m * prof.probs[i]) for i in cs.draws)
    assert lo * (1 - 1e-9) <= cs.total_weight() <= hi * (1 + 1e-9)


def test_sampling_is_deterministic_per_seed():
    X = Dataset(np.arange(6.0))
    prof = SensitivityProfile.from_sigma(np.arange(1.0, 7.0))
    assert sensitivity_sample(X, prof, 9, 0.3, 4).entries == sensitivity_sample(X, prof, 9, 0.3, 4).entries


# coreset loss -----------------------------------------------------------------------

def test_coreset_loss_examples():
    X = Dataset(np.random.default_rng(0).standard_normal((6, 2)))
    theta = np.array([0.3, -0.1])
    assert coreset_loss(WeightedCoreset(), X, theta, SQ) == 0.0
    whole = WeightedCoreset({i: 1.0 for i in range(6)}, m=6)
    assert coreset_loss(whole, X, theta, SQ) == pytest.approx(SQ.aggregate(theta, X), abs=1e-12)
    with pytest.raises(IndexError):
        coreset_loss(WeightedCoreset({9: 1.0}, m=1), X, theta, SQ)


def test_coreset_loss_is_unbiased_up_to_perturbation():
    rng = np.random.default_rng(2)
    X = Dataset(rng.uniform(-1, 1, (10, 2)))
    theta = np.array([0.2, 0.1])
    costs = SQ.values(theta, X)
    # optimal sensitivities for a fixed theta are proportional to the costs
    prof = SensitivityProfile.from_sigma(costs + 0.05)
    eps = 0.2
    vals = [coreset_loss(sensitivity_sample(X, prof, 5, eps, s), X, theta, SQ) for s in range(10_000)]
    expected = SQ.aggregate(theta, X) * math.log(1 + eps / 2) / (eps / 2)
    assert np.mean(vals) == pytest.approx(expected, rel=0.02)


def test_coreset_sandwich_on_clustering_instance():
    rng = np.random.default_rng(3)
    centers = np.array([[-0.3, 0.0], [0.3, 0.1], [0.0, -0.3]])
    X = Dataset(centers[rng.integers(0, 3, 50)] + 0.05 * rng.standard_normal((50, 2)))
    thetas = [rng.uniform(-0.5, 0.5, (1, 2)) for _ in range(20)]
    loss = LossModel(lambda c, P: ((P[:, None, :] - c[None]) ** 2).sum(axis=2).min(axis=1))
    # sensitivity bound for k-means with one center: 1/n + ||x - mu||^2 / total
    d2 = ((X.points - X.points.mean(axis=0)) ** 2).sum(axis=1)
    prof = SensitivityProfile.from_sigma(1 / X.n + d2 / d2.sum())
    good = 0
    for seed in range(100):
        cs = sensitivity_sample(X, prof, 500, 0.1, seed)
        good += all(abs(coreset_loss(cs, X, th, loss) / loss.aggregate(th, X) - 1) <= 0.15 for th in thetas)
    assert good >= 95


# total variation -------------------------------------------------------------------

def test_tv_examples():
    P = DiscreteDistribution(["a", "b"], [0.5, 0.5])
    assert tv_distance(P, P) == 0.0
    assert tv_distance(P, DiscreteDistribution(["c"], [1.0])) == 1.0
    assert tv_distance(P, DiscreteDistribution(["a", "b"], [1.0, 0.0])) == 0.5


def test_distribution_validation():
    with pytest.raises(ValueError):
        DiscreteDistribution(["a"], [0.5])
    with pytest.raises(ValueError):
        DiscreteDistribution(["a", "b"], [1.2, -0.2])


masses = st.lists(st.floats(0.01, 1.0), min_size=1, max_size=6)


def _dist(ws, offset=0):
    s = sum(ws)
    return DiscreteDistribution(list(range(offset, offset + len(ws))), [w / s for w in ws])


@given(masses, masses, masses, st.integers(0, 3), st.integers(0, 3))
def test_tv_is_a_metric(a, b, c, ob, oc):
    P, Q, R = _dist(a), _dist(b, ob), _dist(c, oc)
    assert 0.0 <= tv_distance(P, Q) <= 1.0
    assert tv_distance(P, Q) == pytest.approx(tv_distance(Q, P), abs=1e-15)
    assert tv_distance(P, R) <= tv_distance(P, Q) + tv_distance(Q, R) + 1e-12


def test_uniform_interval_tv_examples():
    assert uniform_interval_tv(1.0, 1.0, 0.3) == 0.0
    assert uniform_interval_tv(1.0, 2.0, 0.5) == 1.0
    # overlap [1.1, 1.5] has length 0.4 under the density 1/0.55 of the wider interval
    assert uniform_interval_tv(1.0, 1.1, 0.5) == pytest.approx(1 - 0.4 / 0.55, abs=1e-12)
    assert uniform_interval_tv(1.0, 1.1, 0.5) == pytest.approx(0.2727, abs=1e-4)
    with pytest.raises(ValueError):
        uniform_interval_tv(0.0, 1.0, 0.5)
    with pytest.raises(ValueError):
        uniform_interval_tv(1.0, 1.0, 0.0)


@given(st.floats(0.01, 100), st.floats(0.01, 100), st.floats(0.001, 2))
def test_uniform_interval_tv_bound_and_symmetry(B, Bp, eps):
    tv = uniform_interval_tv(B, Bp, eps)
    assert 0.0 <= tv <= 1.0
    assert tv == pytest.approx(uniform_interval_tv(Bp, B, eps), abs=1e-12)
    assert tv <= min(1.0, (1 + eps) / eps * abs(1 - Bp / B)) + 1e-12


def test_uniform_interval_tv_against_numeric_integration():
    B, Bp, eps = 1.3, 1.45, 0.4
    grid = np.linspace(1.0, 2.5, 2_000_001)
    f = ((grid >= B) & (grid <= B * (1 + eps))) / (eps * B)
    g = ((grid >= Bp) & (grid <= Bp * (1 + eps))) / (eps * Bp)
    numeric = 0.5 * np.abs(f - g).sum() * (grid[1] - grid[0])
    assert uniform_interval_tv(B, Bp, eps) == pytest.approx(numeric, abs=1e-4)


# average sensitivity -------------------------------------------------------------------

def test_constant_algorithm_has_zero_sensitivity():
    X = Dataset(np.arange(5.0))
    point = DiscreteDistribution([0], [1.0])
    assert estimate_average_sensitivity(lambda D: point, X, "exhaustive").value == 0.0
    est = estimate_average_sensitivity(lambda D, rng: 0, X, "monte-carlo", trials=200)
    assert est.value == 0.0


def test_uniform_pick_on_two_points():
    X = Dataset([[0.0], [1.0]])
    law = lambda D: DiscreteDistribution(D.ids.tolist(), [1 / D.n] * D.n)
    assert estimate_average_sensitivity(law, X, "exhaustive").value == pytest.approx(0.5)


def test_selection_law_halves_when_n_doubles():
    def beta(n):
        X = Dataset(np.arange(float(n)))
        return estimate_average_sensitivity(
            lambda D: selection_distribution(D, uniform_profile, 1, 0.2), X).value

    # uniform selection over n ids: each deletion moves 1/n of the mass
    assert beta(4) == pytest.approx(1 / 4)
    assert beta(8) == pytest.approx(1 / 8)


def test_selection_law_is_multinomial():
    X = Dataset(np.arange(3.0))
    prof = lambda D: SensitivityProfile.from_sigma([1.0, 2.0, 1.0][: D.n])
    law = selection_distribution(X, prof, 2, 0.2).as_dict()
    assert law[(0, 1)] == pytest.approx(2 * 0.25 * 0.5)
    assert law[(1, 1)] == pytest.approx(0.25)
    assert sum(law.values()) == pytest.approx(1.0)


def test_weight_inclusive_law_only_for_single_draw():
    X = Dataset(np.arange(3.0))
    with pytest.raises(ValueError):
        selection_distribution(X, uniform_profile, 2, 0.2, include_weights=True)
    a = selection_distribution(X, uniform_profile, 1, 0.2, include_weights=True)
    assert a.tv(a) == 0.0


def test_weight_inclusive_tv_matches_interval_formula():
    # same id set but different probabilities: TV is the interval TV
    X = Dataset(np.arange(2.0))
    lawA = selection_distribution(X, lambda D: SensitivityProfile.from_sigma([1.0, 1.0]), 1, 0.4, True)
    lawB = selection_distribution(X, lambda D: SensitivityProfile.from_sigma([1.0, 1.1]), 1, 0.4, True)
    pA, pB = 0.5, 1.0 / 2.1
    # brute-force numeric TV of the two mixtures
    grid = np.linspace(0.3, 0.8, 1_000_001)
    dens = lambda mass, lo: ((grid >= lo) & (grid <= lo * 1.2)) * mass / (0.2 * lo)
    f0, g0 = dens(0.5, pA), dens(pB, pB)
    f1, g1 = dens(0.5, pA), dens(1 - pB, 1 - pB)
    dx = grid[1] - grid[0]
    numeric = 0.5 * (np.abs(f0 - g0).sum() + np.abs(f1 - g1).sum()) * dx
    assert lawA.tv(lawB) == pytest.approx(numeric, abs=1e-4)


def test_monte_carlo_agrees_with_exhaustive():
    X = Dataset(np.arange(5.0))
    exact = estimate_average_sensitivity(lambda D: selection_distribution(D, uniform_profile, 1, 0.2), X)

    def draw(D, rng):
        cs = sensitivity_sample(D, uniform_profile(D), 1, 0.2, rng)
        return tuple(int(D.ids[i]) for i in cs.draws)

    mc = estimate_average_sensitivity(draw, X, "monte-carlo", trials=4000, seed=1)
    assert abs(mc.value - exact.value) <= 3 * mc.error


def test_estimator_argument_checks():
    X = Dataset(np.arange(9.0))
    with pytest.raises(ValueError):
        estimate_average_sensitivity(lambda D: None, X, "exhaustive")
    with pytest.raises(ValueError, match="insufficient trials"):
        estimate_average_sensitivity(lambda D, r: 0, X, "monte-carlo", trials=99)


# coupling and rescaling ------------------------------------------------------------------

def test_coupler_preserves_marginal_law():
    p_old = np.array([0.5, 0.3, 0.2])
    p_new = np.array([0.2, 0.3, 0.3, 0.2])
    counts = np.zeros(4)
    kept = 0
    trials = 20_000
    for s in range(trials):
        cp = DrawCoupler()
        rng = np.random.default_rng(s)
        old = cp.draw("k", p_old, 1, rng)[0]
        new = cp.draw("k", p_new, 1, rng)[0]
        counts[new] += 1
        kept += old == new
    assert np.allclose(counts / trials, p_new, atol=0.015)
    # the draw stays put with probability 1 - TV(p_old, p_new) = 0.7
    assert kept / trials == pytest.approx(0.7, abs=0.015)


def test_normalized_rescaling_has_unit_second_moment():
    rng = np.random.default_rng(0)
    p = np.full(200_000, 0.25)
    for eps in (0.1, 0.3, 0.8):
        w = perturbed_rescaling(p, 4, 10, eps, rng)
        assert np.mean(w ** 2) * 4 * 0.25 == pytest.approx(1.0, abs=5e-3)
        assert w.max() / w.min() <= 1 + eps


def test_sample_size_formula():
    assert sample_size(0.3, 5, 0.01) == math.ceil(5 * math.log(500) / 0.09)
    assert sample_size(0.3, 3, 0.01) == 191
