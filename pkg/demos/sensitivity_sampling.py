"""
Sensitivity sampling and its stability
======================================

Draw weighted samples proportional to a sensitivity profile, then measure
how much the output law moves when one input point is deleted.
"""
import numpy as np

from batch2online import Dataset, SensitivityProfile, estimate_average_sensitivity, selection_distribution
from batch2online import sensitivity_sample, uniform_interval_tv
from batch2online.bench import fit_exponent

X = Dataset(np.random.default_rng(0).uniform(-0.5, 0.5, (50, 2)))
sq = (X.points ** 2).sum(axis=1)
profile = SensitivityProfile.from_sigma(1.0 / X.n + sq / sq.sum())

cs = sensitivity_sample(X, profile, m=20, epsilon=0.3, seed=0)
print("distinct points kept:", len(set(cs.draws)))
print("total weight %.2f (n = %d)" % (cs.weights.sum(), X.n))

# the perturbed probability decouples nearby inputs
for eps in (0.1, 0.3):
    print("TV of perturbations of 1.00 vs 1.02, eps=%.1f: %.3f" % (eps, uniform_interval_tv(1.0, 1.02, eps)))

# exact average sensitivity of one uniform draw, for growing n
sizes = [4, 5, 6, 7, 8]
betas = []
for n in sizes:
    small = Dataset(np.arange(float(n)).reshape(-1, 1))
    law = lambda D: selection_distribution(D, lambda S: SensitivityProfile.uniform(S.n), 1, 0.3)
    betas.append(estimate_average_sensitivity(law, small, "exhaustive").value)
print("beta:", np.round(betas, 4))
print("fitted exponent of n: %.2f" % fit_exponent(sizes, betas))
