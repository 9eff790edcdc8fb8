"""
Online low-rank approximation
=============================

Columns arrive one at a time.  The played subspace is the top-k left
singular space of a ridge-leverage sample of the columns seen so far.
"""
import numpy as np

from batch2online import lowrank_opt, online_lowrank, pcp_sample, random_order, top_k_left_singular
from batch2online.bench import generate
from batch2online.lowrank import frobenius_residual

data = generate("lowrank", {"n": 300, "d": 20, "k": 3}, seed=0)
A = data.points.T

exact = frobenius_residual(top_k_left_singular(A, 3), A)
for m in (10, 40, 160):
    sketch = pcp_sample(A, 3, m, 0.3, seed=0)
    approx = frobenius_residual(top_k_left_singular(sketch.matrix, 3), A)
    print("m=%3d  residual %.4f  (best %.4f)" % (m, approx, exact))

ledger = online_lowrank(random_order(data, 0), 3, 0.3, seed=0)
_, opt = lowrank_opt(data.points, 3, clip=True)
print("online total %.3f, hindsight %.3f, sample size %d" % (ledger.total_loss(), opt, ledger.extras["m"]))
