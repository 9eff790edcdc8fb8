"""
Online regression from row sketches
===================================

Rows ``[a, b]`` arrive in random order.  Each step solves least squares on
a leverage-score sample of the prefix and pays ``|a.x - b|`` clipped to 1.
"""
import numpy as np

from batch2online import RowMatrix, leverage_scores, online_regression, random_order, regression_opt
from batch2online import sketch_rows, sketched_solve
from batch2online.bench import generate

data, xbar = generate("regress", {"n": 1000, "d": 5}, seed=0, return_truth=True)
A = RowMatrix.from_points(data.points)

tau = leverage_scores(A.rows)
print("leverage sums to %.3f (d = %d)" % (tau.sum(), A.d))

S = sketch_rows(A.rows, 100, 0.3, seed=0)
x = sketched_solve(S, A)
print("sketched error |x - xbar| = %.4f" % np.linalg.norm(x - xbar))

ledger = online_regression(random_order(data, 0), 0.3, seed=0)
_, opt = regression_opt(data.points)
print("online total %.2f, hindsight %.2f, per-point gap %.4f"
      % (ledger.total_loss(), opt, (ledger.total_loss() - opt) / data.n))
