"""
Online learning with a plain batch solver
=========================================

A scalar least-squares slope is refit on every prefix of a random-order
stream.  The ledger records the loss paid on each arriving point and
whether the played slope moved.
"""
import numpy as np

from batch2online import Dataset, LossModel, epsilon_regret, inconsistency, random_order, run_online

rng = np.random.default_rng(0)
a = rng.uniform(0.5, 1.5, 200)
b = 0.7 * a + 0.05 * rng.standard_normal(200)
data = Dataset(np.column_stack([a, b]))

# absolute residual of the slope on a point [a, b]
loss = LossModel(lambda x, pts: np.abs(pts[:, 0] * x - pts[:, 1]))


def slope(prefix, rng):
    if len(prefix) == 0:
        return 0.0
    return float(prefix[:, 0] @ prefix[:, 1] / (prefix[:, 0] @ prefix[:, 0]))


ledger = run_online(slope, random_order(data, seed=1), loss, seed=1)
opt = loss.aggregate(slope(data.points, None), data.points)

print("first five step losses:", np.round(ledger.step_losses[:5], 4))
print("total loss  %.4f" % ledger.total_loss())
print("hindsight   %.4f" % opt)
print("0.1-regret  %.4f" % epsilon_regret(ledger, opt, 0.1))
# an exact refit moves on almost every step
print("changes     %d of %d" % (inconsistency(ledger), len(ledger.changed)))
