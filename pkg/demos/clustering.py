"""
Consistent online k-means
=========================

Each step solves weighted k-means on a two-stage coreset of the prefix.
Fresh mode resamples every step; lazy mode couples the draws across steps
and keeps the centers whenever the sampled multisets repeat.
"""
from batch2online import clustering_opt, online_clustering, random_order, two_stage_coreset
from batch2online.bench import generate

data = generate("cluster", {"n": 300, "k": 3}, seed=0)
_, opt = clustering_opt(data.points, 3, 2, clip=True)
stream = random_order(data, seed=0)

# with the default constants both stages are larger than any prefix of 300
# points, so every point is kept and the new arrival changes the coreset
cs = two_stage_coreset(data.points, k=3, z=2, epsilon=0.3, delta=0.01, seed=0)
print("default: stage sizes %s, exhaustive %s" % ((cs.n1, cs.n2), cs.exhaustive))

# shrinking the hidden constants gives genuinely sampled stages
small = dict(const_n1=1e-117, const_n2=3e-16)
for label, opts in (("default", {}), ("small", small)):
    for mode in ("fresh", "lazy"):
        ledger = online_clustering(stream, 3, 2, 0.3, mode=mode, seed=0, clip=True, **opts)
        print("%-7s %-5s total %.3f  opt %.3f  changes %d"
              % (label, mode, ledger.total_loss(), opt, sum(ledger.changed)))
