"""Clustering metrics, their chance correction, and scoring at coarser levels.

Run: python3 demos/03_metrics_and_hierarchy.py
"""
import numpy as np

from selfclassifier import metrics as M

truth = [0, 0, 1, 1, 2, 2]
pred = [0, 1, 0, 1, 2, 2]
print("flat:", {k: round(v, 4) for k, v in M.flat_metrics(pred, truth).items()})

# leaves 0 and 1 share a superclass
h = M.HierarchyMap({"level1": {0: 0, 1: 0, 2: 1}})
for mode in ("via_matching", "hungarian", "majority"):
    res = M.hierarchical_eval(pred, truth, h, mode)
    print(f"level1 acc ({mode}): {res['level1']['acc']:.4f}")

# NMI rewards random over-clustering, AMI and ARI do not
rng = np.random.default_rng(0)
truth = np.arange(200) % 5
for k in (5, 20, 100):
    noise = rng.integers(0, k, 200)
    print(f"random {k:>3} clusters: nmi {M.nmi(noise, truth):.3f}  ami {M.ami(noise, truth):+.3f}  "
          f"ari {M.ari(noise, truth):+.3f}")

acc, mapping = M.hungarian_acc([2, 2, 0, 0, 1], [0, 0, 1, 1, 1])
print(f"hungarian acc {acc:.2f} with mapping {mapping}")
