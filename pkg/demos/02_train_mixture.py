"""Train on a 4-class Gaussian mixture and watch accuracy and class balance.

Run: python3 demos/02_train_mixture.py [epochs]
"""
import math
import sys
from pathlib import Path

from selfclassifier import harness as H

epochs = sys.argv[1] if len(sys.argv) > 1 else "60"
cfg = H.load_config(Path(__file__).parent.parent / "configs" / "desk.cfg",
                    {"epochs": epochs, "eval_every": "10"})
report = H.train(cfg)

print(f"{'epoch':>5} {'loss':>8} {'lr':>8}  entropy/lnC per head      acc per head")
for e in report.epochs:
    if e.acc is None:
        continue
    ratio = " ".join(f"{h / math.log(c):.2f}" for h, c in zip(e.entropy, report.head_sizes))
    acc = " ".join(f"{a:.3f}" for a in e.acc)
    print(f"{e.epoch:>5} {e.loss:>8.4f} {e.lr:>8.4f}  {ratio:<24}  {acc}")

final = report.final_metrics
for head in final["heads"]:
    print(f"head C={head['classes']:>2}: acc {head['acc']:.3f} nmi {head['nmi']:.3f} "
          f"ami {head['ami']:.3f} ari {head['ari']:.3f}")
print(f"K-NN probe (k={final['knn_k']}): {final['knn']:.3f}   collapse alarms: {len(report.alarms)}")

# the same run with plain cross-entropy collapses
naive = H.train(H.load_config(Path(__file__).parent.parent / "configs" / "naive.cfg", {"epochs": "15"}))
print("naive loss, base-head entropy/ln4 by epoch:",
      " ".join(f"{e.entropy[0] / math.log(4):.2f}" for e in naive.epochs))
