"""Why the uniform-prior loss resists collapse while plain cross-entropy does not.

Run: python3 demos/01_loss_and_collapse.py
"""
import math

import numpy as np

from selfclassifier import LossConfig, Tensor, directional_loss, symmetric_loss
from selfclassifier.loss import naive_loss

N, C = 8, 4
cfg = LossConfig()


def one_hot(labels, magnitude=50.0):
    s = np.zeros((N, C))
    s[np.arange(N), labels] = magnitude
    return Tensor(s)


balanced = one_hot(np.arange(N) % C)
collapsed = one_hot(np.zeros(N, dtype=int))
print(f"ln C = {math.log(C):.6f}\n")
print(f"{'logits':<12}{'self-classifier':>18}{'naive CE':>12}")
for name, s in [("balanced", balanced), ("collapsed", collapsed)]:
    print(f"{name:<12}{abs(symmetric_loss(s, s, cfg).item()):>18.6f}{abs(naive_loss(s, s, cfg).item()):>12.6f}")

# collapse costs exactly ln C however confident the network is
for mag in (1, 10, 1e3, 1e6):
    print(f"collapsed, magnitude {mag:>9g}: {directional_loss(one_hot(np.zeros(N, int), mag), one_hot(np.zeros(N, int), mag), cfg).item():.9f}")

