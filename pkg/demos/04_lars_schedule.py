"""The warmup + cosine learning rate and what a LARS step does with it.

Run: python3 demos/04_lars_schedule.py
"""
import numpy as np

from selfclassifier import optim as O

cfg = O.OptimConfig()
for epoch in (0, 5, 10, 100, 400, 700, 800):
    print(f"epoch {epoch:>3}: lr {O.lr_at(cfg, epoch):.6f}")

# the trust ratio makes the step proportional to the weight norm, not the gradient norm
for scale in (1.0, 100.0):
    p = {"w": np.array([[3.0, 4.0]])}
    g = {"w": scale * np.array([[1.0, 0.0]])}
    O.lars_step(p, g, O.OptimState(), O.OptimConfig(weight_decay=0, momentum=0), lr=1.0)
    print(f"grad scale {scale:>5}: step {np.round(np.array([[3.0, 4.0]]) - p['w'], 6).tolist()}")
