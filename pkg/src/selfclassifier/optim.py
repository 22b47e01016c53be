"""LARS with SGD momentum and a linear-warmup / cosine-decay learning rate."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError, ParameterError


@dataclass
class OptimConfig:
    base_lr: float = 4.8
    warmup_start_lr: float = 0.3
    final_lr: float = 0.0048
    warmup_epochs: float = 10
    total_epochs: float = 800
    weight_decay: float = 1e-6
    momentum: float = 0.9
    lars_eta: float = 0.001
    lars_eps: float = 1e-9

    def __post_init__(self):
        if not 0 <= self.warmup_epochs < self.total_epochs:
            raise ConfigError(
                f"need 0 <= warmup_epochs < total_epochs, got {self.warmup_epochs}, {self.total_epochs}"
            )
        if min(self.base_lr, self.warmup_start_lr, self.final_lr) < 0:
            raise ConfigError("learning rates must be non-negative")

    def scaled_for_batch(self, batch_size: int, reference: int = 4096) -> "OptimConfig":
        """Linear scaling of all three learning rates by ``batch_size / reference``."""
        k = batch_size / reference
        return OptimConfig(
            base_lr=self.base_lr * k,
            warmup_start_lr=self.warmup_start_lr * k,
            final_lr=self.final_lr * k,
            warmup_epochs=self.warmup_epochs,
            total_epochs=self.total_epochs,
            weight_decay=self.weight_decay,
            momentum=self.momentum,
            lars_eta=self.lars_eta,
            lars_eps=self.lars_eps,
        )


def lr_at(cfg: OptimConfig, epoch: float) -> float:
    """Learning rate at a (fractional) epoch.

    Linear from ``warmup_start_lr`` to ``base_lr`` during warmup, then a half
    cosine from ``base_lr`` down to ``final_lr`` at ``total_epochs``.  Both
    pieces are written as convex combinations so the endpoints are exact.
    """
    if not 0.0 <= epoch <= cfg.total_epochs:
        raise ParameterError(f"epoch {epoch} outside [0, {cfg.total_epochs}]")
    if epoch < cfg.warmup_epochs:
        f = epoch / cfg.warmup_epochs
        return (1.0 - f) * cfg.warmup_start_lr + f * cfg.base_lr
    t = (epoch - cfg.warmup_epochs) / (cfg.total_epochs - cfg.warmup_epochs)
    w = 0.5 * (1.0 + math.cos(math.pi * t))
    return (1.0 - w) * cfg.final_lr + w * cfg.base_lr


@dataclass
class OptimState:
    momentum: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def lars_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: OptimState,
    cfg: OptimConfig,
    lr: float,
    exempt: set[str] | frozenset[str] = frozenset(),
) -> None:
    """One in-place LARS update of every array in ``params``.

    Names in ``exempt`` get plain SGD momentum (no trust ratio, no weight
    decay).
    """
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise DimensionError(f"{name}: grad shape {g.shape} != param shape {p.shape}")
        if name in exempt:
            update = g
        else:
            update = g + cfg.weight_decay * p
            p_norm = np.linalg.norm(p)
            u_norm = np.linalg.norm(update)
            if p_norm > 0.0 and u_norm > 0.0:
                update = (cfg.lars_eta * p_norm / (u_norm + cfg.lars_eps)) * update
        buf = state.momentum.get(name)
        if buf is None:
            buf = np.zeros_like(p)
            state.momentum[name] = buf
        buf *= cfg.momentum
        buf += update
        if lr != 0.0:
            p -= lr * buf
    state.step += 1


class LARS:
    """Stateful wrapper binding :func:`lars_step` to a set of named tensors."""

    def __init__(self, tensors: dict, cfg: OptimConfig, exempt=frozenset()):
        self.tensors = dict(tensors)
        self.cfg = cfg
        self.exempt = set(exempt)
        self.state = OptimState()

    def step(self, lr: float) -> None:
        lars_step(
            {k: t.data for k, t in self.tensors.items()},
            {k: t.grad for k, t in self.tensors.items()},
            self.state, self.cfg, lr, self.exempt,
        )

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.zero_grad()
