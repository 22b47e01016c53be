"""Uniform-prior cross-entropy between augmented views.

Each view of a batch produces an N x C logits matrix.  For a prediction view
``s1`` and a target view ``s2`` the directional loss is::

    target = norm_rows(softmax_cols(s2 / tau_col))
    logp   = log(N / C * norm_cols(softmax_rows(s1 / tau_row)))
    loss   = -sum(target * logp) / N

Gradients flow through both views; there is no stop-gradient anywhere.
"""
from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

from . import tensor as T
from .errors import ConfigError, DimensionError, ParameterError
from .tensor import Tensor

GLOBAL = "global"
LOCAL = "local"


@dataclass
class LossConfig:
    """Softmax temperatures plus optional expected logits shape.

    ``n_batch``/``n_classes`` are only checked when set; the N/C factor is
    always taken from the logits actually passed in, so a partial final
    batch uses its own N.
    """

    tau_row: float = 0.1
    tau_col: float = 0.05
    n_batch: int | None = None
    n_classes: int | None = None

    def __post_init__(self):
        if not (self.tau_row > 0 and self.tau_col > 0):
            raise ParameterError(f"temperatures must be positive: {self.tau_row}, {self.tau_col}")
        ratio = self.tau_row / self.tau_col
        if not 2.0 <= ratio <= 3.5:
            warnings.warn(
                f"tau_row/tau_col = {ratio:.3g} is outside [2.0, 3.5]; training may not converge",
                stacklevel=2,
            )

    def check(self, s: Tensor) -> tuple[int, int]:
        n, c = s.shape
        if self.n_batch is not None and n != self.n_batch:
            raise DimensionError(f"expected {self.n_batch} rows, got {n}")
        if self.n_classes is not None and c != self.n_classes:
            raise DimensionError(f"expected {self.n_classes} classes, got {c}")
        return n, c


@dataclass
class ViewLogits:
    """Logits of every view of one batch for a single head.

    ``targets`` optionally overrides the logits a view contributes when it
    plays the target role (nearest-neighbour replacement); ``None`` entries
    fall back to ``logits``.
    """

    logits: list[Tensor]
    kinds: list[str]
    targets: list[Tensor | None] = field(default_factory=list)

    def __post_init__(self):
        if len(self.logits) < 2:
            raise ConfigError("need at least two views")
        if len(self.kinds) != len(self.logits):
            raise ConfigError("one kind per view is required")
        if any(k not in (GLOBAL, LOCAL) for k in self.kinds):
            raise ConfigError(f"view kinds must be 'global' or 'local': {self.kinds}")
        shape = self.logits[0].shape
        if any(s.shape != shape for s in self.logits):
            raise DimensionError("all views must share the same logits shape")
        if not self.targets:
            self.targets = [None] * len(self.logits)
        if len(self.targets) != len(self.logits):
            raise ConfigError("targets must align with logits")
        if any(t is not None and t.shape != shape for t in self.targets):
            raise DimensionError("target logits must match the view shape")

    @classmethod
    def pair(cls, s1: Tensor, s2: Tensor) -> "ViewLogits":
        return cls([s1, s2], [GLOBAL, GLOBAL])

    def target(self, i: int) -> Tensor:
        t = self.targets[i]
        return self.logits[i] if t is None else t


def target_distribution(s: Tensor, cfg: LossConfig) -> Tensor:
    """Column softmax at ``tau_col`` then per-row L1 normalization; rows sum to 1.

    Row-normalizing probabilities q equals a row softmax of log q, which is
    how this is evaluated; see :func:`target_distribution_direct`.
    """
    cfg.check(s)
    return T.softmax(T.log_softmax(s, "cols", cfg.tau_col), "rows", 1.0)


def target_distribution_direct(s: Tensor, cfg: LossConfig) -> Tensor:
    cfg.check(s)
    return T.l1_normalize(T.softmax(s, "cols", cfg.tau_col), "rows")


def log_prediction(s: Tensor, cfg: LossConfig) -> Tensor:
    """log(N/C * norm_cols(softmax_rows(s / tau_row))), evaluated in log space.

    Normalizing a column of probabilities p to sum one is a softmax (at
    temperature 1) of log p, so the whole expression is two stacked
    log-softmaxes plus log(N/C).  This agrees with the literal composition
    (:func:`log_prediction_direct`) wherever that is representable and stays
    finite when saturated logits underflow the softmax.
    """
    n, c = cfg.check(s)
    inner = T.log_softmax(s, "rows", cfg.tau_row)
    return T.add(T.log_softmax(inner, "cols", 1.0), math.log(n / c))


def log_prediction_direct(s: Tensor, cfg: LossConfig) -> Tensor:
    """Softmax, L1 normalization, scaling and log as four separate ops."""
    n, c = cfg.check(s)
    p = T.l1_normalize(T.softmax(s, "rows", cfg.tau_row), "cols")
    return T.log(T.scale(p, n / c))


def _cross_entropy(weights: Tensor, logp: Tensor) -> Tensor:
    n = weights.rows
    return T.scale(T.reduce_sum(T.mul(weights, logp)), -1.0 / n)


def directional_loss(s1: Tensor, s2: Tensor, cfg: LossConfig) -> Tensor:
    """Loss for predicting the view behind ``s2`` from the view behind ``s1``."""
    if s1.shape != s2.shape:
        raise DimensionError(f"view shapes differ: {s1.shape} vs {s2.shape}")
    return _cross_entropy(target_distribution(s2, cfg), log_prediction(s1, cfg))


def naive_loss(s1: Tensor, s2: Tensor, cfg: LossConfig) -> Tensor:
    """Plain cross-entropy between row softmaxes; collapses when minimized."""
    if s1.shape != s2.shape:
        raise DimensionError(f"view shapes differ: {s1.shape} vs {s2.shape}")
    cfg.check(s1)
    p2 = T.softmax(s2, "rows", cfg.tau_row)
    logp1 = T.log_softmax(s1, "rows", cfg.tau_row)
    return _cross_entropy(p2, logp1)


def symmetric_loss(s1: Tensor, s2: Tensor, cfg: LossConfig, *, t1: Tensor | None = None,
                   t2: Tensor | None = None, kind: str = "selfclassifier") -> Tensor:
    """Average of both directions.  ``t1``/``t2`` replace a view's target-side logits."""
    fn = _DIRECTIONAL[kind]
    a = fn(s1, s2 if t2 is None else t2, cfg)
    b = fn(s2, s1 if t1 is None else t1, cfg)
    return T.scale(T.add(a, b), 0.5)


_DIRECTIONAL = {"selfclassifier": directional_loss, "naive": naive_loss}


def view_pairs(kinds: Sequence[str]) -> list[tuple[int, int]]:
    """Unordered view pairs with at least one global member (local-local excluded)."""
    return [
        (i, j)
        for i, j in itertools.combinations(range(len(kinds)), 2)
        if kinds[i] == GLOBAL or kinds[j] == GLOBAL
    ]


def multiview_loss(views: ViewLogits, cfg: LossConfig, kind: str = "selfclassifier") -> Tensor:
    pairs = view_pairs(views.kinds)
    if GLOBAL not in views.kinds:
        raise ConfigError("multiview_loss needs at least one global view")
    terms = [
        symmetric_loss(views.logits[i], views.logits[j], cfg,
                       t1=views.targets[i], t2=views.targets[j], kind=kind)
        for i, j in pairs
    ]
    total = terms[0]
    for t in terms[1:]:
        total = T.add(total, t)
    return T.scale(total, 1.0 / len(terms))


def multihead_loss(
    per_head_views: Sequence[ViewLogits],
    cfgs: LossConfig | Sequence[LossConfig],
    kind: str = "selfclassifier",
) -> Tensor:
    """Unweighted mean of :func:`multiview_loss` over classification heads."""
    if not per_head_views:
        raise ConfigError("multihead_loss needs at least one head")
    if isinstance(cfgs, LossConfig):
        cfgs = [cfgs] * len(per_head_views)
    if len(cfgs) != len(per_head_views):
        raise ConfigError("one LossConfig per head is required")
    total = None
    for views, cfg in zip(per_head_views, cfgs):
        term = multiview_loss(views, cfg, kind)
        total = term if total is None else T.add(total, term)
    return T.scale(total, 1.0 / len(per_head_views))
