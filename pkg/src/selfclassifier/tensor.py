"""Dense 2-D tensors with tape-style reverse-mode differentiation.

Every op returns a new :class:`Tensor` that remembers its parents and a
closure mapping the upstream gradient to one gradient per parent.  Calling
:meth:`Tensor.backward` on a 1x1 result replays those closures in reverse
topological order.  The graph lives only in the tensors themselves, so two
graphs built in different threads never share state.

Axis names refer to the slice being normalized or reduced: ``"rows"`` means
"each row independently" (numpy axis 1), ``"cols"`` means "each column
independently" (numpy axis 0).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import (
    BatchTooSmallError,
    DegenerateSliceError,
    DimensionError,
    DomainError,
    ParameterError,
)

L1_EPS = 1e-12
L1_DEGENERATE = 1e-300
L2_EPS = 1e-12

_AXES = {"rows": 1, "cols": 0}


def _np_axis(axis: str) -> int:
    try:
        return _AXES[axis]
    except KeyError:
        raise ParameterError(f"axis must be 'rows' or 'cols', got {axis!r}") from None


class Tensor:
    """A 2-D float64 array that can take part in a differentiable graph."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise DimensionError(f"Tensor must be at most 2-D, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(arr) if self.requires_grad else None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.name = name

    @classmethod
    def _from_op(cls, data: np.ndarray, parents: Sequence["Tensor"], backward) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.name = None
        out.grad = None
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward = None
        return out

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def item(self) -> float:
        if self.data.shape != (1, 1):
            raise DimensionError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.data[0, 0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __add__(self, other) -> "Tensor":
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self) -> "Tensor":
        return scale(self, -1.0)

    def __sub__(self, other) -> "Tensor":
        return add(self, -other if isinstance(other, Tensor) else -float(other))

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into ``grad`` of every leaf requiring it."""
        if self.data.shape != (1, 1):
            raise DimensionError(f"backward() needs a scalar (1x1) tensor, got {self.shape}")
        if not self.requires_grad:
            return
        order = _topological_order(self)
        upstream: dict[int, np.ndarray] = {id(self): np.ones((1, 1))}
        for node in reversed(order):
            g = upstream.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad += g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in upstream:
                    upstream[key] = upstream[key] + pg
                else:
                    upstream[key] = pg


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# -- linear algebra ---------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.cols != b.rows:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    A, B = a.data, b.data

    def backward(g):
        return g @ B.T, A.T @ g

    return Tensor._from_op(A @ B, (a, b), backward)


def transpose(x: Tensor) -> Tensor:
    return Tensor._from_op(x.data.T.copy(), (x,), lambda g: (g.T,))


# -- normalizations ----------------------------------------------------------


def _check_temperature(temperature: float) -> float:
    t = float(temperature)
    if not t > 0.0 or not np.isfinite(t):
        raise ParameterError(f"temperature must be positive and finite, got {temperature}")
    return t


def softmax(x: Tensor, axis: str, temperature: float = 1.0) -> Tensor:
    """Softmax of ``x / temperature`` over each slice named by ``axis``."""
    ax = _np_axis(axis)
    t = _check_temperature(temperature)
    z = x.data / t
    z = z - z.max(axis=ax, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=ax, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=ax, keepdims=True)) / t,)

    return Tensor._from_op(y, (x,), backward)


def log_softmax(x: Tensor, axis: str, temperature: float = 1.0) -> Tensor:
    """log(softmax(x / temperature)) computed without forming the softmax."""
    ax = _np_axis(axis)
    t = _check_temperature(temperature)
    z = x.data / t
    m = z.max(axis=ax, keepdims=True)
    lse = m + np.log(np.exp(z - m).sum(axis=ax, keepdims=True))
    y = z - lse
    p = np.exp(y)

    def backward(g):
        return ((g - p * g.sum(axis=ax, keepdims=True)) / t,)

    return Tensor._from_op(y, (x,), backward)


def l1_normalize(x: Tensor, axis: str, eps: float = L1_EPS) -> Tensor:
    """Divide each slice of a non-negative tensor by its sum."""
    ax = _np_axis(axis)
    X = x.data
    if X.size and X.min() < 0.0:
        raise DomainError("l1_normalize expects non-negative entries")
    s = X.sum(axis=ax, keepdims=True)
    if np.any(s < L1_DEGENERATE):
        raise DegenerateSliceError(
            f"l1_normalize: {int(np.sum(s < L1_DEGENERATE))} slice(s) along {axis} sum to zero"
        )
    d = s + eps
    y = X / d

    def backward(g):
        return (g / d - (g * X).sum(axis=ax, keepdims=True) / (d * d),)

    return Tensor._from_op(y, (x,), backward)


def l2_normalize_rows(x: Tensor, eps: float = L2_EPS) -> Tensor:
    X = x.data
    norm = np.sqrt((X * X).sum(axis=1, keepdims=True))
    if np.any(norm <= eps):
        raise DegenerateSliceError("l2_normalize_rows: a row has (near) zero norm")
    y = X / norm

    def backward(g):
        return ((g - y * (g * y).sum(axis=1, keepdims=True)) / norm,)

    return Tensor._from_op(y, (x,), backward)


# -- pointwise ---------------------------------------------------------------


def log(x: Tensor) -> Tensor:
    X = x.data
    if np.any(X <= 0.0):
        raise DomainError("log of a non-positive entry")
    return Tensor._from_op(np.log(X), (x,), lambda g: (g / X,))


def leaky_relu(x: Tensor, slope: float = 0.01) -> Tensor:
    X = x.data
    factor = np.where(X > 0.0, 1.0, slope)
    return Tensor._from_op(X * factor, (x,), lambda g: (g * factor,))


def scale(x: Tensor, k: float) -> Tensor:
    k = float(k)
    return Tensor._from_op(x.data * k, (x,), lambda g: (g * k,))


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"mul needs equal shapes, got {a.shape} and {b.shape}")
    A, B = a.data, b.data
    return Tensor._from_op(A * B, (a, b), lambda g: (g * B, g * A))


def add(a: Tensor, b) -> Tensor:
    """Elementwise sum of two equal-shape tensors, or tensor plus a scalar."""
    if not isinstance(b, Tensor):
        c = float(b)
        return Tensor._from_op(a.data + c, (a,), lambda g: (g,))
    if a.shape != b.shape:
        raise DimensionError(f"add needs equal shapes, got {a.shape} and {b.shape}")
    return Tensor._from_op(a.data + b.data, (a, b), lambda g: (g, g))


# -- reductions --------------------------------------------------------------


def reduce_sum(x: Tensor, axis: str = "all") -> Tensor:
    shape = x.shape
    if axis == "all":
        out = np.array([[x.data.sum()]])
    else:
        out = x.data.sum(axis=_np_axis(axis), keepdims=True)
    return Tensor._from_op(out, (x,), lambda g: (np.broadcast_to(g, shape).copy(),))


def reduce_mean(x: Tensor, axis: str = "all") -> Tensor:
    if axis == "all":
        n = x.data.size
    else:
        n = x.shape[_np_axis(axis)]
    return scale(reduce_sum(x, axis), 1.0 / n)


# -- batch normalization -----------------------------------------------------


@dataclass
class BatchNormState:
    """Running statistics of one batch-norm layer (per feature)."""

    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5

    @classmethod
    def create(cls, width: int, momentum: float = 0.1, eps: float = 1e-5) -> "BatchNormState":
        return cls(np.zeros((1, width)), np.ones((1, width)), momentum, eps)


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    state: BatchNormState,
    training: bool = True,
) -> Tensor:
    """Per-feature standardization followed by the affine ``gamma * xhat + beta``.

    In training mode the batch statistics are used and the running
    statistics are updated in place (the running variance uses the unbiased
    estimate); in eval mode the running statistics are used.
    """
    X = x.data
    n, d = X.shape
    if gamma.shape != (1, d) or beta.shape != (1, d):
        raise DimensionError(f"batch_norm affine params must be 1x{d}")
    eps = state.eps
    if training:
        if n < 2:
            raise BatchTooSmallError(f"batch_norm in train mode needs N >= 2, got {n}")
        mu = X.mean(axis=0, keepdims=True)
        xc = X - mu
        var = (xc * xc).mean(axis=0, keepdims=True)
        m = state.momentum
        state.running_mean = (1.0 - m) * state.running_mean + m * mu
        state.running_var = (1.0 - m) * state.running_var + m * var * (n / (n - 1))
    else:
        xc = X - state.running_mean
        var = state.running_var
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    G = gamma.data
    y = G * xhat + beta.data

    if training:
        def backward(g):
            dgamma = (g * xhat).sum(axis=0, keepdims=True)
            dbeta = g.sum(axis=0, keepdims=True)
            dx = (G * inv / n) * (n * g - dbeta - xhat * dgamma)
            return dx, dgamma, dbeta
    else:
        def backward(g):
            return g * G * inv, (g * xhat).sum(axis=0, keepdims=True), g.sum(axis=0, keepdims=True)

    return Tensor._from_op(y, (x, gamma, beta), backward)


@dataclass
class GradCheckResult:
    max_rel_error: float
    analytic: np.ndarray = field(repr=False)
    numeric: np.ndarray = field(repr=False)


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-10) -> float:
    """max |a - n| scaled by the larger of the two gradients' max magnitude."""
    scale_ = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), floor)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale_)


def numeric_gradient(f: Callable[[], float], x: np.ndarray, step: float = 1e-4) -> np.ndarray:
    """Central finite differences of the scalar ``f()`` with respect to ``x`` (perturbed in place)."""
    grad = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        orig = x[idx]
        x[idx] = orig + step
        fp = f()
        x[idx] = orig - step
        fm = f()
        x[idx] = orig
        grad[idx] = (fp - fm) / (2.0 * step)
    return grad


def check_gradient(
    build: Callable[[], Tensor], leaf: Tensor, step: float = 1e-4
) -> GradCheckResult:
    """Compare ``leaf.grad`` after ``build().backward()`` with finite differences.

    ``build`` must rebuild the graph from the current ``leaf.data`` on each
    call so that in-place perturbations are seen.
    """
    leaf.zero_grad()
    build().backward()
    analytic = leaf.grad.copy()
    numeric = numeric_gradient(lambda: build().item(), leaf.data, step)
    return GradCheckResult(relative_error(analytic, numeric), analytic, numeric)
