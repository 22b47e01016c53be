"""Gaussian-mixture datasets, vector-space view augmentation and the NN queue."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ParameterError

GENERATOR_VERSION = 1


@dataclass
class Dataset:
    points: np.ndarray
    labels: np.ndarray
    n_classes: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.points.ndim != 2 or len(self.points) != len(self.labels):
            raise ParameterError("points must be M x D with one label per row")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise ParameterError("labels out of range")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def dim(self) -> int:
        return self.points.shape[1]


def _unit_directions(rng: np.random.Generator, k: int, d: int) -> np.ndarray:
    while True:
        v = rng.standard_normal((k, d))
        norms = np.linalg.norm(v, axis=1, keepdims=True)
        if np.all(norms > 1e-12):
            v /= norms
            # in D=1 there are only two unit directions, so K > 2 cannot be pairwise distinct
            if d == 1 or k == 1 or _min_pairwise_distance(v) > 1e-6:
                return v


def _min_pairwise_distance(v: np.ndarray) -> float:
    diff = v[:, None, :] - v[None, :, :]
    dist = np.sqrt((diff ** 2).sum(-1))
    return float(dist[np.triu_indices(len(v), 1)].min())


def generate_mixture(
    seed: int,
    n_classes: int,
    dim: int,
    n_points: int,
    separation: float,
    balanced: bool = True,
) -> Dataset:
    """Isotropic unit-variance Gaussians centred at ``separation`` times random unit vectors.

    With ``balanced`` every class gets ``n_points // n_classes`` points (the
    first ``n_points % n_classes`` classes one more); otherwise labels are
    drawn uniformly at random.  Rows are shuffled.
    """
    if n_classes < 2 or n_points < n_classes or dim < 1 or separation < 0:
        raise ParameterError(
            f"need M >= K >= 2, D >= 1, separation >= 0; got M={n_points}, K={n_classes}, "
            f"D={dim}, separation={separation}"
        )
    rng = np.random.default_rng(np.random.SeedSequence([seed, GENERATOR_VERSION]))
    means = separation * _unit_directions(rng, n_classes, dim)
    if balanced:
        labels = np.arange(n_points) % n_classes
        labels = labels[rng.permutation(n_points)]
    else:
        labels = rng.integers(0, n_classes, size=n_points)
    points = means[labels] + rng.standard_normal((n_points, dim))
    meta = {"seed": seed, "separation": separation, "noise_scale": 1.0,
            "balanced": balanced, "generator_version": GENERATOR_VERSION}
    return Dataset(points, labels, n_classes, meta)


def augment(
    x: np.ndarray,
    kind: str,
    rng: np.random.Generator | int,
    sigma_global: float = 0.5,
    sigma_local: float = 0.5,
    keep_fraction: float = 0.5,
) -> np.ndarray:
    """Random view of a point (1-D) or of every row of a batch (2-D).

    ``global`` adds isotropic noise.  ``local`` keeps a random subset of
    ``round(keep_fraction * D)`` coordinates per row, zeroes the rest, then
    adds noise.
    """
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    n, d = X.shape
    if kind == "global":
        out = X + sigma_global * rng.standard_normal((n, d)) if sigma_global else X.copy()
    elif kind == "local":
        if not 0.0 < keep_fraction <= 1.0:
            raise ParameterError("keep_fraction must be in (0, 1]")
        keep = max(1, int(round(keep_fraction * d)))
        if keep < d:
            ranks = rng.random((n, d)).argsort(axis=1).argsort(axis=1)
            out = np.where(ranks < keep, X, 0.0)
        else:
            out = X.copy()
        if sigma_local:
            out = out + sigma_local * rng.standard_normal((n, d))
    else:
        raise ParameterError(f"kind must be 'global' or 'local', got {kind!r}")
    return out[0] if single else out


class NNQueue:
    """Fixed-capacity FIFO of unit-norm embeddings with nearest-neighbour lookup."""

    def __init__(self, capacity: int, dim: int):
        if capacity < 1:
            raise ParameterError("queue capacity must be >= 1")
        self.capacity = capacity
        self.dim = dim
        self._buf = np.zeros((capacity, dim))
        self._seq = np.full(capacity, -1, dtype=np.int64)
        self._cursor = 0
        self._pushed = 0

    def __len__(self) -> int:
        return min(self._pushed, self.capacity)

    @property
    def fill(self) -> float:
        return len(self) / self.capacity

    def push(self, vectors: np.ndarray) -> None:
        V = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
        if V.shape[1] != self.dim:
            raise ParameterError(f"queue holds {self.dim}-vectors, got {V.shape[1]}")
        norms = np.linalg.norm(V, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-6):
            raise ParameterError("queue entries must have unit norm")
        if len(V) > self.capacity:
            skipped = len(V) - self.capacity
            self._pushed += skipped
            V = V[skipped:]
        idx = (self._cursor + np.arange(len(V))) % self.capacity
        self._buf[idx] = V
        self._seq[idx] = self._pushed + np.arange(len(V))
        self._cursor = int((self._cursor + len(V)) % self.capacity)
        self._pushed += len(V)

    def contents(self) -> np.ndarray:
        """Stored vectors, oldest first."""
        order = np.argsort(self._seq[: len(self)] if self._pushed < self.capacity else self._seq)
        return self._buf[order].copy()

    def nearest(self, queries: np.ndarray) -> np.ndarray:
        """For each query row, the stored vector with the largest dot product.

        Exact ties go to the oldest entry.  An empty queue returns the
        queries unchanged.
        """
        Q = np.asarray(queries, dtype=np.float64)
        single = Q.ndim == 1
        Q = np.atleast_2d(Q)
        n = len(self)
        if n == 0:
            return Q[0].copy() if single else Q.copy()
        bank = self._buf[:n]
        seq = self._seq[:n]
        sims = Q @ bank.T
        best = sims.max(axis=1, keepdims=True)
        choice = np.where(sims == best, seq[None, :], np.iinfo(np.int64).max).argmin(axis=1)
        out = bank[choice].copy()
        return out[0] if single else out


def nn_replace(queue: NNQueue, embedding: np.ndarray) -> np.ndarray:
    return queue.nearest(embedding)


# -- CSV I/O -----------------------------------------------------------------


def write_csv(dataset: Dataset, path) -> None:
    """One row per point: ``f0..f{D-1}`` then ``label``; floats with 17 significant digits."""
    d = dataset.dim
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"f{i}" for i in range(d)] + ["label"])
        for row, lab in zip(dataset.points, dataset.labels):
            w.writerow([format(v, ".17g") for v in row] + [int(lab)])


def read_csv(path, n_classes: int | None = None) -> Dataset:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParameterError(f"{path}: empty file")
    header = rows[0]
    if not header or header[-1] != "label" or header[:-1] != [f"f{i}" for i in range(len(header) - 1)]:
        raise ParameterError(f"{path}: header must be f0,...,f{{D-1}},label")
    body = rows[1:]
    points = np.array([[float(v) for v in r[:-1]] for r in body], dtype=np.float64).reshape(len(body), -1)
    labels = np.array([int(r[-1]) for r in body], dtype=np.int64)
    k = n_classes if n_classes is not None else (int(labels.max()) + 1 if len(labels) else 0)
    return Dataset(points, labels, k, {"source": str(Path(path))})


def read_labels(path) -> np.ndarray:
    """Labels from a data CSV (``label`` column) or a one-label-per-line text file."""
    text = Path(path).read_text().splitlines()
    if text and text[0].split(",")[-1].strip() == "label":
        return read_csv(path).labels
    return np.array([int(line) for line in text if line.strip()], dtype=np.int64)
