"""Clustering metrics: NMI, AMI, ARI, Hungarian accuracy, hierarchy rollup, K-NN probe.

All entropies use natural logarithms.  Flat metrics depend only on the
contingency table, so they are invariant to relabeling either partition.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import DimensionError, ParameterError

AVERAGES = ("geometric", "arithmetic", "max", "min")


@dataclass
class Contingency:
    table: np.ndarray          # K_pred x K_true counts
    pred_labels: np.ndarray    # label value of each row
    true_labels: np.ndarray    # label value of each column

    @property
    def total(self) -> int:
        return int(self.table.sum())

    @property
    def row_sums(self) -> np.ndarray:
        return self.table.sum(axis=1)

    @property
    def col_sums(self) -> np.ndarray:
        return self.table.sum(axis=0)


def contingency(pred, truth) -> Contingency:
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape or pred.ndim != 1:
        raise DimensionError(f"partitions must be 1-D and equal length: {pred.shape} vs {truth.shape}")
    pv, pi = np.unique(pred, return_inverse=True)
    tv, ti = np.unique(truth, return_inverse=True)
    table = np.zeros((len(pv), len(tv)), dtype=np.int64)
    np.add.at(table, (pi, ti), 1)
    return Contingency(table, pv, tv)


def _entropy(counts: np.ndarray) -> float:
    n = counts.sum()
    p = counts[counts > 0] / n
    return float(-(p * np.log(p)).sum())


def _mutual_info(table: np.ndarray) -> float:
    n = table.sum()
    a = table.sum(axis=1, keepdims=True)
    b = table.sum(axis=0, keepdims=True)
    nz = table > 0
    nij = table[nz].astype(np.float64)
    outer = (a * b)[nz].astype(np.float64)
    return float(max((nij / n * (np.log(nij) + math.log(n) - np.log(outer))).sum(), 0.0))


def _average(h1: float, h2: float, method: str) -> float:
    if method == "geometric":
        return math.sqrt(h1 * h2)
    if method == "arithmetic":
        return 0.5 * (h1 + h2)
    if method == "max":
        return max(h1, h2)
    if method == "min":
        return min(h1, h2)
    raise ParameterError(f"average must be one of {AVERAGES}, got {method!r}")


def nmi(pred, truth, average: str = "geometric") -> float:
    ct = contingency(pred, truth)
    if ct.total == 0:
        raise DimensionError("empty partitions")
    hp, ht = _entropy(ct.row_sums), _entropy(ct.col_sums)
    if hp == 0.0 and ht == 0.0:
        return 1.0
    if hp == 0.0 or ht == 0.0:
        return 0.0
    denom = _average(hp, ht, average)
    return float(min(_mutual_info(ct.table) / denom, 1.0))


class _LogFactorials:
    """Growing table of log(k!) built from cumulative sums of log k."""

    def __init__(self):
        self._table = np.zeros(1)

    def __call__(self, n: int) -> np.ndarray:
        if n >= len(self._table):
            size = max(n + 1, 2 * len(self._table))
            self._table = np.concatenate(([0.0], np.cumsum(np.log(np.arange(1, size)))))
        return self._table


_log_factorial = _LogFactorials()


def expected_mutual_info(a: np.ndarray, b: np.ndarray) -> float:
    """E[MI] over random relabelings with fixed marginals ``a`` (rows) and ``b`` (cols)."""
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    n = int(a.sum())
    lf = _log_factorial(n)
    log_n = math.log(n)
    total = 0.0
    for ai in a:
        for bj in b:
            lo = max(1, ai + bj - n)
            hi = min(ai, bj)
            if lo > hi:
                continue
            k = np.arange(lo, hi + 1)
            log_p = (lf[ai] + lf[bj] + lf[n - ai] + lf[n - bj] - lf[n]
                     - lf[k] - lf[ai - k] - lf[bj - k] - lf[n - ai - bj + k])
            term = (k / n) * (np.log(k) + log_n - math.log(ai) - math.log(bj))
            total += float((term * np.exp(log_p)).sum())
    return total


def _same_partition(table: np.ndarray) -> bool:
    # identical up to relabeling: every row and every column has exactly one non-zero cell
    nz = table > 0
    return bool(np.all(nz.sum(axis=0) == 1) and np.all(nz.sum(axis=1) == 1))


def ami(pred, truth, average: str = "arithmetic") -> float:
    ct = contingency(pred, truth)
    if ct.total == 0:
        raise DimensionError("empty partitions")
    hp, ht = _entropy(ct.row_sums), _entropy(ct.col_sums)
    mi = _mutual_info(ct.table)
    emi = expected_mutual_info(ct.row_sums, ct.col_sums)
    denom = _average(hp, ht, average) - emi
    if abs(denom) <= 1e-12 * max(1.0, hp, ht):
        # both partitions trivial in the same way (e.g. single cluster or all singletons)
        return 1.0 if _same_partition(ct.table) else 0.0
    return float((mi - emi) / denom)


def ari(pred, truth) -> float:
    """Adjusted Rand index, evaluated with exact integer pair counts."""
    ct = contingency(pred, truth)
    n = ct.total
    if n < 2:
        raise DimensionError("ARI needs at least two items")
    comb2 = lambda v: int((v * (v - 1) // 2).sum())
    sum_ij = comb2(ct.table)
    sum_a = comb2(ct.row_sums)
    sum_b = comb2(ct.col_sums)
    pairs = n * (n - 1) // 2
    # multiply through by 2*pairs to stay in integers
    num = 2 * (sum_ij * pairs - sum_a * sum_b)
    den = (sum_a + sum_b) * pairs - 2 * sum_a * sum_b
    if den == 0:
        return 1.0 if num == 0 else 0.0
    return num / den


def hungarian_acc(pred, truth, mode: str = "hungarian") -> tuple[float, dict]:
    """Accuracy under the best label mapping from predicted clusters to true classes.

    ``hungarian`` matches one-to-one (rectangular tables behave as if padded
    with zero-weight dummies, so surplus clusters stay unmatched).
    ``majority`` maps every cluster to its most frequent true class
    (many-to-one), the usual protocol for over-clustering heads.
    """
    ct = contingency(pred, truth)
    if ct.total == 0:
        raise DimensionError("empty partitions")
    if mode == "hungarian":
        rows, cols = linear_sum_assignment(ct.table, maximize=True)
    elif mode == "majority":
        rows = np.arange(ct.table.shape[0])
        cols = ct.table.argmax(axis=1)
    else:
        raise ParameterError(f"mode must be 'hungarian' or 'majority', got {mode!r}")
    matched = int(ct.table[rows, cols].sum())
    mapping = {ct.pred_labels[r].item(): ct.true_labels[c].item() for r, c in zip(rows, cols)}
    return matched / ct.total, mapping


def flat_metrics(pred, truth, nmi_average: str = "geometric", ami_average: str = "arithmetic",
                 acc_mode: str = "hungarian") -> dict[str, float]:
    acc, _ = hungarian_acc(pred, truth, acc_mode)
    out = {"acc": acc, "nmi": nmi(pred, truth, nmi_average), "ami": ami(pred, truth, ami_average)}
    out["ari"] = ari(pred, truth) if len(pred) >= 2 else float("nan")
    return out


# -- hierarchy ---------------------------------------------------------------


@dataclass
class HierarchyMap:
    """Leaf class id -> superclass id, per named level (levels kept in order).

    A level may also be given as a sequence indexed by leaf id.
    """

    levels: dict[str, dict[int, int]] = field(default_factory=dict)

    def __post_init__(self):
        self.levels = {
            name: {int(k): int(v) for k, v in (m.items() if isinstance(m, dict) else enumerate(m))}
            for name, m in self.levels.items()
        }
        for name, mapping in self.levels.items():
            supers = sorted(set(mapping.values()))
            if supers != list(range(len(supers))):
                raise ParameterError(f"level {name!r}: superclass ids must be dense from 0")

    def roll_up(self, leaves, level: str) -> np.ndarray:
        mapping = self.levels[level]
        leaves = np.asarray(leaves)
        missing = set(np.unique(leaves).tolist()) - set(mapping)
        if missing:
            raise ParameterError(f"level {level!r}: unmapped leaf ids {sorted(missing)[:10]}")
        return np.array([mapping[int(v)] for v in leaves], dtype=np.int64)

    @classmethod
    def read_tsv(cls, path) -> "HierarchyMap":
        """TSV with header ``leaf<TAB>level<TAB>super``; one row per (leaf, level)."""
        levels: dict[str, dict[int, int]] = {}
        with open(path, newline="") as fh:
            reader = csv.reader(fh, delimiter="\t")
            header = next(reader, None)
            if header != ["leaf", "level", "super"]:
                raise ParameterError(f"{path}: header must be leaf, level, super")
            for row in reader:
                if not row:
                    continue
                leaf, level, sup = row
                levels.setdefault(level, {})[int(leaf)] = int(sup)
        if levels:
            leaves = set(next(iter(levels.values())))
            for name, m in levels.items():
                if set(m) != leaves:
                    raise ParameterError(f"{path}: level {name!r} does not map every leaf")
        return cls(levels)

    def write_tsv(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh, delimiter="\t", lineterminator="\n")
            w.writerow(["leaf", "level", "super"])
            for level, mapping in self.levels.items():
                for leaf in sorted(mapping):
                    w.writerow([leaf, level, mapping[leaf]])


def _level_accuracy(pred, truth_leaf, hierarchy: HierarchyMap, level: str) -> float:
    """Leaf-level one-to-one matching, with each cluster's matched leaf rolled up to ``level``.

    Several clusters may thereby land on the same superclass.  Clusters left
    unmatched at leaf level (more clusters than leaves) take the majority
    superclass of their members.
    """
    pred = np.asarray(pred)
    truth_up = hierarchy.roll_up(truth_leaf, level)
    _, leaf_map = hungarian_acc(pred, truth_leaf)
    up = hierarchy.levels[level]
    assigned = np.empty(len(pred), dtype=np.int64)
    for cluster in np.unique(pred):
        members = pred == cluster
        if cluster.item() in leaf_map:
            assigned[members] = up[int(leaf_map[cluster.item()])]
        else:
            assigned[members] = np.bincount(truth_up[members]).argmax()
    return float(np.mean(assigned == truth_up))


def hierarchical_eval(pred, truth_leaf, hierarchy: HierarchyMap, pred_map_mode: str = "via_matching",
                      **metric_kw) -> dict[str, dict[str, float]]:
    """Per-level metrics of the predicted clusters against truth rolled up to that level.

    Predicted clusters are never merged, so NMI/AMI/ARI compare the raw
    clustering with the coarser truth.  Accuracy depends on
    ``pred_map_mode``: ``via_matching`` (see :func:`_level_accuracy`),
    ``hungarian`` (one-to-one at the level) or ``majority`` (many-to-one at
    the level).
    """
    if pred_map_mode not in ("via_matching", "hungarian", "majority"):
        raise ParameterError(f"unknown pred_map_mode {pred_map_mode!r}")
    out = {}
    for level in hierarchy.levels:
        truth_up = hierarchy.roll_up(truth_leaf, level)
        if pred_map_mode == "via_matching":
            res = flat_metrics(pred, truth_up, **metric_kw)
            res["acc"] = _level_accuracy(pred, truth_leaf, hierarchy, level)
        else:
            res = flat_metrics(pred, truth_up, acc_mode=pred_map_mode, **metric_kw)
        out[level] = res
    return out


# -- K-NN probe --------------------------------------------------------------


def knn_predict(train_emb, train_labels, test_emb, k: int = 20) -> np.ndarray:
    """Cosine K-NN majority vote; ties go to the class of the most similar tied neighbour."""
    train_emb = np.asarray(train_emb, dtype=np.float64)
    test_emb = np.asarray(test_emb, dtype=np.float64)
    train_labels = np.asarray(train_labels)
    if len(train_emb) == 0 or len(test_emb) == 0:
        raise ParameterError("K-NN needs non-empty train and test sets")
    if not 1 <= k <= len(train_emb):
        raise ParameterError(f"K must be in [1, {len(train_emb)}], got {k}")
    sims = test_emb @ train_emb.T
    # stable sort on -sim keeps lower train index first among equal similarities
    order = np.argsort(-sims, axis=1, kind="stable")[:, :k]
    out = np.empty(len(test_emb), dtype=train_labels.dtype)
    for i, nbrs in enumerate(order):
        votes = train_labels[nbrs]
        values, counts = np.unique(votes, return_counts=True)
        winners = set(values[counts == counts.max()].tolist())
        out[i] = next(v for v in votes if v in winners)
    return out


def knn_probe(train_emb, train_labels, test_emb, test_labels, k: int = 20) -> float:
    k = min(k, len(train_emb))
    pred = knn_predict(train_emb, train_labels, test_emb, k)
    return float(np.mean(pred == np.asarray(test_labels)))
