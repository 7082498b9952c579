"""Evaluation metrics: confusion matrices, F1, Cohen's kappa, ROC-AUC.

All functions are pure.  ROC-AUC is the Mann-Whitney statistic (fraction of
positive-negative pairs ranked correctly, ties worth 0.5), computed by
sorting but contractually equal to brute-force pair enumeration.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


class UndefinedAUCError(ValueError):
    """AUC is undefined: the labels contain only one class."""


@dataclass(frozen=True)
class ConfusionMatrix:
    """K x K counts; rows are gold classes, columns are predictions."""

    counts: np.ndarray  # (K, K) int64

    @property
    def K(self) -> int:
        return self.counts.shape[0]

    @property
    def n(self) -> int:
        return int(self.counts.sum())


def confusion(preds: Sequence[int], gold: Sequence[int], K: int) -> ConfusionMatrix:
    preds = np.asarray(preds, dtype=np.int64)
    gold = np.asarray(gold, dtype=np.int64)
    if preds.shape != gold.shape or preds.ndim != 1:
        raise ValueError(f"preds and gold must be equal-length 1-D, got {preds.shape} vs {gold.shape}")
    if preds.size == 0:
        raise ValueError("cannot build a confusion matrix from empty inputs")
    for name, arr in (("preds", preds), ("gold", gold)):
        if arr.min() < 0 or arr.max() >= K:
            raise ValueError(f"{name} contain class indices outside [0, {K})")
    counts = np.zeros((K, K), dtype=np.int64)
    np.add.at(counts, (gold, preds), 1)
    return ConfusionMatrix(counts)


def f1_per_class(cm: ConfusionMatrix) -> np.ndarray:
    """Per-class F1 = 2TP / (2TP + FP + FN); 0 when the denominator is 0."""
    tp = np.diag(cm.counts).astype(np.float64)
    fp = cm.counts.sum(axis=0) - np.diag(cm.counts)
    fn = cm.counts.sum(axis=1) - np.diag(cm.counts)
    denom = 2.0 * tp + fp + fn
    out = np.zeros(cm.K, dtype=np.float64)
    nz = denom > 0
    out[nz] = 2.0 * tp[nz] / denom[nz]
    return out


def f1_macro(cm: ConfusionMatrix) -> float:
    """Unweighted mean of per-class F1 over all K classes."""
    return float(f1_per_class(cm).mean())


def cohens_kappa(cm: ConfusionMatrix) -> float:
    """kappa = (p_o - p_e) / (1 - p_e); 1.0 at the p_e = 1 degenerate point.

    p_e = 1 forces every prediction and every gold item into one class, which
    forces p_o = 1, so no other special case exists.
    """
    n = cm.n
    if n < 1:
        raise ValueError("empty confusion matrix")
    p_o = float(np.trace(cm.counts)) / n
    row = cm.counts.sum(axis=1) / n
    col = cm.counts.sum(axis=0) / n
    p_e = float(row @ col)
    if p_e >= 1.0:
        return 1.0
    return (p_o - p_e) / (1.0 - p_e)


def roc_auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Probability a random positive outscores a random negative (ties 0.5).

    O(n log n) via tie-averaged ranks; raises UndefinedAUCError when only one
    class is present.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be equal-length 1-D")
    if not np.all((labels == 0) | (labels == 1)):
        raise ValueError("labels must be 0/1")
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedAUCError(f"need both classes, got {n_pos} positives / {n_neg} negatives")
    ranks = _average_ranks(scores)
    rank_sum = float(ranks[labels == 1].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def _average_ranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks with ties assigned the mean rank of their group."""
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(x.size, dtype=np.float64)
    sx = x[order]
    i = 0
    while i < x.size:
        j = i
        while j + 1 < x.size and sx[j + 1] == sx[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


@dataclass(frozen=True)
class EvalReport:
    """Metrics of one model on one labeled set; AUC entries are None when undefined."""

    f1_macro: float
    f1_per_class: tuple[float, ...]
    kappa: float
    auc_per_class: tuple[float | None, ...]
    confusion: ConfusionMatrix

    def to_dict(self) -> dict:
        return {
            "f1_macro": self.f1_macro,
            "f1_per_class": list(self.f1_per_class),
            "kappa": self.kappa,
            "auc_per_class": list(self.auc_per_class),
            "confusion": self.confusion.counts.tolist(),
            "n": self.confusion.n,
        }
