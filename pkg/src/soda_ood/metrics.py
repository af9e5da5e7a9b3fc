"""Threshold-free OOD metrics with ID as the positive class."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from soda_ood.core import check_scores
from soda_ood.errors import DegenerateLabels, InputError, LengthMismatch

RECALL_SLACK = 1e-9


@dataclass(frozen=True)
class EvalResult:
    auc: float
    fpr95: float
    n_id: int
    n_ood: int

    def line(self) -> str:
        return f"AUC={self.auc:.6f} FPR95={self.fpr95:.6f} n_id={self.n_id} n_ood={self.n_ood}"


@dataclass(frozen=True)
class AccuracyBin:
    lo: float
    hi: float
    accuracy: float
    count: int


def _split(scores, is_id) -> tuple[np.ndarray, np.ndarray]:
    scores = check_scores(scores)
    is_id = np.asarray(is_id, dtype=bool)
    if is_id.shape != scores.shape:
        raise LengthMismatch(f"{scores.shape[0]} scores but {is_id.shape[0]} labels")
    id_scores, ood_scores = scores[is_id], scores[~is_id]
    if id_scores.size == 0 or ood_scores.size == 0:
        raise DegenerateLabels(f"need at least one ID and one OOD sample (got {id_scores.size} ID, {ood_scores.size} OOD)")
    return id_scores, ood_scores


def auc(scores, is_id) -> float:
    """Probability that a random ID sample outscores a random OOD sample (ties count half).

    Computed from mid-ranks (Mann-Whitney U).
    """
    id_scores, ood_scores = _split(scores, is_id)
    n_id, n_ood = id_scores.size, ood_scores.size
    ranks = rankdata(np.concatenate([id_scores, ood_scores]), method="average")
    u = ranks[:n_id].sum() - n_id * (n_id + 1) / 2.0
    return float(u / (n_id * n_ood))


def fpr_at_recall(scores, is_id, recall: float = 0.95) -> float:
    """Fraction of OOD samples scoring at or above the threshold that keeps ``recall`` of ID.

    The threshold is the ``ceil(recall * n_id)``-th largest ID score.
    """
    if not 0.0 < recall <= 1.0:
        raise InputError(f"recall must be in (0, 1], got {recall}")
    id_scores, ood_scores = _split(scores, is_id)
    k = min(id_scores.size, max(1, math.ceil(recall * id_scores.size - RECALL_SLACK)))
    tau = np.sort(id_scores)[::-1][k - 1]
    return float(np.count_nonzero(ood_scores >= tau) / ood_scores.size)


def evaluate(scores, is_id, recall: float = 0.95) -> EvalResult:
    is_id = np.asarray(is_id, dtype=bool)
    return EvalResult(
        auc=auc(scores, is_id),
        fpr95=fpr_at_recall(scores, is_id, recall),
        n_id=int(is_id.sum()),
        n_ood=int((~is_id).sum()),
    )


def binned_accuracy(predictions, true_classes, d_src, n_bins: int = 10) -> list[AccuracyBin]:
    """Classification accuracy within equal-count bins of source similarity.

    Samples are sorted by ``d_src`` (ties keep input order); earlier bins take
    the remainder when the count does not divide evenly. Empty bins report NaN.
    """
    pred = np.asarray(predictions)
    true = np.asarray(true_classes)
    d = check_scores(d_src, "d_src")
    if not (pred.shape == true.shape == d.shape):
        raise LengthMismatch("predictions, true classes and d_src must have the same length")
    if n_bins < 1:
        raise InputError(f"n_bins must be positive, got {n_bins}")
    order = np.argsort(d, kind="stable")
    correct = (pred == true)[order]
    bins = []
    for chunk_idx, chunk_ok in zip(np.array_split(order, n_bins), np.array_split(correct, n_bins)):
        if chunk_idx.size == 0:
            bins.append(AccuracyBin(math.nan, math.nan, math.nan, 0))
            continue
        vals = d[chunk_idx]
        bins.append(AccuracyBin(float(vals.min()), float(vals.max()), float(chunk_ok.mean()), int(chunk_idx.size)))
    return bins


def format_bins(bins: list[AccuracyBin]) -> str:
    lines = ["bin,d_src_min,d_src_max,accuracy,count"]
    lines += [f"{i},{b.lo:.9g},{b.hi:.9g},{b.accuracy:.9g},{b.count}" for i, b in enumerate(bins)]
    return "\n".join(lines) + "\n"
