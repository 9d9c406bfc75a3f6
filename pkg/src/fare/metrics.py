"""OOD detection and classification metrics.

Scores follow the convention "higher = more OOD-like"; OOD is the positive
class unless stated otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np


@dataclass
class ScoredPopulations:
    id_scores: np.ndarray
    ood_scores: np.ndarray

    def __post_init__(self):
        self.id_scores = np.asarray(self.id_scores, dtype=np.float64).ravel()
        self.ood_scores = np.asarray(self.ood_scores, dtype=np.float64).ravel()
        if self.id_scores.size == 0 or self.ood_scores.size == 0:
            raise ValueError("both ID and OOD score populations must be non-empty")
        if not (np.isfinite(self.id_scores).all() and np.isfinite(self.ood_scores).all()):
            raise ValueError("scores must be finite")


def auroc(pops: ScoredPopulations) -> float:
    """P(ood > id) + 0.5 * P(ood == id) over all ID x OOD pairs."""
    ids = np.sort(pops.id_scores)
    below = np.searchsorted(ids, pops.ood_scores, side="left")
    not_above = np.searchsorted(ids, pops.ood_scores, side="right")
    wins = below.sum() + 0.5 * (not_above - below).sum()
    return float(wins / (ids.size * pops.ood_scores.size))


def _step_ap(pos: np.ndarray, neg: np.ndarray) -> float:
    """Step-wise average precision, predicting positive iff score >= t at every distinct t.

    Summed in exact rationals and rounded once, so the value does not depend on
    summation order.
    """
    thresholds = np.unique(np.concatenate([pos, neg]))[::-1]
    pos_s, neg_s = np.sort(pos), np.sort(neg)
    tp = pos.size - np.searchsorted(pos_s, thresholds, side="left")
    fp = neg.size - np.searchsorted(neg_s, thresholds, side="left")
    gained = np.diff(np.concatenate([[0], tp]))
    total = sum((Fraction(int(g) * int(t), int(t + f)) for g, t, f in zip(gained, tp, fp) if g), Fraction(0))
    return float(total / pos.size)


def aupr(pops: ScoredPopulations, positive: str = "OUT") -> float:
    """Area under the precision-recall curve, step-wise: sum of (R_k - R_{k-1}) * P_k.

    ``positive="OUT"`` treats OOD as positive (high score = positive);
    ``positive="IN"`` treats ID as positive (low score = positive).
    """
    if positive == "OUT":
        return _step_ap(pops.ood_scores, pops.id_scores)
    if positive == "IN":
        return _step_ap(-pops.id_scores, -pops.ood_scores)
    raise ValueError(f"positive must be 'IN' or 'OUT', got {positive!r}")


def fpr_at_tpr(pops: ScoredPopulations, target_tpr: float = 0.95) -> float:
    """Fraction of ID scores >= the largest threshold that keeps OOD recall >= ``target_tpr``."""
    if not 0 < target_tpr <= 1:
        raise ValueError("target_tpr must lie in (0, 1]")
    ood = np.sort(pops.ood_scores)[::-1]
    # k-th largest OOD score admits at least k OOD samples
    k = int(np.ceil(target_tpr * ood.size - 1e-9))
    thr = ood[max(k, 1) - 1]
    return float(np.mean(pops.id_scores >= thr))


def accuracy(preds: Sequence, labels: Sequence) -> float:
    preds, labels = np.asarray(preds), np.asarray(labels)
    if preds.shape != labels.shape:
        raise ValueError(f"length mismatch: {preds.shape} predictions vs {labels.shape} labels")
    if preds.size == 0:
        raise ValueError("accuracy of an empty set is undefined")
    return float(np.mean(preds == labels))


def confusion_matrix(preds: Sequence, labels: Sequence, classes: Sequence) -> np.ndarray:
    """Counts with rows = true class, columns = predicted class."""
    preds, labels = list(preds), list(labels)
    if len(preds) != len(labels):
        raise ValueError(f"length mismatch: {len(preds)} predictions vs {len(labels)} labels")
    pos = {c: i for i, c in enumerate(classes)}
    out = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for p, t in zip(preds, labels):
        if t not in pos or p not in pos:
            raise ValueError(f"unknown label {t if t not in pos else p!r}")
        out[pos[t], pos[p]] += 1
    return out


def ood_report(pops: ScoredPopulations, target_tpr: float = 0.95) -> dict[str, float]:
    return {
        "AUROC": auroc(pops),
        "AUPR_IN": aupr(pops, "IN"),
        "AUPR_OUT": aupr(pops, "OUT"),
        "FPR95": fpr_at_tpr(pops, target_tpr),
    }
