"""OOD gate from IP reconstruction errors plus KNN face classification."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .model import IP_KEYS, FareModel, ip_errors, pp_forward
from .tensor_core import no_grad

SCORE_MODES = ("normalized", "raw")


@dataclass(frozen=True)
class ScoreNormalizer:
    mean: np.ndarray  # [6]
    std: np.ndarray  # [6], guarded > 0
    guarded: tuple[bool, ...] = (False,) * 6

    @classmethod
    def from_errors(cls, errors: np.ndarray) -> "ScoreNormalizer":
        errors = np.asarray(errors, dtype=np.float64)
        if errors.ndim != 2 or errors.shape[1] != len(IP_KEYS):
            raise ValueError(f"expected errors of shape [n, 6], got {errors.shape}")
        if errors.shape[0] < 2:
            raise ValueError("normalizer needs at least two calibration samples")
        mean = errors.mean(axis=0)
        std = errors.std(axis=0)
        guarded = tuple(bool(s == 0) for s in std)
        for i, g in enumerate(guarded):
            if g:
                warnings.warn(f"IP {IP_KEYS[i]} has constant calibration error; using std = 1", RuntimeWarning)
        std = np.where(std == 0, 1.0, std)
        return cls(mean=mean, std=std, guarded=guarded)

    def to_array(self) -> np.ndarray:
        return np.stack([self.mean, self.std, np.asarray(self.guarded, dtype=np.float64)])

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "ScoreNormalizer":
        return cls(mean=arr[0].copy(), std=arr[1].copy(), guarded=tuple(bool(g) for g in arr[2]))


@dataclass(frozen=True)
class OodThreshold:
    tau: float
    target_tpr: float = 0.95
    calibration_size: int = 0


@dataclass
class Decision:
    verdict: str  # "OOD" or the ID class name
    score: float
    embedding: np.ndarray

    @property
    def is_ood(self) -> bool:
        return self.verdict == "OOD"

    def to_record(self) -> dict:
        return {"verdict": self.verdict, "score": self.score, "embedding": [float(v) for v in self.embedding]}


def forward_stats(model: FareModel, rdi: np.ndarray, micro_rdi: np.ndarray,
                  batch_size: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """Embeddings [n, d] and per-IP reconstruction errors [n, 6] for image stacks."""
    embs, errs = [], []
    with no_grad():
        for s in range(0, len(rdi), batch_size):
            trace = pp_forward(model, rdi[s:s + batch_size, None], micro_rdi[s:s + batch_size, None])
            embs.append(trace.embedding.data)
            errs.append(ip_errors(model, trace))
    if not embs:
        return np.zeros((0, model.cfg.embedding_dim)), np.zeros((0, len(IP_KEYS)))
    return np.concatenate(embs), np.concatenate(errs)


def fit_normalizer(model: FareModel, rdi: np.ndarray, micro_rdi: np.ndarray) -> ScoreNormalizer:
    """Per-IP mean and population std of reconstruction error on held-out ID data."""
    _, errs = forward_stats(model, rdi, micro_rdi)
    return ScoreNormalizer.from_errors(errs)


def score_errors(errors: np.ndarray, normalizer: ScoreNormalizer | None, mode: str = "normalized",
                 ips: Sequence[int] | None = None) -> np.ndarray:
    """Total score from per-IP errors; optionally restricted to a subset of IP indices."""
    errors = np.atleast_2d(np.asarray(errors, dtype=np.float64))
    if errors.shape[1] != len(IP_KEYS):
        raise ValueError(f"expected six IP errors per sample, got {errors.shape[1]}")
    cols = list(range(len(IP_KEYS))) if ips is None else list(ips)
    if mode == "normalized":
        if normalizer is None:
            raise ValueError("normalized scoring needs a fitted normalizer")
        z = (errors - normalizer.mean) / normalizer.std
    elif mode == "raw":
        z = errors
    else:
        raise ValueError(f"unknown score mode {mode!r}; choose from {SCORE_MODES}")
    return z[:, cols].sum(axis=1)


def ood_score(model: FareModel, normalizer: ScoreNormalizer, rdi: np.ndarray, micro_rdi: np.ndarray,
              mode: str = "normalized") -> np.ndarray:
    """Sum over IPs of (error - mean) / std; larger means more OOD-like."""
    _, errs = forward_stats(model, np.asarray(rdi), np.asarray(micro_rdi))
    return score_errors(errs, normalizer, mode)


def calibrate_threshold(id_scores: Sequence[float], target_tpr: float = 0.95) -> OodThreshold:
    """tau = ceil(target_tpr * n)-th smallest ID score, so >= target_tpr of IDs satisfy score <= tau."""
    scores = np.sort(np.asarray(id_scores, dtype=np.float64).ravel())
    if scores.size == 0:
        raise ValueError("cannot calibrate a threshold on no scores")
    if not 0 < target_tpr < 1:
        raise ValueError("target_tpr must lie in (0, 1)")
    k = max(1, math.ceil(target_tpr * scores.size - 1e-9))
    return OodThreshold(tau=float(scores[k - 1]), target_tpr=target_tpr, calibration_size=int(scores.size))


@dataclass(frozen=True)
class KnnIndex:
    embeddings: np.ndarray
    labels: np.ndarray  # int class indices
    k: int = 5


def knn_fit(embeddings: np.ndarray, labels: Sequence[int], k: int = 5) -> KnnIndex:
    embeddings = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if embeddings.ndim != 2 or embeddings.shape[0] == 0:
        raise ValueError("KNN index needs a non-empty [n, d] embedding matrix")
    if labels.shape != (embeddings.shape[0],):
        raise ValueError("one label per embedding is required")
    if not 1 <= k <= embeddings.shape[0]:
        raise ValueError(f"k must lie in [1, {embeddings.shape[0]}]")
    return KnnIndex(embeddings=embeddings, labels=labels, k=k)


def knn_predict(index: KnnIndex, queries: np.ndarray) -> np.ndarray:
    """Exact Euclidean KNN majority vote.

    Vote ties go to the class with the smallest mean neighbour distance, then
    to the lowest class index. Equal distances are ordered by stored position.
    """
    q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    diff = q[:, None, :] - index.embeddings[None, :, :]
    dist = np.sqrt(np.einsum("qnd,qnd->qn", diff, diff))
    out = np.empty(len(q), dtype=np.int64)
    for row, d in enumerate(dist):
        nn = np.argsort(d, kind="stable")[: index.k]
        labs, dd = index.labels[nn], d[nn]
        classes, counts = np.unique(labs, return_counts=True)
        best = classes[counts == counts.max()]
        if len(best) > 1:
            means = np.array([dd[labs == c].mean() for c in best])
            best = best[means == means.min()]
        out[row] = best.min()
    return out


def infer(model: FareModel, normalizer: ScoreNormalizer, threshold: OodThreshold, knn: KnnIndex,
          rdi: np.ndarray, micro_rdi: np.ndarray, classes: Sequence[str],
          mode: str = "normalized") -> list[Decision]:
    """Gate each sample on its OOD score (strictly above tau -> OOD), classify the rest with KNN."""
    rdi = np.asarray(rdi, dtype=np.float64)
    micro_rdi = np.asarray(micro_rdi, dtype=np.float64)
    if rdi.ndim == 2:
        rdi, micro_rdi = rdi[None], micro_rdi[None]
    embs, errs = forward_stats(model, rdi, micro_rdi)
    scores = score_errors(errs, normalizer, mode)
    return decide(scores, embs, threshold, knn, classes)


def decide(scores: np.ndarray, embeddings: np.ndarray, threshold: OodThreshold, knn: KnnIndex,
           classes: Sequence[str]) -> list[Decision]:
    decisions = []
    passing = np.flatnonzero(scores <= threshold.tau)
    preds = dict(zip(passing.tolist(), knn_predict(knn, embeddings[passing]).tolist())) if len(passing) else {}
    for i, (s, e) in enumerate(zip(scores, embeddings)):
        verdict = classes[preds[i]] if i in preds else "OOD"
        decisions.append(Decision(verdict=verdict, score=float(s), embedding=e))
    return decisions
