"""Two-stage training: triplet loss on the PP, then MAE reconstruction on the six IPs."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .model import IP_KEYS, FareModel, ip_reconstruct, pp_forward
from .tensor_core import AdamaxState, Tensor, adamax_step, mae_loss, no_grad, take_rows, triplet_loss

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    stage1_epochs: int = 30
    stage2_epochs: int = 20
    batch_size: int = 32
    lr: float = 0.002
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    margin: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.stage1_epochs < 0 or self.stage2_epochs < 0:
            raise ValueError("epoch counts must be >= 0")
        if self.margin < 0:
            raise ValueError("margin must be >= 0")

    def optimizer(self) -> AdamaxState:
        return AdamaxState(alpha=self.lr, beta1=self.beta1, beta2=self.beta2, epsilon=self.epsilon)


@dataclass
class LabeledSet:
    """ID training samples: image stacks plus integer class labels (index into ``classes``)."""

    rdi: np.ndarray  # [n, range, doppler]
    micro_rdi: np.ndarray  # [n, range, micro_doppler]
    labels: np.ndarray  # [n] int
    classes: tuple[str, ...] = ()

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        n = len(self.labels)
        if self.rdi.shape[0] != n or self.micro_rdi.shape[0] != n:
            raise ValueError("rdi, micro_rdi and labels disagree on sample count")
        if self.classes and (self.labels.min(initial=0) < 0 or self.labels.max(initial=0) >= len(self.classes)):
            raise ValueError("label outside the class list")

    def __len__(self) -> int:
        return len(self.labels)

    def batch(self, idx) -> tuple[np.ndarray, np.ndarray]:
        return self.rdi[idx][:, None], self.micro_rdi[idx][:, None]


def sample_triplets(labels: np.ndarray, batch_size: int, rng: np.random.Generator):
    """Draw ``batch_size`` (anchor, positive, negative) index triples.

    Anchor uniform over samples; positive uniform over the anchor's class minus
    the anchor; negative uniform over all samples of other classes.
    """
    labels = np.asarray(labels)
    classes = np.unique(labels)
    if len(classes) < 2:
        raise ValueError("triplet sampling needs at least two classes")
    members = {c: np.flatnonzero(labels == c) for c in classes}
    others = {c: np.flatnonzero(labels != c) for c in classes}
    a = rng.integers(0, len(labels), size=batch_size)
    p = np.empty(batch_size, dtype=np.int64)
    n = np.empty(batch_size, dtype=np.int64)
    for k, ai in enumerate(a):
        c = labels[ai]
        same = members[c]
        if len(same) < 2:
            raise ValueError(f"class {c} has a single sample and cannot supply a positive")
        j = rng.integers(0, len(same) - 1)
        pos = same[j]
        if pos == ai:
            pos = same[len(same) - 1]
        p[k] = pos
        n[k] = others[c][rng.integers(0, len(others[c]))]
    return a.astype(np.int64), p, n


def triplet_batch_loss(model: FareModel, data: LabeledSet, a, p, n, margin: float) -> Tensor:
    """Triplet loss for one batch; every distinct sample is forwarded once."""
    uniq, inv = np.unique(np.concatenate([a, p, n]), return_inverse=True)
    rdi, micro = data.batch(uniq)
    emb = pp_forward(model, rdi, micro).embedding
    b = len(a)
    return triplet_loss(take_rows(emb, inv[:b]), take_rows(emb, inv[b:2 * b]), take_rows(emb, inv[2 * b:]), margin)


def _zero_grads(model: FareModel) -> None:
    for t in model.params.values():
        t.grad = None


def train_pp(model: FareModel, train_set: LabeledSet, cfg: TrainConfig,
             state: AdamaxState | None = None) -> list[float]:
    """Stage 1. Returns the mean triplet loss of every epoch."""
    if model.frozen_pp:
        raise TrainingError("PP is frozen; stage 1 needs a trainable PP")
    rng = np.random.default_rng([cfg.seed, 1])
    state = state or cfg.optimizer()
    pp = {name: model.params[name] for name in model.pp_names()}
    n_batches = max(1, math.ceil(len(train_set) / cfg.batch_size))
    history = []
    for epoch in range(cfg.stage1_epochs):
        total = 0.0
        for bi in range(n_batches):
            a, p, n = sample_triplets(train_set.labels, cfg.batch_size, rng)
            _zero_grads(model)
            loss = triplet_batch_loss(model, train_set, a, p, n, cfg.margin)
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingError(f"non-finite triplet loss at epoch {epoch}, batch {bi}")
            loss.backward()
            grads = {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in pp.items()}
            adamax_step(pp, grads, state)
            total += value
        history.append(total / n_batches)
        log.info("stage 1 epoch %d/%d: triplet loss %.4f", epoch + 1, cfg.stage1_epochs, history[-1])
    _zero_grads(model)
    return history


def _frozen_features(model: FareModel, data: LabeledSet, chunk: int) -> list[np.ndarray]:
    """Flattened PP sublayer outputs for every sample, one [n, size] array per IP."""
    parts: list[list[np.ndarray]] = [[] for _ in IP_KEYS]
    with no_grad():
        for start in range(0, len(data), chunk):
            trace = pp_forward(model, *data.batch(np.arange(start, min(start + chunk, len(data)))))
            for i, feat in enumerate(trace.intermediates):
                parts[i].append(feat.data.reshape(feat.shape[0], -1))
    return [np.concatenate(p) for p in parts]


def train_ips(model: FareModel, train_set: LabeledSet, cfg: TrainConfig,
              states: list[AdamaxState] | None = None) -> list[list[float]]:
    """Stage 2. Each IP is fitted with its own Adamax state; returns six per-epoch MAE curves.

    The PP is frozen, so its six sublayer outputs are computed once for the whole
    training set and reused every epoch.
    """
    if not model.frozen_pp:
        raise TrainingError("stage 2 requires a frozen PP; call freeze_pp first")
    rng = np.random.default_rng([cfg.seed, 2])
    states = states or [cfg.optimizer() for _ in IP_KEYS]
    ip_params = [{name: model.params[name] for name in model.ip_names(i)} for i in range(len(IP_KEYS))]
    histories: list[list[float]] = [[] for _ in IP_KEYS]
    n = len(train_set)
    features = _frozen_features(model, train_set, cfg.batch_size) if cfg.stage2_epochs else []
    for epoch in range(cfg.stage2_epochs):
        order = rng.permutation(n)
        totals = np.zeros(len(IP_KEYS))
        batches = [order[i:i + cfg.batch_size] for i in range(0, n, cfg.batch_size)]
        for bi, idx in enumerate(batches):
            for i, feat in enumerate(features):
                _zero_grads(model)
                target = Tensor(feat[idx])
                loss = mae_loss(target, ip_reconstruct(model, i, target))
                value = loss.item()
                if not math.isfinite(value):
                    raise TrainingError(f"non-finite MAE for IP {IP_KEYS[i]} at epoch {epoch}, batch {bi}")
                loss.backward()
                adamax_step(ip_params[i], {k: t.grad for k, t in ip_params[i].items()}, states[i])
                totals[i] += value * len(idx)
        for i in range(len(IP_KEYS)):
            histories[i].append(totals[i] / n)
        log.info("stage 2 epoch %d/%d: IP MAE %s", epoch + 1, cfg.stage2_epochs,
                 " ".join(f"{v:.4f}" for v in totals / n))
    _zero_grads(model)
    return histories
