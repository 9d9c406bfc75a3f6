"""Model checkpoints on top of the FARC container layout in :mod:`fare.io`."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import io as fio
from .detection import KnnIndex, OodThreshold, ScoreNormalizer
from .model import FareModel, ModelConfig, build_model, freeze_pp

STAGES = ("pp_trained", "ip_trained")


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    model: FareModel
    stage: str
    classes: tuple[str, ...]
    normalizer: ScoreNormalizer | None = None
    threshold: OodThreshold | None = None
    knn: KnnIndex | None = None
    score_mode: str = "normalized"

    @property
    def calibrated(self) -> bool:
        return self.normalizer is not None and self.threshold is not None and self.knn is not None


def model_config_dict(cfg: ModelConfig) -> dict:
    d = dataclasses.asdict(cfg)
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in d.items()}


def encode(ckpt: Checkpoint) -> bytes:
    if ckpt.stage not in STAGES:
        raise CheckpointError(f"unknown stage {ckpt.stage!r}")
    header = {
        "format": "fare-checkpoint",
        "stage": ckpt.stage,
        "model_config": model_config_dict(ckpt.model.cfg),
        "classes": list(ckpt.classes),
        "frozen_pp": ckpt.model.frozen_pp,
        "score_mode": ckpt.score_mode,
    }
    sections = {f"param/{k}": t.data for k, t in ckpt.model.params.items()}
    if ckpt.normalizer is not None:
        sections["calibration/normalizer"] = ckpt.normalizer.to_array()
    if ckpt.threshold is not None:
        th = ckpt.threshold
        sections["calibration/threshold"] = np.array([th.tau, th.target_tpr, th.calibration_size], dtype=np.float64)
    if ckpt.knn is not None:
        sections["knn/embeddings"] = ckpt.knn.embeddings.astype(np.float64)
        sections["knn/labels"] = ckpt.knn.labels.astype(np.float64)
        sections["knn/k"] = np.array([ckpt.knn.k], dtype=np.float64)
    return fio.encode_checkpoint(header, sections)


def save_checkpoint(path: str | Path, ckpt: Checkpoint) -> None:
    fio.atomic_write_bytes(path, encode(ckpt))


def _model_cfg_from(d: dict) -> ModelConfig:
    d = dict(d)
    for key in ("rdi_shape", "micro_rdi_shape", "ip_bottleneck_dims"):
        if d.get(key) is not None:
            d[key] = tuple(d[key])
    return ModelConfig(**d)


def decode(blob: bytes, expected: ModelConfig | None = None) -> Checkpoint:
    header, sections = fio.decode_checkpoint(blob)
    if header.get("format") != "fare-checkpoint":
        raise CheckpointError("not a FARE model checkpoint")
    cfg = _model_cfg_from(header["model_config"])
    if expected is not None and cfg != expected:
        got, want = model_config_dict(cfg), model_config_dict(expected)
        diff = sorted(k for k in want if got.get(k) != want[k])
        raise CheckpointError(f"checkpoint model config differs from current config in: {', '.join(diff)}")
    model = build_model(cfg, seed=0)
    for name, t in model.params.items():
        arr = sections.get(f"param/{name}")
        if arr is None:
            raise CheckpointError(f"checkpoint is missing parameter {name!r}")
        if arr.shape != t.shape:
            raise CheckpointError(f"parameter {name!r} has shape {arr.shape}, expected {t.shape}")
        t.data = arr.astype(np.float64)
    if header.get("frozen_pp"):
        freeze_pp(model)

    normalizer = threshold = knn = None
    if "calibration/normalizer" in sections:
        normalizer = ScoreNormalizer.from_array(sections["calibration/normalizer"])
    if "calibration/threshold" in sections:
        tau, tpr, n = sections["calibration/threshold"]
        threshold = OodThreshold(tau=float(tau), target_tpr=float(tpr), calibration_size=int(n))
    if "knn/embeddings" in sections:
        knn = KnnIndex(embeddings=sections["knn/embeddings"], labels=sections["knn/labels"].astype(np.int64),
                       k=int(sections["knn/k"][0]))
    return Checkpoint(model=model, stage=header["stage"], classes=tuple(header["classes"]),
                      normalizer=normalizer, threshold=threshold, knn=knn,
                      score_mode=header.get("score_mode", "normalized"))


def load_checkpoint(path: str | Path, expected: ModelConfig | None = None) -> Checkpoint:
    return decode(Path(path).read_bytes(), expected)


def require_stage(ckpt: Checkpoint, stage: str, calibrated: bool = False) -> None:
    if STAGES.index(ckpt.stage) < STAGES.index(stage):
        raise CheckpointError(
            f"checkpoint stage is {ckpt.stage!r} but {stage!r} is required; run `fare train-ip` first"
        )
    if calibrated and not ckpt.calibrated:
        raise CheckpointError("checkpoint has no calibration records; run `fare calibrate` first")
