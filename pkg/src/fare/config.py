"""Experiment configuration: one YAML file, grouped keys, unknown keys rejected."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .model import ModelConfig
from .radar_dsp import MICRO_FRAMES
from .scene_sim import RadarConfig
from .training import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SimulationSection:
    num_id: int = 5
    num_ood: int = 11
    frames_per_identity: int = 200
    split: tuple[float, float, float] = (0.6, 0.2, 0.2)


@dataclass(frozen=True)
class PreprocessSection:
    sinc_cutoff: float = 0.25
    sinc_taps: int = 9
    micro_frames: int = MICRO_FRAMES
    enhancement: str = "identity"


@dataclass(frozen=True)
class ModelSection:
    layer1_channels: int = 8
    layer2_channels: int = 16
    layer3_channels: int = 32
    embedding_dim: int = 64
    ip_bottleneck_dims: tuple[int, ...] | None = None
    bottleneck_divisor: int = 8
    bottleneck_cap: int = 64
    margin: float = 2.0


@dataclass(frozen=True)
class TrainingSection:
    stage1_epochs: int = 30
    stage2_epochs: int = 20
    batch_size: int = 32
    lr: float = 0.002
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


@dataclass(frozen=True)
class DetectionSection:
    target_tpr: float = 0.95
    knn_k: int = 5
    score_mode: str = "normalized"


@dataclass(frozen=True)
class EvaluationSection:
    fpr_target_tpr: float = 0.95


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    radar: RadarConfig = field(default_factory=RadarConfig)
    simulation: SimulationSection = field(default_factory=SimulationSection)
    preprocessing: PreprocessSection = field(default_factory=PreprocessSection)
    model: ModelSection = field(default_factory=ModelSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    detection: DetectionSection = field(default_factory=DetectionSection)
    evaluation: EvaluationSection = field(default_factory=EvaluationSection)

    def model_config(self) -> ModelConfig:
        r = self.radar
        bins = r.samples_per_chirp // 2
        return ModelConfig(
            rdi_shape=(bins, r.chirps_per_frame),
            micro_rdi_shape=(bins, self.preprocessing.micro_frames * r.chirps_per_frame),
            **dataclasses.asdict(self.model),
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(margin=self.model.margin, seed=self.seed, **dataclasses.asdict(self.training))

    def with_seed(self, seed: int | None) -> "ExperimentConfig":
        return self if seed is None else dataclasses.replace(self, seed=int(seed))

    def to_dict(self) -> dict:
        return _plain(dataclasses.asdict(self))


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


_SECTIONS = {f.name: f.type for f in dataclasses.fields(ExperimentConfig)}
_SECTION_TYPES = {
    "radar": RadarConfig,
    "simulation": SimulationSection,
    "preprocessing": PreprocessSection,
    "model": ModelSection,
    "training": TrainingSection,
    "detection": DetectionSection,
    "evaluation": EvaluationSection,
}


def _build_section(name: str, cls, raw: Any):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(f"section {name!r} must be a mapping")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - set(known))
    if unknown:
        raise ConfigError(f"unknown key(s) in [{name}]: {', '.join(unknown)}")
    kwargs = {}
    for key, value in raw.items():
        default = getattr(cls(), key) if key != "ip_bottleneck_dims" else None
        if isinstance(value, list):
            value = tuple(value)
        elif isinstance(default, float) and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid [{name}] section: {exc}") from None


def config_from_dict(raw: dict | None) -> ExperimentConfig:
    raw = raw or {}
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    unknown = sorted(set(raw) - set(_SECTIONS))
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
    sections = {name: _build_section(name, cls, raw.get(name)) for name, cls in _SECTION_TYPES.items()}
    cfg = ExperimentConfig(seed=int(raw.get("seed", 0)), **sections)
    _validate(cfg)
    return cfg


def _validate(cfg: ExperimentConfig) -> None:
    if cfg.preprocessing.micro_frames != MICRO_FRAMES:
        raise ConfigError(f"preprocessing.micro_frames must be {MICRO_FRAMES}")
    if cfg.detection.score_mode not in ("normalized", "raw"):
        raise ConfigError("detection.score_mode must be 'normalized' or 'raw'")
    if not 0 < cfg.detection.target_tpr < 1:
        raise ConfigError("detection.target_tpr must lie in (0, 1)")
    try:
        cfg.model_config()
        cfg.train_config()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path: str | Path | None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    return config_from_dict(raw)


DEFAULT_YAML = """\
# FARE experiment configuration. Every key is optional; unknown keys are errors.
seed: 0                     # master seed (simulation, initialisation, triplet sampling)

radar:
  carrier_freq: 60.0e+9     # Hz
  bandwidth: 5.0e+9         # Hz, chirp sweep
  samples_per_chirp: 64     # power of two; = adc_rate * chirp_duration
  chirps_per_frame: 64      # power of two; Doppler bins of the RDI
  chirp_duration: 32.0e-6   # s
  frame_period: 50.0e-3     # s; chirps are spread evenly over the frame
  adc_rate: 2.0e+6          # Hz
  num_rx: 3                 # receive antennas, magnitudes averaged
  noise_std: 0.1            # complex white Gaussian noise, linear amplitude

simulation:
  num_id: 5                 # enrolled identities PER1..PER5
  num_ood: 11               # unknown identities, test only
  frames_per_identity: 200  # samples per identity (7 lead frames are added)
  split: [0.6, 0.2, 0.2]    # train / calibration / test, ID identities only

preprocessing:
  sinc_cutoff: 0.25         # slow-time low-pass cutoff, fraction of the chirp rate
  sinc_taps: 9              # odd kernel length
  micro_frames: 8           # frames stacked per micro-RDI (fixed)
  enhancement: identity     # post-normalisation image hook

model:
  layer1_channels: 8
  layer2_channels: 16
  layer3_channels: 32
  embedding_dim: 64
  ip_bottleneck_dims: null  # six ints, or null for min(ceil(size / divisor), cap)
  bottleneck_divisor: 8
  bottleneck_cap: 64
  margin: 2.0               # triplet margin

training:
  stage1_epochs: 30         # triplet loss on the primary path
  stage2_epochs: 20         # MAE on the six intermediate paths, PP frozen
  batch_size: 32
  lr: 0.002                 # Adamax
  beta1: 0.9
  beta2: 0.999
  epsilon: 1.0e-8

detection:
  target_tpr: 0.95          # fraction of calibration IDs accepted
  knn_k: 5
  score_mode: normalized    # normalized (per-IP z-score sum) or raw (plain error sum)

evaluation:
  fpr_target_tpr: 0.95      # operating point of the FPR metric
"""
