"""Synthetic FMCW IF data for point-scatterer "identities".

Stands in for the 60 GHz sensor: each identity is a handful of scatterers near
25 cm whose micro-motion (vibration frequency band) is identity specific.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import io as fio

log = logging.getLogger(__name__)

SPEED_OF_LIGHT = 299_792_458.0

# identity generator constants
RANGE_BAND = (0.16, 0.39)
VIB_BAND_START = 3.0
VIB_BAND_STEP = 5.0
VIB_BAND_WIDTH = 3.5
VIB_AMP_BAND = (0.4e-3, 1.2e-3)
RCS_BAND = (0.3, 1.0)
DRIFT_BAND = (-0.5e-3, 0.5e-3)


def _is_pow2(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class RadarConfig:
    carrier_freq: float = 60e9
    bandwidth: float = 5e9
    samples_per_chirp: int = 64
    chirps_per_frame: int = 64
    chirp_duration: float = 32e-6
    frame_period: float = 50e-3
    adc_rate: float = 2e6
    num_rx: int = 3
    noise_std: float = 0.1

    def __post_init__(self):
        for name in ("carrier_freq", "bandwidth", "chirp_duration", "frame_period", "adc_rate"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be positive and finite, got {v}")
        if self.num_rx < 1:
            raise ValueError("num_rx must be >= 1")
        if not (_is_pow2(self.samples_per_chirp) and _is_pow2(self.chirps_per_frame)):
            raise ValueError("samples_per_chirp and chirps_per_frame must be powers of two")
        if abs(self.adc_rate * self.chirp_duration - self.samples_per_chirp) > 0.5:
            raise ValueError("samples_per_chirp must equal adc_rate * chirp_duration")
        if self.chirp_duration > self.chirp_interval:
            raise ValueError("chirp_duration exceeds the chirp repetition interval")
        if not (math.isfinite(self.noise_std) and self.noise_std >= 0):
            raise ValueError("noise_std must be finite and >= 0")

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_freq

    @property
    def chirp_interval(self) -> float:
        """Slow-time sampling period; chirps are spread evenly over the frame."""
        return self.frame_period / self.chirps_per_frame

    @property
    def range_resolution(self) -> float:
        """Metres per range-FFT bin."""
        return self.beat_to_range(self.adc_rate / self.samples_per_chirp)

    @property
    def max_range(self) -> float:
        """Largest range whose beat tone stays in the positive half of the spectrum."""
        return self.beat_to_range(self.adc_rate / 2)

    def beat_frequency(self, r):
        return 2.0 * self.bandwidth * np.asarray(r) / (SPEED_OF_LIGHT * self.chirp_duration)

    def beat_to_range(self, f_b: float) -> float:
        return f_b * SPEED_OF_LIGHT * self.chirp_duration / (2.0 * self.bandwidth)

    def expected_range_bin(self, r: float) -> int:
        return int(round(float(self.beat_frequency(r)) * self.samples_per_chirp / self.adc_rate))


@dataclass(frozen=True)
class Scatterer:
    range_m: float
    rcs: float
    vib_freq: float = 0.0
    vib_amp: float = 0.0
    drift_vel: float = 0.0


@dataclass(frozen=True)
class ScatterProfile:
    identity_id: str
    scatterers: tuple[Scatterer, ...] = ()


@dataclass
class RawFrame:
    samples: np.ndarray  # complex [num_rx, chirps, samples]
    frame_index: int


def _validate_profile(profile: ScatterProfile, cfg: RadarConfig) -> None:
    for s in profile.scatterers:
        vals = (s.range_m, s.rcs, s.vib_freq, s.vib_amp, s.drift_vel)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite scatterer parameter in {profile.identity_id}: {s}")
        if s.rcs <= 0 or s.vib_amp < 0:
            raise ValueError(f"scatterer needs rcs > 0 and vib_amp >= 0: {s}")
        if not (0 < s.range_m < cfg.max_range):
            raise ValueError(f"scatterer range {s.range_m} m outside (0, {cfg.max_range:.3f}) m")


def simulate_if_frame(profile: ScatterProfile, cfg: RadarConfig, frame_index: int, seed: int) -> RawFrame:
    """Simulate one frame of complex IF samples, shape [num_rx, chirps, samples].

    Each scatterer contributes ``rcs * exp(j(2*pi*f_b(r)*n/adc_rate + 4*pi*r/lambda))``
    with ``r`` its range at the start of the chirp:
    ``r(t) = range + drift*t + vib_amp*sin(2*pi*vib_freq*t)``.
    """
    _validate_profile(profile, cfg)
    if frame_index < 0:
        raise ValueError("frame_index must be >= 0")
    n_c, n_s = cfg.chirps_per_frame, cfg.samples_per_chirp
    t = (frame_index * n_c + np.arange(n_c)) * cfg.chirp_interval
    n = np.arange(n_s)
    chirps = np.zeros((n_c, n_s), dtype=np.complex128)
    for s in profile.scatterers:
        r = s.range_m + s.drift_vel * t + s.vib_amp * np.sin(2 * np.pi * s.vib_freq * t)
        if np.any(r <= 0) or np.any(r >= cfg.max_range):
            raise ValueError(f"scatterer leaves the unambiguous range in frame {frame_index}")
        f_b = cfg.beat_frequency(r)
        phase = 2 * np.pi * f_b[:, None] * n[None, :] / cfg.adc_rate + (4 * np.pi / cfg.wavelength) * r[:, None]
        chirps += s.rcs * np.exp(1j * phase)
    samples = np.broadcast_to(chirps, (cfg.num_rx, n_c, n_s)).copy()
    if cfg.noise_std > 0:
        rng = np.random.default_rng([seed, frame_index])
        scale = cfg.noise_std / np.sqrt(2.0)
        samples += scale * (rng.standard_normal(samples.shape) + 1j * rng.standard_normal(samples.shape))
    return RawFrame(samples=samples, frame_index=frame_index)


def make_identity_profile(id_index: int, seed: int) -> ScatterProfile:
    """Deterministic 3-6 scatterer profile; vibration band is disjoint per ``id_index``.

    The first scatterer is static (vib_amp = drift = 0); the rest vibrate at
    frequencies in ``[3 + 5*id, 6.5 + 5*id)`` Hz.
    """
    if id_index < 0:
        raise ValueError("id_index must be >= 0")
    rng = np.random.default_rng([seed, id_index])
    n = int(rng.integers(3, 7))
    lo = VIB_BAND_START + VIB_BAND_STEP * id_index
    scatterers = [Scatterer(range_m=float(rng.uniform(*RANGE_BAND)), rcs=float(rng.uniform(*RCS_BAND)))]
    for _ in range(n - 1):
        scatterers.append(Scatterer(
            range_m=float(rng.uniform(*RANGE_BAND)),
            rcs=float(rng.uniform(*RCS_BAND)),
            vib_freq=float(rng.uniform(lo, lo + VIB_BAND_WIDTH)),
            vib_amp=float(rng.uniform(*VIB_AMP_BAND)),
            drift_vel=float(rng.uniform(*DRIFT_BAND)),
        ))
    return ScatterProfile(identity_id=f"identity{id_index:02d}", scatterers=tuple(scatterers))


@dataclass
class SimDatasetConfig:
    out_dir: str | Path
    radar: RadarConfig = field(default_factory=RadarConfig)
    num_id: int = 5
    num_ood: int = 11
    frames_per_identity: int = 200
    split: tuple[float, float, float] = (0.6, 0.2, 0.2)
    micro_frames: int = 8
    seed: int = 0
    overwrite: bool = False


@dataclass
class IdentityEntry:
    name: str
    index: int
    role: str  # "ID" or "OOD"
    file: str
    num_frames: int
    splits: dict[str, list[int]]  # split -> [start, stop) over sample indices


@dataclass
class DatasetManifest:
    radar: dict
    seed: int
    lead_frames: int
    samples_per_identity: int
    identities: list[IdentityEntry]

    @property
    def id_entries(self) -> list[IdentityEntry]:
        return [e for e in self.identities if e.role == "ID"]

    @property
    def ood_entries(self) -> list[IdentityEntry]:
        return [e for e in self.identities if e.role == "OOD"]

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "DatasetManifest":
        d = json.loads(text)
        d["identities"] = [IdentityEntry(**e) for e in d["identities"]]
        return cls(**d)


MANIFEST_NAME = "manifest.json"


def split_counts(n: int, split: tuple[float, float, float]) -> tuple[int, int, int]:
    if len(split) != 3 or any(f < 0 for f in split) or abs(sum(split) - 1.0) > 1e-9:
        raise ValueError(f"split fractions must be three non-negative numbers summing to 1, got {split}")
    n_train = int(round(split[0] * n))
    n_cal = int(round(split[1] * n))
    return n_train, n_cal, n - n_train - n_cal


def identity_seed(seed: int, id_index: int) -> int:
    return int(np.random.SeedSequence([seed, id_index, 1]).generate_state(1)[0])


def simulate_identity(profile: ScatterProfile, cfg: RadarConfig, num_frames: int, seed: int) -> np.ndarray:
    """Stack ``num_frames`` consecutive frames into [frames, rx, chirps, samples]."""
    return np.stack([simulate_if_frame(profile, cfg, f, seed).samples for f in range(num_frames)])


def generate_dataset(sim_cfg: SimDatasetConfig) -> DatasetManifest:
    """Simulate every identity and write one raw-frame container per identity plus a manifest.

    Each identity yields ``frames_per_identity`` samples; a sample is a window of
    ``micro_frames`` consecutive frames, so ``micro_frames - 1`` lead frames are
    simulated in addition.
    """
    if sim_cfg.frames_per_identity <= 0:
        raise ValueError("frames_per_identity must be positive")
    if sim_cfg.num_id < 2 or sim_cfg.num_ood < 0:
        raise ValueError("need at least two ID identities and a non-negative OOD count")
    counts = split_counts(sim_cfg.frames_per_identity, tuple(sim_cfg.split))
    out = Path(sim_cfg.out_dir)
    manifest_path = out / MANIFEST_NAME
    if manifest_path.exists() and not sim_cfg.overwrite:
        raise FileExistsError(f"{manifest_path} exists; pass overwrite to replace it")
    out.mkdir(parents=True, exist_ok=True)

    lead = sim_cfg.micro_frames - 1
    n_frames = sim_cfg.frames_per_identity + lead
    bounds = np.cumsum((0,) + counts).tolist()
    id_splits = {"train": bounds[0:2], "calibration": bounds[1:3], "test": bounds[2:4]}
    entries = []
    for idx in range(sim_cfg.num_id + sim_cfg.num_ood):
        is_id = idx < sim_cfg.num_id
        name = f"PER{idx + 1}" if is_id else f"OOD{idx - sim_cfg.num_id + 1:02d}"
        profile = make_identity_profile(idx, sim_cfg.seed)
        frames = simulate_identity(profile, sim_cfg.radar, n_frames, identity_seed(sim_cfg.seed, idx))
        fname = f"raw_{name}.fare"
        fio.write_container(out / fname, frames.astype(np.complex64))
        splits = id_splits if is_id else {"test": [0, sim_cfg.frames_per_identity]}
        entries.append(IdentityEntry(name=name, index=idx, role="ID" if is_id else "OOD", file=fname,
                                     num_frames=n_frames, splits={k: list(v) for k, v in splits.items()}))
        log.info("simulated %s (%d frames)", name, n_frames)

    manifest = DatasetManifest(radar=asdict(sim_cfg.radar), seed=sim_cfg.seed, lead_frames=lead,
                               samples_per_identity=sim_cfg.frames_per_identity, identities=entries)
    fio.atomic_write_text(manifest_path, manifest.to_json())
    return manifest


def load_manifest(dataset_dir: str | Path) -> DatasetManifest:
    return DatasetManifest.from_json((Path(dataset_dir) / MANIFEST_NAME).read_text())
