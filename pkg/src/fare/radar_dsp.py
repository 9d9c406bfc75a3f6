"""Raw IF frames -> range-Doppler image (RDI) and micro range-Doppler image (micro-RDI)."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .scene_sim import RadarConfig, RawFrame

MICRO_FRAMES = 8


@dataclass
class RangeProfileCube:
    values: np.ndarray  # complex [num_rx, chirps, range_bins]
    range_resolution: float


@dataclass
class RangeDopplerImage:
    magnitudes: np.ndarray  # [range_bins, doppler_bins]
    normalization_tag: str = "raw"


@dataclass
class MicroRangeDopplerImage:
    magnitudes: np.ndarray  # [range_bins, MICRO_FRAMES * chirps]
    normalization_tag: str = "raw"


# Post-normalization image enhancement hooks. Only the identity is provided.
ENHANCEMENTS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "identity": lambda img: img,
}


def _pow2(n: int) -> bool:
    return n > 0 and n & (n - 1) == 0


def range_fft(frame: RawFrame | np.ndarray, cfg: RadarConfig, full: bool = False) -> RangeProfileCube:
    """Fast-time mean removal, Hann window, FFT; keeps the positive half unless ``full``."""
    x = frame.samples if isinstance(frame, RawFrame) else np.asarray(frame)
    n = x.shape[-1]
    if not _pow2(n):
        raise ValueError(f"fast-time length {n} is not a power of two")
    if x.shape != (cfg.num_rx, cfg.chirps_per_frame, cfg.samples_per_chirp):
        raise ValueError(f"frame shape {x.shape} does not match radar config")
    x = x - x.mean(axis=-1, keepdims=True)
    spec = np.fft.fft(x * np.hanning(n), axis=-1)
    if not full:
        spec = spec[..., : n // 2]
    return RangeProfileCube(values=spec, range_resolution=cfg.range_resolution)


def mti_filter(cube: RangeProfileCube) -> RangeProfileCube:
    """Slow-time mean subtraction per (rx, range bin): static returns become exactly zero."""
    v = cube.values
    if v.ndim != 3 or v.shape[1] < 2:
        raise ValueError("MTI needs a [rx, chirps, range] cube with at least 2 chirps")
    return RangeProfileCube(values=v - v.mean(axis=1, keepdims=True), range_resolution=cube.range_resolution)


def doppler_spectrum(cube: RangeProfileCube) -> np.ndarray:
    """Hann-windowed, zero-centred slow-time FFT: complex [rx, doppler, range]."""
    v = cube.values
    win = np.hanning(v.shape[1])[None, :, None]
    return np.fft.fftshift(np.fft.fft(v * win, axis=1), axes=1)


def doppler_fft(cube: RangeProfileCube, doppler_bins: int | None = None) -> RangeDopplerImage:
    """Doppler spectrum magnitude averaged over rx, laid out [range, doppler]."""
    if cube.values.ndim != 3:
        raise ValueError(f"expected a 3-D cube, got shape {cube.values.shape}")
    if doppler_bins is not None and cube.values.shape[1] != doppler_bins:
        raise ValueError(f"cube has {cube.values.shape[1]} chirps, expected {doppler_bins}")
    mag = np.abs(doppler_spectrum(cube)).mean(axis=0)
    return RangeDopplerImage(magnitudes=np.ascontiguousarray(mag.T))


def sinc_kernel(cutoff_fraction: float, taps: int = 9) -> np.ndarray:
    """Hann-windowed sinc low-pass, normalised to unit DC gain."""
    if not (0 < cutoff_fraction <= 0.5):
        raise ValueError(f"cutoff_fraction must lie in (0, 0.5], got {cutoff_fraction}")
    if taps < 1 or taps % 2 == 0:
        raise ValueError("taps must be a positive odd number")
    k = np.arange(taps) - taps // 2
    h = 2 * cutoff_fraction * np.sinc(2 * cutoff_fraction * k) * np.hanning(taps)
    if taps == 1:
        h = np.ones(1)
    return h / h.sum()


def sinc_lowpass(cube: RangeProfileCube, cutoff_fraction: float = 0.25, taps: int = 9) -> RangeProfileCube:
    """Filter every slow-time series with :func:`sinc_kernel`, same-length output.

    Edges use a whole-sample symmetric extension (numpy ``reflect`` padding).
    """
    h = sinc_kernel(cutoff_fraction, taps)
    v = cube.values
    half = taps // 2
    vp = np.pad(v, ((0, 0), (half, half), (0, 0)), mode="reflect")
    out = np.zeros_like(v)
    length = v.shape[1]
    for i, coef in enumerate(h):
        out += coef * vp[:, i:i + length, :]
    return RangeProfileCube(values=out, range_resolution=cube.range_resolution)


def minmax_normalize(img: np.ndarray) -> np.ndarray:
    """Scale to [0, 1]; a constant image maps to all zeros."""
    lo, hi = float(img.min()), float(img.max())
    if hi <= lo:
        return np.zeros_like(img, dtype=np.float64)
    return (img - lo) / (hi - lo)


def build_rdi(frame: RawFrame | np.ndarray, cfg: RadarConfig, enhancement: str = "identity",
              normalize: bool = True) -> RangeDopplerImage:
    cube = mti_filter(range_fft(frame, cfg))
    rdi = doppler_fft(cube, cfg.chirps_per_frame)
    if not normalize:
        return rdi
    return RangeDopplerImage(ENHANCEMENTS[enhancement](minmax_normalize(rdi.magnitudes)), "per_image_minmax")


def build_micro_rdi(frames: Sequence[RawFrame | np.ndarray], cfg: RadarConfig, cutoff_fraction: float = 0.25,
                    taps: int = 9, enhancement: str = "identity", normalize: bool = True) -> MicroRangeDopplerImage:
    """Stack eight range spectrograms along slow time, then MTI, sinc low-pass and Doppler FFT."""
    if len(frames) != MICRO_FRAMES:
        raise ValueError(f"micro-RDI needs exactly {MICRO_FRAMES} frames, got {len(frames)}")
    cubes = [range_fft(f, cfg).values for f in frames]
    stacked = RangeProfileCube(np.concatenate(cubes, axis=1), cfg.range_resolution)
    filtered = sinc_lowpass(mti_filter(stacked), cutoff_fraction, taps)
    mag = doppler_fft(filtered, MICRO_FRAMES * cfg.chirps_per_frame).magnitudes
    if not normalize:
        return MicroRangeDopplerImage(mag)
    return MicroRangeDopplerImage(ENHANCEMENTS[enhancement](minmax_normalize(mag)), "per_image_minmax")


def preprocess_sequence(frames: np.ndarray, cfg: RadarConfig, cutoff_fraction: float = 0.25, taps: int = 9,
                        enhancement: str = "identity") -> tuple[np.ndarray, np.ndarray]:
    """Turn a [frames, rx, chirps, samples] record into per-window (RDI, micro-RDI) stacks.

    Window ``j`` covers frames ``j .. j+7``; its RDI comes from the newest frame
    ``j+7``. Range FFTs are computed once per frame and shared between windows.
    """
    n = frames.shape[0] - (MICRO_FRAMES - 1)
    if n <= 0:
        raise ValueError(f"need at least {MICRO_FRAMES} frames, got {frames.shape[0]}")
    ranges = [range_fft(f, cfg).values for f in frames]
    rdis, micros = [], []
    for j in range(n):
        newest = RangeProfileCube(ranges[j + MICRO_FRAMES - 1], cfg.range_resolution)
        rdi = doppler_fft(mti_filter(newest), cfg.chirps_per_frame).magnitudes
        rdis.append(ENHANCEMENTS[enhancement](minmax_normalize(rdi)))
        stacked = RangeProfileCube(np.concatenate(ranges[j:j + MICRO_FRAMES], axis=1), cfg.range_resolution)
        filtered = sinc_lowpass(mti_filter(stacked), cutoff_fraction, taps)
        micro = doppler_fft(filtered).magnitudes
        micros.append(ENHANCEMENTS[enhancement](minmax_normalize(micro)))
    return np.stack(rdis), np.stack(micros)
