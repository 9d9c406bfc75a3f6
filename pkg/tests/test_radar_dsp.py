import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import dft
from fare.radar_dsp import (
    RangeProfileCube, build_micro_rdi, build_rdi, doppler_fft, doppler_spectrum, minmax_normalize, mti_filter,
    preprocess_sequence, range_fft, sinc_kernel, sinc_lowpass,
)
from fare.scene_sim import RadarConfig, ScatterProfile, Scatterer, simulate_if_frame

QUIET = RadarConfig(noise_std=0.0)
SMALL = RadarConfig(samples_per_chirp=16, chirps_per_frame=16, chirp_duration=8e-6, num_rx=2, noise_std=0.0)


def rel(a, b):
    return np.max(np.abs(a - b)) / np.max(np.abs(b))


def cube(values):
    return RangeProfileCube(np.asarray(values, dtype=complex), 0.03)


# ------------------------------------------------------------------ range FFT

def test_range_fft_dc_is_zero():
    x = np.full((3, 64, 64), 2.5 + 1j)
    out = range_fft(x, QUIET)
    assert out.values.shape == (3, 64, 32)
    assert np.max(np.abs(out.values)) < 1e-12


def test_range_fft_matches_direct_dft(rng):
    x = rng.normal(size=(2, 16, 16)) + 1j * rng.normal(size=(2, 16, 16))
    got = range_fft(x, SMALL, full=True).values
    prepared = (x - x.mean(axis=-1, keepdims=True)) * np.hanning(16)
    assert rel(got, dft(prepared)) < 1e-6


def test_range_fft_tone_peak():
    n = np.arange(64)
    for k in (3, 8, 20):
        tone = np.exp(2j * np.pi * k * n / 64)
        x = np.broadcast_to(tone, (3, 64, 64))
        mag = np.abs(range_fft(x, QUIET).values[0, 0])
        assert int(np.argmax(mag)) == k


def test_range_fft_parseval(rng):
    x = rng.normal(size=(3, 64, 64)) + 1j * rng.normal(size=(3, 64, 64))
    full = range_fft(x, QUIET, full=True).values
    prepared = (x - x.mean(axis=-1, keepdims=True)) * np.hanning(64)
    e_in = np.sum(np.abs(prepared) ** 2)
    assert np.sum(np.abs(full) ** 2) / 64 == pytest.approx(e_in, rel=1e-9)


def test_range_fft_shape_errors():
    with pytest.raises(ValueError):
        range_fft(np.zeros((3, 64, 48)), QUIET)
    with pytest.raises(ValueError):
        range_fft(np.zeros((2, 64, 64)), QUIET)


# ------------------------------------------------------------------ MTI

def test_mti_examples():
    np.testing.assert_array_equal(mti_filter(cube(np.ones((2, 5, 4)))).values, 0)
    series = np.array([1.0, 2.0, 3.0])[None, :, None] * np.ones((1, 3, 2))
    np.testing.assert_allclose(mti_filter(cube(series)).values[0, :, 0], [-1, 0, 1])
    with pytest.raises(ValueError):
        mti_filter(cube(np.ones((1, 1, 4))))


def test_mti_nulls_noiseless_static_scatterer():
    prof = ScatterProfile("s", (Scatterer(0.25, 1.0), Scatterer(0.31, 0.5)))
    rp = range_fft(simulate_if_frame(prof, QUIET, 4, seed=0), QUIET)
    out = mti_filter(rp).values
    assert np.max(np.abs(out)) < 1e-9 * np.max(np.abs(rp.values))


# ------------------------------------------------------------------ Doppler FFT

def test_doppler_zero_and_shape():
    img = doppler_fft(cube(np.zeros((3, 64, 32))), 64)
    assert img.magnitudes.shape == (32, 64)
    assert not np.any(img.magnitudes)
    with pytest.raises(ValueError):
        doppler_fft(cube(np.zeros((3, 32, 32))), 64)


def test_doppler_matches_direct_dft(rng):
    v = rng.normal(size=(2, 16, 8)) + 1j * rng.normal(size=(2, 16, 8))
    got = doppler_spectrum(cube(v))
    want = np.fft.fftshift(dft(v * np.hanning(16)[None, :, None], axis=1), axes=1)
    assert rel(got, want) < 1e-6


@pytest.mark.parametrize("d", [-5, -1, 3, 12])
def test_doppler_phasor_peak(d):
    n = np.arange(64)
    v = np.zeros((1, 64, 4), dtype=complex)
    v[0, :, 2] = np.exp(2j * np.pi * d * n / 64)
    mag = doppler_fft(cube(v)).magnitudes
    assert int(np.argmax(mag[2])) == 32 + d


def test_doppler_real_input_symmetric(rng):
    v = rng.normal(size=(1, 64, 3))
    mag = doppler_fft(cube(v)).magnitudes
    # shifted bin 32+j mirrors 32-j
    np.testing.assert_allclose(mag[:, 33:], mag[:, 31:0:-1], rtol=1e-10, atol=1e-12)


# ------------------------------------------------------------------ sinc

def test_sinc_kernel_properties():
    for fc in (0.05, 0.1, 0.25, 0.4, 0.5):
        h = sinc_kernel(fc)
        assert len(h) == 9
        assert h.sum() == pytest.approx(1.0, abs=1e-15)
        np.testing.assert_allclose(h, h[::-1], atol=0)
    with pytest.raises(ValueError):
        sinc_kernel(0.0)
    with pytest.raises(ValueError):
        sinc_kernel(0.6)
    with pytest.raises(ValueError):
        sinc_kernel(0.25, taps=8)


def test_sinc_nyquist_cutoff_passes_impulse():
    x = np.zeros((1, 21, 1))
    x[0, 10, 0] = 1.0
    out = sinc_lowpass(cube(x), 0.5).values
    np.testing.assert_allclose(out, x, atol=1e-6)


def test_sinc_constant_unchanged():
    x = np.full((2, 30, 3), 1.7 - 0.2j)
    for fc in (0.1, 0.25, 0.5):
        np.testing.assert_allclose(sinc_lowpass(cube(x), fc).values, x, rtol=1e-14)


def test_sinc_attenuates_alternating():
    x = ((-1.0) ** np.arange(64))[None, :, None]
    out = sinc_lowpass(cube(x), 0.1).values
    assert np.max(np.abs(out)) < 0.05


def test_sinc_nyquist_response_oracle():
    h = sinc_kernel(0.1)
    resp = abs(sum(c * (-1) ** k for k, c in enumerate(h)))
    assert resp < 0.05


# ------------------------------------------------------------------ linearity

@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 1000))
@settings(max_examples=25, deadline=None)
def test_stages_are_linear(a, b, seed):
    r = np.random.default_rng(seed)
    x = r.normal(size=(2, 16, 16)) + 1j * r.normal(size=(2, 16, 16))
    y = r.normal(size=(2, 16, 16)) + 1j * r.normal(size=(2, 16, 16))
    stages = [
        lambda z: range_fft(z, SMALL).values,
        lambda z: mti_filter(cube(z)).values,
        lambda z: doppler_spectrum(cube(z)),
        lambda z: sinc_lowpass(cube(z), 0.25).values,
    ]
    for f in stages:
        lhs = f(a * x + b * y)
        rhs = a * f(x) + b * f(y)
        scale = max(np.max(np.abs(rhs)), np.max(np.abs(f(x))), np.max(np.abs(f(y))))
        assert np.max(np.abs(lhs - rhs)) <= 1e-9 * scale


# ------------------------------------------------------------------ RDI / micro-RDI

def test_minmax():
    np.testing.assert_array_equal(minmax_normalize(np.full((3, 3), 4.0)), 0)
    out = minmax_normalize(np.array([[1.0, 3.0], [2.0, 5.0]]))
    assert out.min() == 0 and out.max() == 1


def test_build_rdi_static_scene_is_zero():
    prof = ScatterProfile("s", (Scatterer(0.25, 1.0),))
    frame = simulate_if_frame(prof, QUIET, 0, 0)
    raw = build_rdi(frame, QUIET, normalize=False).magnitudes
    assert np.max(raw) < 1e-9 * 64 * 64
    norm = build_rdi(np.zeros((3, 64, 64)), QUIET)
    assert norm.normalization_tag == "per_image_minmax"
    assert not np.any(norm.magnitudes)


def test_build_rdi_vibrating_scatterer_row():
    prof = ScatterProfile("v", (Scatterer(0.25, 1.0, vib_freq=100.0, vib_amp=1e-3),))
    frame = simulate_if_frame(prof, QUIET, 0, 0)
    img = build_rdi(frame, QUIET)
    assert img.magnitudes.shape == (32, 64)
    assert 0 <= img.magnitudes.min() and img.magnitudes.max() == 1
    row_energy = img.magnitudes.sum(axis=1)
    assert int(np.argmax(row_energy)) == 8
    again = build_rdi(frame, QUIET)
    assert again.magnitudes.tobytes() == img.magnitudes.tobytes()


def test_micro_rdi_shapes_and_zero():
    zeros = [np.zeros((3, 64, 64))] * 8
    img = build_micro_rdi(zeros, QUIET)
    assert img.magnitudes.shape == (32, 512)
    assert not np.any(img.magnitudes)
    with pytest.raises(ValueError):
        build_micro_rdi(zeros[:7], QUIET)


def test_micro_rdi_resolves_slow_vibration():
    one_frame_res = 1 / (QUIET.chirps_per_frame * QUIET.chirp_interval)  # 20 Hz
    eight_frame_res = one_frame_res / 8  # 2.5 Hz
    f_vib = 8.0
    assert eight_frame_res * 2 < f_vib < one_frame_res
    prof = ScatterProfile("v", (Scatterer(0.25, 1.0, vib_freq=f_vib, vib_amp=1e-3),))
    frames = [simulate_if_frame(prof, QUIET, i, 0) for i in range(8)]
    row = QUIET.expected_range_bin(0.25)

    micro = build_micro_rdi(frames, QUIET).magnitudes[row]
    off_micro = int(np.argmax(micro)) - 256
    assert abs(abs(off_micro) * eight_frame_res - f_vib) <= eight_frame_res
    assert abs(off_micro) >= 2  # outside the Hann main lobe around zero Doppler

    rdi = build_rdi(frames[-1], QUIET).magnitudes[row]
    off_rdi = int(np.argmax(rdi)) - 32
    assert abs(off_rdi) <= 1  # merged with the zero-Doppler main lobe


def test_preprocess_sequence_matches_builders():
    prof = ScatterProfile("v", (Scatterer(0.25, 1.0, vib_freq=8.0, vib_amp=1e-3),))
    cfg = RadarConfig(noise_std=0.05)
    frames = np.stack([simulate_if_frame(prof, cfg, i, 1).samples for i in range(10)])
    rdis, micros = preprocess_sequence(frames, cfg)
    assert rdis.shape == (3, 32, 64) and micros.shape == (3, 32, 512)
    np.testing.assert_allclose(rdis[2], build_rdi(frames[9], cfg).magnitudes, rtol=1e-12)
    np.testing.assert_allclose(micros[1], build_micro_rdi(list(frames[1:9]), cfg).magnitudes, rtol=1e-12)
    with pytest.raises(ValueError):
        preprocess_sequence(frames[:7], cfg)
