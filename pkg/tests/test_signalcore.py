from __future__ import annotations

import math

import numpy as np
import pytest
import torch

from imdd_dsp.errors import DegenerateInputError, ParameterError
from imdd_dsp.signalcore import (
    Waveform,
    brickwall_lpf,
    normalize_power,
    raised_cosine_taps,
    resample,
)


FS = 64.0


def tone(bin_index: int, n: int = 64, fs: float = FS) -> Waveform:
    t = np.arange(n) / fs
    return Waveform(np.cos(2 * math.pi * bin_index * fs / n * t), fs)


def test_raised_cosine_center_and_symmetry():
    taps = raised_cosine_taps(0.25, 8, 2)
    assert taps.size == 17
    assert taps[8] == pytest.approx(1.0)
    np.testing.assert_allclose(taps, taps[::-1], atol=0, rtol=0)


def test_raised_cosine_nyquist_zeros():
    taps = raised_cosine_taps(0.25, 8, 2)
    center = 8
    for k in (1, 2, 3, 4):
        assert abs(taps[center + 2 * k]) < 1e-12
        assert abs(taps[center - 2 * k]) < 1e-12


@pytest.mark.parametrize("rolloff", [0.0, 0.5, 1.0])
def test_raised_cosine_singular_points_finite(rolloff):
    taps = raised_cosine_taps(rolloff, 6, 4)
    assert np.all(np.isfinite(taps))


@pytest.mark.parametrize(
    "args",
    [(-0.1, 8, 2), (1.5, 8, 2), (0.25, 7, 2), (0.25, 0, 2), (0.25, 8, 0)],
)
def test_raised_cosine_rejects_bad_parameters(args):
    with pytest.raises(ParameterError):
        raised_cosine_taps(*args)


def test_lowpass_passes_tone_below_cutoff():
    w = tone(5)
    out = brickwall_lpf(w, cutoff_hz=10.0)
    np.testing.assert_allclose(out.numpy(), w.numpy(), rtol=0, atol=1e-9)


def test_lowpass_removes_tone_above_cutoff():
    w = tone(20)
    out = brickwall_lpf(w, cutoff_hz=10.0)
    assert out.energy() < 1e-18 * w.energy()


def test_lowpass_white_noise_keeps_passband_energy(rng):
    x = rng.standard_normal(256)
    cutoff = 12.0
    out = brickwall_lpf(Waveform(x, FS), cutoff)
    spectrum = np.fft.fft(x)
    freqs = np.fft.fftfreq(x.size, d=1.0 / FS)
    expected = np.sum(np.abs(spectrum[np.abs(freqs) <= cutoff]) ** 2) / x.size
    assert out.energy() == pytest.approx(expected, rel=1e-12)


def test_lowpass_is_idempotent(rng):
    w = Waveform(rng.standard_normal(128), FS)
    once = brickwall_lpf(w, 9.0)
    twice = brickwall_lpf(once, 9.0)
    torch.testing.assert_close(twice.samples, once.samples, rtol=0, atol=1e-12)


def test_lowpass_rejects_cutoff_at_nyquist():
    with pytest.raises(ParameterError):
        brickwall_lpf(tone(3), cutoff_hz=FS / 2)


def test_resample_identity():
    w = tone(3)
    torch.testing.assert_close(resample(w, 1, 1).samples, w.samples, rtol=0, atol=0)
    assert resample(w, 3, 3).sample_rate_hz == FS


def test_resample_up_down_round_trip():
    t = np.arange(64) / FS
    x = np.cos(2 * math.pi * 3 * t) + 0.5 * np.sin(2 * math.pi * 5 * t)
    w = Waveform(x, FS)
    up = resample(w, 4, 1)
    assert len(up) == 256 and up.sample_rate_hz == 4 * FS
    back = resample(up, 1, 4)
    assert back.sample_rate_hz == FS
    np.testing.assert_allclose(back.numpy(), x, rtol=0, atol=1e-6 * np.max(np.abs(x)))


def test_resample_up_keeps_tone_frequency_and_amplitude():
    w = tone(6)
    up = resample(w, 2, 1)
    spectrum = np.abs(np.fft.rfft(up.numpy())) / len(up) * 2
    freqs = np.fft.rfftfreq(len(up), d=1.0 / up.sample_rate_hz)
    peak = int(np.argmax(spectrum))
    assert freqs[peak] == pytest.approx(6.0)
    assert spectrum[peak] == pytest.approx(1.0, rel=1e-9)


def test_resample_rejects_zero_factor():
    with pytest.raises(ParameterError):
        resample(tone(1), 0, 1)


def test_normalize_uniform_scaling():
    out = normalize_power(Waveform([1.0, 1.0, 1.0, 1.0], 1.0), 4.0)
    np.testing.assert_allclose(out.numpy(), [2.0, 2.0, 2.0, 2.0])


def test_normalize_fixed_point(rng):
    w = Waveform(rng.standard_normal(50), 1.0)
    out = normalize_power(w, w.mean_square())
    np.testing.assert_allclose(out.numpy(), w.numpy(), rtol=1e-12)


def test_normalize_with_mean_removal():
    out = normalize_power(Waveform([3.0, -1.0, 1.0, -3.0], 1.0), 1.0, remove_mean=True)
    assert abs(out.numpy().mean()) < 1e-12
    assert out.mean_square() == pytest.approx(1.0, abs=1e-12)


def test_normalize_zero_energy_raises():
    with pytest.raises(DegenerateInputError):
        normalize_power(Waveform(np.zeros(8), 1.0), 1.0)


def test_waveform_validation():
    with pytest.raises(DegenerateInputError):
        Waveform(np.zeros(0), 1.0)
    with pytest.raises(ParameterError):
        Waveform(np.ones(4), 0.0)
