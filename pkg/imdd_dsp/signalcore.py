from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any

import numpy as np
import torch

from imdd_dsp.errors import DegenerateInputError, ParameterError

REAL_DTYPE = torch.float64
COMPLEX_DTYPE = torch.complex128


def as_tensor(samples: Any) -> torch.Tensor:
    if isinstance(samples, torch.Tensor):
        x = samples
    else:
        x = torch.as_tensor(np.asarray(samples))
    if x.is_complex():
        return x.to(COMPLEX_DTYPE)
    return x.to(REAL_DTYPE)


@dataclass(frozen=True)
class Waveform:
    """Sampled signal; the last tensor axis is time, leading axes (if any) are independent records."""

    samples: torch.Tensor
    sample_rate_hz: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "samples", as_tensor(self.samples))
        if self.samples.ndim == 0 or self.samples.shape[-1] == 0:
            raise DegenerateInputError("empty_waveform")
        if not self.sample_rate_hz > 0:
            raise ParameterError(f"invalid_sample_rate: {self.sample_rate_hz}")

    def __len__(self) -> int:
        return int(self.samples.shape[-1])

    @property
    def is_complex(self) -> bool:
        return self.samples.is_complex()

    def energy(self) -> float:
        return float(torch.sum(self.samples.abs() ** 2))

    def mean_square(self) -> float:
        return float(torch.mean(self.samples.abs() ** 2))

    def numpy(self) -> np.ndarray:
        return self.samples.detach().cpu().numpy()

    def with_samples(self, samples: torch.Tensor, sample_rate_hz: float | None = None) -> "Waveform":
        return Waveform(samples, self.sample_rate_hz if sample_rate_hz is None else sample_rate_hz)


def raised_cosine_taps(rolloff: float, span_symbols: int, samples_per_symbol: int) -> np.ndarray:
    if not 0.0 <= rolloff <= 1.0:
        raise ParameterError(f"invalid_rolloff: {rolloff}")
    if span_symbols <= 0 or span_symbols % 2:
        raise ParameterError(f"span_symbols_must_be_positive_even: {span_symbols}")
    if samples_per_symbol < 1:
        raise ParameterError(f"invalid_samples_per_symbol: {samples_per_symbol}")

    half = span_symbols * samples_per_symbol // 2
    t = np.arange(-half, half + 1, dtype=np.float64) / samples_per_symbol
    taps = np.sinc(t)
    if rolloff > 0.0:
        denom = 1.0 - (2.0 * rolloff * t) ** 2
        singular = np.isclose(denom, 0.0, atol=1e-12)
        safe = np.where(singular, 1.0, denom)
        taps = np.where(
            singular,
            (math.pi / 4.0) * np.sinc(1.0 / (2.0 * rolloff)),
            taps * np.cos(math.pi * rolloff * t) / safe,
        )
    return taps / taps[half]


def _bin_frequencies(n: int, sample_rate_hz: float) -> torch.Tensor:
    return torch.fft.fftfreq(n, d=1.0 / sample_rate_hz, dtype=REAL_DTYPE)


def lowpass(samples: torch.Tensor, sample_rate_hz: float, cutoff_hz: float) -> torch.Tensor:
    n = samples.shape[-1]
    if samples.is_complex():
        mask = (_bin_frequencies(n, sample_rate_hz).abs() <= cutoff_hz).to(samples.dtype)
        return torch.fft.ifft(torch.fft.fft(samples) * mask)
    freqs = torch.fft.rfftfreq(n, d=1.0 / sample_rate_hz, dtype=REAL_DTYPE)
    spectrum = torch.fft.rfft(samples)
    mask = (freqs <= cutoff_hz).to(spectrum.dtype)
    return torch.fft.irfft(spectrum * mask, n=n)


def brickwall_lpf(w: Waveform, cutoff_hz: float) -> Waveform:
    if not 0.0 < cutoff_hz < w.sample_rate_hz / 2:
        raise ParameterError(f"cutoff_not_below_nyquist: cutoff={cutoff_hz} fs={w.sample_rate_hz}")
    return w.with_samples(lowpass(w.samples, w.sample_rate_hz, cutoff_hz))


def resample_samples(samples: torch.Tensor, sample_rate_hz: float, up: int, down: int) -> tuple[torch.Tensor, float]:
    if up < 1 or down < 1:
        raise ParameterError(f"invalid_resample_factors: up={up} down={down}")
    g = math.gcd(up, down)
    up, down = up // g, down // g
    if up == 1 and down == 1:
        return samples, sample_rate_hz

    n = samples.shape[-1]
    if up > 1:
        zeros = torch.zeros_like(samples)
        stuffed = torch.stack([samples * up] + [zeros] * (up - 1), dim=-1)
        stuffed = stuffed.reshape(*samples.shape[:-1], n * up)
    else:
        stuffed = samples
    mid_rate = sample_rate_hz * up
    cutoff = min(sample_rate_hz, mid_rate / down) / 2.0
    filtered = lowpass(stuffed, mid_rate, cutoff)
    return filtered[..., ::down], mid_rate / down


def resample(w: Waveform, up: int, down: int) -> Waveform:
    samples, rate = resample_samples(w.samples, w.sample_rate_hz, up, down)
    return Waveform(samples, rate)


def normalize_samples(samples: torch.Tensor, target_mean_square: float, *, remove_mean: bool = False) -> torch.Tensor:
    if target_mean_square <= 0:
        raise ParameterError(f"invalid_target_mean_square: {target_mean_square}")
    x = samples - samples.mean(dim=-1, keepdim=True) if remove_mean else samples
    ms = torch.mean(x.abs() ** 2, dim=-1, keepdim=True)
    if bool(torch.any(ms == 0)):
        raise DegenerateInputError("zero_energy_waveform")
    return x * torch.sqrt(target_mean_square / ms)


def normalize_power(w: Waveform, target_mean_square: float, *, remove_mean: bool = False) -> Waveform:
    return w.with_samples(normalize_samples(w.samples, target_mean_square, remove_mean=remove_mean))
