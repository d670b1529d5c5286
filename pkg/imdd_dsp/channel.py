from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
import torch

from imdd_dsp.config import LinkConfig
from imdd_dsp.errors import ContractError, ParameterError, ShapeError
from imdd_dsp.signalcore import (
    COMPLEX_DTYPE,
    REAL_DTYPE,
    Waveform,
    lowpass,
    normalize_samples,
    resample_samples,
)


logger = logging.getLogger(__name__)

MZM_MAX_DRIVE = math.pi / 4
_DRIVE_SLACK = 1e-9


@dataclass
class LinkDiagnostics:
    mzm_clipped: int = 0
    records: int = 0


def _clip_drive(drive: torch.Tensor, diagnostics: LinkDiagnostics | None) -> torch.Tensor:
    out_of_range = (drive < -_DRIVE_SLACK) | (drive > MZM_MAX_DRIVE + _DRIVE_SLACK)
    clipped = int(out_of_range.sum())
    if clipped:
        if diagnostics is not None:
            diagnostics.mzm_clipped += clipped
        logger.debug("mzm_clipped count=%s", clipped)
    return torch.clamp(drive, 0.0, MZM_MAX_DRIVE)


def mzm_field(drive: torch.Tensor, launch_power_mw: float, diagnostics: LinkDiagnostics | None = None) -> torch.Tensor:
    return math.sqrt(launch_power_mw) * torch.sin(_clip_drive(drive, diagnostics))


def mzm_modulate(drive: Waveform, *, launch_power_mw: float = 1.0, diagnostics: LinkDiagnostics | None = None) -> Waveform:
    if drive.is_complex:
        raise ParameterError("mzm_drive_must_be_real")
    return drive.with_samples(mzm_field(drive.samples, launch_power_mw, diagnostics))


def dispersion_response(n: int, sample_rate_hz: float, beta2_ps2_per_km: float, distance_km: float) -> torch.Tensor:
    """All-pass H(w) = exp(i * beta2/2 * w^2 * L) for each DFT bin."""
    omega = 2.0 * math.pi * torch.fft.fftfreq(n, d=1.0 / sample_rate_hz, dtype=REAL_DTYPE)
    beta2_l = beta2_ps2_per_km * 1e-24 * distance_km  # s^2
    return torch.exp(1j * (0.5 * beta2_l) * omega**2)


def disperse(field: torch.Tensor, sample_rate_hz: float, beta2_ps2_per_km: float, distance_km: float) -> torch.Tensor:
    field = field.to(COMPLEX_DTYPE)
    if distance_km == 0:
        return field
    h = dispersion_response(field.shape[-1], sample_rate_hz, beta2_ps2_per_km, distance_km)
    return torch.fft.ifft(torch.fft.fft(field) * h)


def apply_dispersion(field: Waveform, cfg: LinkConfig) -> Waveform:
    return field.with_samples(disperse(field.samples, field.sample_rate_hz, cfg.beta2_ps2_per_km, cfg.distance_km))


def detect(field: torch.Tensor) -> torch.Tensor:
    if field.is_complex():
        return field.real**2 + field.imag**2
    return field**2


def photodiode(field: Waveform) -> Waveform:
    return field.with_samples(detect(field.samples))


def awgn_samples(shape: tuple[int, ...], sigma: float, rng: np.random.Generator) -> torch.Tensor:
    return torch.from_numpy(sigma * rng.standard_normal(size=shape))


def add_awgn(w: Waveform, sigma: float, rng: np.random.Generator) -> Waveform:
    if sigma < 0:
        raise ParameterError(f"negative_sigma: {sigma}")
    if sigma == 0:
        return w
    shape = tuple(w.samples.shape)
    if w.is_complex:
        scale = sigma / math.sqrt(2.0)
        noise = torch.complex(awgn_samples(shape, scale, rng), awgn_samples(shape, scale, rng))
        return w.with_samples(w.samples + noise)
    return w.with_samples(w.samples + awgn_samples(shape, sigma, rng))


def quantize_samples(samples: torch.Tensor, bits: int, full_scale: float | torch.Tensor) -> torch.Tensor:
    if not 2 <= bits <= 16:
        raise ParameterError(f"invalid_quantizer_bits: {bits}")
    step = 2.0 * full_scale / (2**bits)
    top = torch.as_tensor(full_scale - step / 2.0, dtype=samples.dtype)
    levels = (torch.floor(samples / step) + 0.5) * step
    return torch.minimum(torch.maximum(levels, -top), top)


def quantize(w: Waveform, bits: int, full_scale: float) -> Waveform:
    if full_scale <= 0:
        raise ParameterError(f"invalid_full_scale: {full_scale}")
    return w.with_samples(quantize_samples(w.samples, bits, full_scale))


def propagate(
    samples: torch.Tensor,
    cfg: LinkConfig,
    rng: np.random.Generator | None,
    *,
    quantize_enabled: bool,
    diagnostics: LinkDiagnostics | None = None,
) -> torch.Tensor:
    n = samples.shape[-1]
    rate = cfg.sample_rate_hz
    x = samples
    if cfg.lpf_cutoff_hz is not None:
        x = lowpass(x, rate, cfg.lpf_cutoff_hz)
    x, dac_rate = resample_samples(x, rate, 1, cfg.oversampling)
    if quantize_enabled and cfg.dac_bits is not None:
        x = quantize_samples(x, cfg.dac_bits, MZM_MAX_DRIVE)

    field = mzm_field(x, cfg.launch_power_mw, diagnostics)
    field = disperse(field, dac_rate, cfg.beta2_ps2_per_km, cfg.distance_km)
    y = detect(field)
    if cfg.noise_sigma > 0:
        if rng is None:
            raise ContractError("noisy_link_requires_rng")
        y = y + awgn_samples(tuple(y.shape), cfg.noise_sigma, rng)
    if cfg.lpf_cutoff_hz is not None:
        y = lowpass(y, dac_rate, cfg.lpf_cutoff_hz)
    if quantize_enabled and cfg.adc_bits is not None:
        full_scale = y.detach().abs().amax(dim=-1, keepdim=True).clamp_min(1e-30)
        y = quantize_samples(y, cfg.adc_bits, full_scale)
    y, _ = resample_samples(y, dac_rate, cfg.oversampling, 1)
    y = y[..., :n]
    if diagnostics is not None:
        diagnostics.records += int(np.prod(samples.shape[:-1]))
    return normalize_samples(y, cfg.target_mean_square, remove_mean=cfg.remove_mean)


def _check_rate(tx: Waveform, cfg: LinkConfig) -> None:
    if not math.isclose(tx.sample_rate_hz, cfg.sample_rate_hz, rel_tol=1e-9):
        raise ParameterError(
            f"tx_rate_mismatch: waveform={tx.sample_rate_hz} link={cfg.sample_rate_hz}"
        )


def simulate_link(
    tx: Waveform,
    cfg: LinkConfig,
    rng: np.random.Generator | None,
    *,
    diagnostics: LinkDiagnostics | None = None,
) -> Waveform:
    _check_rate(tx, cfg)
    if tx.is_complex:
        raise ParameterError("tx_drive_must_be_real")
    diag = diagnostics if diagnostics is not None else LinkDiagnostics()
    with torch.no_grad():
        rx = propagate(tx.samples.unsqueeze(0), cfg, rng, quantize_enabled=True, diagnostics=diag)[0]
    if diag.mzm_clipped and diagnostics is None:
        logger.warning("mzm_clipped count=%s distance_km=%s", diag.mzm_clipped, cfg.distance_km)
    return Waveform(rx, tx.sample_rate_hz)


def simulate_link_differentiable(
    tx_blocks: torch.Tensor,
    cfg: LinkConfig,
    rng: np.random.Generator | None = None,
    *,
    diagnostics: LinkDiagnostics | None = None,
) -> torch.Tensor:
    """Blocks (batch, T, n) or (T, n) in, received blocks of the same shape out; autograd-traceable."""
    if cfg.quantized:
        raise ContractError("quantization_not_differentiable: disable dac_bits/adc_bits")
    squeeze = tx_blocks.ndim == 2
    blocks = tx_blocks.unsqueeze(0) if squeeze else tx_blocks
    if blocks.ndim != 3 or blocks.shape[-1] != cfg.samples_per_block:
        raise ShapeError(f"expected_blocks_of_{cfg.samples_per_block}: got {tuple(tx_blocks.shape)}")
    batch, length, n = blocks.shape
    rx = propagate(blocks.reshape(batch, length * n), cfg, rng, quantize_enabled=False, diagnostics=diagnostics)
    rx = rx.reshape(batch, length, n)
    return rx[0] if squeeze else rx
