from __future__ import annotations

import numpy as np
from scipy.signal import upfirdn

from imdd_dsp.config import PamConfig
from imdd_dsp.errors import ParameterError
from imdd_dsp.signalcore import Waveform, raised_cosine_taps


def _gray_to_index(order: int) -> np.ndarray:
    # bit pattern -> level index
    table = np.empty(order, dtype=np.int64)
    for k in range(order):
        table[k ^ (k >> 1)] = k
    return table


def bits_to_symbols(bits: np.ndarray, cfg: PamConfig) -> np.ndarray:
    """Groups of log2(order) bits, MSB first, Gray-mapped to level indices."""
    bits = np.asarray(bits, dtype=np.int64).ravel()
    k = cfg.bits_per_symbol
    if bits.size % k:
        raise ParameterError(f"bit_count_not_divisible: {bits.size} % {k}")
    if np.any((bits != 0) & (bits != 1)):
        raise ParameterError("bits_must_be_0_or_1")
    weights = 1 << np.arange(k - 1, -1, -1)
    patterns = bits.reshape(-1, k) @ weights
    return _gray_to_index(cfg.order)[patterns]


def symbols_to_bits(symbols: np.ndarray, cfg: PamConfig) -> np.ndarray:
    symbols = np.asarray(symbols, dtype=np.int64).ravel()
    if np.any((symbols < 0) | (symbols >= cfg.order)):
        raise ParameterError(f"symbol_out_of_range: order={cfg.order}")
    k = cfg.bits_per_symbol
    patterns = np.asarray(cfg.gray_map, dtype=np.int64)[symbols]
    shifts = np.arange(k - 1, -1, -1)
    return ((patterns[:, None] >> shifts) & 1).reshape(-1)


def symbol_levels(symbols: np.ndarray, cfg: PamConfig) -> np.ndarray:
    return np.asarray(cfg.levels, dtype=np.float64)[np.asarray(symbols, dtype=np.int64)]


def shape_pulses(levels: np.ndarray, cfg: PamConfig) -> np.ndarray:
    n = cfg.samples_per_symbol
    taps = raised_cosine_taps(cfg.rc_rolloff, cfg.rc_span, n)
    delay = (len(taps) - 1) // 2
    shaped = upfirdn(taps, levels, up=n)
    return shaped[delay : delay + levels.size * n]


def pam_modulate(bits: np.ndarray, cfg: PamConfig, *, sample_rate_hz: float) -> tuple[np.ndarray, Waveform]:
    symbols = bits_to_symbols(bits, cfg)
    if symbols.size == 0:
        raise ParameterError("empty_bit_sequence")
    drive = shape_pulses(symbol_levels(symbols, cfg), cfg)
    return symbols, Waveform(drive, sample_rate_hz)
