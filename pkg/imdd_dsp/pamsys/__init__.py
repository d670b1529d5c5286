from __future__ import annotations

from .modulation import bits_to_symbols, pam_modulate, symbols_to_bits
from .volterra import VolterraCoeffs, volterra_equalize, volterra_fit

__all__ = [
    "VolterraCoeffs",
    "bits_to_symbols",
    "pam_modulate",
    "symbols_to_bits",
    "volterra_equalize",
    "volterra_fit",
]
