from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np
import torch

from imdd_dsp.errors import DegenerateInputError, ParameterError


logger = logging.getLogger(__name__)

WindowReceiver = Callable[[torch.Tensor], torch.Tensor]


@dataclass(frozen=True)
class ProbSequence:
    probs: torch.Tensor
    window: int
    requested_window: int
    counts: torch.Tensor

    def __len__(self) -> int:
        return int(self.probs.shape[0])

    @property
    def fell_back(self) -> bool:
        return self.window != self.requested_window


def coverage_counts(length: int, window: int) -> torch.Tensor:
    """Number of windows covering each position: min(W, i, T-i+1, T-W+1) for 1-based i."""
    i = torch.arange(1, length + 1)
    bound = torch.minimum(i, length - i + 1)
    return torch.clamp(torch.minimum(bound, torch.tensor(length - window + 1)), max=window)


def estimate_sequence(
    received: torch.Tensor,
    rx: WindowReceiver,
    window: int,
    *,
    chunk: int = 2048,
) -> ProbSequence:
    """Slide a W-block receiver one block at a time over (T, block_len) samples and average every estimate of each position."""
    if received.ndim != 2 or received.shape[0] == 0:
        raise DegenerateInputError(f"expected_nonempty_block_sequence: got shape {tuple(received.shape)}")
    if window < 1:
        raise ParameterError(f"invalid_window: {window}")
    length = int(received.shape[0])
    used = window
    if window > length:
        logger.warning("window_fallback requested=%s used=%s", window, length)
        used = length

    starts = length - used + 1
    windows = received.unfold(0, used, 1).transpose(-1, -2)
    with torch.no_grad():
        outputs = torch.cat([rx(windows[c : c + chunk]) for c in range(0, starts, chunk)])

    classes = outputs.shape[-1]
    total = outputs.new_zeros(length, classes)
    for k in range(used):
        total[k : k + starts] += outputs[:, k]
    counts = coverage_counts(length, used)
    probs = total / counts.unsqueeze(-1).to(total.dtype)
    probs = probs / probs.sum(dim=-1, keepdim=True)
    return ProbSequence(probs=probs, window=used, requested_window=window, counts=counts)


def decide(p: ProbSequence | torch.Tensor) -> np.ndarray:
    probs = p.probs if isinstance(p, ProbSequence) else p
    # torch.argmax does not promise first-index ties
    return np.argmax(probs.detach().cpu().numpy(), axis=-1)


def bler(truth: np.ndarray, estimate: np.ndarray) -> float:
    truth = np.asarray(truth)
    estimate = np.asarray(estimate)
    if truth.shape != estimate.shape:
        raise ParameterError(f"length_mismatch: {truth.shape} vs {estimate.shape}")
    if truth.size == 0:
        raise ParameterError("empty_sequences")
    return float(np.mean(truth != estimate))
