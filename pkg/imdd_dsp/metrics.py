from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import pandas as pd
from scipy.stats import norm

from imdd_dsp.errors import DegenerateInputError, ParameterError


logger = logging.getLogger(__name__)

EXHAUSTIVE_STARTS_LIMIT = 24


@dataclass(frozen=True)
class ConfusionMatrix:
    counts: np.ndarray

    def __post_init__(self) -> None:
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
            raise ParameterError(f"confusion_matrix_must_be_square: {counts.shape}")
        if np.any(counts < 0):
            raise ParameterError("negative_confusion_counts")
        object.__setattr__(self, "counts", counts)

    @property
    def size(self) -> int:
        return int(self.counts.shape[0])

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def to_frame(self) -> pd.DataFrame:
        idx = pd.RangeIndex(self.size, name="sent")
        return pd.DataFrame(self.counts, index=idx, columns=[f"decided_{b}" for b in range(self.size)])


@dataclass(frozen=True)
class BitMapping:
    labels: tuple[int, ...]

    def __post_init__(self) -> None:
        m = len(self.labels)
        if m < 2 or m & (m - 1):
            raise ParameterError(f"mapping_size_not_power_of_two: {m}")
        if sorted(self.labels) != list(range(m)):
            raise ParameterError("mapping_not_bijective")

    @property
    def bits(self) -> int:
        return int(math.log2(len(self.labels)))

    def array(self) -> np.ndarray:
        return np.asarray(self.labels, dtype=np.int64)

    def symbol_bits(self, symbols: np.ndarray) -> np.ndarray:
        patterns = self.array()[np.asarray(symbols, dtype=np.int64)]
        shifts = np.arange(self.bits - 1, -1, -1)
        return ((patterns[:, None] >> shifts) & 1).reshape(-1)


def confusion_matrix(truth: np.ndarray, decided: np.ndarray, size: int) -> ConfusionMatrix:
    truth = np.asarray(truth, dtype=np.int64).ravel()
    decided = np.asarray(decided, dtype=np.int64).ravel()
    if truth.shape != decided.shape:
        raise ParameterError(f"length_mismatch: {truth.shape} vs {decided.shape}")
    if truth.size and (min(truth.min(), decided.min()) < 0 or max(truth.max(), decided.max()) >= size):
        raise ParameterError(f"symbol_out_of_range: size={size}")
    counts = np.bincount(truth * size + decided, minlength=size * size).reshape(size, size)
    return ConfusionMatrix(counts)


def identity_mapping(size: int) -> BitMapping:
    return BitMapping(tuple(range(size)))


def gray_mapping(size: int) -> BitMapping:
    return BitMapping(tuple(k ^ (k >> 1) for k in range(size)))


def hamming_matrix(labels: np.ndarray) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    k = max(1, int(labels.max()).bit_length())
    b = (labels[:, None] >> np.arange(k)) & 1
    return b @ (1 - b).T + (1 - b) @ b.T


def _mapping_cost(counts: np.ndarray, labels: np.ndarray) -> int:
    return int(np.sum(counts * hamming_matrix(labels)))


def ber_with_mapping(cm: ConfusionMatrix, mapping: BitMapping) -> float:
    if len(mapping.labels) != cm.size:
        raise ParameterError(f"mapping_size {len(mapping.labels)} != confusion size {cm.size}")
    if cm.total == 0:
        raise DegenerateInputError("empty_confusion_matrix")
    return _mapping_cost(cm.counts, mapping.array()) / (mapping.bits * cm.total)


def _swap_deltas(s: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Cost change of swapping the labels of symbols a and b, for every pair (a, b)."""
    h = hamming_matrix(labels)
    p = s @ h
    d = np.diag(p)
    sd = np.diag(s)
    return p + p.T - d[:, None] - d[None, :] - h * (sd[:, None] + sd[None, :] - 2 * s)


def _local_search(s: np.ndarray, start: np.ndarray) -> np.ndarray:
    labels = start.copy()
    upper = np.triu(np.ones_like(s, dtype=bool), k=1)
    while True:
        deltas = np.where(upper, _swap_deltas(s, labels), 0)
        flat = int(np.argmin(deltas))
        if deltas.flat[flat] >= 0:
            return labels
        a, b = divmod(flat, s.shape[0])
        labels[a], labels[b] = labels[b], labels[a]


def _starts(size: int, restarts: int, rng: np.random.Generator) -> list[np.ndarray]:
    starts = [identity_mapping(size).array(), gray_mapping(size).array()]
    starts += [rng.permutation(size) for _ in range(restarts)]
    if math.factorial(size) <= EXHAUSTIVE_STARTS_LIMIT:
        starts += [np.asarray(p, dtype=np.int64) for p in itertools.permutations(range(size))]
    return starts


def optimize_bit_mapping(
    cm: ConfusionMatrix,
    *,
    restarts: int = 16,
    rng: np.random.Generator | None = None,
) -> BitMapping:
    """Best-improvement pairwise label swaps from identity, Gray and random starts; lowest cost wins, ties to the smallest labels."""
    size = cm.size
    if size < 2 or size & (size - 1):
        raise ParameterError(f"alphabet_not_power_of_two: {size}")
    rng = np.random.default_rng(0) if rng is None else rng
    s = cm.counts + cm.counts.T

    best: tuple[int, tuple[int, ...]] | None = None
    for start in _starts(size, restarts, rng):
        labels = _local_search(s, start)
        candidate = (_mapping_cost(cm.counts, labels), tuple(int(x) for x in labels))
        if best is None or candidate < best:
            best = candidate
    assert best is not None
    logger.debug("bit_mapping_optimized size=%s cost=%s", size, best[0])
    return BitMapping(best[1])


def ber_pam(truth_bits: np.ndarray, decided_bits: np.ndarray) -> float:
    truth_bits = np.asarray(truth_bits).ravel()
    decided_bits = np.asarray(decided_bits).ravel()
    if truth_bits.shape != decided_bits.shape:
        raise ParameterError(f"length_mismatch: {truth_bits.shape} vs {decided_bits.shape}")
    if truth_bits.size == 0:
        raise ParameterError("empty_bit_sequences")
    return float(np.mean(truth_bits != decided_bits))


def average_ber(values: Sequence[float]) -> float:
    if len(values) == 0:
        raise ParameterError("average_of_empty_list")
    return float(np.mean(np.asarray(values, dtype=np.float64)))


def wilson_interval(errors: int, trials: int, *, confidence: float = 0.95) -> tuple[float, float]:
    if trials <= 0:
        return 0.0, 1.0
    if not 0 <= errors <= trials:
        raise ParameterError(f"errors {errors} not in [0, {trials}]")
    z = float(norm.ppf(0.5 + confidence / 2.0))
    p = errors / trials
    denom = 1.0 + z * z / trials
    center = (p + z * z / (2 * trials)) / denom
    half = z / denom * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials))
    return max(0.0, center - half), min(1.0, center + half)
