from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

import numpy as np
import scipy.linalg
from numpy.lib.stride_tricks import sliding_window_view

from imdd_dsp.config import PamConfig
from imdd_dsp.errors import ParameterError, ShapeError

if TYPE_CHECKING:
    from imdd_dsp.datasets import RecordedDataset


logger = logging.getLogger(__name__)


def _check_windows(window: int, w1: int, n: int) -> None:
    if window < 1 or w1 < 1 or window % 2 == 0 or w1 % 2 == 0:
        raise ParameterError(f"volterra_windows_must_be_odd: W={window} W1={w1}")
    if w1 > window:
        raise ParameterError(f"volterra_w1_exceeds_window: W1={w1} W={window}")
    if n < 1:
        raise ParameterError(f"invalid_samples_per_symbol: {n}")


def volterra_feature_count(window: int, w1: int, n: int) -> int:
    m = w1 * n
    return 1 + window * n + m * (m + 1) // 2


@dataclass(frozen=True)
class VolterraCoeffs:
    dc: float
    linear: np.ndarray
    quadratic: np.ndarray
    window: int
    w1: int
    n: int
    rank: int | None = None

    @property
    def feature_count(self) -> int:
        return volterra_feature_count(self.window, self.w1, self.n)

    @property
    def full_rank(self) -> bool:
        return self.rank is None or self.rank == self.feature_count

    def vector(self) -> np.ndarray:
        return np.concatenate([[self.dc], self.linear, self.quadratic])

    @classmethod
    def from_vector(cls, vec: np.ndarray, window: int, w1: int, n: int, rank: int | None = None) -> "VolterraCoeffs":
        vec = np.asarray(vec, dtype=np.float64).ravel()
        if vec.size != volterra_feature_count(window, w1, n):
            raise ShapeError(f"volterra_vector_length: {vec.size} != {volterra_feature_count(window, w1, n)}")
        linear_end = 1 + window * n
        return cls(
            dc=float(vec[0]),
            linear=vec[1:linear_end].copy(),
            quadratic=vec[linear_end:].copy(),
            window=window,
            w1=w1,
            n=n,
            rank=rank,
        )

    @classmethod
    def identity(cls, window: int, w1: int, n: int) -> "VolterraCoeffs":
        vec = np.zeros(volterra_feature_count(window, w1, n))
        vec[1 + (window - 1) // 2 * n] = 1.0
        return cls.from_vector(vec, window, w1, n)


def feature_rows(windows: np.ndarray, window: int, w1: int, n: int) -> np.ndarray:
    """(K, W*n) sample windows -> (K, features): constant, linear taps, upper-triangular products of the W1 core."""
    offset = (window - w1) // 2 * n
    m = w1 * n
    core = windows[:, offset : offset + m]
    iu, ju = np.triu_indices(m)
    ones = np.ones((windows.shape[0], 1))
    return np.hstack([ones, windows, core[:, iu] * core[:, ju]])


def volterra_features(samples: np.ndarray, window: int, w1: int, n: int) -> np.ndarray:
    _check_windows(window, w1, n)
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size != window * n:
        raise ShapeError(f"volterra_window_samples: expected {window * n}, got {x.size}")
    return feature_rows(x[None, :], window, w1, n)[0]


def symbol_windows(received: np.ndarray, window: int) -> np.ndarray:
    received = np.asarray(received, dtype=np.float64)
    if received.ndim != 2:
        raise ShapeError(f"expected_(T,n)_samples: got {received.shape}")
    n = received.shape[1]
    half = (window - 1) // 2
    flat = np.pad(received, ((half, half), (0, 0))).ravel()
    return sliding_window_view(flat, window * n)[::n]


def volterra_design(received: np.ndarray, window: int, w1: int) -> np.ndarray:
    n = np.asarray(received).shape[-1]
    _check_windows(window, w1, n)
    return feature_rows(symbol_windows(received, window), window, w1, n)


def _training_rows(dataset: "RecordedDataset", count: int, rng: np.random.Generator | None) -> list[int]:
    if count < 1 or count > dataset.rows:
        raise ParameterError(f"volterra_rows {count} not in [1, {dataset.rows}]")
    if rng is None:
        return list(range(count))
    return sorted(int(r) for r in rng.choice(dataset.rows, size=count, replace=False))


def volterra_fit(
    dataset: "RecordedDataset",
    window: int,
    w1: int,
    *,
    cfg: PamConfig,
    rows: Sequence[int] | None = None,
    count: int = 1,
    rng: np.random.Generator | None = None,
    cond: float | None = None,
) -> VolterraCoeffs:
    n = dataset.block_len
    _check_windows(window, w1, n)
    chosen = list(rows) if rows is not None else _training_rows(dataset, count, rng)
    blocks = dataset.blocks()
    levels = np.asarray(cfg.levels, dtype=np.float64)
    design = np.vstack([volterra_design(blocks[r], window, w1) for r in chosen])
    targets = np.concatenate([levels[dataset.l[r].astype(np.int64)] for r in chosen])
    logger.info("volterra_fit rows=%s design=%s", chosen, design.shape)

    coef, _, rank, _ = scipy.linalg.lstsq(design, targets, cond=cond, lapack_driver="gelsy")
    if rank < design.shape[1]:
        logger.warning("volterra_rank_deficient rank=%s features=%s", rank, design.shape[1])
    return VolterraCoeffs.from_vector(coef, window, w1, n, rank=int(rank))


def volterra_output(coeffs: VolterraCoeffs, received: np.ndarray, *, chunk: int = 4096) -> np.ndarray:
    received = np.asarray(received, dtype=np.float64)
    if received.ndim != 2 or received.shape[1] != coeffs.n:
        raise ShapeError(f"expected_(T,{coeffs.n})_samples: got {received.shape}")
    vec = coeffs.vector()
    windows = symbol_windows(received, coeffs.window)
    out = np.empty(windows.shape[0])
    for start in range(0, windows.shape[0], chunk):
        stop = start + chunk
        out[start:stop] = feature_rows(windows[start:stop], coeffs.window, coeffs.w1, coeffs.n) @ vec
    return out


def slice_levels(values: np.ndarray, levels: Sequence[float]) -> np.ndarray:
    lv = np.asarray(levels, dtype=np.float64)
    midpoints = 0.5 * (lv[1:] + lv[:-1])
    return np.searchsorted(midpoints, np.asarray(values, dtype=np.float64))


def volterra_equalize(coeffs: VolterraCoeffs, received: np.ndarray, cfg: PamConfig) -> np.ndarray:
    return slice_levels(volterra_output(coeffs, received), cfg.levels)
