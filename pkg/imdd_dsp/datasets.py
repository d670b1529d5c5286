from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, TypeVar

import numpy as np
import torch

from imdd_dsp.autoencoder import BrnnTransmitter, encode_sequence
from imdd_dsp.channel import LinkDiagnostics, simulate_link
from imdd_dsp.config import AeConfig, LinkConfig, PamConfig, Scheme
from imdd_dsp.errors import ConfigError, DatasetFormatError, ParameterError, ShapeError
from imdd_dsp.pamsys.modulation import pam_modulate
from imdd_dsp.rng import derive_seed, spawn_rngs
from imdd_dsp.signalcore import Waveform
from imdd_dsp.storage import read_dataset_file, write_dataset_file


logger = logging.getLogger(__name__)

AE_SEQUENCES_PER_LOAD = 8
AE_SEQUENCES_PER_ROW = 4
TRAIN_FRACTION = 0.9

T = TypeVar("T")


@dataclass(frozen=True)
class RecordedDataset:
    d: np.ndarray
    l: np.ndarray
    block_len: int
    scheme: Scheme
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        d = np.ascontiguousarray(self.d, dtype=np.float64)
        l = np.ascontiguousarray(self.l, dtype=np.uint16)
        if d.ndim != 2 or l.ndim != 2 or d.shape[0] != l.shape[0]:
            raise ShapeError(f"dataset_shapes: d={d.shape} l={l.shape}")
        if self.block_len < 1 or d.shape[1] != l.shape[1] * self.block_len:
            raise ShapeError(f"row_length {d.shape[1]} != columns {l.shape[1]} x block_len {self.block_len}")
        d.setflags(write=False)
        l.setflags(write=False)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "l", l)

    @property
    def rows(self) -> int:
        return int(self.l.shape[0])

    @property
    def columns(self) -> int:
        return int(self.l.shape[1])

    def blocks(self) -> np.ndarray:
        return self.d.reshape(self.rows, self.columns, self.block_len).copy()

    def row_blocks(self, row: int) -> torch.Tensor:
        return torch.from_numpy(self.d[row].reshape(self.columns, self.block_len).copy())


@dataclass(frozen=True)
class MiniBatch:
    data: np.ndarray
    labels: np.ndarray
    start: int


def minibatch_window(ds: RecordedDataset, s: int, width: int, center_only_labels: bool = False) -> MiniBatch:
    if width < 1 or s < 0 or s + width > ds.columns:
        raise ParameterError(f"window_out_of_bounds: s={s} width={width} columns={ds.columns}")
    data = ds.d[:, s * ds.block_len : (s + width) * ds.block_len].reshape(ds.rows, width, ds.block_len).copy()
    if center_only_labels:
        labels = ds.l[:, s + (width - 1) // 2].copy()
    else:
        labels = ds.l[:, s : s + width].copy()
    return MiniBatch(data=data, labels=labels, start=s)


def split_loads(loads: int) -> int:
    """Number of whole loads assigned to training; at least one load on each side."""
    if loads < 2:
        raise ParameterError(f"need_at_least_two_loads: {loads}")
    return min(loads - 1, max(1, math.floor(TRAIN_FRACTION * loads)))


def _map_loads(fn: Callable[[int, np.random.Generator], T], rngs: list[np.random.Generator], threads: int) -> list[T]:
    if threads <= 1:
        return [fn(i, r) for i, r in enumerate(rngs)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(len(rngs)), rngs))


def _log_clipping(per_load: list[tuple[Any, int]]) -> None:
    clipped = sum(c for _, c in per_load)
    if clipped:
        logger.warning("mzm_clipped count=%s loads=%s", clipped, len(per_load))


def _meta(scheme: Scheme, link: LinkConfig, seed: int, split: str, loads: list[int], extra: dict[str, Any]) -> dict[str, Any]:
    return {"scheme": scheme.value, "seed": seed, "split": split, "loads": loads, "link": asdict(link), **extra}


def _assemble(
    rows: list[tuple[np.ndarray, np.ndarray]],
    train_loads: int,
    rows_per_load: int,
    block_len: int,
    scheme: Scheme,
    link: LinkConfig,
    seed: int,
    extra: dict[str, Any],
) -> tuple[RecordedDataset, RecordedDataset]:
    cut = train_loads * rows_per_load
    total_loads = len(rows) // rows_per_load
    parts = []
    for split, chunk, loads in (
        ("train", rows[:cut], list(range(train_loads))),
        ("test", rows[cut:], list(range(train_loads, total_loads))),
    ):
        d = np.stack([r[0] for r in chunk])
        l = np.stack([r[1] for r in chunk])
        parts.append(RecordedDataset(d, l, block_len, scheme, _meta(scheme, link, seed, split, loads, extra)))
    return parts[0], parts[1]


def build_ae_dataset(
    cfg: AeConfig,
    link: LinkConfig,
    z: int,
    t: int,
    rng: np.random.Generator,
    *,
    tx: BrnnTransmitter,
    scheme: Scheme = Scheme.AE_SBRNN,
    rng_kind: str = "pcg64",
    threads: int = 1,
) -> tuple[RecordedDataset, RecordedDataset]:
    """Z sequences of T messages, 8 per simulated load, 4 per row; whole loads go to train or test."""
    if z < AE_SEQUENCES_PER_LOAD or z % AE_SEQUENCES_PER_LOAD:
        raise ParameterError(f"z_must_be_positive_multiple_of_8: {z}")
    if t < 1:
        raise ParameterError(f"invalid_sequence_length: {t}")
    if link.samples_per_block != cfg.samples_per_block:
        raise ParameterError("link_block_length_differs_from_autoencoder")
    loads = z // AE_SEQUENCES_PER_LOAD
    train_loads = split_loads(loads)
    seed = derive_seed(rng)
    n = cfg.samples_per_block

    def one_load(_: int, load_rng: np.random.Generator) -> tuple[list[tuple[np.ndarray, np.ndarray]], int]:
        diagnostics = LinkDiagnostics()
        messages = load_rng.integers(0, cfg.alphabet_size, size=(AE_SEQUENCES_PER_LOAD, t))
        with torch.no_grad():
            drive = encode_sequence(messages, tx).reshape(-1)
        received = simulate_link(Waveform(drive, link.sample_rate_hz), link, load_rng, diagnostics=diagnostics)
        samples = received.numpy().reshape(AE_SEQUENCES_PER_LOAD // AE_SEQUENCES_PER_ROW, AE_SEQUENCES_PER_ROW * t * n)
        labels = messages.reshape(AE_SEQUENCES_PER_LOAD // AE_SEQUENCES_PER_ROW, AE_SEQUENCES_PER_ROW * t)
        return list(zip(samples, labels)), diagnostics.mzm_clipped

    per_load = _map_loads(one_load, spawn_rngs(seed, loads, rng_kind), threads)
    _log_clipping(per_load)
    rows = [row for load, _ in per_load for row in load]
    logger.info("ae_dataset_built loads=%s train_loads=%s rows=%s columns=%s", loads, train_loads, len(rows), AE_SEQUENCES_PER_ROW * t)
    extra = {"z": z, "t": t, "alphabet_size": cfg.alphabet_size, "rows_per_load": 2}
    return _assemble(rows, train_loads, 2, n, scheme, link, seed, extra)


def build_pam_dataset(
    cfg: PamConfig,
    link: LinkConfig,
    z: int,
    t: int,
    rng: np.random.Generator,
    *,
    scheme: Scheme,
    rng_kind: str = "pcg64",
    threads: int = 1,
) -> tuple[RecordedDataset, RecordedDataset]:
    if t < 2 or t % 2:
        raise ParameterError(f"pam_sequence_length_must_be_even: {t}")
    if link.samples_per_block != cfg.samples_per_symbol:
        raise ParameterError("link_block_length_differs_from_pam")
    train_loads = split_loads(z)
    seed = derive_seed(rng)
    n = cfg.samples_per_symbol

    def one_load(_: int, load_rng: np.random.Generator) -> tuple[list[tuple[np.ndarray, np.ndarray]], int]:
        diagnostics = LinkDiagnostics()
        bits = load_rng.integers(0, 2, size=t * cfg.bits_per_symbol)
        symbols, drive = pam_modulate(bits, cfg, sample_rate_hz=link.sample_rate_hz)
        received = simulate_link(drive, link, load_rng, diagnostics=diagnostics)
        rows = list(zip(received.numpy().reshape(2, t * n // 2), symbols.reshape(2, t // 2)))
        return rows, diagnostics.mzm_clipped

    per_load = _map_loads(one_load, spawn_rngs(seed, z, rng_kind), threads)
    _log_clipping(per_load)
    rows = [row for load, _ in per_load for row in load]
    logger.info("pam_dataset_built order=%s loads=%s train_loads=%s rows=%s", cfg.order, z, train_loads, len(rows))
    extra = {"z": z, "t": t, "order": cfg.order, "rows_per_load": 2}
    return _assemble(rows, train_loads, 2, n, scheme, link, seed, extra)


def save(ds: RecordedDataset, path: str | Path) -> Path:
    return write_dataset_file(path, scheme_tag=ds.scheme.tag, d=ds.d, l=ds.l, block_len=ds.block_len, meta=ds.meta)


def load(path: str | Path) -> RecordedDataset:
    record = read_dataset_file(path)
    try:
        scheme = Scheme.from_tag(record.scheme_tag)
    except ConfigError as exc:
        raise DatasetFormatError(f"unknown_scheme_tag: {record.scheme_tag}") from exc
    return RecordedDataset(record.data, record.labels, record.block_len, scheme, record.meta)
