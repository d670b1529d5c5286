from __future__ import annotations

import copy
import logging
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
import torch
import torch.nn.functional as F

from imdd_dsp.channel import LinkDiagnostics, simulate_link, simulate_link_differentiable
from imdd_dsp.config import AeConfig, LinkConfig, ScheduleConfig
from imdd_dsp.errors import ContractError, ParameterError, ShapeError
from imdd_dsp.nn import (
    DTYPE,
    ActivationKind,
    BrnnCell,
    CombineMode,
    Dense,
    OptimizerState,
    TrainingTrace,
    mean_cross_entropy,
    run_training,
)
from imdd_dsp.rng import derive_seed, torch_generator
from imdd_dsp.signalcore import Waveform
from imdd_dsp.slidingwindow import decide, estimate_sequence

if TYPE_CHECKING:
    from imdd_dsp.datasets import RecordedDataset


logger = logging.getLogger(__name__)


class BrnnTransmitter(torch.nn.Module):
    def __init__(self, alphabet_size: int, samples_per_block: int, *, generator: torch.Generator | None = None) -> None:
        super().__init__()
        self.alphabet_size = alphabet_size
        self.samples_per_block = samples_per_block
        self.cell = BrnnCell(
            alphabet_size,
            samples_per_block,
            combine=CombineMode.AVERAGE,
            activation=ActivationKind.CLIP_0_PI4,
            generator=generator,
        )

    def forward(self, messages: torch.Tensor) -> torch.Tensor:
        onehot = F.one_hot(messages.long(), self.alphabet_size).to(DTYPE)
        return self.cell(onehot)


class BrnnReceiver(torch.nn.Module):
    """Received blocks (..., W, block_len) -> per-position class probabilities (..., W, classes)."""

    def __init__(
        self,
        block_len: int,
        classes: int,
        *,
        state_dim: int | None = None,
        generator: torch.Generator | None = None,
    ) -> None:
        super().__init__()
        self.block_len = block_len
        self.classes = classes
        state = 2 * classes if state_dim is None else state_dim
        self.cell = BrnnCell(block_len, state, combine=CombineMode.CONCATENATE, activation=ActivationKind.RELU, generator=generator)
        self.head = Dense(self.cell.output_dim, classes, ActivationKind.IDENTITY, generator=generator)

    def logits(self, blocks: torch.Tensor) -> torch.Tensor:
        if blocks.shape[-1] != self.block_len:
            raise ShapeError(f"receiver_block_len: expected {self.block_len}, got {blocks.shape[-1]}")
        return self.head(self.cell(blocks.to(DTYPE)))

    def forward(self, blocks: torch.Tensor) -> torch.Tensor:
        return torch.softmax(self.logits(blocks), dim=-1)


class AeModel(torch.nn.Module):
    def __init__(self, cfg: AeConfig, *, generator: torch.Generator | None = None) -> None:
        super().__init__()
        self.cfg = cfg
        self.tx = BrnnTransmitter(cfg.alphabet_size, cfg.samples_per_block, generator=generator)
        self.rx = BrnnReceiver(cfg.samples_per_block, cfg.alphabet_size, generator=generator)

    @property
    def alphabet_size(self) -> int:
        return self.cfg.alphabet_size

    @property
    def samples_per_block(self) -> int:
        return self.cfg.samples_per_block


def build_ae_model(cfg: AeConfig, seed: int) -> AeModel:
    cfg.validate()
    return AeModel(cfg, generator=torch_generator(seed))


def _check_messages(messages: torch.Tensor | np.ndarray, alphabet_size: int) -> torch.Tensor:
    msgs = torch.as_tensor(np.asarray(messages), dtype=torch.long)
    if msgs.numel() == 0 or msgs.shape[-1] == 0:
        raise ParameterError("empty_message_sequence")
    if bool((msgs < 0).any()) or bool((msgs >= alphabet_size).any()):
        raise ParameterError(f"message_out_of_range: alphabet_size={alphabet_size}")
    return msgs


def encode_sequence(messages: torch.Tensor | np.ndarray, tx: BrnnTransmitter) -> torch.Tensor:
    return tx(_check_messages(messages, tx.alphabet_size))


def receive_window(blocks: torch.Tensor, rx: BrnnReceiver, window: int | None = None) -> torch.Tensor:
    if blocks.ndim < 2:
        raise ShapeError(f"receive_window_expects_blocks: got shape {tuple(blocks.shape)}")
    if window is not None and blocks.shape[-2] != window:
        raise ShapeError(f"window_length: expected {window}, got {blocks.shape[-2]}")
    return rx(blocks)


def receive_sequence(blocks: torch.Tensor, rx: BrnnReceiver) -> torch.Tensor:
    return receive_window(blocks, rx)


def transmit(
    model: AeModel,
    messages: np.ndarray,
    link: LinkConfig,
    rng: np.random.Generator | None,
    *,
    diagnostics: LinkDiagnostics | None = None,
) -> torch.Tensor:
    n = model.samples_per_block
    rate = link.sample_rate_hz
    with torch.no_grad():
        blocks = encode_sequence(messages, model.tx)
        received = []
        for seq in blocks.reshape(-1, blocks.shape[-2], n):
            rx = simulate_link(Waveform(seq.reshape(-1), rate), link, rng, diagnostics=diagnostics)
            received.append(rx.samples.reshape(-1, n))
    return torch.stack(received).reshape(blocks.shape)


def train_end_to_end(
    cfg: AeConfig,
    link: LinkConfig,
    schedule: ScheduleConfig,
    rng: np.random.Generator,
    *,
    model: AeModel | None = None,
) -> tuple[AeModel, TrainingTrace]:
    if link.quantized:
        raise ContractError("end_to_end_training_requires_unquantized_link")
    if link.samples_per_block != cfg.samples_per_block:
        raise ParameterError("link_block_length_differs_from_autoencoder")
    if model is None:
        model = build_ae_model(cfg, derive_seed(rng))

    guard = cfg.guard
    length = cfg.training_window + 2 * guard
    central = slice(guard, guard + cfg.training_window)
    state = OptimizerState.from_schedule(model, schedule)
    logger.info(
        "ae_train_setup M=%s n=%s V=%s guard=%s batch=%s distance_km=%s",
        cfg.alphabet_size, cfg.samples_per_block, cfg.training_window, guard, schedule.batch_size, link.distance_km,
    )

    def loss_at_step(_: int) -> torch.Tensor:
        messages = torch.from_numpy(rng.integers(0, cfg.alphabet_size, size=(schedule.batch_size, length)))
        received = simulate_link_differentiable(model.tx(messages), link, rng)
        logits = model.rx.logits(received[:, central])
        return mean_cross_entropy(logits, messages[:, central])

    trace = run_training(state, schedule.steps, loss_at_step, name="ae_train", log_every=schedule.log_every)
    return model, trace


def fit_window_receiver(
    rx: BrnnReceiver,
    dataset: "RecordedDataset",
    window: int,
    schedule: ScheduleConfig,
    *,
    name: str,
) -> TrainingTrace:
    """Step s trains on D[:, s:s+V] against L[:, s:s+V]; one epoch is columns - V steps."""
    if dataset.block_len != rx.block_len:
        raise ParameterError(f"dataset_block_len {dataset.block_len} != receiver block_len {rx.block_len}")
    if window < 1 or window > dataset.columns:
        raise ParameterError(f"window {window} exceeds dataset columns {dataset.columns}")
    if int(dataset.l.max()) >= rx.classes:
        raise ParameterError("dataset_labels_exceed_alphabet")

    state = OptimizerState.from_schedule(rx, schedule)
    blocks = torch.from_numpy(dataset.blocks())
    labels = torch.from_numpy(dataset.l.astype(np.int64))

    def loss_at_step(s: int) -> torch.Tensor:
        return mean_cross_entropy(rx.logits(blocks[:, s : s + window]), labels[:, s : s + window])

    return run_training(state, dataset.columns - window, loss_at_step, name=name, log_every=schedule.log_every)


def retrain_receiver(
    dataset: "RecordedDataset",
    model: AeModel,
    window: int,
    schedule: ScheduleConfig,
) -> tuple[AeModel, TrainingTrace]:
    """One epoch of receiver-only optimization over the dataset's column windows; the transmitter is copied untouched."""
    retrained = copy.deepcopy(model)
    trace = fit_window_receiver(retrained.rx, dataset, window, schedule, name="ae_retrain")
    return retrained, trace


@dataclass(frozen=True)
class AccuracyReport:
    correct: int
    total: int

    @property
    def accuracy(self) -> float:
        return self.correct / self.total if self.total else 0.0


def block_accuracy(
    model: AeModel,
    link: LinkConfig,
    rng: np.random.Generator,
    *,
    messages: int = 10_000,
    sequence_length: int = 100,
    window: int | None = None,
) -> AccuracyReport:
    window = model.cfg.estimation_window if window is None else window
    sequences = -(-messages // sequence_length)
    sent = rng.integers(0, model.alphabet_size, size=(sequences, sequence_length))
    received = transmit(model, sent, link, rng)
    correct = 0
    with torch.no_grad():
        for truth, blocks in zip(sent, received):
            decided = decide(estimate_sequence(blocks, model.rx, window))
            correct += int(np.sum(decided == truth))
    return AccuracyReport(correct=correct, total=int(sent.size))
