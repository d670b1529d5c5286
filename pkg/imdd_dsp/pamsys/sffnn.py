from __future__ import annotations

import logging
from typing import TYPE_CHECKING

import numpy as np
import torch
import torch.nn.functional as F

from imdd_dsp.config import ScheduleConfig
from imdd_dsp.errors import ParameterError, ShapeError
from imdd_dsp.nn import DTYPE, ActivationKind, Dense, OptimizerState, TrainingTrace, mean_cross_entropy, run_training
from imdd_dsp.rng import torch_generator

if TYPE_CHECKING:
    from imdd_dsp.datasets import RecordedDataset


logger = logging.getLogger(__name__)

HIDDEN_LAYERS = 6


def sffnn_layer_dims(window: int, n: int, classes: int) -> list[int]:
    if window < 1 or window % 2 == 0:
        raise ParameterError(f"sffnn_window_must_be_odd: {window}")
    if n < 1 or classes < 2:
        raise ParameterError(f"invalid_sffnn_dims: n={n} classes={classes}")
    width = 4 * window * n
    hidden = [max(1, width // 2**i) for i in range(HIDDEN_LAYERS)]
    return [window * n, *hidden, classes]


class Sffnn(torch.nn.Module):
    def __init__(self, window: int, block_len: int, classes: int, *, generator: torch.Generator | None = None) -> None:
        super().__init__()
        self.window = window
        self.block_len = block_len
        self.classes = classes
        dims = sffnn_layer_dims(window, block_len, classes)
        self.layers = torch.nn.ModuleList(
            Dense(d_in, d_out, ActivationKind.RELU, generator=generator) for d_in, d_out in zip(dims[:-2], dims[1:-1])
        )
        self.head = Dense(dims[-2], dims[-1], ActivationKind.IDENTITY, generator=generator)

    @property
    def dims(self) -> list[int]:
        return [self.layers[0].in_dim, *(layer.out_dim for layer in self.layers), self.head.out_dim]

    def logits(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] != self.window * self.block_len:
            raise ShapeError(f"sffnn_window: expected {self.window * self.block_len} samples, got {x.shape[-1]}")
        h = x.to(DTYPE)
        for layer in self.layers:
            h = layer(h)
        return self.head(h)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return torch.softmax(self.logits(x), dim=-1)


def build_sffnn(window: int, block_len: int, classes: int, seed: int) -> Sffnn:
    return Sffnn(window, block_len, classes, generator=torch_generator(seed))


def sffnn_detect(window: torch.Tensor, params: Sffnn) -> torch.Tensor:
    """Window given flat (..., W*n) or blocked (..., W, n)."""
    if window.ndim >= 2 and tuple(window.shape[-2:]) == (params.window, params.block_len):
        window = window.reshape(*window.shape[:-2], params.window * params.block_len)
    return params(window)


def sffnn_detect_sequence(received: torch.Tensor, params: Sffnn, *, chunk: int = 4096) -> torch.Tensor:
    """Center-symbol probabilities for every position of a (T, block_len) sequence; edges see zero padding."""
    if received.ndim != 2 or received.shape[-1] != params.block_len:
        raise ShapeError(f"expected_(T,{params.block_len})_blocks: got {tuple(received.shape)}")
    half = (params.window - 1) // 2
    padded = F.pad(received.to(DTYPE), (0, 0, half, half))
    windows = padded.unfold(0, params.window, 1).transpose(-1, -2).reshape(-1, params.window * params.block_len)
    with torch.no_grad():
        return torch.cat([params(windows[c : c + chunk]) for c in range(0, windows.shape[0], chunk)])


def train_sffnn(
    dataset: "RecordedDataset",
    window: int,
    schedule: ScheduleConfig,
    *,
    classes: int,
    seed: int,
    model: Sffnn | None = None,
) -> tuple[Sffnn, TrainingTrace]:
    """Step s feeds D[:, s:s+W] of every row and targets L[:, s+(W-1)/2]; one epoch."""
    if window > dataset.columns:
        raise ParameterError(f"window {window} exceeds dataset columns {dataset.columns}")
    if int(dataset.l.max()) >= classes:
        raise ParameterError("dataset_labels_exceed_classes")
    model = build_sffnn(window, dataset.block_len, classes, seed) if model is None else model
    if model.block_len != dataset.block_len or model.window != window:
        raise ShapeError("sffnn_model_does_not_match_dataset_window")

    rows = dataset.rows
    samples = torch.from_numpy(dataset.d)
    labels = torch.from_numpy(dataset.l.astype(np.int64))
    span = window * dataset.block_len
    center = (window - 1) // 2
    state = OptimizerState.from_schedule(model, schedule)
    logger.info("sffnn_train_setup window=%s rows=%s dims=%s", window, rows, model.dims)

    def loss_at_step(s: int) -> torch.Tensor:
        start = s * dataset.block_len
        return mean_cross_entropy(model.logits(samples[:, start : start + span]), labels[:, s + center])

    trace = run_training(state, dataset.columns - window, loss_at_step, name="sffnn_train", log_every=schedule.log_every)
    return model, trace
