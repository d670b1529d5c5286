from __future__ import annotations

from typing import TYPE_CHECKING

import torch

from imdd_dsp.autoencoder import BrnnReceiver, fit_window_receiver
from imdd_dsp.config import ScheduleConfig
from imdd_dsp.nn import TrainingTrace
from imdd_dsp.rng import torch_generator
from imdd_dsp.slidingwindow import ProbSequence, estimate_sequence

if TYPE_CHECKING:
    from imdd_dsp.datasets import RecordedDataset


def build_pam_receiver(block_len: int, classes: int, state_dim: int, seed: int) -> BrnnReceiver:
    return BrnnReceiver(block_len, classes, state_dim=state_dim, generator=torch_generator(seed))


def pam_sbrnn_receiver(
    dataset: "RecordedDataset",
    window: int,
    schedule: ScheduleConfig,
    *,
    classes: int,
    state_dim: int,
    seed: int,
) -> tuple[BrnnReceiver, TrainingTrace]:
    rx = build_pam_receiver(dataset.block_len, classes, state_dim, seed)
    trace = fit_window_receiver(rx, dataset, window, schedule, name="pam_sbrnn_train")
    return rx, trace


def pam_sbrnn_detect(received: torch.Tensor, rx: BrnnReceiver, window: int) -> ProbSequence:
    return estimate_sequence(received, rx, window)
