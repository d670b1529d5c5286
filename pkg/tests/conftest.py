from __future__ import annotations

import numpy as np
import pytest
import torch
from torch.func import functional_call

from imdd_dsp.config import AeConfig, LinkConfig, PamConfig, ScheduleConfig, Scheme
from imdd_dsp.datasets import RecordedDataset


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def torch_gen() -> torch.Generator:
    gen = torch.Generator()
    gen.manual_seed(7)
    return gen


@pytest.fixture
def small_ae() -> AeConfig:
    return AeConfig(alphabet_size=4, samples_per_block=8, estimation_window=3, training_window=3, guard_blocks=1)


@pytest.fixture
def clean_link() -> LinkConfig:
    """Distance 0, no noise, no filtering: a memoryless sin^2 map followed by normalization."""
    return LinkConfig(
        distance_km=0.0,
        noise_sigma=0.0,
        lpf_cutoff_hz=None,
        oversampling=1,
        dac_rate_hz=8e9,
        samples_per_block=8,
    )


@pytest.fixture
def ae_link() -> LinkConfig:
    return LinkConfig(distance_km=20.0, noise_sigma=0.01, samples_per_block=8)


@pytest.fixture
def pam2() -> PamConfig:
    return PamConfig(order=2, samples_per_symbol=2, window=5, volterra_w1=3, sbrnn_window=5, sbrnn_state_dim=4)


@pytest.fixture
def pam4() -> PamConfig:
    return PamConfig(order=4, samples_per_symbol=2, window=5, volterra_w1=3, sbrnn_window=5, sbrnn_state_dim=4)


@pytest.fixture
def pam_link() -> LinkConfig:
    return LinkConfig(distance_km=5.0, noise_sigma=0.01, oversampling=1, samples_per_block=2)


@pytest.fixture
def short_schedule() -> ScheduleConfig:
    return ScheduleConfig(steps=5, learning_rate=1e-2, batch_size=4, log_every=0)


def random_dataset(
    rng: np.random.Generator,
    *,
    rows: int = 4,
    columns: int = 12,
    block_len: int = 2,
    classes: int = 2,
    scheme: Scheme = Scheme.PAM2_SFFNN,
) -> RecordedDataset:
    d = rng.standard_normal((rows, columns * block_len))
    l = rng.integers(0, classes, size=(rows, columns))
    return RecordedDataset(d, l, block_len, scheme, {"source": "random"})


def parameter_gradcheck(module: torch.nn.Module, fn) -> bool:
    """Central finite differences (step 1e-6) against autograd for every parameter of module.

    fn receives a callable that runs module.forward with the perturbed parameters.
    """
    names = [k for k, _ in module.named_parameters()]
    values = tuple(p.detach().clone().requires_grad_(True) for _, p in module.named_parameters())

    def wrapped(*vals):
        return fn(lambda *args: functional_call(module, dict(zip(names, vals)), args))

    return torch.autograd.gradcheck(wrapped, values, eps=1e-6, atol=1e-6, rtol=1e-4)
