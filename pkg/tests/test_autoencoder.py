from __future__ import annotations

from dataclasses import replace

import numpy as np
import pytest
import torch

from conftest import parameter_gradcheck
from imdd_dsp.autoencoder import (
    AeModel,
    BrnnReceiver,
    BrnnTransmitter,
    block_accuracy,
    build_ae_model,
    encode_sequence,
    receive_sequence,
    receive_window,
    retrain_receiver,
    train_end_to_end,
)
from imdd_dsp.channel import simulate_link_differentiable
from imdd_dsp.config import AeConfig, LinkConfig, ScheduleConfig
from imdd_dsp.datasets import build_ae_dataset
from imdd_dsp.errors import ContractError, ParameterError, ShapeError
from imdd_dsp.nn import DTYPE, CLIP_MAX, mean_cross_entropy, module_arrays


def test_encoder_outputs_stay_in_mzm_range(torch_gen, rng):
    tx = BrnnTransmitter(4, 8, generator=torch_gen)
    with torch.no_grad():
        for p in tx.parameters():
            p.mul_(5.0)
    blocks = encode_sequence(rng.integers(0, 4, size=(3, 20)), tx)
    assert blocks.shape == (3, 20, 8)
    assert float(blocks.min()) >= 0.0
    assert float(blocks.max()) <= CLIP_MAX


def test_encoder_length_one_is_base_case_and_deterministic(torch_gen):
    tx = BrnnTransmitter(4, 6, generator=torch_gen)
    onehot = torch.zeros(4, dtype=DTYPE)
    onehot[2] = 1.0
    zero = torch.zeros(6, dtype=DTYPE)
    expected = 0.5 * (tx.cell.forward_cell(torch.cat([onehot, zero])) + tx.cell.backward_cell(torch.cat([onehot, zero])))
    torch.testing.assert_close(encode_sequence(np.array([2]), tx)[0], expected)

    messages = np.array([[0, 3, 1, 2, 2]])
    assert torch.equal(encode_sequence(messages, tx), encode_sequence(messages.copy(), tx))


def test_encoder_rejects_bad_messages(torch_gen):
    tx = BrnnTransmitter(4, 6, generator=torch_gen)
    with pytest.raises(ParameterError):
        encode_sequence(np.array([0, 4]), tx)
    with pytest.raises(ParameterError):
        encode_sequence(np.zeros((2, 0), dtype=np.int64), tx)


def test_receiver_outputs_probabilities(torch_gen):
    rx = BrnnReceiver(8, 4, generator=torch_gen)
    blocks = torch.randn(5, 3, 8, dtype=DTYPE, generator=torch_gen)
    p = receive_window(blocks, rx, 3)
    assert p.shape == (5, 3, 4)
    torch.testing.assert_close(p.sum(dim=-1), torch.ones(5, 3, dtype=DTYPE), rtol=0, atol=1e-12)
    with pytest.raises(ShapeError):
        receive_window(blocks, rx, 4)


def test_receiver_single_block_and_order_sensitivity(torch_gen):
    rx = BrnnReceiver(8, 4, generator=torch_gen)
    single = torch.randn(1, 8, dtype=DTYPE, generator=torch_gen)
    assert receive_window(single, rx, 1).shape == (1, 4)

    blocks = torch.randn(3, 8, dtype=DTYPE, generator=torch_gen)
    forward = receive_sequence(blocks, rx)
    swapped = receive_sequence(blocks[[1, 0, 2]], rx)
    assert not torch.allclose(forward[0], swapped[1])


class _EndToEnd(torch.nn.Module):
    def __init__(self, model: AeModel, link: LinkConfig) -> None:
        super().__init__()
        self.model = model
        self.link = link

    def forward(self, messages: torch.Tensor) -> torch.Tensor:
        received = simulate_link_differentiable(self.model.tx(messages), self.link)
        return mean_cross_entropy(self.model.rx.logits(received), messages)


def test_end_to_end_gradients_match_finite_differences():
    cfg = AeConfig(alphabet_size=4, samples_per_block=4, estimation_window=3, training_window=3, guard_blocks=0)
    link = LinkConfig(distance_km=10.0, noise_sigma=0.0, lpf_cutoff_hz=None, oversampling=1, samples_per_block=4)
    model = build_ae_model(cfg, seed=11)
    messages = torch.tensor([[0, 3, 1], [2, 2, 1]])
    assert parameter_gradcheck(_EndToEnd(model, link), lambda call: call(messages))


def test_train_end_to_end_trace_and_determinism(small_ae, clean_link, short_schedule):
    model_a, trace_a = train_end_to_end(small_ae, clean_link, short_schedule, np.random.default_rng(3))
    model_b, trace_b = train_end_to_end(small_ae, clean_link, short_schedule, np.random.default_rng(3))
    assert trace_a.steps == short_schedule.steps
    assert all(np.isfinite(trace_a.losses))
    assert trace_a.losses == trace_b.losses
    for key, value in module_arrays(model_a).items():
        assert np.array_equal(value, module_arrays(model_b)[key]), key


def test_end_to_end_receiver_sees_only_the_central_blocks(clean_link, short_schedule, monkeypatch):
    cfg = AeConfig(alphabet_size=4, samples_per_block=8, estimation_window=3, training_window=3, guard_blocks=3)
    model = build_ae_model(cfg, seed=4)
    shapes = []
    logits = model.rx.logits

    def recording(blocks):
        shapes.append(tuple(blocks.shape))
        return logits(blocks)

    monkeypatch.setattr(model.rx, "logits", recording)
    train_end_to_end(cfg, clean_link, replace(short_schedule, steps=2), np.random.default_rng(1), model=model)
    assert shapes == [(short_schedule.batch_size, 3, 8)] * 2


def test_train_end_to_end_rejects_quantized_link(small_ae, clean_link, short_schedule, rng):
    with pytest.raises(ContractError):
        train_end_to_end(small_ae, replace(clean_link, dac_bits=6), short_schedule, rng)


def test_retrain_touches_only_the_receiver(small_ae, clean_link, short_schedule):
    model = build_ae_model(small_ae, seed=5)
    train, _ = build_ae_dataset(small_ae, clean_link, 16, 12, np.random.default_rng(8), tx=model.tx)
    before = module_arrays(model)
    retrained, trace = retrain_receiver(train, model, small_ae.training_window, short_schedule)

    assert trace.steps == train.columns - small_ae.training_window
    after = module_arrays(retrained)
    for key in before:
        if key.startswith("tx."):
            assert after[key].tobytes() == before[key].tobytes(), key
    assert any(not np.array_equal(after[k], before[k]) for k in before if k.startswith("rx."))
    for key, value in module_arrays(model).items():
        assert np.array_equal(value, before[key])


def test_retrain_rejects_mismatched_dataset(small_ae, clean_link, short_schedule):
    model = build_ae_model(small_ae, seed=5)
    train, _ = build_ae_dataset(small_ae, clean_link, 16, 12, np.random.default_rng(8), tx=model.tx)
    with pytest.raises(ParameterError):
        retrain_receiver(train, model, train.columns + 1, short_schedule)
    other = build_ae_model(replace(small_ae, samples_per_block=4), seed=5)
    with pytest.raises(ParameterError):
        retrain_receiver(train, other, 3, short_schedule)


@pytest.mark.slow
def test_noiseless_autoencoder_learns_every_message(clean_link):
    cfg = AeConfig(alphabet_size=4, samples_per_block=8, estimation_window=3, training_window=5, guard_blocks=2)
    schedule = ScheduleConfig(steps=3000, learning_rate=5e-3, batch_size=64, log_every=500)
    model, trace = train_end_to_end(cfg, clean_link, schedule, np.random.default_rng(2024))
    assert trace.losses[-1] < trace.losses[0]
    report = block_accuracy(model, clean_link, np.random.default_rng(99), messages=10_000, sequence_length=100)
    assert report.total == 10_000
    assert report.accuracy == 1.0
