from __future__ import annotations

import numpy as np
import pytest
import torch

from imdd_dsp.autoencoder import BrnnReceiver, receive_window
from imdd_dsp.errors import DegenerateInputError, ParameterError
from imdd_dsp.nn import DTYPE
from imdd_dsp.slidingwindow import bler, coverage_counts, decide, estimate_sequence


def brute_force(received: torch.Tensor, rx, window: int) -> torch.Tensor:
    length = received.shape[0]
    sums = [None] * length
    hits = [0] * length
    for start in range(length - window + 1):
        out = rx(received[start : start + window])
        for k in range(window):
            i = start + k
            sums[i] = out[k] if sums[i] is None else sums[i] + out[k]
            hits[i] += 1
    probs = torch.stack([s / h for s, h in zip(sums, hits)])
    return probs / probs.sum(dim=-1, keepdim=True)


@pytest.fixture
def receiver(torch_gen) -> BrnnReceiver:
    return BrnnReceiver(4, 4, generator=torch_gen)


def test_matches_brute_force_enumeration(receiver, torch_gen):
    received = torch.randn(6, 4, dtype=DTYPE, generator=torch_gen)
    with torch.no_grad():
        expected = brute_force(received, receiver, 3)
    got = estimate_sequence(received, receiver, 3)
    torch.testing.assert_close(got.probs, expected, rtol=0, atol=1e-12)
    assert got.counts.tolist() == [1, 2, 3, 3, 2, 1]
    assert not got.fell_back


def test_window_one_keeps_per_block_estimates(receiver, torch_gen):
    received = torch.randn(5, 4, dtype=DTYPE, generator=torch_gen)
    got = estimate_sequence(received, receiver, 1)
    with torch.no_grad():
        expected = torch.cat([receiver(received[i : i + 1]) for i in range(5)])
    torch.testing.assert_close(got.probs, expected, rtol=0, atol=1e-12)


def test_window_equal_to_length_is_single_pass(receiver, torch_gen):
    received = torch.randn(7, 4, dtype=DTYPE, generator=torch_gen)
    got = estimate_sequence(received, receiver, 7)
    with torch.no_grad():
        expected = receive_window(received, receiver, 7)
    torch.testing.assert_close(got.probs, expected, rtol=0, atol=1e-12)


def test_interior_position_averages_three_estimates():
    estimates = {
        0: [[0.5, 0.5], [0.5, 0.5], [0.9, 0.1]],
        1: [[0.5, 0.5], [0.6, 0.4], [0.5, 0.5]],
        2: [[0.3, 0.7], [0.5, 0.5], [0.5, 0.5]],
    }

    def scripted(windows: torch.Tensor) -> torch.Tensor:
        starts = windows[:, 0, 0].long().tolist()
        return torch.tensor([estimates[s] for s in starts], dtype=DTYPE)

    received = torch.arange(5, dtype=DTYPE).reshape(5, 1)
    got = estimate_sequence(received, scripted, 3)
    torch.testing.assert_close(got.probs[2], torch.tensor([0.6, 0.4], dtype=DTYPE))


def test_window_longer_than_sequence_falls_back(receiver, torch_gen, caplog):
    received = torch.randn(4, 4, dtype=DTYPE, generator=torch_gen)
    with caplog.at_level("WARNING"):
        got = estimate_sequence(received, receiver, 9)
    assert got.fell_back and got.window == 4 and got.requested_window == 9
    assert "window_fallback" in caplog.text
    torch.testing.assert_close(got.probs, estimate_sequence(received, receiver, 4).probs)


def test_rejects_empty_sequence_and_bad_window(receiver):
    with pytest.raises(DegenerateInputError):
        estimate_sequence(torch.zeros(0, 4, dtype=DTYPE), receiver, 2)
    with pytest.raises(ParameterError):
        estimate_sequence(torch.zeros(3, 4, dtype=DTYPE), receiver, 0)


def test_coverage_counts():
    assert coverage_counts(10, 3).tolist() == [1, 2, 3, 3, 3, 3, 3, 3, 2, 1]
    assert coverage_counts(4, 4).tolist() == [1, 1, 1, 1]
    assert coverage_counts(5, 1).tolist() == [1, 1, 1, 1, 1]


def test_decide_examples():
    probs = torch.tensor([[0.2, 0.5, 0.3], [0.5, 0.5, 0.0]], dtype=DTYPE)
    assert decide(probs).tolist() == [1, 0]
    scaled = probs * 7.0
    assert decide(scaled / scaled.sum(dim=-1, keepdim=True)).tolist() == [1, 0]


def test_bler_examples():
    truth = np.arange(10) % 4
    assert bler(truth, truth) == 0.0
    one_off = truth.copy()
    one_off[3] = (one_off[3] + 1) % 4
    assert bler(truth, one_off) == pytest.approx(0.1)
    assert bler(np.zeros(5), np.ones(5)) == 1.0
    with pytest.raises(ParameterError):
        bler(truth, truth[:-1])
