from __future__ import annotations

import math

import numpy as np
import pytest
import torch

from conftest import parameter_gradcheck
from imdd_dsp.errors import DegenerateInputError, ShapeError, TrainingDivergence, UsageError
from imdd_dsp.nn import (
    CLIP_MAX,
    DTYPE,
    ActivationKind,
    BrnnCell,
    CombineMode,
    Dense,
    OptimizerState,
    backward,
    brnn_forward,
    clip_activation,
    cross_entropy,
    dense_forward,
    load_module_arrays,
    mean_cross_entropy,
    module_arrays,
    optimizer_step,
    relu,
    run_training,
    softmax,
)


def t(values) -> torch.Tensor:
    return torch.tensor(values, dtype=DTYPE)


def test_relu_examples():
    torch.testing.assert_close(relu(t([-1.0, 0.0, 2.0])), t([0.0, 0.0, 2.0]))
    x = t([-3.0, 1.5, -0.2])
    torch.testing.assert_close(relu(relu(x)), relu(x))


def test_clip_activation_examples():
    torch.testing.assert_close(clip_activation(t([-1.0, 0.5, 2.0])), t([0.0, 0.5, CLIP_MAX]))


def test_clip_activation_kinks_have_zero_subgradient():
    x = t([0.0, CLIP_MAX, 0.3]).requires_grad_(True)
    clip_activation(x).sum().backward()
    torch.testing.assert_close(x.grad, t([0.0, 0.0, 1.0]))


def test_softmax_examples():
    torch.testing.assert_close(softmax(t([0.0, 0.0])), t([0.5, 0.5]))
    torch.testing.assert_close(softmax(t([math.log(3.0), 0.0])), t([0.75, 0.25]))
    torch.testing.assert_close(softmax(t([1000.0, 1000.0])), t([0.5, 0.5]))


def test_dense_examples():
    layer = Dense(2, 2)
    with torch.no_grad():
        layer.weight.copy_(t([[1.0, 2.0], [3.0, 4.0]]))
        layer.bias.zero_()
    torch.testing.assert_close(dense_forward(layer, t([1.0, 1.0]), ActivationKind.IDENTITY), t([3.0, 7.0]))
    with torch.no_grad():
        layer.weight.zero_()
        layer.bias.copy_(t([-1.0, 2.0]))
    torch.testing.assert_close(dense_forward(layer, t([5.0, 5.0]), ActivationKind.RELU), t([0.0, 2.0]))
    with pytest.raises(ShapeError):
        dense_forward(layer, t([1.0, 2.0, 3.0]), ActivationKind.IDENTITY)


def _hand_cell(combine: CombineMode) -> BrnnCell:
    cell = BrnnCell(1, 1, combine=combine, activation=ActivationKind.IDENTITY)
    with torch.no_grad():
        cell.forward_cell.weight.copy_(t([[0.5, 0.25]]))
        cell.forward_cell.bias.copy_(t([0.1]))
        cell.backward_cell.weight.copy_(t([[2.0, -0.5]]))
        cell.backward_cell.bias.copy_(t([0.0]))
    return cell


def test_brnn_hand_unrolled():
    xs = [1.0, -2.0, 3.0]
    f, fwd = 0.0, []
    for x in xs:
        f = 0.5 * x + 0.25 * f + 0.1
        fwd.append(f)
    b, bwd = 0.0, [0.0] * 3
    for i in reversed(range(3)):
        b = 2.0 * xs[i] - 0.5 * b
        bwd[i] = b
    inputs = t(xs).reshape(3, 1)

    out = brnn_forward(_hand_cell(CombineMode.CONCATENATE), inputs)
    np.testing.assert_allclose(out.detach().numpy(), np.stack([fwd, bwd], axis=1), atol=1e-12)
    avg = brnn_forward(_hand_cell(CombineMode.AVERAGE), inputs)
    np.testing.assert_allclose(avg.detach().numpy()[:, 0], 0.5 * (np.array(fwd) + np.array(bwd)), atol=1e-12)


def test_brnn_length_one_and_zero_weights(torch_gen):
    cell = BrnnCell(3, 2, combine=CombineMode.AVERAGE, activation=ActivationKind.RELU, generator=torch_gen)
    x = torch.rand(1, 3, dtype=DTYPE, generator=torch_gen)
    h0 = torch.zeros(2, dtype=DTYPE)
    f = cell.forward_cell(torch.cat([x[0], h0]))
    g = cell.backward_cell(torch.cat([x[0], h0]))
    torch.testing.assert_close(brnn_forward(cell, x)[0], 0.5 * (f + g))

    with torch.no_grad():
        for p in cell.parameters():
            p.zero_()
    assert torch.count_nonzero(brnn_forward(cell, torch.randn(4, 5, 3, dtype=DTYPE))) == 0


def test_brnn_rejects_empty_and_wrong_width():
    cell = BrnnCell(3, 2, combine=CombineMode.AVERAGE, activation=ActivationKind.RELU)
    with pytest.raises(DegenerateInputError):
        brnn_forward(cell, torch.zeros(0, 3, dtype=DTYPE))
    with pytest.raises(ShapeError):
        brnn_forward(cell, torch.zeros(4, 2, dtype=DTYPE))


def test_cross_entropy_examples():
    assert float(cross_entropy(t([0.0, 1.0, 0.0]), t([0.1, 0.7, 0.2]))) == pytest.approx(-math.log(0.7))
    assert float(cross_entropy(t([0.0, 1.0]), t([0.0, 1.0]))) == pytest.approx(0.0, abs=1e-15)
    target = torch.zeros(64, dtype=DTYPE)
    target[5] = 1.0
    assert float(cross_entropy(target, torch.full((64,), 1 / 64, dtype=DTYPE))) == pytest.approx(math.log(64))


def test_mean_cross_entropy_matches_pointwise_definition(torch_gen):
    logits = torch.randn(3, 4, 5, dtype=DTYPE, generator=torch_gen)
    labels = torch.randint(0, 5, (3, 4), generator=torch_gen)
    onehot = torch.nn.functional.one_hot(labels, 5).to(DTYPE)
    expected = cross_entropy(onehot, softmax(logits)).mean()
    torch.testing.assert_close(mean_cross_entropy(logits, labels), expected)


def test_dense_gradients_match_finite_differences(torch_gen):
    layer = Dense(4, 3, ActivationKind.IDENTITY, generator=torch_gen)
    x = torch.randn(5, 4, dtype=DTYPE, generator=torch_gen)
    labels = torch.tensor([0, 2, 1, 1, 0])
    assert parameter_gradcheck(layer, lambda call: mean_cross_entropy(call(x), labels))


def test_brnn_recurrent_gradients_match_finite_differences(torch_gen):
    cell = BrnnCell(3, 4, combine=CombineMode.CONCATENATE, activation=ActivationKind.IDENTITY, generator=torch_gen)
    x = torch.randn(2, 5, 3, dtype=DTYPE, generator=torch_gen)
    weights = torch.randn(2, 5, 8, dtype=DTYPE, generator=torch_gen)
    assert parameter_gradcheck(cell, lambda call: (call(x) * weights).sum())


def test_backward_returns_zero_for_unused_parameter():
    used = torch.nn.Parameter(t([2.0]))
    unused = torch.nn.Parameter(t([5.0]))
    grads = backward((used**2).sum(), {"used": used, "unused": unused})
    torch.testing.assert_close(grads["used"], t([4.0]))
    assert torch.count_nonzero(grads["unused"]) == 0


def test_backward_without_graph_is_usage_error():
    with pytest.raises(UsageError):
        backward(t(1.0), Dense(2, 2))


def test_adam_first_step_and_zero_gradient():
    theta = torch.nn.Parameter(t([1.0]))
    state = OptimizerState.create([("theta", theta)], lr=0.1)
    optimizer_step(state, {"theta": t([1.0])})
    assert float(theta) == pytest.approx(0.9, abs=1e-6)
    assert state.step_count == 1
    assert state.moments("theta") is not None

    frozen = torch.nn.Parameter(t([3.0, -1.0]))
    state = OptimizerState.create([("p", frozen)], lr=0.1)
    optimizer_step(state, {"p": torch.zeros(2, dtype=DTYPE)})
    torch.testing.assert_close(frozen.detach(), t([3.0, -1.0]))


def test_adam_descends_on_quadratic():
    theta = torch.nn.Parameter(t([1.0]))
    state = OptimizerState.create([("theta", theta)], lr=0.1)
    optimizer_step(state, backward((theta**2).sum(), state.params))
    assert abs(float(theta)) < 1.0
    for _ in range(20):
        optimizer_step(state, {"theta": t([0.5])})
    assert float(theta) < 0.0


def test_optimizer_rejects_non_finite_and_misshaped_gradients():
    theta = torch.nn.Parameter(t([1.0, 2.0]))
    state = OptimizerState.create([("theta", theta)])
    with pytest.raises(TrainingDivergence) as info:
        optimizer_step(state, {"theta": t([float("nan"), 0.0])})
    assert info.value.step == 1
    with pytest.raises(ShapeError):
        optimizer_step(state, {"theta": t([1.0])})


def test_run_training_records_trace():
    theta = torch.nn.Parameter(t([2.0]))
    state = OptimizerState.create([("theta", theta)], lr=0.05)
    trace = run_training(state, 7, lambda _: (theta**2).sum(), name="quad", log_every=0)
    assert trace.steps == 7
    assert trace.losses[-1] < trace.losses[0]
    assert trace.rows()[0] == (1, trace.losses[0])


def test_run_training_divergence_carries_partial_trace():
    theta = torch.nn.Parameter(t([1.0]))
    state = OptimizerState.create([("theta", theta)])

    def loss(step: int) -> torch.Tensor:
        scale = float("inf") if step == 2 else 1.0
        return (theta * scale).sum()

    with pytest.raises(TrainingDivergence) as info:
        run_training(state, 10, loss, name="bad", log_every=0)
    assert info.value.step == 3
    assert len(info.value.trace) == 3
    assert math.isinf(info.value.trace[-1])


def test_module_arrays_round_trip(torch_gen):
    source = BrnnCell(2, 3, combine=CombineMode.AVERAGE, activation=ActivationKind.RELU, generator=torch_gen)
    target = BrnnCell(2, 3, combine=CombineMode.AVERAGE, activation=ActivationKind.RELU)
    load_module_arrays(target, module_arrays(source))
    for (name, a), (_, b) in zip(source.state_dict().items(), target.state_dict().items()):
        assert torch.equal(a, b), name
    bad = module_arrays(source)
    bad["forward_cell.bias"] = np.zeros(5)
    with pytest.raises(ShapeError):
        load_module_arrays(target, bad)


def test_max_grad_norm_clips_before_the_adam_update():
    theta = torch.nn.Parameter(t([0.0, 0.0]))
    state = OptimizerState.create([("theta", theta)], lr=0.1, max_grad_norm=1.0)
    optimizer_step(state, {"theta": t([30.0, 40.0])})
    first, _ = state.moments("theta")
    torch.testing.assert_close(first, t([0.06, 0.08]))
