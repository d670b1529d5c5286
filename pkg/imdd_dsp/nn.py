from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable, Mapping

import numpy as np
import torch
import torch.nn.functional as F

from imdd_dsp.config import ScheduleConfig
from imdd_dsp.errors import DegenerateInputError, ShapeError, TrainingDivergence, UsageError


logger = logging.getLogger(__name__)

DTYPE = torch.float64
CLIP_MAX = math.pi / 4


class ActivationKind(str, Enum):
    RELU = "relu"
    CLIP_0_PI4 = "clip_0_pi4"
    IDENTITY = "identity"
    SOFTMAX = "softmax"


class CombineMode(str, Enum):
    AVERAGE = "average"
    CONCATENATE = "concatenate"


def relu(x: torch.Tensor) -> torch.Tensor:
    return torch.relu(x)


def clip_activation(x: torch.Tensor) -> torch.Tensor:
    """relu(x) - relu(x - pi/4), with zero subgradient at both kinks."""
    low = torch.zeros_like(x)
    high = torch.full_like(x, CLIP_MAX)
    return torch.where(x <= 0, low, torch.where(x >= CLIP_MAX, high, x))


def softmax(x: torch.Tensor) -> torch.Tensor:
    return torch.softmax(x, dim=-1)


def activate(x: torch.Tensor, kind: ActivationKind) -> torch.Tensor:
    if kind is ActivationKind.RELU:
        return relu(x)
    if kind is ActivationKind.CLIP_0_PI4:
        return clip_activation(x)
    if kind is ActivationKind.SOFTMAX:
        return softmax(x)
    return x


def glorot_uniform_(weight: torch.Tensor, generator: torch.Generator | None) -> torch.Tensor:
    out_dim, in_dim = weight.shape
    r = math.sqrt(6.0 / (in_dim + out_dim))
    with torch.no_grad():
        weight.uniform_(-r, r, generator=generator)
    return weight


class Dense(torch.nn.Module):
    def __init__(
        self,
        in_dim: int,
        out_dim: int,
        activation: ActivationKind = ActivationKind.IDENTITY,
        *,
        generator: torch.Generator | None = None,
    ) -> None:
        super().__init__()
        if in_dim < 1 or out_dim < 1:
            raise ShapeError(f"invalid_dense_dims: in={in_dim} out={out_dim}")
        self.activation = ActivationKind(activation)
        self.weight = torch.nn.Parameter(glorot_uniform_(torch.empty(out_dim, in_dim, dtype=DTYPE), generator))
        self.bias = torch.nn.Parameter(torch.zeros(out_dim, dtype=DTYPE))

    @property
    def in_dim(self) -> int:
        return int(self.weight.shape[1])

    @property
    def out_dim(self) -> int:
        return int(self.weight.shape[0])

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return dense_forward(self, x, self.activation)


def dense_forward(p: Dense, x: torch.Tensor, act: ActivationKind) -> torch.Tensor:
    if x.shape[-1] != p.in_dim:
        raise ShapeError(f"dense_input_dim: expected {p.in_dim}, got {x.shape[-1]}")
    return activate(x @ p.weight.T + p.bias, act)


class BrnnCell(torch.nn.Module):
    def __init__(
        self,
        input_dim: int,
        state_dim: int,
        *,
        combine: CombineMode,
        activation: ActivationKind,
        generator: torch.Generator | None = None,
    ) -> None:
        super().__init__()
        self.input_dim = input_dim
        self.state_dim = state_dim
        self.combine = CombineMode(combine)
        self.forward_cell = Dense(input_dim + state_dim, state_dim, activation, generator=generator)
        self.backward_cell = Dense(input_dim + state_dim, state_dim, activation, generator=generator)

    @property
    def output_dim(self) -> int:
        return self.state_dim if self.combine is CombineMode.AVERAGE else 2 * self.state_dim

    def forward(self, inputs: torch.Tensor, initial_state: torch.Tensor | None = None) -> torch.Tensor:
        return brnn_forward(self, inputs, initial_state)


def brnn_forward(cell: BrnnCell, inputs: torch.Tensor, initial_state: torch.Tensor | None = None) -> torch.Tensor:
    if inputs.ndim < 2 or inputs.shape[-2] == 0:
        raise DegenerateInputError("empty_sequence")
    if inputs.shape[-1] != cell.input_dim:
        raise ShapeError(f"brnn_input_dim: expected {cell.input_dim}, got {inputs.shape[-1]}")

    steps = inputs.shape[-2]
    batch_shape = inputs.shape[:-2]
    if initial_state is None:
        h0 = inputs.new_zeros(*batch_shape, cell.state_dim)
    else:
        h0 = initial_state.to(inputs.dtype).expand(*batch_shape, cell.state_dim)

    forward_states: list[torch.Tensor] = []
    h = h0
    for t in range(steps):
        h = cell.forward_cell(torch.cat([inputs[..., t, :], h], dim=-1))
        forward_states.append(h)

    backward_states: list[torch.Tensor] = [h0] * steps
    h = h0
    for t in reversed(range(steps)):
        h = cell.backward_cell(torch.cat([inputs[..., t, :], h], dim=-1))
        backward_states[t] = h

    fwd = torch.stack(forward_states, dim=-2)
    bwd = torch.stack(backward_states, dim=-2)
    if cell.combine is CombineMode.AVERAGE:
        return 0.5 * (fwd + bwd)
    return torch.cat([fwd, bwd], dim=-1)


def cross_entropy(target: torch.Tensor, p: torch.Tensor) -> torch.Tensor:
    if target.shape != p.shape:
        raise ShapeError(f"cross_entropy_shapes: target={tuple(target.shape)} p={tuple(p.shape)}")
    return -(target * torch.log(torch.clamp(p, min=1e-30))).sum(dim=-1)


def mean_cross_entropy(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    return F.cross_entropy(logits.reshape(-1, logits.shape[-1]), labels.reshape(-1).long())


def backward(
    loss: torch.Tensor,
    params: torch.nn.Module | Mapping[str, torch.Tensor],
    *,
    inputs: Mapping[str, torch.Tensor] | None = None,
) -> dict[str, torch.Tensor]:
    if not isinstance(loss, torch.Tensor) or loss.grad_fn is None:
        raise UsageError("backward_before_forward: loss carries no recorded graph")
    named = dict(params.named_parameters()) if isinstance(params, torch.nn.Module) else dict(params)
    if inputs:
        named.update(inputs)
    names = [k for k, v in named.items() if v.requires_grad]
    grads = torch.autograd.grad(loss, [named[k] for k in names], allow_unused=True)
    out: dict[str, torch.Tensor] = {}
    for name, grad in zip(names, grads):
        out[name] = torch.zeros_like(named[name]) if grad is None else grad
    return out


@dataclass
class OptimizerState:
    optimizer: torch.optim.Adam
    params: dict[str, torch.nn.Parameter]
    max_grad_norm: float | None = None
    step_count: int = 0

    @classmethod
    def create(
        cls,
        params: torch.nn.Module | Iterable[tuple[str, torch.nn.Parameter]],
        *,
        lr: float = 1e-3,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        max_grad_norm: float | None = None,
    ) -> "OptimizerState":
        named = dict(params.named_parameters()) if isinstance(params, torch.nn.Module) else dict(params)
        optimizer = torch.optim.Adam(list(named.values()), lr=lr, betas=betas, eps=eps)
        return cls(optimizer=optimizer, params=named, max_grad_norm=max_grad_norm)

    @classmethod
    def from_schedule(cls, params: torch.nn.Module, schedule: ScheduleConfig) -> "OptimizerState":
        return cls.create(
            params,
            lr=schedule.learning_rate,
            betas=(schedule.beta1, schedule.beta2),
            eps=schedule.eps,
            max_grad_norm=schedule.max_grad_norm,
        )

    @property
    def learning_rate(self) -> float:
        return float(self.optimizer.param_groups[0]["lr"])

    def moments(self, name: str) -> tuple[torch.Tensor, torch.Tensor] | None:
        state = self.optimizer.state.get(self.params[name])
        if not state:
            return None
        return state["exp_avg"], state["exp_avg_sq"]


def optimizer_step(state: OptimizerState, grads: Mapping[str, torch.Tensor]) -> dict[str, torch.nn.Parameter]:
    step = state.step_count + 1
    for name, param in state.params.items():
        grad = grads.get(name)
        if grad is None:
            param.grad = None
            continue
        if grad.shape != param.shape:
            raise ShapeError(f"gradient_shape: {name} {tuple(grad.shape)} != {tuple(param.shape)}")
        if not bool(torch.isfinite(grad).all()):
            raise TrainingDivergence(f"non_finite_gradient: {name}", step=step)
        param.grad = grad.detach().clone()
    if state.max_grad_norm is not None:
        torch.nn.utils.clip_grad_norm_(
            [p for p in state.params.values() if p.grad is not None], state.max_grad_norm
        )
    state.optimizer.step()
    state.optimizer.zero_grad(set_to_none=True)
    state.step_count = step
    return state.params


@dataclass
class TrainingTrace:
    losses: list[float] = field(default_factory=list)

    @property
    def steps(self) -> int:
        return len(self.losses)

    def rows(self) -> list[tuple[int, float]]:
        return [(i + 1, loss) for i, loss in enumerate(self.losses)]


def run_training(
    state: OptimizerState,
    steps: int,
    loss_at_step: Callable[[int], torch.Tensor],
    *,
    name: str,
    log_every: int = 100,
) -> TrainingTrace:
    trace = TrainingTrace()
    logger.info("%s_start steps=%s lr=%s", name, steps, state.learning_rate)
    for s in range(steps):
        loss = loss_at_step(s)
        value = float(loss.detach())
        if not math.isfinite(value):
            raise TrainingDivergence(f"{name}_non_finite_loss", step=s + 1, trace=trace.losses + [value])
        trace.losses.append(value)
        try:
            optimizer_step(state, backward(loss, state.params))
        except TrainingDivergence as exc:
            raise TrainingDivergence(str(exc), step=s + 1, trace=trace.losses) from exc
        if log_every and (s + 1) % log_every == 0:
            logger.info("%s_step step=%s loss=%.6g", name, s + 1, value)
    logger.info("%s_done steps=%s final_loss=%s", name, trace.steps, trace.losses[-1] if trace.losses else None)
    return trace


def parameter_count(module: torch.nn.Module) -> int:
    return sum(int(p.numel()) for p in module.parameters())


def module_arrays(module: torch.nn.Module) -> dict[str, np.ndarray]:
    return {k: v.detach().cpu().numpy().astype(np.float64) for k, v in module.state_dict().items()}


def load_module_arrays(module: torch.nn.Module, arrays: Mapping[str, np.ndarray]) -> torch.nn.Module:
    expected = module.state_dict()
    missing = set(expected) - set(arrays)
    if missing:
        raise ShapeError(f"missing_tensors: {sorted(missing)}")
    state = {}
    for key, ref in expected.items():
        arr = np.asarray(arrays[key], dtype=np.float64)
        if tuple(arr.shape) != tuple(ref.shape):
            raise ShapeError(f"tensor_shape: {key} {arr.shape} != {tuple(ref.shape)}")
        state[key] = torch.from_numpy(arr.copy())
    module.load_state_dict(state)
    return module
