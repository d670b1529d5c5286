from __future__ import annotations

import numpy as np
import torch

from imdd_dsp.errors import ParameterError

RNG_KINDS = ("pcg64", "mt19937")


def _bit_generator(seed: int | np.random.SeedSequence, kind: str) -> np.random.BitGenerator:
    if kind == "pcg64":
        return np.random.PCG64(seed)
    if kind == "mt19937":
        return np.random.MT19937(seed)
    raise ParameterError(f"unsupported_rng: {kind}")


def make_rng(seed: int | np.random.SeedSequence, kind: str = "pcg64") -> np.random.Generator:
    return np.random.Generator(_bit_generator(seed, kind))


def spawn_rngs(seed: int, count: int, kind: str = "pcg64") -> list[np.random.Generator]:
    children = np.random.SeedSequence(seed).spawn(count)
    return [make_rng(child, kind) for child in children]


def torch_generator(seed: int) -> torch.Generator:
    gen = torch.Generator()
    gen.manual_seed(int(seed) % (2**63))
    return gen


def derive_seed(rng: np.random.Generator) -> int:
    return int(rng.integers(0, 2**63 - 1))
