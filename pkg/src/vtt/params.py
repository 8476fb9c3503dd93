"""Parameter-dict helpers shared by every model module.

Parameters live in flat dicts of name -> Tensor with '/'-separated names;
insertion order is deterministic and drives checkpoint layout.
"""

from __future__ import annotations

import numpy as np

from .rng import SeededRng
from .tensor import Tensor


def linear_init(rng: SeededRng, fan_in: int, fan_out: int):
    """Fan-in-scaled uniform weights, zero bias."""
    bound = 1.0 / np.sqrt(fan_in)
    w = Tensor(rng.uniform((fan_in, fan_out), -bound, bound).astype(np.float32), requires_grad=True)
    b = Tensor(np.zeros(fan_out, dtype=np.float32), requires_grad=True)
    return w, b


def embedding_init(rng: SeededRng, shape, std: float = 0.02):
    """Truncated normal (resampled beyond 2 sigma), the class-token recipe."""
    return Tensor(rng.truncated_normal(shape, std=std).astype(np.float32), requires_grad=True)


def zeros_param(shape):
    return Tensor(np.zeros(shape, dtype=np.float32), requires_grad=True)


def ones_param(shape):
    return Tensor(np.ones(shape, dtype=np.float32), requires_grad=True)


def count_parameters(params: dict[str, Tensor]) -> int:
    """Total scalar count across all registered tensors."""
    return int(sum(p.size for p in params.values()))


def subset(params: dict[str, Tensor], prefix: str) -> dict[str, Tensor]:
    return {k: v for k, v in params.items() if k.startswith(prefix)}


def with_prefix(params: dict[str, Tensor], prefix: str) -> dict[str, Tensor]:
    return {prefix + k: v for k, v in params.items()}


def clone_params(params: dict[str, Tensor]) -> dict[str, Tensor]:
    return {k: Tensor(p.data.copy(), requires_grad=p.requires_grad) for k, p in params.items()}
