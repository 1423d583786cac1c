"""Shared helpers for the neural modules: deterministic initialization and
numpy-backed weight state exchange (keeps checkpoints byte-stable)."""

from __future__ import annotations

import math

import numpy as np
import torch
from torch import nn

from .errors import NumericError, ValidationError


def init_params(module: nn.Module, seed: int) -> None:
    """Reinitialize every parameter from one seeded generator.

    Matrix-shaped weights draw uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) with
    fan_in the product of trailing dims; vectors become ones (normalization
    gains) or zeros (biases). Parameter-name order fixes the draw order, so
    the same seed always yields the same weights.
    """
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for name, p in sorted(module.named_parameters()):
            if p.ndim <= 1:
                p.fill_(0.0 if name.endswith("bias") else 1.0)
            else:
                bound = 1.0 / math.sqrt(math.prod(p.shape[1:]))
                p.uniform_(-bound, bound, generator=gen)


def state_to_numpy(module: nn.Module) -> dict[str, np.ndarray]:
    return {k: v.detach().cpu().numpy().copy() for k, v in module.state_dict().items()}


def state_from_numpy(module: nn.Module, state: dict[str, np.ndarray], owner: str) -> None:
    current = module.state_dict()
    missing = sorted(set(current) - set(state))
    extra = sorted(set(state) - set(current))
    if missing or extra:
        raise ValidationError(
            f"{owner}: checkpoint parameter set mismatch"
            f" (missing {missing or 'none'}, unexpected {extra or 'none'})"
        )
    loaded = {}
    for key, arr in state.items():
        want = tuple(current[key].shape)
        if tuple(arr.shape) != want:
            raise ValidationError(
                f"{owner}.{key}: checkpoint shape {tuple(arr.shape)} != model shape {want}"
            )
        loaded[key] = torch.from_numpy(np.ascontiguousarray(arr))
    module.load_state_dict(loaded)


def require_finite(t: torch.Tensor, what: str) -> torch.Tensor:
    if not torch.isfinite(t).all():
        raise NumericError(f"non-finite values in {what}")
    return t


def seeded_normal(shape, seed: int, dtype=torch.float32) -> torch.Tensor:
    gen = torch.Generator().manual_seed(seed)
    return torch.randn(*shape, generator=gen, dtype=dtype)
