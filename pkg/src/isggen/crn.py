"""Coarse-to-fine image generator. A stack of refinement modules doubles the
working resolution until the output size is reached; the previous step's RGB
replaces the first three noise channels so new content grows around what is
already there."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .errors import ValidationError
from .netutil import init_params, seeded_normal


@dataclass(frozen=True)
class CrnConfig:
    start_resolution: int = 4
    output_resolution: int = 64
    channels: tuple[int, ...] = (128, 64, 32, 16)
    noise_channels: int = 8

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        if self.start_resolution < 1 or self.output_resolution < self.start_resolution:
            raise ValidationError("resolutions must satisfy 1 <= start <= output")
        ratio = self.output_resolution // self.start_resolution
        if (
            ratio < 2
            or ratio * self.start_resolution != self.output_resolution
            or ratio & (ratio - 1)
        ):
            raise ValidationError(
                "output_resolution / start_resolution must be a power of two >= 2"
            )
        if self.num_modules != len(self.channels):
            raise ValidationError(
                f"channels lists {len(self.channels)} modules, resolution ladder needs {self.num_modules}"
            )
        if any(c < 1 for c in self.channels):
            raise ValidationError("channel counts must be >= 1")
        if self.noise_channels < 3:
            raise ValidationError("noise_channels must be >= 3 (three carry the previous image)")

    @property
    def num_modules(self) -> int:
        return (self.output_resolution // self.start_resolution).bit_length() - 1


@dataclass(frozen=True)
class GenContext:
    """Sampled noise plus, after the first step, the image to preserve."""

    noise: torch.Tensor  # (C_n, S, S)
    previous_image: torch.Tensor | None = None  # (3, S, S) in [-1, 1]


def make_context(previous_image, seed: int, cfg: CrnConfig) -> GenContext:
    s = cfg.output_resolution
    noise = seeded_normal((cfg.noise_channels, s, s), seed)
    if previous_image is not None and tuple(previous_image.shape) != (3, s, s):
        raise ValidationError(
            f"previous image shape {tuple(previous_image.shape)} != (3, {s}, {s})"
        )
    return GenContext(noise=noise, previous_image=previous_image)


class _RefineModule(nn.Module):
    def __init__(self, in_channels: int, out_channels: int):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(in_channels, out_channels, 3, padding=1),
            nn.GroupNorm(out_channels, out_channels),
            nn.LeakyReLU(0.2),
            nn.Conv2d(out_channels, out_channels, 3, padding=1),
            nn.GroupNorm(out_channels, out_channels),
            nn.LeakyReLU(0.2),
        )

    def forward(self, x):
        return F.interpolate(self.body(x), scale_factor=2, mode="nearest")


class Crn(nn.Module):
    def __init__(self, layout_dim: int, cfg: CrnConfig, seed: int = 0):
        super().__init__()
        if layout_dim < 1:
            raise ValidationError("layout_dim must be >= 1")
        self.cfg = cfg
        self.layout_dim = layout_dim
        base = layout_dim + cfg.noise_channels
        modules = []
        prev = 0
        for ch in cfg.channels:
            modules.append(_RefineModule(base + prev, ch))
            prev = ch
        self.refine = nn.ModuleList(modules)
        last = cfg.channels[-1]
        self.to_rgb = nn.Sequential(
            nn.Conv2d(last, last, 3, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(last, 3, 3, padding=1),
        )
        init_params(self, seed)

    def forward(self, layout, noise, previous=None):
        """Batched cascade: layout (B, D, S, S), noise (B, C_n, S, S),
        previous (B, 3, S, S) or None -> images (B, 3, S, S) in [-1, 1]."""
        s = self.cfg.output_resolution
        if layout.shape[1:] != (self.layout_dim, s, s):
            raise ValidationError(
                f"layout shape {tuple(layout.shape[1:])} != ({self.layout_dim}, {s}, {s})"
            )
        if noise.shape[1:] != (self.cfg.noise_channels, s, s):
            raise ValidationError(
                f"noise shape {tuple(noise.shape[1:])} != ({self.cfg.noise_channels}, {s}, {s})"
            )
        if previous is not None:
            if previous.shape != (layout.shape[0], 3, s, s):
                raise ValidationError("previous image batch/shape mismatch")
            noise = torch.cat([previous, noise[:, 3:]], dim=1)
        base = torch.cat([layout, noise], dim=1)
        x = None
        res = self.cfg.start_resolution
        for module in self.refine:
            inp = F.avg_pool2d(base, s // res) if res != s else base
            if x is not None:
                inp = torch.cat([inp, x], dim=1)
            x = module(inp)
            res *= 2
        return torch.tanh(self.to_rgb(x))

    def generate(self, layout: torch.Tensor, ctx: GenContext) -> torch.Tensor:
        """Single-image entry point: layout (D, S, S) -> image (3, S, S)."""
        prev = None if ctx.previous_image is None else ctx.previous_image.unsqueeze(0)
        out = self.forward(layout.unsqueeze(0), ctx.noise.unsqueeze(0), prev)
        return out[0]
