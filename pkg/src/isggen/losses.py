"""Pixel and perceptual distances plus the weighted multi-step generator
objective. The perceptual extractor is a frozen seeded conv pyramid compared
in unit-normalized feature space, so distances are deterministic and need no
pretrained weights."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import torch
import torch.nn.functional as F
from torch import nn

from .adversary import aux_classifier_loss, gan_loss
from .errors import ValidationError
from .layoutnet import ObjectLayout, box_loss, mask_loss
from .netutil import init_params
from .sgraph import Box


@dataclass(frozen=True)
class LossWeights:
    gan: float = 0.01
    box: float = 10.0
    mask: float = 0.1
    pixel: float = 1.0
    pixel_step: float = 0.5
    perceptual: float = 1.0

    def __post_init__(self):
        for name in ("gan", "box", "mask", "pixel", "pixel_step", "perceptual"):
            if getattr(self, name) < 0:
                raise ValidationError(f"loss weight {name} must be >= 0")


class PerceptualExtractor(nn.Module):
    """Fixed random feature pyramid: conv + leaky-relu per level with 2x
    average pooling between levels. Weights are seeded and frozen; two
    extractors built from the same seed measure identically."""

    def __init__(self, seed: int = 0, channels: Sequence[int] = (16, 32, 64)):
        super().__init__()
        convs = []
        prev = 3
        for ch in channels:
            convs.append(nn.Conv2d(prev, ch, 3, padding=1))
            prev = ch
        self.convs = nn.ModuleList(convs)
        init_params(self, seed)
        for p in self.parameters():
            p.requires_grad_(False)

    def features(self, images: torch.Tensor) -> list[torch.Tensor]:
        """(B, 3, H, W) -> per-level feature maps, unit-normalized over
        channels at every spatial position."""
        x = images
        out = []
        for i, conv in enumerate(self.convs):
            if i:
                x = F.avg_pool2d(x, 2)
            x = F.leaky_relu(conv(x), 0.2)
            norm = x.pow(2).sum(dim=1, keepdim=True).sqrt() + 1e-8
            out.append(x / norm)
        return out


def pixel_loss(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Mean absolute difference over every element."""
    if a.shape != b.shape:
        raise ValidationError(f"image shapes differ: {tuple(a.shape)} vs {tuple(b.shape)}")
    return (a - b).abs().mean()


def perceptual_loss(a: torch.Tensor, b: torch.Tensor, extractor: PerceptualExtractor) -> torch.Tensor:
    """Sum over pyramid levels of mean squared normalized-feature distance."""
    if a.shape != b.shape:
        raise ValidationError(f"image shapes differ: {tuple(a.shape)} vs {tuple(b.shape)}")
    batched = a.ndim == 4
    fa = extractor.features(a if batched else a.unsqueeze(0))
    fb = extractor.features(b if batched else b.unsqueeze(0))
    total = a.new_zeros(())
    for la, lb in zip(fa, fb):
        total = total + (la - lb).pow(2).mean()
    return total


@dataclass
class StepLossInputs:
    """Everything the objective needs about one generated step."""

    image: torch.Tensor  # (3, H, W) in [-1, 1]
    layouts: list[ObjectLayout] = field(default_factory=list)
    image_logits: torch.Tensor | None = None
    object_logits: torch.Tensor | None = None
    object_class_logits: torch.Tensor | None = None
    object_categories: torch.Tensor | None = None


@dataclass
class SequenceTargets:
    image: torch.Tensor  # ground-truth final image (3, H, W) in [-1, 1]
    boxes: Mapping[int, Box]
    masks: Mapping[int, torch.Tensor]


def total_generator_loss(
    steps: Sequence[StepLossInputs],
    targets: SequenceTargets,
    weights: LossWeights,
    extractor: PerceptualExtractor,
) -> tuple[torch.Tensor, dict[str, float]]:
    """Weighted sum of the adversarial, layout, pixel, inter-step pixel, and
    intermediate-step perceptual terms for one generated sequence.

    The report maps each term name to its unweighted value. Supervision with
    real pixels exists only at the final step; earlier steps are tied to the
    target through the perceptual term and to each other through the
    inter-step pixel term.
    """
    steps = list(steps)
    if not steps:
        raise ValidationError("at least one generated step is required")
    if targets.image is None:
        raise ValidationError("final-step target image is required")

    gan_terms = []
    for s in steps:
        term = s.image.new_zeros(())
        if s.image_logits is not None:
            term = term + gan_loss(None, s.image_logits, "generator")
        if s.object_logits is not None and s.object_logits.numel():
            term = term + gan_loss(None, s.object_logits, "generator")
        if s.object_class_logits is not None and s.object_class_logits.numel():
            term = term + aux_classifier_loss(s.object_class_logits, s.object_categories)
        gan_terms.append(term)
    gan_term = torch.stack(gan_terms).mean()

    all_layouts = [o for s in steps for o in s.layouts]
    box_term = box_loss(all_layouts, targets.boxes)
    mask_term = mask_loss(all_layouts, targets.masks)

    pixel_term = pixel_loss(steps[-1].image, targets.image)
    zero = steps[-1].image.new_zeros(())
    step_term = zero
    for k in range(1, len(steps)):
        step_term = step_term + pixel_loss(steps[k].image, steps[k - 1].image)
    perc_term = zero
    for k in range(len(steps) - 1):
        perc_term = perc_term + perceptual_loss(steps[k].image, targets.image, extractor)

    total = (
        weights.gan * gan_term
        + weights.box * box_term
        + weights.mask * mask_term
        + weights.pixel * pixel_term
        + weights.pixel_step * step_term
        + weights.perceptual * perc_term
    )
    report = {
        "gan": float(gan_term.detach()),
        "box": float(box_term.detach()),
        "mask": float(mask_term.detach()),
        "pixel": float(pixel_term.detach()),
        "pixel_step": float(step_term.detach()),
        "perceptual": float(perc_term.detach()),
        "total": float(total.detach()),
    }
    return total, report
