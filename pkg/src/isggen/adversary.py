"""Image-level patch discriminator, object-level crop discriminator with an
auxiliary category classifier, and the adversarial loss in its non-saturating
form. Scores everywhere are logits."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import torch
import torch.nn.functional as F
from torch import nn

from .errors import ValidationError
from .netutil import init_params
from .sgraph import Box


@dataclass
class DiscOutput:
    realism: torch.Tensor
    class_logits: torch.Tensor | None = None


class ImageDiscriminator(nn.Module):
    """Three stride-2 convolutions, then a 1-channel logit map over patches."""

    def __init__(self, image_size: int = 64, base_channels: int = 32, seed: int = 0):
        super().__init__()
        if image_size % 8:
            raise ValidationError("image_size must be divisible by 8")
        self.image_size = image_size
        c = base_channels
        self.body = nn.Sequential(
            nn.Conv2d(3, c, 4, stride=2, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(c, 2 * c, 4, stride=2, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(2 * c, 4 * c, 4, stride=2, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(4 * c, 1, 3, padding=1),
        )
        init_params(self, seed)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        if images.ndim != 4 or images.shape[1:] != (3, self.image_size, self.image_size):
            raise ValidationError(
                f"expected (B, 3, {self.image_size}, {self.image_size}), got {tuple(images.shape)}"
            )
        return self.body(images)

    def score(self, image: torch.Tensor) -> DiscOutput:
        return DiscOutput(realism=self.forward(image.unsqueeze(0))[0])


def crop_boxes(
    images: torch.Tensor,
    boxes: torch.Tensor,
    image_index: torch.Tensor,
    crop_size: int,
) -> torch.Tensor:
    """Differentiable axis-aligned crop-resize.

    images (B, C, H, W); boxes (N, 4) normalized corners; image_index (N,)
    selects the source image per box. Returns (N, C, crop_size, crop_size).
    """
    if boxes.numel() == 0:
        return images.new_zeros((0, images.shape[1], crop_size, crop_size))
    src = images[image_index]
    n = boxes.shape[0]
    centers = (torch.arange(crop_size, dtype=boxes.dtype) + 0.5) / crop_size
    x0, y0, x1, y1 = boxes.unbind(1)
    ux = x0.view(n, 1, 1) + centers.view(1, 1, crop_size) * (x1 - x0).view(n, 1, 1)
    uy = y0.view(n, 1, 1) + centers.view(1, crop_size, 1) * (y1 - y0).view(n, 1, 1)
    grid = torch.stack(
        [
            (ux * 2 - 1).expand(n, crop_size, crop_size),
            (uy * 2 - 1).expand(n, crop_size, crop_size),
        ],
        dim=-1,
    )
    return F.grid_sample(src, grid, mode="bilinear", padding_mode="border", align_corners=False)


class ObjectDiscriminator(nn.Module):
    """Scores box crops for realism and classifies their category."""

    def __init__(
        self,
        num_categories: int,
        crop_size: int = 32,
        base_channels: int = 32,
        seed: int = 0,
    ):
        super().__init__()
        if num_categories < 1:
            raise ValidationError("num_categories must be >= 1")
        if crop_size % 8:
            raise ValidationError("crop_size must be divisible by 8")
        self.num_categories = num_categories
        self.crop_size = crop_size
        c = base_channels
        self.body = nn.Sequential(
            nn.Conv2d(3, c, 4, stride=2, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(c, 2 * c, 4, stride=2, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(2 * c, 4 * c, 4, stride=2, padding=1),
            nn.LeakyReLU(0.2),
        )
        feat = 4 * c * (crop_size // 8) ** 2
        self.trunk = nn.Sequential(nn.Linear(feat, 128), nn.LeakyReLU(0.2))
        self.realism_head = nn.Linear(128, 1)
        self.class_head = nn.Linear(128, num_categories)
        init_params(self, seed)

    def forward(
        self, images: torch.Tensor, boxes: torch.Tensor, image_index: torch.Tensor
    ) -> DiscOutput:
        crops = crop_boxes(images, boxes, image_index, self.crop_size)
        if crops.shape[0] == 0:
            return DiscOutput(
                realism=crops.new_zeros((0,)),
                class_logits=crops.new_zeros((0, self.num_categories)),
            )
        h = self.trunk(self.body(crops).flatten(1))
        return DiscOutput(
            realism=self.realism_head(h).squeeze(1), class_logits=self.class_head(h)
        )

    def score(self, image: torch.Tensor, boxes: Sequence[Box], categories) -> DiscOutput:
        """Single-image entry point taking validated Box values."""
        if len(boxes) != len(categories):
            raise ValidationError(
                f"{len(boxes)} boxes but {len(categories)} categories"
            )
        boxes_t = torch.tensor(
            [[b.x0, b.y0, b.x1, b.y1] for b in boxes], dtype=image.dtype
        ).reshape(-1, 4)
        index = torch.zeros(len(boxes), dtype=torch.long)
        return self.forward(image.unsqueeze(0), boxes_t, index)


def _mean_or_zero(t: torch.Tensor) -> torch.Tensor:
    return t.mean() if t.numel() else t.new_zeros(())


def gan_loss(d_real, d_fake, side: str) -> torch.Tensor:
    """Adversarial loss over realism logits.

    discriminator side: -E[log D(real)] - E[log(1 - D(fake))], which it
    minimizes; an uninformative D scoring 0.5 everywhere sits at 2*ln 2.
    generator side: the non-saturating -E[log D(fake)] (d_real is ignored
    and may be None).
    """
    if side == "generator":
        if d_fake is None:
            raise ValidationError("generator side needs fake scores")
        return _mean_or_zero(F.softplus(-d_fake))
    if side == "discriminator":
        if d_real is None or d_fake is None:
            raise ValidationError("discriminator side needs both real and fake scores")
        return _mean_or_zero(F.softplus(-d_real)) + _mean_or_zero(F.softplus(d_fake))
    raise ValidationError(f"side must be 'generator' or 'discriminator', got {side!r}")


def aux_classifier_loss(class_logits: torch.Tensor, categories: torch.Tensor) -> torch.Tensor:
    """Cross entropy pushing each crop toward its labeled category."""
    if class_logits.shape[0] == 0:
        return class_logits.new_zeros(())
    if class_logits.shape[0] != categories.shape[0]:
        raise ValidationError("logits/labels length mismatch")
    return F.cross_entropy(class_logits, categories)
