"""Scene layout prediction: per-object box and soft mask heads over node
embeddings, plus differentiable composition into a spatial feature map."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import torch
import torch.nn.functional as F
from torch import nn

from .errors import ValidationError
from .gcn import NodeEmbeddings
from .netutil import init_params
from .sgraph import Box

_EPS = 1e-3  # floor on box extent and center margin; keeps every box valid


@dataclass
class ObjectLayout:
    """Predicted placement of one object.

    box_tensor carries the same four corner coordinates as box but stays on
    the autograd graph; box is the validated plain-float view.
    """

    node_id: int
    box: Box
    mask: torch.Tensor  # (M, M), values in [0, 1]
    embedding: torch.Tensor  # (D,)
    box_tensor: torch.Tensor  # (4,) = (x0, y0, x1, y1)


def corners_from_raw(raw: torch.Tensor) -> torch.Tensor:
    """Map unconstrained head outputs (N, 4) to valid corner boxes (N, 4).

    Center goes through a sigmoid pinned away from the borders; width and
    height are sigmoid-bounded into [eps, 1]. Corners are then clamped to the
    unit square, which still leaves a gap of at least eps between them, so
    the result always forms a valid Box.
    """
    cx = torch.sigmoid(raw[:, 0]).clamp(_EPS, 1.0 - _EPS)
    cy = torch.sigmoid(raw[:, 1]).clamp(_EPS, 1.0 - _EPS)
    w = _EPS + (1.0 - _EPS) * torch.sigmoid(raw[:, 2] - 1.0)
    h = _EPS + (1.0 - _EPS) * torch.sigmoid(raw[:, 3] - 1.0)
    x0 = (cx - w / 2).clamp(0.0, 1.0)
    x1 = (cx + w / 2).clamp(0.0, 1.0)
    y0 = (cy - h / 2).clamp(0.0, 1.0)
    y1 = (cy + h / 2).clamp(0.0, 1.0)
    return torch.stack([x0, y0, x1, y1], dim=1)


class LayoutNet(nn.Module):
    """Box regression MLP and transposed-convolution mask head."""

    def __init__(self, embed_dim: int, mask_size: int = 16, hidden_dim: int | None = None, seed: int = 0):
        super().__init__()
        if embed_dim < 1:
            raise ValidationError("embed_dim must be >= 1")
        if mask_size < 4 or mask_size & (mask_size - 1):
            raise ValidationError("mask_size must be a power of two >= 4")
        self.embed_dim = embed_dim
        self.mask_size = mask_size
        hidden = hidden_dim or max(64, 2 * embed_dim)
        self.box_head = nn.Sequential(
            nn.Linear(embed_dim, hidden), nn.ReLU(), nn.Linear(hidden, 4)
        )
        c0 = max(8, embed_dim)
        self.mask_fc = nn.Linear(embed_dim, c0 * 4 * 4)
        self._c0 = c0
        layers = []
        ch = c0
        for _ in range(int(math.log2(mask_size // 4))):
            nxt = max(8, ch // 2)
            layers += [
                nn.ConvTranspose2d(ch, nxt, 4, stride=2, padding=1),
                nn.LeakyReLU(0.2),
            ]
            ch = nxt
        layers.append(nn.Conv2d(ch, 1, 3, padding=1))
        self.mask_convs = nn.Sequential(*layers)
        init_params(self, seed)

    def forward(self, vectors: torch.Tensor):
        """(N, D) embeddings -> corner boxes (N, 4) and soft masks (N, M, M)."""
        boxes = corners_from_raw(self.box_head(vectors))
        z = self.mask_fc(vectors).view(-1, self._c0, 4, 4)
        masks = torch.sigmoid(self.mask_convs(F.leaky_relu(z, 0.2))).squeeze(1)
        return boxes, masks

    def predict_layout(self, emb: NodeEmbeddings) -> list[ObjectLayout]:
        if len(emb) == 0:
            return []
        boxes_t, masks = self.forward(emb.vectors)
        out = []
        for i, node_id in enumerate(emb.node_ids):
            coords = boxes_t[i].detach().tolist()
            out.append(
                ObjectLayout(
                    node_id=node_id,
                    box=Box(*coords),
                    mask=masks[i],
                    embedding=emb.vectors[i],
                    box_tensor=boxes_t[i],
                )
            )
        return out


def compose(objs: Sequence[ObjectLayout], size: int, embed_dim: int | None = None) -> torch.Tensor:
    """Sum of per-object contributions on a (D, size, size) canvas.

    Each mask is bilinearly warped into its box (zero outside) and scaled by
    the object's embedding vector; objects add, so composition is exactly
    additive over disjoint lists.
    """
    if not objs:
        if embed_dim is None:
            raise ValidationError("embed_dim is required to compose zero objects")
        return torch.zeros(embed_dim, size, size)
    boxes = torch.stack([o.box_tensor for o in objs])
    masks = torch.stack([o.mask for o in objs]).unsqueeze(1)
    emb = torch.stack([o.embedding for o in objs])
    n = boxes.shape[0]
    centers = (torch.arange(size, dtype=boxes.dtype) + 0.5) / size
    x0, y0, x1, y1 = boxes.unbind(1)
    gx = (centers.view(1, 1, size) - x0.view(n, 1, 1)) / (x1 - x0).view(n, 1, 1) * 2 - 1
    gy = (centers.view(1, size, 1) - y0.view(n, 1, 1)) / (y1 - y0).view(n, 1, 1) * 2 - 1
    grid = torch.stack([gx.expand(n, size, size), gy.expand(n, size, size)], dim=-1)
    warped = F.grid_sample(
        masks, grid, mode="bilinear", padding_mode="zeros", align_corners=False
    )
    return (warped * emb.view(n, -1, 1, 1)).sum(dim=0)


def _matched_pairs(predicted: Sequence[ObjectLayout], targets: Mapping[int, object]):
    missing = [o.node_id for o in predicted if o.node_id not in targets]
    if missing:
        raise ValidationError(f"no target for predicted node ids {missing}")
    return [(o, targets[o.node_id]) for o in predicted]


def box_loss(predicted: Sequence[ObjectLayout], targets: Mapping[int, Box]) -> torch.Tensor:
    """Mean absolute corner-coordinate error over matched objects."""
    pairs = _matched_pairs(predicted, targets)
    if not pairs:
        return torch.zeros(())
    pred = torch.stack([o.box_tensor for o, _ in pairs])
    tgt = torch.tensor(
        [[b.x0, b.y0, b.x1, b.y1] for _, b in pairs], dtype=pred.dtype
    )
    return (pred - tgt).abs().mean()


def mask_loss(predicted: Sequence[ObjectLayout], targets: Mapping[int, torch.Tensor]) -> torch.Tensor:
    """Mean binary cross entropy over all mask cells of matched objects."""
    pairs = _matched_pairs(predicted, targets)
    if not pairs:
        return torch.zeros(())
    pred = torch.stack([o.mask for o, _ in pairs]).clamp(1e-7, 1.0 - 1e-7)
    tgt = torch.stack([torch.as_tensor(t, dtype=pred.dtype) for _, t in pairs])
    if tgt.shape != pred.shape:
        raise ValidationError(f"mask target shape {tuple(tgt.shape)} != {tuple(pred.shape)}")
    return -(tgt * pred.log() + (1.0 - tgt) * (1.0 - pred).log()).mean()
