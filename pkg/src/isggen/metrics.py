"""Quantitative evaluation: Inception Score over a category classifier and
step-to-step perceptual consistency of rollouts (lower is better)."""

from __future__ import annotations

import pickle
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .dataio import DatasetSpec, synth_shapes, synth_vocabulary
from .errors import DataError, NumericError, ValidationError
from .losses import PerceptualExtractor
from .netutil import init_params
from .sgraph import mix_seed


class ClassifierHandle(Protocol):
    num_classes: int

    def predict_proba(self, images: np.ndarray) -> np.ndarray:
        """(N, H, W, 3) floats in [0, 1] -> (N, C) rows summing to 1."""
        ...


def inception_score_from_probs(probs: np.ndarray, splits: int = 10) -> tuple[float, float]:
    """exp(mean KL(p(y|x) || p(y))) per contiguous split; returns mean and
    standard deviation over splits."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2:
        raise ValidationError(f"probability table must be (N, C), got {probs.shape}")
    n = probs.shape[0]
    if splits < 1:
        raise ValidationError("splits must be >= 1")
    if n < splits:
        raise ValidationError(f"need at least {splits} images for {splits} splits, got {n}")
    row_sums = probs.sum(axis=1)
    if not np.allclose(row_sums, 1.0, atol=1e-6):
        raise ValidationError("classifier rows must sum to 1")
    scores = []
    for chunk in np.array_split(np.arange(n), splits):
        p = probs[chunk]
        marginal = p.mean(axis=0, keepdims=True)
        ratio = np.divide(p, marginal, out=np.ones_like(p), where=p > 0)
        kl = np.where(p > 0, p * np.log(ratio), 0.0).sum(axis=1)
        scores.append(np.exp(kl.mean()))
    return float(np.mean(scores)), float(np.std(scores))


def inception_score(
    images: np.ndarray, classifier: ClassifierHandle, splits: int = 10
) -> tuple[float, float]:
    return inception_score_from_probs(classifier.predict_proba(images), splits)


def consistency(rollouts: Sequence, extractor: PerceptualExtractor) -> list[float]:
    """Per-transition mean perceptual distance between consecutive step
    images, averaged over rollouts. Accepts lists of GenStep lists or lists
    of image tensors."""
    if not rollouts:
        raise ValidationError("at least one rollout is required")
    image_lists = []
    for r in rollouts:
        imgs = [getattr(s, "image", s) for s in r]
        if len(imgs) < 2:
            raise ValidationError("every rollout needs at least 2 steps")
        image_lists.append(imgs)
    length = len(image_lists[0])
    if any(len(r) != length for r in image_lists):
        raise ValidationError("rollouts have differing step counts")
    means = []
    with torch.no_grad():
        for k in range(length - 1):
            a = torch.stack([r[k] for r in image_lists])
            b = torch.stack([r[k + 1] for r in image_lists])
            per_level = extractor.features(a), extractor.features(b)
            total = torch.zeros(a.shape[0], dtype=a.dtype)
            for la, lb in zip(*per_level):
                total = total + (la - lb).pow(2).flatten(1).mean(dim=1)
            means.append(float(total.mean()))
    return means


class ShapesClassifier(nn.Module):
    """Small convnet over synthetic renders; the desk-scale stand-in for a
    large pretrained classifier."""

    def __init__(self, num_classes: int, image_size: int = 64, seed: int = 0):
        super().__init__()
        self.num_classes = num_classes
        self.image_size = image_size
        self.body = nn.Sequential(
            nn.Conv2d(3, 32, 4, stride=2, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(32, 64, 4, stride=2, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(64, 128, 4, stride=2, padding=1),
            nn.LeakyReLU(0.2),
        )
        self.head = nn.Sequential(
            nn.Linear(128, 128), nn.LeakyReLU(0.2), nn.Linear(128, num_classes)
        )
        init_params(self, seed)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        h = self.body(images).mean(dim=(2, 3))
        return self.head(h)

    def predict_proba(self, images: np.ndarray) -> np.ndarray:
        arr = np.asarray(images, dtype=np.float32)
        if arr.ndim != 4 or arr.shape[3] != 3:
            raise ValidationError(f"expected (N, H, W, 3) images, got {arr.shape}")
        t = torch.from_numpy(np.transpose(arr, (0, 3, 1, 2))) * 2.0 - 1.0
        with torch.no_grad():
            probs = F.softmax(self.forward(t), dim=1)
        return probs.numpy().astype(np.float64)


def _single_object_batch(count: int, seed: int, image_size: int):
    spec = DatasetSpec(min_objects=1, max_objects=1, image_size=image_size)
    samples = synth_shapes(count, seed, spec)
    images = np.stack([img.pixels for img, _ in samples])
    labels = np.array([img.objects[0].category for img, _ in samples], dtype=np.int64)
    return images, labels


def train_shapes_classifier(
    seed: int = 0,
    image_size: int = 64,
    train_count: int = 2048,
    val_count: int = 256,
    epochs: int = 25,
    batch_size: int = 64,
    accuracy_gate: float = 0.95,
) -> ShapesClassifier:
    """Fit the desk classifier on single-object renders and verify it clears
    the validation accuracy gate before anyone scores with it."""
    vocab = synth_vocabulary()
    clf = ShapesClassifier(len(vocab.categories), image_size, seed=mix_seed(seed, "clf"))
    xs, ys = _single_object_batch(train_count, mix_seed(seed, "clf-train"), image_size)
    vx, vy = _single_object_batch(val_count, mix_seed(seed, "clf-val"), image_size)
    x_t = torch.from_numpy(np.transpose(xs, (0, 3, 1, 2))).float() * 2.0 - 1.0
    y_t = torch.from_numpy(ys)
    opt = torch.optim.Adam(clf.parameters(), lr=2e-3)
    order_rng = np.random.default_rng(mix_seed(seed, "clf-order"))
    for _ in range(epochs):
        order = order_rng.permutation(train_count)
        for start in range(0, train_count, batch_size):
            idx = torch.from_numpy(order[start : start + batch_size].copy())
            logits = clf(x_t[idx])
            loss = F.cross_entropy(logits, y_t[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
    probs = clf.predict_proba(vx)
    accuracy = float((probs.argmax(axis=1) == vy).mean())
    if accuracy < accuracy_gate:
        raise NumericError(
            f"shapes classifier validation accuracy {accuracy:.3f} is below the "
            f"{accuracy_gate:.2f} gate"
        )
    return clf


def save_classifier(path, clf: ShapesClassifier) -> None:
    payload = {
        "num_classes": clf.num_classes,
        "image_size": clf.image_size,
        "state": {k: v.detach().numpy().copy() for k, v in clf.state_dict().items()},
    }
    with open(path, "wb") as f:
        pickle.dump(payload, f, protocol=4)


def load_classifier(path) -> ShapesClassifier:
    path = Path(path)
    if not path.exists():
        raise DataError(f"classifier file not found: {path}")
    with open(path, "rb") as f:
        payload = pickle.load(f)
    clf = ShapesClassifier(payload["num_classes"], payload["image_size"])
    clf.load_state_dict({k: torch.from_numpy(v) for k, v in payload["state"].items()})
    return clf


@dataclass(frozen=True)
class EvalReport:
    metric: str
    value: object
    stddev: float | None
    config_hash: str
    dataset_id: str

    def to_doc(self) -> dict:
        return {
            "metric": self.metric,
            "value": self.value,
            "stddev": self.stddev,
            "config_hash": self.config_hash,
            "dataset_id": self.dataset_id,
        }
