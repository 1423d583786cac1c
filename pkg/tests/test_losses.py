import math

import pytest
import torch

from isggen.errors import ValidationError
from isggen.layoutnet import ObjectLayout
from isggen.losses import (
    LossWeights,
    PerceptualExtractor,
    SequenceTargets,
    StepLossInputs,
    perceptual_loss,
    pixel_loss,
    total_generator_loss,
)
from isggen.sgraph import Box

from conftest import finite_difference_check


@pytest.fixture(scope="module")
def extractor():
    return PerceptualExtractor(seed=0, channels=(8, 12))


def image(seed, size=16):
    g = torch.Generator().manual_seed(seed)
    return torch.tanh(torch.randn(3, size, size, generator=g))


def simple_layout(node_id, box, mask_size=4):
    t = torch.tensor([box.x0, box.y0, box.x1, box.y1])
    return ObjectLayout(
        node_id=node_id,
        box=box,
        mask=torch.full((mask_size, mask_size), 0.5),
        embedding=torch.zeros(4),
        box_tensor=t,
    )


def test_weights_reject_negatives():
    LossWeights()
    with pytest.raises(ValidationError, match="mask"):
        LossWeights(mask=-0.1)


def test_pixel_loss_hand_value():
    a = torch.tensor([[[0.0, 1.0]]])
    b = torch.tensor([[[0.5, 0.5]]])
    assert float(pixel_loss(a, b)) == pytest.approx(0.5)
    with pytest.raises(ValidationError):
        pixel_loss(torch.zeros(3, 4, 4), torch.zeros(3, 5, 5))


class TestPerceptual:
    def test_zero_at_identity(self, extractor):
        img = image(0)
        assert float(perceptual_loss(img, img, extractor)) == pytest.approx(0.0, abs=1e-10)

    def test_symmetric(self, extractor):
        a, b = image(1), image(2)
        assert float(perceptual_loss(a, b, extractor)) == pytest.approx(
            float(perceptual_loss(b, a, extractor)), rel=1e-6
        )

    def test_positive_for_different_images(self, extractor):
        assert float(perceptual_loss(image(3), image(4), extractor)) > 0

    def test_extractor_reproducible_and_frozen(self):
        a = PerceptualExtractor(seed=5, channels=(8,))
        b = PerceptualExtractor(seed=5, channels=(8,))
        img = image(5)
        fa = a.features(img.unsqueeze(0))
        fb = b.features(img.unsqueeze(0))
        for x, y in zip(fa, fb):
            assert torch.equal(x, y)
        assert all(not p.requires_grad for p in a.parameters())

    def test_small_shift_beats_unrelated_content(self, extractor):
        """A one-pixel translation of the same content stays perceptually
        closer than an unrelated image."""
        base = image(6, size=32)
        shifted = torch.roll(base, shifts=1, dims=2)
        unrelated = image(7, size=32)
        near = float(perceptual_loss(base, shifted, extractor))
        far = float(perceptual_loss(base, unrelated, extractor))
        assert near < far

    def test_batched_matches_single(self, extractor):
        a = torch.stack([image(8), image(9)])
        b = torch.stack([image(10), image(11)])
        batched = float(perceptual_loss(a, b, extractor))
        singles = [float(perceptual_loss(a[i], b[i], extractor)) for i in range(2)]
        # per-level mean over the batch equals the average of singles
        assert batched == pytest.approx(sum(singles) / 2, rel=1e-5)


def make_steps(n, with_layouts=True):
    steps = []
    boxes = {}
    masks = {}
    for k in range(n):
        layouts = []
        if with_layouts:
            b = Box(0.1 + 0.05 * k, 0.1, 0.5 + 0.05 * k, 0.5)
            layouts = [simple_layout(k, b)]
            boxes[k] = b
            masks[k] = torch.full((4, 4), 0.5)
        steps.append(
            StepLossInputs(
                image=image(100 + k),
                layouts=layouts,
                image_logits=torch.zeros(1, 1, 2, 2),
                object_logits=torch.zeros(len(layouts)),
                object_class_logits=torch.zeros(len(layouts), 12),
                object_categories=torch.zeros(len(layouts), dtype=torch.long),
            )
        )
    return steps, SequenceTargets(image=image(200), boxes=boxes, masks=masks)


def test_single_step_sequence_has_no_step_terms(extractor):
    steps, targets = make_steps(1)
    _, report = total_generator_loss(steps, targets, LossWeights(), extractor)
    assert report["pixel_step"] == 0.0
    assert report["perceptual"] == 0.0
    assert report["pixel"] > 0.0


def test_report_recombines_to_total(extractor):
    steps, targets = make_steps(3)
    w = LossWeights(gan=0.01, box=10.0, mask=0.1, pixel=1.0, pixel_step=0.5, perceptual=1.0)
    total, report = total_generator_loss(steps, targets, w, extractor)
    recombined = (
        w.gan * report["gan"]
        + w.box * report["box"]
        + w.mask * report["mask"]
        + w.pixel * report["pixel"]
        + w.pixel_step * report["pixel_step"]
        + w.perceptual * report["perceptual"]
    )
    assert float(total) == pytest.approx(recombined, abs=1e-6)
    assert report["total"] == pytest.approx(recombined, abs=1e-6)


def test_perceptual_term_counts_intermediate_steps_only(extractor):
    steps, targets = make_steps(3)
    _, report = total_generator_loss(steps, targets, LossWeights(), extractor)
    expected = sum(
        float(perceptual_loss(steps[k].image, targets.image, extractor)) for k in range(2)
    )
    assert report["perceptual"] == pytest.approx(expected, rel=1e-5)


def test_pixel_step_chains_consecutive_images(extractor):
    steps, targets = make_steps(3)
    _, report = total_generator_loss(steps, targets, LossWeights(), extractor)
    expected = float(pixel_loss(steps[1].image, steps[0].image)) + float(
        pixel_loss(steps[2].image, steps[1].image)
    )
    assert report["pixel_step"] == pytest.approx(expected, rel=1e-6)


def test_gan_term_at_zero_logits(extractor):
    steps, targets = make_steps(2)
    _, report = total_generator_loss(steps, targets, LossWeights(), extractor)
    # image softplus(0) + object softplus(0) + uniform CE over 12 classes
    expected = math.log(2) * 2 + math.log(12)
    assert report["gan"] == pytest.approx(expected, rel=1e-5)


def test_zero_weights_zero_total(extractor):
    steps, targets = make_steps(2)
    w = LossWeights(gan=0, box=0, mask=0, pixel=0, pixel_step=0, perceptual=0)
    total, _ = total_generator_loss(steps, targets, w, extractor)
    assert float(total) == 0.0


def test_missing_pieces_rejected(extractor):
    steps, targets = make_steps(1)
    with pytest.raises(ValidationError):
        total_generator_loss([], targets, LossWeights(), extractor)
    with pytest.raises(ValidationError):
        total_generator_loss(
            steps,
            SequenceTargets(image=None, boxes={}, masks={}),
            LossWeights(),
            extractor,
        )


def test_gradients_flow_to_step_images():
    extractor = PerceptualExtractor(seed=1, channels=(4,)).double()
    g = torch.Generator().manual_seed(12)
    imgs = [
        torch.tanh(torch.randn(3, 8, 8, generator=g, dtype=torch.float64)).requires_grad_()
        for _ in range(2)
    ]
    target = torch.tanh(torch.randn(3, 8, 8, generator=g, dtype=torch.float64))
    steps = [StepLossInputs(image=im) for im in imgs]
    targets = SequenceTargets(image=target, boxes={}, masks={})

    def loss():
        total, _ = total_generator_loss(steps, targets, LossWeights(), extractor)
        return total

    worst = finite_difference_check(loss, imgs, max_entries=12)
    assert worst <= 1e-3, f"worst gradient relative error {worst}"
