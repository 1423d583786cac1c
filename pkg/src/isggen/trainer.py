"""Multi-step training loop and rollout. One step = embed the whole graph,
drop embeddings of objects that already exist, lay out the newcomers, and
render with the previous image carried into the generator input. The same
step function drives training, offline generation, and the service."""

from __future__ import annotations

import json
import pickle
import random
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import gcn as gcn_mod
from . import layoutnet as layout_mod
from .adversary import ImageDiscriminator, ObjectDiscriminator, aux_classifier_loss, gan_loss
from .crn import Crn, CrnConfig, make_context
from .dataio import TrainingExample
from .errors import ConfigError, DataError, NumericError, ValidationError
from .gcn import Gcn, GcnConfig
from .layoutnet import LayoutNet, ObjectLayout
from .losses import (
    LossWeights,
    PerceptualExtractor,
    SequenceTargets,
    StepLossInputs,
    total_generator_loss,
)
from .netutil import state_from_numpy, state_to_numpy
from .sgraph import Box, GraphSequence, SceneGraph, Vocabulary, mix_seed

CHECKPOINT_FORMAT = 1


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 200
    batch_size: int = 8
    steps_per_sequence: int = 3
    lr_generator: float = 1e-4
    lr_discriminator: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.999
    seed: int = 0
    checkpoint_every: int = 100
    weights: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        if self.iterations < 1 or self.batch_size < 1 or self.steps_per_sequence < 1:
            raise ValidationError("iterations, batch_size, steps_per_sequence must be >= 1")
        if self.lr_generator <= 0 or self.lr_discriminator <= 0:
            raise ValidationError("learning rates must be positive")
        if self.checkpoint_every < 1:
            raise ValidationError("checkpoint_every must be >= 1")


@dataclass
class Models:
    """All networks sharing one checkpoint."""

    vocab: Vocabulary
    gcn: Gcn
    layout: LayoutNet
    crn: Crn
    d_image: ImageDiscriminator
    d_object: ObjectDiscriminator
    perceptual: PerceptualExtractor

    def generator_parameters(self):
        for m in (self.gcn, self.layout, self.crn):
            yield from m.parameters()

    def discriminator_parameters(self):
        for m in (self.d_image, self.d_object):
            yield from m.parameters()

    def named_modules_for_state(self):
        return {
            "gcn": self.gcn,
            "layout": self.layout,
            "crn": self.crn,
            "d_image": self.d_image,
            "d_object": self.d_object,
            "perceptual": self.perceptual,
        }


def build_models(
    vocab: Vocabulary,
    gcn_cfg: GcnConfig,
    crn_cfg: CrnConfig,
    seed: int,
    mask_size: int = 16,
    crop_size: int = 32,
) -> Models:
    return Models(
        vocab=vocab,
        gcn=Gcn(len(vocab.categories), len(vocab.predicates), gcn_cfg, seed=mix_seed(seed, "init", "gcn")),
        layout=LayoutNet(gcn_cfg.embed_dim, mask_size=mask_size, seed=mix_seed(seed, "init", "layout")),
        crn=Crn(gcn_cfg.embed_dim, crn_cfg, seed=mix_seed(seed, "init", "crn")),
        d_image=ImageDiscriminator(crn_cfg.output_resolution, seed=mix_seed(seed, "init", "d_image")),
        d_object=ObjectDiscriminator(
            len(vocab.categories), crop_size=crop_size, seed=mix_seed(seed, "init", "d_object")
        ),
        perceptual=PerceptualExtractor(seed=mix_seed(seed, "init", "perceptual")),
    )


@dataclass
class GenStep:
    """One rollout step: which nodes appeared and what was rendered."""

    step_index: int
    graph: SceneGraph
    new_node_ids: tuple[int, ...]
    layouts: list[ObjectLayout]
    image: torch.Tensor  # (3, S, S) in [-1, 1]


def run_step(
    models: Models,
    graph: SceneGraph,
    generated_ids,
    previous_image: torch.Tensor | None,
    noise_seed: int,
) -> tuple[list[ObjectLayout], torch.Tensor]:
    """Single generation step shared by training rollouts and the service.

    The full graph is embedded first so pending objects see their relations
    to existing ones; only then are the existing objects' rows dropped.
    """
    emb = models.gcn.embed(graph)
    pending = gcn_mod.filter_generated(emb, generated_ids)
    layouts = models.layout.predict_layout(pending)
    lmap = layout_mod.compose(
        layouts, models.crn.cfg.output_resolution, embed_dim=models.gcn.cfg.embed_dim
    )
    ctx = make_context(previous_image, noise_seed, models.crn.cfg)
    image = models.crn.generate(lmap, ctx)
    return layouts, image


def rollout(
    models: Models, seq: GraphSequence, seed: int, independent: bool = False
) -> list[GenStep]:
    """Generate every step of a sequence.

    Default mode carries state forward (previous image injected, existing
    objects excluded from the layout). Independent mode re-renders each graph
    from scratch: no exclusion, no injection, same per-step noise stream.
    """
    if not seq.steps:
        raise ValidationError("sequence has no steps")
    steps: list[GenStep] = []
    generated: set[int] = set()
    previous: torch.Tensor | None = None
    for k, graph in enumerate(seq.steps):
        new_ids = tuple(sorted(graph.node_ids() - generated))
        noise_seed = mix_seed(seed, "noise", k)
        if independent:
            emb = models.gcn.embed(graph)
            layouts = models.layout.predict_layout(emb)
            lmap = layout_mod.compose(
                layouts, models.crn.cfg.output_resolution, embed_dim=models.gcn.cfg.embed_dim
            )
            image = models.crn.generate(lmap, make_context(None, noise_seed, models.crn.cfg))
        else:
            layouts, image = run_step(models, graph, generated, previous, noise_seed)
            previous = image
        steps.append(
            GenStep(
                step_index=k,
                graph=graph,
                new_node_ids=new_ids,
                layouts=layouts,
                image=image,
            )
        )
        generated |= set(new_ids)
    if generated != seq.steps[-1].node_ids():
        raise ValidationError("rollout steps do not cover the final node set")
    return steps


def _image_to_tensor(pixels01: np.ndarray) -> torch.Tensor:
    """(H, W, 3) floats in [0, 1] -> (3, H, W) tensor in [-1, 1]."""
    arr = np.transpose(pixels01.astype(np.float32), (2, 0, 1))
    return torch.from_numpy(arr) * 2.0 - 1.0


@dataclass
class _Prepared:
    example: TrainingExample
    image: torch.Tensor  # (3, S, S) in [-1, 1]
    boxes: dict[int, Box]
    box_tensor: torch.Tensor  # (n, 4) ground truth corners
    categories: torch.Tensor  # (n,)
    masks: dict[int, torch.Tensor]


def _prepare(example: TrainingExample) -> _Prepared:
    final = example.sequence.steps[-1]
    ids = sorted(example.boxes)
    if set(ids) != final.node_ids():
        raise DataError(
            f"example {example.example_id}: box targets do not match final node set"
        )
    cat = {n.node_id: n.category for n in final.nodes}
    return _Prepared(
        example=example,
        image=_image_to_tensor(example.image),
        boxes=dict(example.boxes),
        box_tensor=torch.tensor(
            [[example.boxes[i].x0, example.boxes[i].y0, example.boxes[i].x1, example.boxes[i].y1] for i in ids]
        ),
        categories=torch.tensor([cat[i] for i in ids], dtype=torch.long),
        masks={k: torch.from_numpy(np.asarray(v, dtype=np.float32)) for k, v in example.masks.items()},
    )


def _fake_object_batch(step_lists: list[list[GenStep]], detach: bool):
    """Flatten every step's new-object boxes across a batch of rollouts into
    (images, boxes, image_index, categories) for the object discriminator."""
    images, boxes, index, cats = [], [], [], []
    img_i = 0
    for steps in step_lists:
        for s in steps:
            img = s.image.detach() if detach else s.image
            images.append(img)
            cat = {n.node_id: n.category for n in s.graph.nodes}
            for layout in s.layouts:
                b = layout.box_tensor.detach() if detach else layout.box_tensor
                boxes.append(b)
                index.append(img_i)
                cats.append(cat[layout.node_id])
            img_i += 1
    stacked = torch.stack(images) if images else torch.zeros((0, 3, 1, 1))
    boxes_t = torch.stack(boxes) if boxes else torch.zeros((0, 4))
    return (
        stacked,
        boxes_t,
        torch.tensor(index, dtype=torch.long),
        torch.tensor(cats, dtype=torch.long),
    )


def train(
    dataset: list[TrainingExample],
    cfg: TrainConfig,
    models: Models,
    out_dir,
    config_hash: str = "",
    resume: dict | None = None,
    log_name: str = "metrics.jsonl",
) -> Path:
    """Alternating discriminator/generator updates over sampled sequences.

    Writes one structured record per iteration to the metrics log, periodic
    checkpoints, and returns the final checkpoint path. A non-finite loss
    aborts with a reference to the last good checkpoint.
    """
    if not dataset:
        raise DataError("training dataset is empty")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    prepared = [_prepare(ex) for ex in dataset]

    opt_g = torch.optim.Adam(
        list(models.generator_parameters()), lr=cfg.lr_generator, betas=(cfg.beta1, cfg.beta2)
    )
    opt_d = torch.optim.Adam(
        list(models.discriminator_parameters()),
        lr=cfg.lr_discriminator,
        betas=(cfg.beta1, cfg.beta2),
    )
    start_iter = 0
    if resume is not None:
        _load_optimizer(opt_g, resume["optimizers"]["generator"])
        _load_optimizer(opt_d, resume["optimizers"]["discriminator"])
        start_iter = int(resume["iteration"])
        if start_iter >= cfg.iterations:
            raise ConfigError(
                f"checkpoint is already at iteration {start_iter}; configured "
                f"iterations = {cfg.iterations} leaves nothing to train"
            )

    log_path = out_dir / log_name
    log_mode = "a" if start_iter else "w"
    last_good: Path | None = None
    with open(log_path, log_mode) as log:
        if not start_iter:
            header = {"config_hash": config_hash, "iterations": cfg.iterations, "seed": cfg.seed}
            log.write(json.dumps(header, sort_keys=True) + "\n")
        for it in range(start_iter, cfg.iterations):
            t0 = time.monotonic()
            rng = random.Random(mix_seed(cfg.seed, "batch", it))
            batch = [prepared[rng.randrange(len(prepared))] for _ in range(cfg.batch_size)]
            rollouts = [
                rollout(models, p.example.sequence, mix_seed(cfg.seed, "roll", it, j))
                for j, p in enumerate(batch)
            ]

            d_report = _discriminator_step(models, opt_d, batch, rollouts)
            g_total, g_report = _generator_step(models, opt_g, cfg.weights, batch, rollouts)

            record = {
                "iter": it,
                "g_total": g_total,
                **{f"g_{k}": v for k, v in g_report.items() if k != "total"},
                **d_report,
                "seconds": round(time.monotonic() - t0, 4),
            }
            if not all(np.isfinite(v) for k, v in record.items() if k != "iter"):
                ref = str(last_good) if last_good else "none"
                raise NumericError(
                    f"non-finite loss at iteration {it}; last good checkpoint: {ref}"
                )
            log.write(json.dumps(record, sort_keys=True) + "\n")
            log.flush()

            if (it + 1) % cfg.checkpoint_every == 0 or it + 1 == cfg.iterations:
                last_good = out_dir / f"checkpoint_{it + 1:06d}.pkl"
                save_checkpoint(last_good, models, opt_g, opt_d, it + 1, config_hash)
    assert last_good is not None
    return last_good


def _discriminator_step(models, opt_d, batch, rollouts) -> dict[str, float]:
    real_images = torch.stack([p.image for p in batch])
    fake_images = torch.stack([s.image.detach() for steps in rollouts for s in steps])
    d_real = models.d_image(real_images)
    d_fake = models.d_image(fake_images)
    image_term = gan_loss(d_real, d_fake, "discriminator")

    real_boxes = torch.cat([p.box_tensor for p in batch])
    real_index = torch.cat(
        [torch.full((p.box_tensor.shape[0],), i, dtype=torch.long) for i, p in enumerate(batch)]
    )
    real_cats = torch.cat([p.categories for p in batch])
    real_out = models.d_object(real_images, real_boxes, real_index)
    fk_images, fk_boxes, fk_index, _ = _fake_object_batch(rollouts, detach=True)
    fake_out = models.d_object(fk_images, fk_boxes, fk_index)
    object_term = gan_loss(real_out.realism, fake_out.realism, "discriminator")
    aux_term = aux_classifier_loss(real_out.class_logits, real_cats)

    loss = image_term + object_term + aux_term
    opt_d.zero_grad()
    loss.backward()
    opt_d.step()
    return {
        "d_image": float(image_term.detach()),
        "d_object": float(object_term.detach()),
        "d_aux": float(aux_term.detach()),
    }


def _generator_step(models, opt_g, weights, batch, rollouts) -> tuple[float, dict[str, float]]:
    fake_images = torch.stack([s.image for steps in rollouts for s in steps])
    image_logits = models.d_image(fake_images)
    fk_images, fk_boxes, fk_index, fk_cats = _fake_object_batch(rollouts, detach=False)
    obj_out = models.d_object(fk_images, fk_boxes, fk_index)

    totals = []
    sums: dict[str, float] = {}
    img_i = 0
    obj_i = 0
    for p, steps in zip(batch, rollouts):
        inputs = []
        for s in steps:
            n = len(s.layouts)
            inputs.append(
                StepLossInputs(
                    image=s.image,
                    layouts=s.layouts,
                    image_logits=image_logits[img_i],
                    object_logits=obj_out.realism[obj_i : obj_i + n],
                    object_class_logits=obj_out.class_logits[obj_i : obj_i + n],
                    object_categories=fk_cats[obj_i : obj_i + n],
                )
            )
            img_i += 1
            obj_i += n
        targets = SequenceTargets(image=p.image, boxes=p.boxes, masks=p.masks)
        total, report = total_generator_loss(inputs, targets, weights, models.perceptual)
        totals.append(total)
        for k, v in report.items():
            sums[k] = sums.get(k, 0.0) + v
    loss = torch.stack(totals).mean()
    opt_g.zero_grad()
    loss.backward()
    opt_g.step()
    mean_report = {k: v / len(batch) for k, v in sums.items()}
    return float(loss.detach()), mean_report


# --- checkpointing -----------------------------------------------------------


def _optimizer_to_numpy(opt) -> dict:
    def conv(v):
        if isinstance(v, torch.Tensor):
            return {"__tensor__": v.detach().cpu().numpy()}
        if isinstance(v, dict):
            return {k: conv(x) for k, x in v.items()}
        if isinstance(v, (list, tuple)):
            return [conv(x) for x in v]
        return v

    return conv(opt.state_dict())


def _load_optimizer(opt, state: dict) -> None:
    def conv(v):
        if isinstance(v, dict):
            if "__tensor__" in v:
                # .copy() keeps 0-dim arrays 0-dim (ascontiguousarray would
                # promote them to 1-dim and change the re-saved bytes)
                return torch.from_numpy(v["__tensor__"].copy())
            return {k: conv(x) for k, x in v.items()}
        if isinstance(v, list):
            return [conv(x) for x in v]
        return v

    opt.load_state_dict(conv(state))


def save_checkpoint(
    path, models: Models, opt_g, opt_d, iteration: int, config_hash: str = ""
) -> None:
    archive = {
        "format": CHECKPOINT_FORMAT,
        "config_hash": config_hash,
        "iteration": int(iteration),
        "vocabulary": {
            "categories": list(models.vocab.categories),
            "predicates": list(models.vocab.predicates),
            "version": models.vocab.version,
        },
        "gcn_config": asdict(models.gcn.cfg),
        "crn_config": asdict(models.crn.cfg),
        "mask_size": models.layout.mask_size,
        "crop_size": models.d_object.crop_size,
        "weights": {
            name: state_to_numpy(module)
            for name, module in models.named_modules_for_state().items()
        },
        "optimizers": {
            "generator": _optimizer_to_numpy(opt_g) if opt_g is not None else None,
            "discriminator": _optimizer_to_numpy(opt_d) if opt_d is not None else None,
        },
    }
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as f:
        pickle.dump(archive, f, protocol=4)
    tmp.replace(path)


def load_checkpoint(path, expected_config_hash: str | None = None) -> dict:
    path = Path(path)
    if not path.exists():
        raise DataError(f"checkpoint not found: {path}")
    try:
        with open(path, "rb") as f:
            archive = pickle.load(f)
    except (pickle.UnpicklingError, EOFError) as exc:
        raise DataError(f"corrupt checkpoint {path}: {exc}") from exc
    if not isinstance(archive, dict) or archive.get("format") != CHECKPOINT_FORMAT:
        raise DataError(f"checkpoint {path} has unknown format")
    if expected_config_hash is not None and archive["config_hash"] != expected_config_hash:
        raise ConfigError(
            f"checkpoint config hash {archive['config_hash']!r} does not match "
            f"current configuration {expected_config_hash!r}"
        )
    return archive


def models_from_checkpoint(archive: dict, seed: int = 0) -> Models:
    vocab = Vocabulary(
        categories=tuple(archive["vocabulary"]["categories"]),
        predicates=tuple(archive["vocabulary"]["predicates"]),
        version=archive["vocabulary"]["version"],
    )
    gcn_cfg = GcnConfig(**archive["gcn_config"])
    crn_raw = dict(archive["crn_config"])
    crn_raw["channels"] = tuple(crn_raw["channels"])
    crn_cfg = CrnConfig(**crn_raw)
    models = build_models(
        vocab,
        gcn_cfg,
        crn_cfg,
        seed=seed,
        mask_size=int(archive["mask_size"]),
        crop_size=int(archive["crop_size"]),
    )
    for name, module in models.named_modules_for_state().items():
        state_from_numpy(module, archive["weights"][name], owner=name)
    return models
