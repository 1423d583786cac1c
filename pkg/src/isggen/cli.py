"""Operator commands: dataset preparation, training, offline generation,
evaluation, and serving. Exit codes: 0 ok, 2 configuration error, 3 data
error, 4 numeric failure."""

from __future__ import annotations

import functools
import hashlib
import json
import sys
from pathlib import Path

import click
import numpy as np
import torch

from . import config as config_mod
from . import dataio, metrics, sgraph, trainer
from .errors import ConfigError, DataError, NumericError, ParseError, ValidationError


def _fail(exc: Exception, code: int):
    click.echo(f"error: {exc}", err=True)
    sys.exit(code)


def _mapped_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ConfigError as exc:
            _fail(exc, 2)
        except ParseError as exc:
            _fail(exc, 3)
        except DataError as exc:
            _fail(exc, 3)
        except NumericError as exc:
            _fail(exc, 4)
        except ValidationError as exc:
            _fail(exc, 2)

    return wrapper


def _overrides(pairs) -> dict:
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        out[key.strip()] = value.strip()
    return out


@click.group(context_settings={"auto_envvar_prefix": "ISGGEN"})
def main():
    """Incremental scene-graph-to-image generation toolchain."""


@main.command()
@click.option("--source", type=click.Choice(["synth", "coco"]), default="synth", show_default=True)
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--seed", default=0, type=int, show_default=True)
@click.option("--count", default=64, type=int, show_default=True, help="synth source only")
@click.option("--image-size", default=None, type=int, help="overrides dataset.image_size")
@click.option("--annotations", default=None, type=click.Path(), help="coco source only")
@click.option("--images-dir", default=None, type=click.Path(), help="coco source only")
@click.option("--config", "config_path", default=None, type=click.Path())
@click.option("--set", "set_pairs", multiple=True, help="dotted config override key=value")
@_mapped_errors
def prepare(source, out_dir, seed, count, image_size, annotations, images_dir, config_path, set_pairs):
    """Build a training dataset directory with a manifest."""
    overrides = _overrides(set_pairs)
    if image_size is not None:
        overrides["dataset.image_size"] = image_size
    cfg = config_mod.resolve(config_path, overrides)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    stats = dataio.FilterStats()
    examples = []
    if source == "synth":
        if count < 1:
            raise ConfigError("--count must be >= 1")
        vocab = dataio.synth_vocabulary()
        samples = dataio.synth_shapes(count, seed, cfg.dataset, cfg.edge_density)
        stats.images_seen = stats.images_kept = len(samples)
        for img, graph in samples:
            examples.append(
                dataio.example_from_graph(
                    img, graph, seed, cfg.dataset, cfg.train.steps_per_sequence
                )
            )
    else:
        if annotations is None:
            raise ConfigError("--annotations is required with --source coco")
        vocab = dataio.annotation_vocabulary(annotations)
        for img in dataio.load_annotations(annotations, cfg.dataset, images_dir, stats):
            examples.append(
                dataio.make_training_example(
                    img, seed, cfg.dataset, cfg.train.steps_per_sequence, cfg.edge_density
                )
            )

    for ex in examples:
        dataio.save_example(out, ex, vocab)
    dataio.save_vocabulary(out / "vocabulary.json", vocab)
    manifest = {
        "config_hash": cfg.config_hash,
        "source": source,
        "seed": seed,
        "entries": [
            {
                "id": ex.example_id,
                "nodes": len(ex.sequence.steps[-1].nodes),
                "edges": len(ex.sequence.steps[-1].edges),
                "steps": len(ex.sequence.steps),
            }
            for ex in examples
        ],
        "filter_stats": {
            "images_seen": stats.images_seen,
            "images_kept": stats.images_kept,
            "objects_removed": stats.objects_removed,
        },
    }
    (out / "manifest.json").write_text(config_mod.canonical_json(manifest))
    click.echo(f"prepared {len(examples)} examples in {out}")


@main.command()
@click.option("--config", "config_path", default=None, type=click.Path())
@click.option("--data", "data_dir", required=True, type=click.Path())
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--resume", "resume_path", default=None, type=click.Path())
@click.option("--set", "set_pairs", multiple=True, help="dotted config override key=value")
@_mapped_errors
def train(config_path, data_dir, out_dir, resume_path, set_pairs):
    """Train all networks on a prepared dataset."""
    cfg = config_mod.resolve(config_path, _overrides(set_pairs))
    config_mod.check_model_shapes(cfg)
    vocab = dataio.load_vocabulary(Path(data_dir) / "vocabulary.json")
    dataset = dataio.load_dataset(data_dir, vocab)

    resume = None
    if resume_path is not None:
        resume = trainer.load_checkpoint(resume_path, expected_config_hash=cfg.config_hash)
        models = trainer.models_from_checkpoint(resume)
        if models.vocab.version != vocab.version:
            raise ConfigError(
                f"checkpoint vocabulary {models.vocab.version!r} does not match "
                f"dataset vocabulary {vocab.version!r}"
            )
    else:
        models = trainer.build_models(
            vocab,
            cfg.gcn,
            cfg.crn,
            seed=cfg.train.seed,
            mask_size=cfg.dataset.mask_size,
            crop_size=cfg.crop_size,
        )
    final = trainer.train(
        dataset, cfg.train, models, out_dir, config_hash=cfg.config_hash, resume=resume
    )
    click.echo(f"final checkpoint: {final}")


@main.command()
@click.option("--checkpoint", required=True, type=click.Path())
@click.option("--sequence", "sequence_path", required=True, type=click.Path())
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--seed", default=0, type=int, show_default=True)
@click.option(
    "--independent",
    is_flag=True,
    help="re-render every step from scratch instead of growing the previous image",
)
@_mapped_errors
def generate(checkpoint, sequence_path, out_dir, seed, independent):
    """Render each step of a scene-graph sequence document."""
    archive = trainer.load_checkpoint(checkpoint)
    models = trainer.models_from_checkpoint(archive)
    seq_file = Path(sequence_path)
    if not seq_file.exists():
        raise DataError(f"sequence file not found: {seq_file}")
    seq = sgraph.deserialize_sequence(seq_file.read_text(), models.vocab)
    with torch.no_grad():
        steps = trainer.rollout(models, seq, seed, independent=independent)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = []
    for s in steps:
        name = f"step_{s.step_index}.png"
        arr = (np.transpose(s.image.numpy(), (1, 2, 0)) + 1.0) / 2.0
        dataio.save_image(out / name, arr)
        names.append(name)
    doc = {
        "checkpoint_config_hash": archive["config_hash"],
        "seed": seed,
        "independent": independent,
        "images": names,
    }
    (out / "generation.json").write_text(config_mod.canonical_json(doc))
    click.echo(f"wrote {len(names)} images to {out}")


@main.command(name="eval")
@click.option("--checkpoint", required=True, type=click.Path())
@click.option("--dataset", "dataset_dir", required=True, type=click.Path())
@click.option("--metric", type=click.Choice(["is", "consistency"]), required=True)
@click.option("--seed", default=0, type=int, show_default=True)
@click.option("--splits", default=10, type=int, show_default=True, help="is metric only")
@click.option("--classifier", "classifier_path", default=None, type=click.Path(), help="cache file for the desk classifier")
@click.option("--out", "out_path", default=None, type=click.Path())
@_mapped_errors
def eval_cmd(checkpoint, dataset_dir, metric, seed, splits, classifier_path, out_path):
    """Score a checkpoint on a prepared dataset and emit a report document."""
    archive = trainer.load_checkpoint(checkpoint)
    models = trainer.models_from_checkpoint(archive)
    vocab = dataio.load_vocabulary(Path(dataset_dir) / "vocabulary.json")
    if vocab.version != models.vocab.version:
        raise ConfigError(
            f"dataset vocabulary {vocab.version!r} does not match checkpoint "
            f"vocabulary {models.vocab.version!r}"
        )
    dataset = dataio.load_dataset(dataset_dir, vocab)
    manifest_bytes = (Path(dataset_dir) / "manifest.json").read_bytes()
    dataset_id = hashlib.sha256(manifest_bytes).hexdigest()[:12]

    with torch.no_grad():
        incremental = [
            trainer.rollout(models, ex.sequence, sgraph.mix_seed(seed, "eval", ex.example_id))
            for ex in dataset
        ]

    if metric == "consistency":
        with torch.no_grad():
            independent = [
                trainer.rollout(
                    models,
                    ex.sequence,
                    sgraph.mix_seed(seed, "eval", ex.example_id),
                    independent=True,
                )
                for ex in dataset
            ]
        value = {
            "incremental": metrics.consistency(incremental, models.perceptual),
            "independent": metrics.consistency(independent, models.perceptual),
        }
        report = metrics.EvalReport(
            metric="consistency",
            value=value,
            stddev=None,
            config_hash=archive["config_hash"],
            dataset_id=dataset_id,
        )
    else:
        if vocab.version != dataio.synth_vocabulary().version:
            raise DataError(
                "the desk classifier only understands the synthetic shapes vocabulary"
            )
        clf = None
        if classifier_path is not None and Path(classifier_path).exists():
            clf = metrics.load_classifier(classifier_path)
        if clf is None:
            clf = metrics.train_shapes_classifier(
                seed=seed, image_size=models.crn.cfg.output_resolution
            )
            if classifier_path is not None:
                metrics.save_classifier(classifier_path, clf)
        num_steps = len(incremental[0])
        per_step = []
        per_step_std = []
        for k in range(num_steps):
            imgs = np.stack(
                [
                    (np.transpose(r[k].image.numpy(), (1, 2, 0)) + 1.0) / 2.0
                    for r in incremental
                ]
            )
            mean, std = metrics.inception_score(imgs, clf, splits=splits)
            per_step.append(mean)
            per_step_std.append(std)
        report = metrics.EvalReport(
            metric="is",
            value={"per_step": per_step},
            stddev=None if not per_step_std else float(np.mean(per_step_std)),
            config_hash=archive["config_hash"],
            dataset_id=dataset_id,
        )

    text = config_mod.canonical_json(report.to_doc())
    if out_path:
        Path(out_path).write_text(text)
    click.echo(text)


@main.command()
@click.option("--checkpoint", required=True, type=click.Path())
@click.option("--addr", default="127.0.0.1:8000", show_default=True)
@click.option("--store", "store_dir", required=True, type=click.Path())
@_mapped_errors
def serve(checkpoint, addr, store_dir):
    """Host the session API over HTTP."""
    import uvicorn

    from .service import create_app

    if ":" not in addr:
        raise ConfigError(f"--addr must be host:port, got {addr!r}")
    host, port_text = addr.rsplit(":", 1)
    try:
        port = int(port_text)
    except ValueError:
        raise ConfigError(f"--addr port must be an integer, got {port_text!r}") from None
    app = create_app(checkpoint, store_dir)
    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main()
