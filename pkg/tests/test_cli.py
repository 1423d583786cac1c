import json

import numpy as np
import pytest
from click.testing import CliRunner

from isggen import dataio, metrics, trainer
from isggen.cli import main
from isggen.config import canonical_json
from isggen.crn import CrnConfig
from isggen.gcn import GcnConfig
from isggen.sgraph import Box, Edge, Node, SceneGraph, Vocabulary

TINY_SET = (
    "--set", "gcn.embed_dim=32",
    "--set", "gcn.num_layers=2",
    "--set", "gcn.hidden_dim=64",
    "--set", "crn.channels=32,24,16,12",
    "--set", "train.iterations=2",
    "--set", "train.batch_size=2",
    "--set", "train.checkpoint_every=1",
    "--set", "train.seed=5",
)


def invoke(*args):
    return CliRunner().invoke(main, [str(a) for a in args])


def write_external_fixture(tmp_path):
    """A two-category dataset + matching checkpoint that is not the synth
    vocabulary, for exercising vocabulary guards."""
    vocab = Vocabulary.create(["widget", "gadget"], version="external-v1")
    models = trainer.build_models(
        vocab, GcnConfig(16, 1, 32), CrnConfig(4, 64, (16, 12, 8, 8), 8), seed=2
    )
    ckpt = tmp_path / "ext.pkl"
    trainer.save_checkpoint(ckpt, models, None, None, 0, "exthash")

    root = tmp_path / "extdata"
    root.mkdir()
    dataio.save_vocabulary(root / "vocabulary.json", vocab)
    img = dataio.AnnotatedImage(
        image_id="ext-0",
        pixels=np.full((64, 64, 3), 0.5, dtype=np.float32),
        objects=(
            dataio.ObjectAnnotation(category=0, box=Box(0.1, 0.1, 0.4, 0.4)),
            dataio.ObjectAnnotation(category=1, box=Box(0.5, 0.1, 0.8, 0.4)),
            dataio.ObjectAnnotation(category=0, box=Box(0.3, 0.6, 0.6, 0.9)),
        ),
    )
    graph = SceneGraph(
        nodes=(Node(0, 0), Node(1, 1), Node(2, 0)),
        edges=(Edge(0, 0, 1), Edge(1, 2, 2)),
    )
    ex = dataio.example_from_graph(img, graph, seed=0, spec=dataio.DatasetSpec())
    dataio.save_example(root, ex, vocab)
    manifest = {
        "config_hash": "exthash",
        "source": "external",
        "seed": 0,
        "entries": [{"id": "ext-0", "nodes": 3, "edges": 2, "steps": 3}],
        "filter_stats": {"images_seen": 1, "images_kept": 1, "objects_removed": 0},
    }
    (root / "manifest.json").write_text(canonical_json(manifest))
    return ckpt, root


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("data") / "synth"
    result = invoke(
        "prepare", "--source", "synth", "--out", out, "--count", "12", "--seed", "4",
        "--set", "dataset.max_objects=5",
    )
    assert result.exit_code == 0, result.output
    return out


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory, data_dir):
    out = tmp_path_factory.mktemp("run")
    result = invoke("train", "--data", data_dir, "--out", out, *TINY_SET)
    assert result.exit_code == 0, result.output
    assert "final checkpoint" in result.output
    return out


@pytest.fixture(scope="module")
def checkpoint(run_dir):
    return run_dir / "checkpoint_000002.pkl"


@pytest.fixture(scope="module")
def classifier_cache(tmp_path_factory, shapes_classifier):
    path = tmp_path_factory.mktemp("clf") / "classifier.pkl"
    metrics.save_classifier(path, shapes_classifier)
    return path


class TestPrepare:
    def test_manifest_counts_and_layout(self, data_dir):
        manifest = json.loads((data_dir / "manifest.json").read_text())
        assert manifest["source"] == "synth"
        assert manifest["seed"] == 4
        assert len(manifest["entries"]) == 12
        assert manifest["filter_stats"]["images_seen"] == 12
        assert manifest["filter_stats"]["images_kept"] == 12
        for entry in manifest["entries"]:
            assert (data_dir / "examples" / entry["id"] / "image.png").exists()
            assert (data_dir / "examples" / entry["id"] / "sequence.json").exists()
            assert (data_dir / "examples" / entry["id"] / "targets.json").exists()
            assert entry["steps"] == 3
        assert (data_dir / "vocabulary.json").exists()

    def test_requested_count_produces_that_many_entries(self, tmp_path):
        out = tmp_path / "n64"
        result = invoke("prepare", "--out", out, "--count", "64", "--seed", "1")
        assert result.exit_code == 0, result.output
        manifest = json.loads((out / "manifest.json").read_text())
        assert len(manifest["entries"]) == 64

    def test_rerun_writes_identical_manifest(self, data_dir, tmp_path):
        again = tmp_path / "again"
        result = invoke(
            "prepare", "--source", "synth", "--out", again, "--count", "12", "--seed", "4",
            "--set", "dataset.max_objects=5",
        )
        assert result.exit_code == 0, result.output
        assert (again / "manifest.json").read_bytes() == (data_dir / "manifest.json").read_bytes()

    def test_prepared_dataset_loads(self, data_dir):
        ds = dataio.load_dataset(data_dir)
        assert len(ds) == 12
        for ex in ds:
            assert len(ex.sequence.steps) == 3
            assert set(ex.boxes) == ex.sequence.steps[-1].node_ids()

    def test_unknown_config_key_exits_2(self, tmp_path):
        result = invoke("prepare", "--out", tmp_path / "x", "--set", "nonsense.key=1")
        assert result.exit_code == 2
        assert "error:" in result.stderr

    def test_bad_count_exits_2(self, tmp_path):
        result = invoke("prepare", "--out", tmp_path / "x", "--count", "0")
        assert result.exit_code == 2

    def test_coco_requires_annotations(self, tmp_path):
        result = invoke("prepare", "--source", "coco", "--out", tmp_path / "x")
        assert result.exit_code == 2
        assert "annotations" in result.stderr

    def test_coco_source(self, tmp_path):
        doc = {
            "images": [{"id": 1, "width": 100, "height": 100}],
            "annotations": [
                {"image_id": 1, "category_id": 7, "bbox": [10.0, 10.0, 30.0, 30.0]},
                {"image_id": 1, "category_id": 7, "bbox": [55.0, 10.0, 30.0, 30.0]},
                {"image_id": 1, "category_id": 9, "bbox": [10.0, 55.0, 30.0, 30.0]},
            ],
            "categories": [{"id": 7, "name": "widget"}, {"id": 9, "name": "gadget"}],
        }
        ann = tmp_path / "ann.json"
        ann.write_text(json.dumps(doc))
        out = tmp_path / "coco"
        result = invoke("prepare", "--source", "coco", "--out", out, "--annotations", ann)
        assert result.exit_code == 0, result.output
        manifest = json.loads((out / "manifest.json").read_text())
        assert len(manifest["entries"]) == 1
        vocab = dataio.load_vocabulary(out / "vocabulary.json")
        assert vocab.categories == ("widget", "gadget")


class TestTrain:
    def test_metrics_log_written(self, run_dir):
        lines = (run_dir / "metrics.jsonl").read_text().splitlines()
        header = json.loads(lines[0])
        assert header["iterations"] == 2
        assert len(lines) == 3

    def test_missing_dataset_exits_3(self, tmp_path):
        result = invoke("train", "--data", tmp_path / "nope", "--out", tmp_path / "o", *TINY_SET)
        assert result.exit_code == 3

    def test_shape_mismatch_exits_2(self, data_dir, tmp_path):
        result = invoke(
            "train", "--data", data_dir, "--out", tmp_path / "o",
            *TINY_SET, "--set", "dataset.image_size=32",
        )
        assert result.exit_code == 2
        assert "image_size" in result.stderr

    def test_nan_during_training_exits_4(self, data_dir, tmp_path, monkeypatch):
        def poisoned(models, opt_g, weights, batch, rollouts):
            report = {
                k: float("nan")
                for k in ("gan", "box", "mask", "pixel", "pixel_step", "perceptual")
            }
            return float("nan"), report

        monkeypatch.setattr(trainer, "_generator_step", poisoned)
        result = invoke("train", "--data", data_dir, "--out", tmp_path / "o", *TINY_SET)
        assert result.exit_code == 4
        assert "non-finite" in result.stderr

    def test_resume_with_wrong_config_exits_2(self, data_dir, checkpoint, tmp_path):
        result = invoke(
            "train", "--data", data_dir, "--out", tmp_path / "o", "--resume", checkpoint,
            *TINY_SET, "--set", "train.seed=6",
        )
        assert result.exit_code == 2
        assert "hash" in result.stderr


class TestGenerate:
    def test_writes_step_images_and_doc(self, data_dir, checkpoint, tmp_path):
        manifest = json.loads((data_dir / "manifest.json").read_text())
        seq_file = data_dir / "examples" / manifest["entries"][0]["id"] / "sequence.json"
        out = tmp_path / "gen"
        result = invoke(
            "generate", "--checkpoint", checkpoint, "--sequence", seq_file, "--out", out,
            "--seed", "3",
        )
        assert result.exit_code == 0, result.output
        doc = json.loads((out / "generation.json").read_text())
        assert doc["images"] == ["step_0.png", "step_1.png", "step_2.png"]
        assert doc["independent"] is False
        assert doc["seed"] == 3
        for name in doc["images"]:
            img = dataio.load_image(out / name)
            assert img.shape == (64, 64, 3)

    def test_independent_flag_changes_later_steps(self, data_dir, checkpoint, tmp_path):
        manifest = json.loads((data_dir / "manifest.json").read_text())
        seq_file = data_dir / "examples" / manifest["entries"][1]["id"] / "sequence.json"
        a, b = tmp_path / "dep", tmp_path / "ind"
        r1 = invoke("generate", "--checkpoint", checkpoint, "--sequence", seq_file, "--out", a)
        r2 = invoke(
            "generate", "--checkpoint", checkpoint, "--sequence", seq_file, "--out", b,
            "--independent",
        )
        assert r1.exit_code == 0 and r2.exit_code == 0
        assert json.loads((b / "generation.json").read_text())["independent"] is True
        assert (a / "step_0.png").read_bytes() == (b / "step_0.png").read_bytes()
        assert (a / "step_1.png").read_bytes() != (b / "step_1.png").read_bytes()

    def test_missing_checkpoint_exits_3(self, data_dir, tmp_path):
        manifest = json.loads((data_dir / "manifest.json").read_text())
        seq_file = data_dir / "examples" / manifest["entries"][0]["id"] / "sequence.json"
        result = invoke(
            "generate", "--checkpoint", tmp_path / "none.pkl", "--sequence", seq_file,
            "--out", tmp_path / "o",
        )
        assert result.exit_code == 3

    def test_malformed_sequence_exits_3(self, checkpoint, tmp_path):
        bad = tmp_path / "seq.json"
        bad.write_text('{"vocabulary_version": "synth-shapes-v1", "steps": "no"}')
        result = invoke(
            "generate", "--checkpoint", checkpoint, "--sequence", bad, "--out", tmp_path / "o"
        )
        assert result.exit_code == 3


class TestEval:
    def test_consistency_reports_both_modes(self, data_dir, checkpoint, tmp_path):
        out = tmp_path / "report.json"
        result = invoke(
            "eval", "--checkpoint", checkpoint, "--dataset", data_dir,
            "--metric", "consistency", "--out", out,
        )
        assert result.exit_code == 0, result.output
        doc = json.loads(out.read_text())
        assert doc["metric"] == "consistency"
        assert len(doc["value"]["incremental"]) == 2
        assert len(doc["value"]["independent"]) == 2
        assert all(v >= 0 for v in doc["value"]["incremental"])
        assert doc["dataset_id"]
        assert json.loads(result.output) == doc

    def test_inception_score_per_step(self, data_dir, checkpoint, classifier_cache, tmp_path):
        out = tmp_path / "is.json"
        result = invoke(
            "eval", "--checkpoint", checkpoint, "--dataset", data_dir, "--metric", "is",
            "--splits", "4", "--classifier", classifier_cache, "--out", out,
        )
        assert result.exit_code == 0, result.output
        doc = json.loads(out.read_text())
        assert doc["metric"] == "is"
        per_step = doc["value"]["per_step"]
        assert len(per_step) == 3
        assert all(0.99 <= v <= 12.01 for v in per_step)
        assert doc["stddev"] >= 0.0

    def test_existing_classifier_cache_is_reused_untouched(
        self, data_dir, checkpoint, classifier_cache
    ):
        before = classifier_cache.read_bytes()
        result = invoke(
            "eval", "--checkpoint", checkpoint, "--dataset", data_dir, "--metric", "is",
            "--splits", "4", "--classifier", classifier_cache,
        )
        assert result.exit_code == 0
        assert classifier_cache.read_bytes() == before

    def test_is_rejects_non_synth_vocabulary(self, tmp_path):
        ckpt, root = write_external_fixture(tmp_path)
        result = invoke(
            "eval", "--checkpoint", ckpt, "--dataset", root, "--metric", "is", "--splits", "1"
        )
        assert result.exit_code == 3
        assert "synthetic" in result.stderr

    def test_vocab_mismatch_exits_2(self, data_dir, tmp_path):
        vocab = Vocabulary.create(["widget"], version="external-v1")
        models = trainer.build_models(
            vocab, GcnConfig(16, 1, 32), CrnConfig(4, 64, (16, 12, 8, 8), 8), seed=3
        )
        ckpt = tmp_path / "mismatch.pkl"
        trainer.save_checkpoint(ckpt, models, None, None, 0, "h")
        result = invoke(
            "eval", "--checkpoint", ckpt, "--dataset", data_dir, "--metric", "consistency"
        )
        assert result.exit_code == 2
        assert "vocabulary" in result.stderr


def test_serve_rejects_bad_addr(tmp_path, checkpoint):
    result = invoke("serve", "--checkpoint", checkpoint, "--store", tmp_path, "--addr", "nope")
    assert result.exit_code == 2
    assert "host:port" in result.stderr
