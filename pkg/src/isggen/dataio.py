"""Dataset ingestion and the deterministic synthetic shapes corpus.

Annotated images come either from COCO-format annotation documents or from the
built-in shapes renderer; both pass through the same area / object-count
filters before becoming training examples.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterator

import numpy as np
from PIL import Image, ImageDraw

from . import sgraph
from .errors import DataError, ValidationError
from .sgraph import Box, GraphSequence, SceneGraph, Vocabulary, mix_seed

SHAPE_NAMES = ("square", "circle", "triangle")
COLOR_NAMES = ("red", "green", "blue", "yellow")
_COLORS = {
    "red": (0.85, 0.15, 0.15),
    "green": (0.15, 0.7, 0.2),
    "blue": (0.2, 0.3, 0.85),
    "yellow": (0.9, 0.85, 0.15),
}


@dataclass(frozen=True)
class ObjectAnnotation:
    category: int
    box: Box
    mask: np.ndarray | None = None  # boolean raster at image resolution


@dataclass(frozen=True)
class AnnotatedImage:
    image_id: str
    pixels: np.ndarray  # (H, W, 3) float32 in [0, 1]
    objects: tuple[ObjectAnnotation, ...]

    def __post_init__(self):
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise ValidationError(f"pixels must be (H, W, 3), got {self.pixels.shape}")
        h, w = self.pixels.shape[:2]
        for i, obj in enumerate(self.objects):
            if obj.mask is not None and obj.mask.shape != (h, w):
                raise ValidationError(
                    f"object {i} mask shape {obj.mask.shape} != image raster ({h}, {w})"
                )


@dataclass(frozen=True)
class DatasetSpec:
    min_object_area_fraction: float = 0.02
    min_objects: int = 3
    max_objects: int = 8
    image_size: int = 64
    split: str = "train"
    mask_size: int = 16

    def __post_init__(self):
        if not (0.0 <= self.min_object_area_fraction < 1.0):
            raise ValidationError("min_object_area_fraction must be in [0, 1)")
        if self.min_objects > self.max_objects:
            raise ValidationError("min_objects must be <= max_objects")


@dataclass(frozen=True)
class TrainingExample:
    """One incremental-generation training case.

    Supervision exists only for the final step's image; boxes and masks are
    known for every object. There is deliberately no slot for per-step images.
    """

    example_id: str
    sequence: GraphSequence
    image: np.ndarray  # (H, W, 3) float32 in [0, 1]; final-step target
    boxes: dict[int, Box]
    masks: dict[int, np.ndarray]  # node_id -> (M, M) float32 in [0, 1]


@dataclass
class FilterStats:
    images_seen: int = 0
    images_kept: int = 0
    objects_removed: int = 0


def object_area_fraction(obj: ObjectAnnotation) -> float:
    """Fraction of the image the object covers: mask pixels when available,
    box area otherwise."""
    if obj.mask is not None:
        return float(obj.mask.sum()) / obj.mask.size
    return obj.box.area


def filter_objects(img: AnnotatedImage, spec: DatasetSpec) -> AnnotatedImage:
    kept = tuple(
        o for o in img.objects if object_area_fraction(o) >= spec.min_object_area_fraction
    )
    if len(kept) == len(img.objects):
        return img
    return replace(img, objects=kept)


def passes_count_filter(img: AnnotatedImage, spec: DatasetSpec) -> bool:
    return spec.min_objects <= len(img.objects) <= spec.max_objects


def _read_annotation_doc(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise DataError(f"annotation file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"annotation file is not valid JSON: {exc}") from exc
    return doc


def _category_map(doc) -> tuple[tuple[str, ...], dict[int, int]]:
    """Category names in declared-id order plus category_id -> index."""
    cats = doc.get("categories")
    if isinstance(cats, list) and cats:
        recs = []
        for i, rec in enumerate(cats):
            if not isinstance(rec, dict) or "id" not in rec:
                raise DataError(f"categories[{i}]: record has no id")
            recs.append((int(rec["id"]), str(rec.get("name", f"category {rec['id']}"))))
        recs.sort()
        names = tuple(name for _, name in recs)
        return names, {cid: i for i, (cid, _) in enumerate(recs)}
    ids = sorted({int(a["category_id"]) for a in doc.get("annotations", []) if "category_id" in a})
    return tuple(f"category {cid}" for cid in ids), {cid: i for i, cid in enumerate(ids)}


def annotation_vocabulary(path) -> Vocabulary:
    names, _ = _category_map(_read_annotation_doc(path))
    if not names:
        raise DataError(f"annotation file declares no categories: {path}")
    return Vocabulary.create(names)


def load_annotations(
    path, spec: DatasetSpec, images_dir=None, stats: FilterStats | None = None
) -> Iterator[AnnotatedImage]:
    """Stream filtered images from a COCO-format annotation document.

    Boxes are [x, y, w, h] in pixels; polygon segmentations are rasterized;
    category ids are remapped to contiguous vocabulary indices. When
    images_dir is omitted, pixel rasters are zero-filled placeholders.
    """
    doc = _read_annotation_doc(path)
    _, cat_index = _category_map(doc)
    images = doc.get("images", [])
    annotations = doc.get("annotations", [])
    by_image: dict[int, list] = {}
    info: dict[int, dict] = {}
    for i, rec in enumerate(images):
        if not isinstance(rec, dict) or "id" not in rec:
            raise DataError(f"images[{i}]: record has no id")
        info[rec["id"]] = rec
        by_image[rec["id"]] = []
    for i, ann in enumerate(annotations):
        if not isinstance(ann, dict) or "image_id" not in ann or "bbox" not in ann:
            raise DataError(f"annotations[{i}]: record missing image_id or bbox")
        if ann["image_id"] not in info:
            raise DataError(
                f"annotations[{i}]: image_id {ann['image_id']} has no matching image record"
            )
        by_image[ann["image_id"]].append((i, ann))

    size = spec.image_size
    for image_id in info:
        rec = info[image_id]
        width, height = rec.get("width"), rec.get("height")
        if not width or not height:
            raise DataError(f"image record {image_id}: missing width/height")
        pixels = _load_pixels(rec, images_dir, size)
        objects = []
        for i, ann in by_image[image_id]:
            objects.append(_decode_annotation(i, ann, width, height, size, cat_index))
        img = AnnotatedImage(
            image_id=str(image_id), pixels=pixels, objects=tuple(objects)
        )
        filtered = filter_objects(img, spec)
        if stats is not None:
            stats.images_seen += 1
            stats.objects_removed += len(img.objects) - len(filtered.objects)
        if passes_count_filter(filtered, spec):
            if stats is not None:
                stats.images_kept += 1
            yield filtered


def _load_pixels(rec: dict, images_dir, size: int) -> np.ndarray:
    if images_dir is not None and rec.get("file_name"):
        fp = Path(images_dir) / rec["file_name"]
        if not fp.exists():
            raise DataError(f"image file not found: {fp}")
        with Image.open(fp) as im:
            im = im.convert("RGB").resize((size, size), Image.BILINEAR)
            return np.asarray(im, dtype=np.float32) / 255.0
    return np.zeros((size, size, 3), dtype=np.float32)


def _decode_annotation(
    index: int, ann: dict, width, height, size: int, cat_index: dict[int, int]
) -> ObjectAnnotation:
    bbox = ann["bbox"]
    if not (isinstance(bbox, list) and len(bbox) == 4):
        raise DataError(f"annotations[{index}].bbox: expected [x, y, w, h]")
    x, y, w, h = (float(v) for v in bbox)
    if w <= 0 or h <= 0:
        raise DataError(f"annotations[{index}].bbox: non-positive extent")
    try:
        box = Box(x / width, y / height, (x + w) / width, (y + h) / height)
    except ValidationError as exc:
        raise DataError(f"annotations[{index}].bbox: {exc}") from exc
    if "category_id" not in ann:
        raise DataError(f"annotations[{index}]: missing category_id")
    if int(ann["category_id"]) not in cat_index:
        raise DataError(f"annotations[{index}]: category_id {ann['category_id']} is not declared")
    mask = None
    seg = ann.get("segmentation")
    if isinstance(seg, list) and seg:
        mask = _rasterize_polygons(seg, width, height, size, index)
    return ObjectAnnotation(category=cat_index[int(ann["category_id"])], box=box, mask=mask)


def _rasterize_polygons(seg, width, height, size: int, index: int) -> np.ndarray:
    im = Image.new("1", (size, size), 0)
    draw = ImageDraw.Draw(im)
    for poly in seg:
        if not (isinstance(poly, list) and len(poly) >= 6 and len(poly) % 2 == 0):
            raise DataError(f"annotations[{index}].segmentation: malformed polygon")
        pts = [
            (poly[i] / width * size, poly[i + 1] / height * size)
            for i in range(0, len(poly), 2)
        ]
        draw.polygon(pts, fill=1)
    return np.asarray(im, dtype=bool)


def synth_vocabulary() -> Vocabulary:
    cats = tuple(f"{c} {s}" for c in COLOR_NAMES for s in SHAPE_NAMES)
    return Vocabulary.create(cats, version="synth-shapes-v1")


def _shape_mask(shape: str, cx: float, cy: float, half: float, size: int) -> np.ndarray:
    ys, xs = np.mgrid[0:size, 0:size]
    # pixel centers in normalized coordinates
    px = (xs + 0.5) / size
    py = (ys + 0.5) / size
    if shape == "square":
        return (np.abs(px - cx) <= half) & (np.abs(py - cy) <= half)
    if shape == "circle":
        return (px - cx) ** 2 + (py - cy) ** 2 <= half**2
    if shape == "triangle":
        # upward isoceles triangle inscribed in the 2*half box
        inside_y = (py >= cy - half) & (py <= cy + half)
        t = (py - (cy - half)) / (2 * half)  # 0 at apex, 1 at base
        return inside_y & (np.abs(px - cx) <= t * half)
    raise ValidationError(f"unknown shape {shape!r}")


def _mask_box(mask: np.ndarray) -> Box:
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    size_y, size_x = mask.shape
    return Box(
        cols[0] / size_x,
        rows[0] / size_y,
        (cols[-1] + 1) / size_x,
        (rows[-1] + 1) / size_y,
    )


def synth_shapes(
    count: int, seed: int, spec: DatasetSpec, edge_density: float = 1.0
) -> list[tuple[AnnotatedImage, SceneGraph]]:
    """Render deterministic scenes of colored primitives with exact boxes,
    masks, and a relation graph known by construction."""
    if count < 1:
        raise ValidationError("count must be >= 1")
    vocab = synth_vocabulary()
    out = []
    size = spec.image_size
    for i in range(count):
        rng = np.random.default_rng(mix_seed(seed, "synth", i))
        n_obj = int(rng.integers(spec.min_objects, spec.max_objects + 1))
        shade = float(rng.uniform(0.82, 0.95))
        pixels = np.full((size, size, 3), shade, dtype=np.float32)
        objects = []
        graph_objs = []
        for j in range(n_obj):
            color = COLOR_NAMES[int(rng.integers(len(COLOR_NAMES)))]
            shape = SHAPE_NAMES[int(rng.integers(len(SHAPE_NAMES)))]
            # half-extent in [0.11, 0.19] keeps every shape's area above 2%
            half = float(rng.uniform(0.11, 0.19))
            cx = float(rng.uniform(half, 1 - half))
            cy = float(rng.uniform(half, 1 - half))
            mask = _shape_mask(shape, cx, cy, half, size)
            pixels[mask] = _COLORS[color]
            box = _mask_box(mask)
            category = vocab.category_index(f"{color} {shape}")
            objects.append(ObjectAnnotation(category=category, box=box, mask=mask))
            graph_objs.append((j, category, box))
        graph = sgraph.build_graph(graph_objs, edge_density, seed=mix_seed(seed, "graph", i))
        img = AnnotatedImage(
            image_id=f"synth-{seed}-{i:05d}", pixels=pixels, objects=tuple(objects)
        )
        out.append((img, graph))
    return out


def _mask_target(obj: ObjectAnnotation, image_size: int, mask_size: int) -> np.ndarray:
    """Per-object soft mask target: the raster cropped to the box, resized to
    mask_size^2. Objects without a raster fill their box."""
    if obj.mask is None:
        return np.ones((mask_size, mask_size), dtype=np.float32)
    h, w = obj.mask.shape
    x0 = int(np.floor(obj.box.x0 * w))
    x1 = max(x0 + 1, int(np.ceil(obj.box.x1 * w)))
    y0 = int(np.floor(obj.box.y0 * h))
    y1 = max(y0 + 1, int(np.ceil(obj.box.y1 * h)))
    crop = obj.mask[y0:y1, x0:x1].astype(np.float32)
    im = Image.fromarray(crop, mode="F").resize((mask_size, mask_size), Image.BILINEAR)
    return np.clip(np.asarray(im, dtype=np.float32), 0.0, 1.0)


def example_from_graph(
    img: AnnotatedImage, graph: sgraph.SceneGraph, seed: int, spec: DatasetSpec, num_steps: int = 3
) -> TrainingExample:
    """Split an existing ground-truth graph into a monotone sequence and
    attach the image's targets. Node ids must be object positions."""
    seq = sgraph.make_splits(graph, mix_seed(seed, img.image_id, "splits"), num_steps)
    boxes = {j: o.box for j, o in enumerate(img.objects)}
    masks = {
        j: _mask_target(o, spec.image_size, spec.mask_size)
        for j, o in enumerate(img.objects)
    }
    if graph.node_ids() != set(boxes):
        raise ValidationError(
            f"image {img.image_id}: graph nodes do not match annotated objects"
        )
    return TrainingExample(
        example_id=img.image_id, sequence=seq, image=img.pixels, boxes=boxes, masks=masks
    )


def make_training_example(
    img: AnnotatedImage,
    seed: int,
    spec: DatasetSpec,
    num_steps: int = 3,
    edge_density: float = 1.0,
) -> TrainingExample:
    """Full graph over the image's objects, split into a monotone sequence;
    the image itself is the final step's only pixel target."""
    if not img.objects:
        raise ValidationError(f"image {img.image_id} has no objects")
    graph_objs = [(j, o.category, o.box) for j, o in enumerate(img.objects)]
    graph = sgraph.build_graph(
        graph_objs, edge_density, seed=mix_seed(seed, img.image_id, "edges")
    )
    return example_from_graph(img, graph, seed, spec, num_steps)


# --- image file helpers -----------------------------------------------------


def save_image(path, pixels01: np.ndarray) -> None:
    arr = np.clip(np.rint(pixels01 * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path, format="PNG")


def load_image(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0


# --- on-disk dataset layout ---------------------------------------------------
#   <root>/manifest.json
#   <root>/examples/<id>/image.png          final-step target
#   <root>/examples/<id>/sequence.json      scene-graph sequence document
#   <root>/examples/<id>/targets.json       per-object boxes and mask targets


def save_example(root, ex: TrainingExample, vocab: Vocabulary) -> None:
    d = Path(root) / "examples" / ex.example_id
    d.mkdir(parents=True, exist_ok=True)
    save_image(d / "image.png", ex.image)
    (d / "sequence.json").write_text(sgraph.serialize_sequence(ex.sequence, vocab))
    targets = {
        "boxes": {str(k): [b.x0, b.y0, b.x1, b.y1] for k, b in sorted(ex.boxes.items())},
        "masks": {str(k): np.round(m, 6).tolist() for k, m in sorted(ex.masks.items())},
    }
    (d / "targets.json").write_text(
        json.dumps(targets, sort_keys=True, separators=(",", ":"))
    )


def load_example(root, example_id: str, vocab: Vocabulary) -> TrainingExample:
    d = Path(root) / "examples" / example_id
    if not d.exists():
        raise DataError(f"example directory not found: {d}")
    image = load_image(d / "image.png")
    seq = sgraph.deserialize_sequence((d / "sequence.json").read_text(), vocab)
    targets = json.loads((d / "targets.json").read_text())
    boxes = {int(k): Box(*v) for k, v in targets["boxes"].items()}
    masks = {
        int(k): np.asarray(v, dtype=np.float32) for k, v in targets["masks"].items()
    }
    return TrainingExample(
        example_id=example_id, sequence=seq, image=image, boxes=boxes, masks=masks
    )


def save_vocabulary(path, vocab: Vocabulary) -> None:
    doc = {
        "categories": list(vocab.categories),
        "predicates": list(vocab.predicates),
        "version": vocab.version,
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, separators=(",", ":")))


def load_vocabulary(path) -> Vocabulary:
    path = Path(path)
    if not path.exists():
        raise DataError(f"vocabulary file not found: {path}")
    doc = json.loads(path.read_text())
    return Vocabulary(
        categories=tuple(doc["categories"]),
        predicates=tuple(doc["predicates"]),
        version=doc["version"],
    )


def load_manifest(root) -> dict:
    manifest_path = Path(root) / "manifest.json"
    if not manifest_path.exists():
        raise DataError(f"dataset manifest not found: {manifest_path}")
    return json.loads(manifest_path.read_text())


def load_dataset(root, vocab: Vocabulary | None = None) -> list[TrainingExample]:
    root = Path(root)
    if vocab is None:
        vocab = load_vocabulary(root / "vocabulary.json")
    manifest = load_manifest(root)
    return [load_example(root, e["id"], vocab) for e in manifest["entries"]]
