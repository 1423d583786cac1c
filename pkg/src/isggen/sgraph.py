"""Scene-graph data model: vocabulary, geometric relations, incremental splits,
and the canonical JSON document format."""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass, field

from .errors import ParseError, ValidationError

GEOMETRIC_PREDICATES = (
    "left of",
    "right of",
    "above",
    "below",
    "inside",
    "surrounding",
)

LEFT_OF, RIGHT_OF, ABOVE, BELOW, INSIDE, SURROUNDING = range(6)


def mix_seed(*parts) -> int:
    """Stable 63-bit seed derived from arbitrary parts; identical across processes."""
    text = "\x1f".join(str(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") & (2**63 - 1)


@dataclass(frozen=True)
class Vocabulary:
    """Category and predicate name tables; indices are stable lookups."""

    categories: tuple[str, ...]
    predicates: tuple[str, ...]
    version: str

    def __post_init__(self):
        if len(set(self.categories)) != len(self.categories):
            raise ValidationError("duplicate category names in vocabulary")
        if len(set(self.predicates)) != len(self.predicates):
            raise ValidationError("duplicate predicate names in vocabulary")
        if self.predicates[: len(GEOMETRIC_PREDICATES)] != GEOMETRIC_PREDICATES:
            raise ValidationError(
                "the six geometric predicates must occupy indices 0-5 in canonical order"
            )

    @classmethod
    def create(
        cls,
        categories,
        extra_predicates=(),
        version: str | None = None,
    ) -> "Vocabulary":
        categories = tuple(categories)
        predicates = GEOMETRIC_PREDICATES + tuple(extra_predicates)
        if version is None:
            version = hashlib.sha256(
                json.dumps([list(categories), list(predicates)]).encode()
            ).hexdigest()[:12]
        return cls(categories=categories, predicates=predicates, version=version)

    def category_index(self, name: str) -> int:
        try:
            return self.categories.index(name)
        except ValueError:
            raise ValidationError(f"unknown category name {name!r}") from None

    def predicate_index(self, name: str) -> int:
        try:
            return self.predicates.index(name)
        except ValueError:
            raise ValidationError(f"unknown predicate name {name!r}") from None


@dataclass(frozen=True)
class Box:
    """Axis-aligned box in normalized image coordinates, clamped to [0, 1]."""

    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self):
        for name in ("x0", "y0", "x1", "y1"):
            v = float(getattr(self, name))
            if v != v:  # NaN
                raise ValidationError(f"box coordinate {name} is NaN")
            object.__setattr__(self, name, min(1.0, max(0.0, v)))
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise ValidationError(
                f"degenerate box after clamping: ({self.x0}, {self.y0}, {self.x1}, {self.y1})"
            )

    @property
    def center(self) -> tuple[float, float]:
        return (self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0

    @property
    def area(self) -> float:
        return (self.x1 - self.x0) * (self.y1 - self.y0)

    def strictly_inside(self, other: "Box") -> bool:
        return (
            self.x0 > other.x0
            and self.y0 > other.y0
            and self.x1 < other.x1
            and self.y1 < other.y1
        )


@dataclass(frozen=True)
class Node:
    node_id: int
    category: int


@dataclass(frozen=True)
class Edge:
    subject: int
    predicate: int
    object: int


@dataclass(frozen=True)
class SceneGraph:
    """Directed graph of categorized objects; isolated nodes are allowed."""

    nodes: tuple[Node, ...] = ()
    edges: tuple[Edge, ...] = ()

    def __post_init__(self):
        ids = [n.node_id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise ValidationError("duplicate node_id in scene graph")
        known = set(ids)
        for e in self.edges:
            if e.subject == e.object:
                raise ValidationError(f"self-loop edge on node {e.subject}")
            if e.subject not in known or e.object not in known:
                raise ValidationError(
                    f"edge ({e.subject}, {e.predicate}, {e.object}) references a missing node"
                )

    def node_ids(self) -> frozenset[int]:
        return frozenset(n.node_id for n in self.nodes)

    def category_of(self, node_id: int) -> int:
        for n in self.nodes:
            if n.node_id == node_id:
                return n.category
        raise ValidationError(f"unknown node_id {node_id}")

    def edge_set(self) -> frozenset[tuple[int, int, int]]:
        return frozenset((e.subject, e.predicate, e.object) for e in self.edges)


@dataclass(frozen=True)
class GraphSequence:
    """Monotonically growing sequence of scene graphs."""

    steps: tuple[SceneGraph, ...] = field(default=())

    def __post_init__(self):
        for k in range(1, len(self.steps)):
            prev, cur = self.steps[k - 1], self.steps[k]
            prev_nodes = {n.node_id: n.category for n in prev.nodes}
            cur_nodes = {n.node_id: n.category for n in cur.nodes}
            for nid, cat in prev_nodes.items():
                if nid not in cur_nodes:
                    raise ValidationError(f"node {nid} disappears at step {k}")
                if cur_nodes[nid] != cat:
                    raise ValidationError(f"node {nid} changes category at step {k}")
            if not prev.edge_set() <= cur.edge_set():
                raise ValidationError(f"edge set shrinks at step {k}")


def infer_relation(subject: Box, obj: Box) -> int:
    """Classify the geometric relation of subject w.r.t. object.

    Containment wins; otherwise the dominant center-offset axis decides, with
    |dx| == |dy| ties resolved by the fixed priority
    left of > right of > above > below.
    """
    if subject.strictly_inside(obj):
        return INSIDE
    if obj.strictly_inside(subject):
        return SURROUNDING
    scx, scy = subject.center
    ocx, ocy = obj.center
    dx = scx - ocx
    dy = scy - ocy
    if abs(dx) > abs(dy):
        return LEFT_OF if dx < 0 else RIGHT_OF
    if abs(dy) > abs(dx):
        return ABOVE if dy < 0 else BELOW
    # tie: first applicable predicate in priority order; coincident centers
    # fall through to the lowest-priority one
    if dx < 0:
        return LEFT_OF
    if dx > 0:
        return RIGHT_OF
    if dy < 0:
        return ABOVE
    return BELOW


def build_graph(objects, edge_density: float, seed: int = 0) -> SceneGraph:
    """Build a scene graph over (node_id, category, Box) objects by sampling
    ordered pairs at the given density and labeling each with infer_relation."""
    objects = list(objects)
    if not objects:
        raise ValidationError("build_graph requires at least one object")
    if not (0.0 < edge_density <= 1.0):
        raise ValidationError(f"edge_density must be in (0, 1], got {edge_density}")
    boxes = {}
    nodes = []
    for node_id, category, box in objects:
        nodes.append(Node(node_id=int(node_id), category=int(category)))
        boxes[int(node_id)] = box
    ids = sorted(boxes)
    pairs = [(s, o) for s in ids for o in ids if s != o]
    count = int(round(edge_density * len(pairs)))
    rng = random.Random(seed)
    chosen = sorted(rng.sample(pairs, count)) if count else []
    edges = tuple(
        Edge(subject=s, predicate=infer_relation(boxes[s], boxes[o]), object=o)
        for s, o in chosen
    )
    return SceneGraph(nodes=tuple(nodes), edges=edges)


def split_sizes(n: int, num_steps: int = 3) -> list[int]:
    """Node counts per step: half the objects first, the rest in even increments,
    floored and clamped to at least one node; the final step is always full."""
    if n < 1:
        raise ValidationError("graph must have at least one node")
    if num_steps < 1:
        raise ValidationError("num_steps must be >= 1")
    if num_steps == 1:
        return [n]
    # fraction at step k is (num_steps-1+k) / (2*(num_steps-1)): 1/2, ..., 1
    denom = 2 * (num_steps - 1)
    sizes = [max(1, (n * (num_steps - 1 + k)) // denom) for k in range(num_steps)]
    sizes[-1] = n
    return sizes


def make_splits(graph: SceneGraph, seed: int, num_steps: int = 3) -> GraphSequence:
    """Grow the graph over num_steps monotone snapshots; edges of each snapshot
    are exactly the full graph's edges induced by the snapshot's node set."""
    n = len(graph.nodes)
    sizes = split_sizes(n, num_steps)
    rng = random.Random(seed)
    order = sorted(graph.node_ids())
    rng.shuffle(order)
    steps = []
    for size in sizes:
        chosen = set(order[:size])
        nodes = tuple(node for node in graph.nodes if node.node_id in chosen)
        edges = tuple(
            e for e in graph.edges if e.subject in chosen and e.object in chosen
        )
        steps.append(SceneGraph(nodes=nodes, edges=edges))
    return GraphSequence(steps=tuple(steps))


def _graph_doc(graph: SceneGraph, vocab: Vocabulary) -> dict:
    return {
        "vocabulary_version": vocab.version,
        "nodes": [
            {"id": n.node_id, "category": vocab.categories[n.category]}
            for n in graph.nodes
        ],
        "edges": [
            {"s": e.subject, "p": vocab.predicates[e.predicate], "o": e.object}
            for e in graph.edges
        ],
    }


def _graph_from_doc(doc, vocab: Vocabulary, where: str = "") -> SceneGraph:
    if not isinstance(doc, dict):
        raise ParseError(f"{where or 'document'}: expected an object")
    version = doc.get("vocabulary_version")
    if not isinstance(version, str):
        raise ParseError(f"{where}vocabulary_version: missing or not a string")
    if version != vocab.version:
        raise ParseError(
            f"{where}vocabulary_version: document has {version!r}, "
            f"vocabulary is {vocab.version!r}"
        )
    raw_nodes = doc.get("nodes")
    if not isinstance(raw_nodes, list):
        raise ParseError(f"{where}nodes: missing or not a list")
    nodes = []
    for i, rn in enumerate(raw_nodes):
        if not isinstance(rn, dict) or not isinstance(rn.get("id"), int):
            raise ParseError(f"{where}nodes[{i}].id: missing or not an integer")
        cat = rn.get("category")
        if not isinstance(cat, str) or cat not in vocab.categories:
            raise ParseError(f"{where}nodes[{i}].category: unknown name {cat!r}")
        nodes.append(Node(node_id=rn["id"], category=vocab.category_index(cat)))
    raw_edges = doc.get("edges")
    if not isinstance(raw_edges, list):
        raise ParseError(f"{where}edges: missing or not a list")
    edges = []
    for i, re_ in enumerate(raw_edges):
        if not isinstance(re_, dict):
            raise ParseError(f"{where}edges[{i}]: expected an object")
        for key in ("s", "o"):
            if not isinstance(re_.get(key), int):
                raise ParseError(f"{where}edges[{i}].{key}: missing or not an integer")
        pred = re_.get("p")
        if not isinstance(pred, str) or pred not in vocab.predicates:
            raise ParseError(f"{where}edges[{i}].p: unknown predicate {pred!r}")
        edges.append(
            Edge(subject=re_["s"], predicate=vocab.predicate_index(pred), object=re_["o"])
        )
    try:
        return SceneGraph(nodes=tuple(nodes), edges=tuple(edges))
    except ValidationError as exc:
        raise ParseError(f"{where}edges: {exc}") from exc


def serialize(graph: SceneGraph, vocab: Vocabulary) -> str:
    """Canonical JSON document for one graph; stable byte-for-byte."""
    return json.dumps(_graph_doc(graph, vocab), sort_keys=True, separators=(",", ":"))


def deserialize(document: str, vocab: Vocabulary) -> SceneGraph:
    try:
        doc = json.loads(document)
    except json.JSONDecodeError as exc:
        raise ParseError(f"document: invalid JSON ({exc})") from exc
    return _graph_from_doc(doc, vocab)


def serialize_sequence(seq: GraphSequence, vocab: Vocabulary) -> str:
    doc = {"steps": [_graph_doc(g, vocab) for g in seq.steps]}
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def deserialize_sequence(document: str, vocab: Vocabulary) -> GraphSequence:
    try:
        doc = json.loads(document)
    except json.JSONDecodeError as exc:
        raise ParseError(f"document: invalid JSON ({exc})") from exc
    if not isinstance(doc, dict) or not isinstance(doc.get("steps"), list):
        raise ParseError("steps: missing or not a list")
    graphs = tuple(
        _graph_from_doc(g, vocab, where=f"steps[{i}].") for i, g in enumerate(doc["steps"])
    )
    try:
        return GraphSequence(steps=graphs)
    except ValidationError as exc:
        raise ParseError(f"steps: {exc}") from exc
