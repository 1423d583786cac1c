"""Graph convolution over scene graphs: category/predicate embedding tables
plus per-layer edge MLPs with average pooling into node vectors."""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .errors import ValidationError
from .netutil import init_params, require_finite
from .sgraph import SceneGraph


@dataclass(frozen=True)
class GcnConfig:
    embed_dim: int = 128
    num_layers: int = 5
    hidden_dim: int = 512

    def __post_init__(self):
        for name in ("embed_dim", "num_layers", "hidden_dim"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1")


@dataclass(frozen=True)
class NodeEmbeddings:
    """Per-node vectors in graph node order, with the predicate table along
    for downstream consumers."""

    node_ids: tuple[int, ...]
    vectors: torch.Tensor  # (N, D)
    predicate_table: torch.Tensor  # (num_predicates, D)

    def __post_init__(self):
        if self.vectors.shape[0] != len(self.node_ids):
            raise ValidationError(
                f"{len(self.node_ids)} node ids but {self.vectors.shape[0]} vectors"
            )

    def __len__(self) -> int:
        return len(self.node_ids)

    def vector(self, node_id: int) -> torch.Tensor:
        try:
            return self.vectors[self.node_ids.index(node_id)]
        except ValueError:
            raise ValidationError(f"no embedding for node_id {node_id}") from None


def filter_generated(emb: NodeEmbeddings, generated) -> NodeEmbeddings:
    """Drop rows for already-generated nodes. The full-graph embedding happens
    first, so surviving rows still carry information propagated from the
    dropped ones; this only selects, never recomputes."""
    generated = set(generated)
    unknown = generated - set(emb.node_ids)
    if unknown:
        raise ValidationError(f"unknown node ids in generated set: {sorted(unknown)}")
    keep = [i for i, nid in enumerate(emb.node_ids) if nid not in generated]
    return NodeEmbeddings(
        node_ids=tuple(emb.node_ids[i] for i in keep),
        vectors=emb.vectors[keep],
        predicate_table=emb.predicate_table,
    )


class Gcn(nn.Module):
    """Stack of graph convolution layers.

    Each layer runs one shared MLP over every (subject, predicate, object)
    vector triple, splits the output into three candidate vectors, and each
    node's next vector is the average of the candidates it participates in.
    Predicate vectors advance alongside node vectors; nodes touching no edge
    pass through unchanged.
    """

    def __init__(self, num_categories: int, num_predicates: int, cfg: GcnConfig, seed: int = 0):
        super().__init__()
        if num_categories < 1 or num_predicates < 1:
            raise ValidationError("vocabulary must be non-empty")
        self.cfg = cfg
        self.num_categories = num_categories
        self.num_predicates = num_predicates
        d = cfg.embed_dim
        self.category_table = nn.Embedding(num_categories, d)
        self.predicate_table = nn.Embedding(num_predicates, d)
        self.edge_mlps = nn.ModuleList(
            nn.Sequential(
                nn.Linear(3 * d, cfg.hidden_dim),
                nn.ReLU(),
                nn.Linear(cfg.hidden_dim, 3 * d),
            )
            for _ in range(cfg.num_layers)
        )
        init_params(self, seed)

    def forward(self, categories, subjects, predicates, objects):
        """categories (N,), subjects/predicates/objects (E,) index tensors ->
        node vectors (N, D)."""
        x = self.category_table(categories)
        if subjects.numel() == 0:
            return x
        p = self.predicate_table(predicates)
        n = x.shape[0]
        ones = x.new_ones(subjects.shape[0])
        counts = x.new_zeros(n).index_add(0, subjects, ones).index_add(0, objects, ones)
        touched = (counts > 0).unsqueeze(1)
        denom = counts.clamp(min=1.0).unsqueeze(1)
        for mlp in self.edge_mlps:
            triple = torch.cat([x[subjects], p, x[objects]], dim=1)
            c_s, p, c_o = mlp(triple).chunk(3, dim=1)
            sums = (
                torch.zeros_like(x)
                .index_add(0, subjects, c_s)
                .index_add(0, objects, c_o)
            )
            x = torch.where(touched, sums / denom, x)
        return x

    def _index_tensors(self, graph: SceneGraph):
        for node in graph.nodes:
            if not (0 <= node.category < self.num_categories):
                raise ValidationError(
                    f"node {node.node_id}: category index {node.category} outside vocabulary"
                )
        for e in graph.edges:
            if not (0 <= e.predicate < self.num_predicates):
                raise ValidationError(f"edge predicate index {e.predicate} outside vocabulary")
        pos = {n.node_id: i for i, n in enumerate(graph.nodes)}
        categories = torch.tensor([n.category for n in graph.nodes], dtype=torch.long)
        subjects = torch.tensor([pos[e.subject] for e in graph.edges], dtype=torch.long)
        predicates = torch.tensor([e.predicate for e in graph.edges], dtype=torch.long)
        objects = torch.tensor([pos[e.object] for e in graph.edges], dtype=torch.long)
        return categories, subjects, predicates, objects

    def embed(self, graph: SceneGraph) -> NodeEmbeddings:
        if not graph.nodes:
            raise ValidationError("cannot embed an empty graph")
        vectors = self.forward(*self._index_tensors(graph))
        require_finite(vectors, "gcn embeddings")
        return NodeEmbeddings(
            node_ids=tuple(n.node_id for n in graph.nodes),
            vectors=vectors,
            predicate_table=self.predicate_table.weight,
        )

    def embed_many(self, graphs) -> list[NodeEmbeddings]:
        """Embed several graphs in one forward pass over their disjoint union.

        Unconnected components never exchange messages, so the result matches
        per-graph embed() calls row for row.
        """
        graphs = list(graphs)
        if not graphs:
            return []
        cat_parts, s_parts, p_parts, o_parts = [], [], [], []
        offset = 0
        offsets = []
        for g in graphs:
            if not g.nodes:
                raise ValidationError("cannot embed an empty graph")
            categories, subjects, predicates, objects = self._index_tensors(g)
            cat_parts.append(categories)
            s_parts.append(subjects + offset)
            p_parts.append(predicates)
            o_parts.append(objects + offset)
            offsets.append(offset)
            offset += len(g.nodes)
        vectors = self.forward(
            torch.cat(cat_parts), torch.cat(s_parts), torch.cat(p_parts), torch.cat(o_parts)
        )
        require_finite(vectors, "gcn embeddings")
        out = []
        for g, start in zip(graphs, offsets):
            out.append(
                NodeEmbeddings(
                    node_ids=tuple(n.node_id for n in g.nodes),
                    vectors=vectors[start : start + len(g.nodes)],
                    predicate_table=self.predicate_table.weight,
                )
            )
        return out
