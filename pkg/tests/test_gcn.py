import random

import pytest
import torch

from isggen.errors import ValidationError
from isggen.gcn import Gcn, GcnConfig, NodeEmbeddings, filter_generated
from isggen.sgraph import Edge, Node, SceneGraph

from conftest import DESK_GCN, finite_difference_check


def make_gcn(seed=0, cfg=DESK_GCN):
    return Gcn(num_categories=12, num_predicates=6, cfg=cfg, seed=seed)


def chain_graph(n=5, offset=0):
    nodes = tuple(Node(offset + i, i % 12) for i in range(n))
    edges = tuple(Edge(offset + i, i % 6, offset + i + 1) for i in range(n - 1))
    return SceneGraph(nodes=nodes, edges=edges)


def test_embedding_shapes_and_order():
    gcn = make_gcn()
    g = chain_graph(4)
    emb = gcn.embed(g)
    assert emb.node_ids == (0, 1, 2, 3)
    assert emb.vectors.shape == (4, DESK_GCN.embed_dim)
    assert emb.predicate_table.shape == (6, DESK_GCN.embed_dim)
    assert torch.equal(emb.vector(2), emb.vectors[2])


def test_deterministic_given_seed():
    a = make_gcn(seed=3).embed(chain_graph(5)).vectors
    b = make_gcn(seed=3).embed(chain_graph(5)).vectors
    assert torch.equal(a, b)
    c = make_gcn(seed=4).embed(chain_graph(5)).vectors
    assert not torch.equal(a, c)


def test_permutation_equivariance():
    gcn = make_gcn(seed=1)
    rng = random.Random(0)
    nodes = [Node(i, i % 12) for i in range(6)]
    edges = [Edge(0, 1, 3), Edge(3, 2, 5), Edge(5, 0, 1), Edge(2, 4, 0), Edge(4, 3, 2)]
    base = gcn.embed(SceneGraph(nodes=tuple(nodes), edges=tuple(edges)))
    for _ in range(5):
        perm_nodes = nodes[:]
        rng.shuffle(perm_nodes)
        perm_edges = edges[:]
        rng.shuffle(perm_edges)
        perm = gcn.embed(SceneGraph(nodes=tuple(perm_nodes), edges=tuple(perm_edges)))
        for node in nodes:
            assert torch.allclose(
                base.vector(node.node_id), perm.vector(node.node_id), atol=1e-5
            ), f"node {node.node_id} moved under permutation"


def test_isolated_node_passes_through():
    gcn = make_gcn()
    g = SceneGraph(nodes=(Node(0, 7),))
    emb = gcn.embed(g)
    expected = gcn.category_table(torch.tensor([7]))
    assert torch.equal(emb.vectors, expected)


def test_isolated_node_unchanged_beside_connected_ones():
    gcn = make_gcn(seed=2)
    g = SceneGraph(
        nodes=(Node(0, 1), Node(1, 2), Node(2, 9)),
        edges=(Edge(0, 0, 1),),
    )
    emb = gcn.embed(g)
    lone = gcn.category_table(torch.tensor([9]))[0]
    assert torch.equal(emb.vector(2), lone)
    assert not torch.allclose(emb.vector(0), gcn.category_table(torch.tensor([1]))[0])


def test_disjoint_union_matches_separate_graphs():
    gcn = make_gcn(seed=5)
    a = chain_graph(3, offset=0)
    b = chain_graph(4, offset=10)
    separate_a = gcn.embed(a).vectors
    separate_b = gcn.embed(b).vectors
    joint_a, joint_b = gcn.embed_many([a, b])
    assert torch.allclose(joint_a.vectors, separate_a, atol=1e-6)
    assert torch.allclose(joint_b.vectors, separate_b, atol=1e-6)


def test_predicate_change_propagates():
    gcn = make_gcn(seed=6)
    nodes = (Node(0, 1), Node(1, 2))
    before = gcn.embed(SceneGraph(nodes=nodes, edges=(Edge(0, 0, 1),)))
    after = gcn.embed(SceneGraph(nodes=nodes, edges=(Edge(0, 3, 1),)))
    assert not torch.allclose(before.vectors, after.vectors, atol=1e-4)


def test_filter_generated_selects_rows():
    gcn = make_gcn()
    emb = gcn.embed(chain_graph(5))
    kept = filter_generated(emb, {1, 3})
    assert kept.node_ids == (0, 2, 4)
    assert torch.equal(kept.vector(2), emb.vector(2))
    assert torch.equal(kept.predicate_table, emb.predicate_table)
    same = filter_generated(emb, set())
    assert same.node_ids == emb.node_ids


def test_filter_generated_rejects_unknown_ids():
    gcn = make_gcn()
    emb = gcn.embed(chain_graph(3))
    with pytest.raises(ValidationError, match="99"):
        filter_generated(emb, {99})


def test_empty_graph_rejected():
    gcn = make_gcn()
    with pytest.raises(ValidationError):
        gcn.embed(SceneGraph())
    with pytest.raises(ValidationError):
        gcn.embed_many([SceneGraph()])
    assert gcn.embed_many([]) == []


def test_category_outside_vocabulary_rejected():
    gcn = make_gcn()
    with pytest.raises(ValidationError, match="category"):
        gcn.embed(SceneGraph(nodes=(Node(0, 99),)))


def test_node_embeddings_length_validated():
    with pytest.raises(ValidationError):
        NodeEmbeddings(node_ids=(0, 1), vectors=torch.zeros(3, 4), predicate_table=torch.zeros(6, 4))


def test_gradients_match_finite_differences():
    cfg = GcnConfig(embed_dim=6, num_layers=2, hidden_dim=10)
    gcn = Gcn(num_categories=5, num_predicates=6, cfg=cfg, seed=0).double()
    g = SceneGraph(
        nodes=(Node(0, 0), Node(1, 1), Node(2, 2), Node(3, 3)),
        edges=(Edge(0, 0, 1), Edge(1, 2, 2), Edge(3, 4, 0)),
    )
    params = [p for _, p in sorted(gcn.named_parameters())]

    def loss():
        return gcn.embed(g).vectors.square().mean()

    worst = finite_difference_check(loss, params)
    assert worst <= 1e-3, f"worst gradient relative error {worst}"
