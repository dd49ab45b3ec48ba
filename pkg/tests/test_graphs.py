import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from storexplain import (
    ContractError,
    Dataset,
    DatasetFormatError,
    Graph,
    MotifKind,
    ParameterError,
    ValidationError,
    apply_edge_weights,
    attach_motif,
    ba_base,
    generate_ba2motifs,
    load_dataset,
    save_dataset,
)


def test_graph_rejects_asymmetric_adjacency():
    adj = np.zeros((2, 2))
    adj[0, 1] = 1.0
    with pytest.raises(ValidationError, match="symmetric"):
        Graph(node_features=np.ones((2, 3)), adjacency=adj)


def test_graph_rejects_out_of_range_weight():
    adj = np.zeros((2, 2))
    adj[0, 1] = adj[1, 0] = 1.2
    with pytest.raises(ValidationError, match="weight out of"):
        Graph(node_features=np.ones((2, 3)), adjacency=adj)


def test_graph_rejects_self_loops():
    adj = np.eye(3)
    with pytest.raises(ValidationError, match="diagonal"):
        Graph(node_features=np.ones((3, 2)), adjacency=adj)


def test_graph_rejects_gt_edge_not_present():
    adj = np.zeros((3, 3))
    adj[0, 1] = adj[1, 0] = 1.0
    with pytest.raises(ValidationError, match="not a present edge"):
        Graph(np.ones((3, 2)), adj, label=0, gt_edge_mask=frozenset({(1, 2)}))


def test_graph_buffers_are_readonly():
    g = ba_base(5, 1, np.random.default_rng(0))
    with pytest.raises(ValueError):
        g.adjacency[0, 1] = 0.5
    with pytest.raises(ValueError):
        g.node_features[0, 0] = 2.0


def test_ba_base_smallest_is_single_edge():
    g = ba_base(2, 1, np.random.default_rng(0))
    assert g.n_nodes == 2
    assert g.edges == ((0, 1),)


def test_ba_base_m1_gives_tree():
    g = ba_base(20, 1, np.random.default_rng(42))
    assert g.n_edges == 19  # n - 1 edges: one per new node


def test_ba_base_degree_sum_m2():
    # seed clique edge + 3 new nodes attaching 2 edges each = 7 edges
    g = ba_base(5, 2, np.random.default_rng(7))
    brute_edges = [
        (i, j) for i in range(5) for j in range(i + 1, 5) if g.adjacency[i, j] > 0
    ]
    assert len(brute_edges) == 7
    assert g.adjacency.sum() == 14  # degree sum = 2 * edges


def test_ba_base_parameter_errors():
    rng = np.random.default_rng(0)
    with pytest.raises(ParameterError):
        ba_base(1, 1, rng)
    with pytest.raises(ParameterError):
        ba_base(5, 0, rng)


def test_ba_base_connected():
    g = ba_base(30, 1, np.random.default_rng(5))
    # BFS from node 0
    seen = {0}
    frontier = [0]
    while frontier:
        i = frontier.pop()
        for j in np.nonzero(g.adjacency[i])[0]:
            if j not in seen:
                seen.add(int(j))
                frontier.append(int(j))
    assert len(seen) == 30


def test_attach_motif_house_counts():
    base = ba_base(20, 1, np.random.default_rng(1))
    g = attach_motif(base, MotifKind.HOUSE, np.random.default_rng(2))
    assert g.n_nodes == 25
    assert g.n_edges == 19 + 6 + 1
    assert len(g.gt_edge_mask) == 6
    assert g.label == 0


def test_attach_motif_cycle_counts():
    base = ba_base(20, 1, np.random.default_rng(1))
    g = attach_motif(base, MotifKind.FIVE_CYCLE, np.random.default_rng(2))
    assert g.n_nodes == 25
    assert g.n_edges == 25
    assert len(g.gt_edge_mask) == 5
    assert g.label == 1


def test_attach_motif_degenerate_single_node_base():
    base = Graph(node_features=np.ones((1, 10)), adjacency=np.zeros((1, 1)))
    g = attach_motif(base, MotifKind.HOUSE, np.random.default_rng(0))
    assert g.n_nodes == 6
    assert g.n_edges == 7


def test_attachment_edge_not_in_gt():
    base = ba_base(20, 1, np.random.default_rng(3))
    g = attach_motif(base, MotifKind.HOUSE, np.random.default_rng(4))
    motif_internal = {(i, j) for i, j in g.gt_edge_mask}
    crossing = [
        (i, j) for (i, j) in g.edges if (i < 20) != (j < 20)
    ]
    assert len(crossing) == 1
    assert crossing[0] not in motif_internal


def test_generate_ba2motifs_table_statistics():
    ds = generate_ba2motifs(1000, 7)
    assert len(ds) == 1000
    assert np.mean([g.n_nodes for g in ds.graphs]) == 25
    directed = np.mean([2 * g.n_edges for g in ds.graphs])
    assert abs(directed - 51) <= 1
    assert all(g.node_features.shape == (25, 10) for g in ds.graphs)
    assert np.array_equal(np.unique([g.label for g in ds.graphs]), [0, 1])


def test_generate_split_is_stratified():
    ds = generate_ba2motifs(1000, 7)
    for split, count in (("train", 800), ("val", 100), ("test", 100)):
        idx = ds.indices(split)
        assert len(idx) == count
        labels = [ds.graphs[i].label for i in idx]
        assert sum(labels) == count // 2


def test_generate_minimum_balanced_set():
    ds = generate_ba2motifs(2, 0)
    assert sorted(g.label for g in ds.graphs) == [0, 1]


def test_generate_rejects_odd_and_tiny():
    with pytest.raises(ParameterError, match="odd"):
        generate_ba2motifs(999, 0)
    with pytest.raises(ParameterError):
        generate_ba2motifs(0, 0)


def test_generate_deterministic_byte_for_byte(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    save_dataset(generate_ba2motifs(20, 11), a)
    save_dataset(generate_ba2motifs(20, 11), b)
    assert a.read_bytes() == b.read_bytes()


def test_gt_mask_cardinality_invariant():
    ds = generate_ba2motifs(100, 9)
    for g in ds.graphs:
        assert len(g.gt_edge_mask) == (6 if g.label == 0 else 5)


def test_save_load_round_trip(tmp_path, small_ds):
    path = tmp_path / "ds.json"
    save_dataset(small_ds, path)
    loaded = load_dataset(path)
    assert loaded.same_content(small_ds)
    # a second save is byte-identical
    path2 = tmp_path / "ds2.json"
    save_dataset(loaded, path2)
    assert path.read_bytes() == path2.read_bytes()


def test_load_rejects_bad_weight(tmp_path):
    ds = generate_ba2motifs(2, 0)
    path = tmp_path / "ds.json"
    save_dataset(ds, path)
    doc = json.loads(path.read_text())
    doc["graphs"][1]["edges"][0][2] = 1.2
    path.write_text(json.dumps(doc))
    with pytest.raises(DatasetFormatError, match=r"graph 1: weight out of \[0,1\]"):
        load_dataset(path)


def test_load_without_gt_masks(tmp_path):
    ds = generate_ba2motifs(2, 0)
    path = tmp_path / "ds.json"
    save_dataset(ds, path)
    doc = json.loads(path.read_text())
    for entry in doc["graphs"]:
        del entry["gt_edges"]
    path.write_text(json.dumps(doc))
    loaded = load_dataset(path)
    assert all(g.gt_edge_mask is None for g in loaded.graphs)


def test_load_rejects_garbage(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("not json at all {")
    with pytest.raises(DatasetFormatError):
        load_dataset(path)


def test_apply_edge_weights_identity(small_ds):
    g = small_ds.graphs[0]
    out = apply_edge_weights(g, {e: 1.0 for e in g.edges})
    assert np.array_equal(out.adjacency, g.adjacency)
    assert out.gt_edge_mask == g.gt_edge_mask


def test_apply_edge_weights_uniform_scaling(small_ds):
    g = small_ds.graphs[0]
    out = apply_edge_weights(g, {e: 0.5 for e in g.edges})
    assert np.allclose(out.adjacency, 0.5 * g.adjacency)


def test_apply_edge_weights_contract_errors(small_ds):
    g = small_ds.graphs[0]
    weights = {e: 1.0 for e in g.edges}
    weights.pop(g.edges[0])
    with pytest.raises(ContractError, match="missing"):
        apply_edge_weights(g, weights)
    weights = {e: 1.0 for e in g.edges}
    weights[(998, 999)] = 1.0
    with pytest.raises(ContractError, match="extra"):
        apply_edge_weights(g, weights)
    weights = {e: 1.0 for e in g.edges}
    weights[g.edges[0]] = 1.5
    with pytest.raises(ValidationError, match="weight out of"):
        apply_edge_weights(g, weights)


def test_apply_edge_weights_is_pure(small_ds):
    g = small_ds.graphs[0]
    before = g.adjacency.copy()
    weights = {e: 0.25 for e in g.edges}
    out1 = apply_edge_weights(g, weights)
    out2 = apply_edge_weights(g, weights)
    assert np.array_equal(out1.adjacency, out2.adjacency)
    assert np.array_equal(g.adjacency, before)


def test_apply_edge_weights_accepts_reversed_keys(small_ds):
    g = small_ds.graphs[0]
    weights = {(j, i): 0.5 for (i, j) in g.edges}
    out = apply_edge_weights(g, weights)
    assert np.allclose(out.adjacency, 0.5 * g.adjacency)


@settings(max_examples=25, deadline=None)
@given(n=st.integers(2, 12), m=st.integers(1, 3), seed=st.integers(0, 10_000))
def test_ba_base_always_symmetric_zero_diag(n, m, seed):
    g = ba_base(n, m, np.random.default_rng(seed))
    assert np.array_equal(g.adjacency, g.adjacency.T)
    assert np.all(np.diagonal(g.adjacency) == 0)
