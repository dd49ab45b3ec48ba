import numpy as np
import pytest

from storexplain import TrainConfig, apply_edge_weights, generate_ba2motifs
from storexplain.autodiff import Tape, Tensor, backward
from storexplain.errors import ContractError, ParameterError
from storexplain.gcn import (
    GcnModel,
    _batched_backward,
    _batched_forward,
    _nll,
    _stacks,
    evaluate_accuracy,
    gcn_forward,
    init_gcn,
    load_model,
    normalize_adjacency,
    normalize_adjacency_t,
    predict,
    save_model,
    train_gnn,
)
from storexplain import autodiff as ad


def test_normalize_no_edges_is_identity():
    assert np.array_equal(normalize_adjacency(np.zeros((3, 3))), np.eye(3))


def test_normalize_single_unit_edge():
    adj = np.array([[0.0, 1.0], [1.0, 0.0]])
    assert np.allclose(normalize_adjacency(adj), np.full((2, 2), 0.5))


def test_normalize_half_weight_edge():
    adj = np.array([[0.0, 0.5], [0.5, 0.0]])
    expected = np.array([[1 / 1.5, 0.5 / 1.5], [0.5 / 1.5, 1 / 1.5]])
    assert np.allclose(normalize_adjacency(adj), expected)


def test_normalize_tensor_twin_matches_numpy(rng):
    adj = np.zeros((5, 5))
    for i, j in ((0, 1), (1, 2), (2, 3), (0, 4)):
        adj[i, j] = adj[j, i] = rng.uniform(0.1, 1.0)
    out = normalize_adjacency_t(Tensor(adj))
    assert np.allclose(out.data, normalize_adjacency(adj), atol=1e-14)


def test_zeroed_model_gives_uniform_log_probs(small_ds):
    g = small_ds.graphs[0]
    model = init_gcn(10, 8, np.random.default_rng(0))
    zeroed = GcnModel(**{k: np.zeros_like(v) for k, v in model.params().items()})
    logp, _ = gcn_forward(zeroed, g)
    assert np.allclose(logp, np.log(0.5))


def test_forward_normalization_sums_to_one(small_ds, small_model):
    logp, _ = gcn_forward(small_model, small_ds.graphs[3])
    assert abs(np.exp(logp).sum() - 1.0) < 1e-12


def test_all_ones_weighting_is_identity(small_ds, small_model):
    g = small_ds.graphs[1]
    weighted = apply_edge_weights(g, {e: 1.0 for e in g.edges})
    a, _ = gcn_forward(small_model, g)
    b, _ = gcn_forward(small_model, weighted)
    assert np.array_equal(a, b)


def test_feature_dim_mismatch_raises(small_model):
    from storexplain.graphs import Graph

    g = Graph(node_features=np.ones((3, 4)), adjacency=np.zeros((3, 3)), label=0)
    with pytest.raises(ContractError, match="feature dim"):
        gcn_forward(small_model, g)


def test_evaluate_accuracy_constant_predictor(small_ds):
    model = init_gcn(10, 8, np.random.default_rng(0))
    # zero readout -> logits equal -> argmax ties toward class 0
    zeroed = GcnModel(**{**model.params(), "readout": np.zeros_like(model.readout)})
    graphs = small_ds.graphs
    acc = evaluate_accuracy(zeroed, graphs)
    frac0 = sum(1 for g in graphs if g.label == 0) / len(graphs)
    assert acc == frac0


def test_evaluate_accuracy_empty_raises(small_model):
    with pytest.raises(ContractError):
        evaluate_accuracy(small_model, [])


def test_train_rejects_empty_training_split(small_ds):
    test_only = small_ds.subset(small_ds.indices("test"), provenance="test only")
    with pytest.raises(ContractError, match="empty training split"):
        train_gnn(test_only, TrainConfig(epochs=1))


def test_train_config_validation():
    with pytest.raises(ParameterError):
        TrainConfig(epochs=0)
    with pytest.raises(ParameterError):
        TrainConfig(lr=0.0)


def test_training_is_deterministic(small_ds):
    cfg = TrainConfig(epochs=10, patience=5, seed=4, max_restarts=0)
    m1 = train_gnn(small_ds, cfg)
    m2 = train_gnn(small_ds, cfg)
    for k, v in m1.params().items():
        assert np.array_equal(v, m2.params()[k])


def test_single_graph_dataset_trains(small_ds):
    from storexplain.graphs import Dataset

    single = Dataset(
        graphs=(small_ds.graphs[0],), split=("train",), provenance="single", seed=0
    )
    model = train_gnn(single, TrainConfig(epochs=2, max_restarts=0))
    assert predict(model, small_ds.graphs[0]) in (0, 1)


def test_batched_and_tape_gradients_agree(small_ds, rng):
    model = init_gcn(10, 8, rng)
    params_np = model.params()
    idx = list(small_ds.indices("train")[:5])
    x, a, y = _stacks(small_ds, idx)
    _, cache = _batched_forward(params_np, x, a)
    fast = _batched_backward(params_np, x, a, y, cache)

    tensors = {k: Tensor(v, requires_grad=True) for k, v in params_np.items()}
    with Tape() as tape:
        total = None
        for i in idx:
            g = small_ds.graphs[i]
            nll = _nll(
                tensors,
                Tensor(g.node_features),
                Tensor(normalize_adjacency(g.adjacency)),
                Tensor(np.eye(2)[g.label].reshape(1, -1)),
            )
            total = nll if total is None else ad.add(total, nll)
        loss = ad.scalar_mul(total, 1.0 / len(idx))
    backward(tape, loss)
    for k in params_np:
        assert np.allclose(tensors[k].grad, fast[k], atol=1e-12)


def test_warm_start_and_probe_selection(small_ds):
    base = train_gnn(small_ds, TrainConfig(epochs=20, patience=10, seed=0, max_restarts=0))
    probe = list(small_ds.graphs_in("test"))
    cfg = TrainConfig(epochs=5, patience=5, seed=1, max_restarts=0, val_tolerance=1.0)
    adapted = train_gnn(small_ds, cfg, init_model=base, robust_probe=probe)
    assert adapted.w1.shape == base.w1.shape


def test_checkpoint_round_trip_exact(tmp_path, small_model):
    path = tmp_path / "model.json"
    save_model(small_model, path)
    loaded = load_model(path)
    for k, v in small_model.params().items():
        assert np.array_equal(v, loaded.params()[k])
