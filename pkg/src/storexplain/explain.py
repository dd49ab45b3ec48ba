"""Soft-mask explainers over a frozen classifier.

Two strategies produce per-edge importance scores in [0, 1]:

* per-instance mask optimization: one learnable logit per undirected edge,
  trained to keep the classifier's prediction while shrinking total mask mass;
* a parametric edge scorer: a small MLP over concatenated endpoint
  embeddings, trained across the whole training split with concrete
  (logistic-noise) relaxation so sampling stays differentiable.

Both minimize prediction cross-entropy against the classifier's own output
on the intact graph plus a size penalty on total edge weight.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor, backward, zero_grads
from .errors import ContractError, ParameterError
from .gcn import GcnModel, forward_tensors, gcn_forward, normalize_adjacency_t, predict
from .graphs import Dataset, Edge, Graph
from .optim import AdamState, adam_step

EdgeMask = dict[Edge, float]


@dataclass(frozen=True)
class MaskOptConfig:
    """Settings for per-instance mask optimization."""

    epochs: int = 200
    lr: float = 0.01
    size_coef: float = 0.005
    entropy_coef: float = 0.0
    init_scale: float = 0.1

    def __post_init__(self):
        if self.size_coef < 0:
            raise ParameterError(f"size coefficient must be >= 0, got {self.size_coef}")


def _scatter_matrix(g: Graph) -> np.ndarray:
    """(n^2, E) map from per-edge scores to a flattened masked adjacency.

    Column e carries the original weight of edge e at both (i, j) and (j, i),
    so scatter @ scores == flatten(A * M) with M symmetric.
    """
    n = g.n_nodes
    edges = g.edges
    scatter = np.zeros((n * n, len(edges)))
    for col, (i, j) in enumerate(edges):
        w = g.adjacency[i, j]
        scatter[i * n + j, col] = w
        scatter[j * n + i, col] = w
    return scatter


def _masked_a_hat(scatter_c: Tensor, scores: Tensor, n: int) -> Tensor:
    flat = ad.matmul(scatter_c, scores)
    return normalize_adjacency_t(ad.reshape(flat, n, n))


def _model_consts(model: GcnModel) -> dict[str, Tensor]:
    return {name: Tensor(arr) for name, arr in model.params().items()}


def _onehot(label: int, n_classes: int) -> Tensor:
    return Tensor(np.eye(n_classes)[label].reshape(1, -1))


def gnnexplainer(
    model: GcnModel,
    g: Graph,
    cfg: MaskOptConfig,
    rng: np.random.Generator,
) -> EdgeMask:
    """Optimize a soft mask for one graph against a frozen classifier.

    The loss is CE(model's class on g ; model on the masked graph) plus
    ``size_coef`` times the total mask mass (and optionally a mask entropy
    term).  Model parameters are never touched.
    """
    if g.n_edges == 0:
        raise ContractError("cannot explain an edgeless graph")
    target = predict(model, g)
    consts = _model_consts(model)
    x = Tensor(g.node_features)
    scatter = Tensor(_scatter_matrix(g))
    onehot = _onehot(target, model.n_classes)
    ones = Tensor(np.ones((g.n_edges, 1)))

    theta = Tensor(rng.normal(0.0, cfg.init_scale, size=(g.n_edges, 1)), requires_grad=True)
    params = {"theta": theta}
    state = AdamState(lr=cfg.lr)
    for _ in range(cfg.epochs):
        with Tape() as tape:
            mask = ad.sigmoid(theta)
            logp, _ = forward_tensors(consts, x, _masked_a_hat(scatter, mask, g.n_nodes))
            ce = ad.neg(ad.sum_all(ad.mul(logp, onehot)))
            loss = ad.add(ce, ad.scalar_mul(ad.sum_all(mask), cfg.size_coef))
            if cfg.entropy_coef > 0.0:
                comp = ad.add(ones, ad.scalar_mul(mask, -1.0))
                ent = ad.neg(
                    ad.sum_all(
                        ad.add(ad.mul(mask, ad.log(mask)), ad.mul(comp, ad.log(comp)))
                    )
                )
                loss = ad.add(loss, ad.scalar_mul(ent, cfg.entropy_coef))
        backward(tape, loss)
        adam_step(params, {"theta": theta.grad}, state)
        zero_grads(params)
    final = 1.0 / (1.0 + np.exp(-theta.data[:, 0]))
    return {e: float(s) for e, s in zip(g.edges, final)}


@dataclass(frozen=True)
class PgConfig:
    """Hyperparameters for the parametric edge scorer.

    The defaults mirror the classic recipe for this explainer family: a
    handful of epochs with one full-batch update each (``batch_size`` 0
    means full batch) and a noticeable size penalty.  This is deliberately
    not a maximally-stable configuration; the scorer's seed-to-seed
    volatility on motif benchmarks is a documented property of the method.
    """

    mlp_hidden: int = 64
    temp_start: float = 5.0
    temp_end: float = 2.0
    epochs: int = 20
    lr: float = 3e-3
    weight_decay: float = 5e-4
    size_coef: float = 0.05
    batch_size: int = 0


@dataclass
class PgNet:
    """Edge scorer: a 2h -> mlp_hidden -> 1 perceptron plus training settings.

    Scores come from concatenated endpoint embeddings of the classifier's
    last conv layer; the temperature anneals geometrically from
    ``temp_start`` to ``temp_end`` across epochs.
    """

    v1: np.ndarray
    c1: np.ndarray
    v2: np.ndarray
    c2: np.ndarray
    temp_start: float = 5.0
    temp_end: float = 2.0
    epochs: int = 20
    lr: float = 3e-3
    weight_decay: float = 5e-4
    size_coef: float = 0.05
    batch_size: int = 0  # 0 = one full-batch update per epoch

    @property
    def embed_width(self) -> int:
        return self.v1.shape[0] // 2

    def weights(self) -> dict[str, np.ndarray]:
        return {"v1": self.v1, "c1": self.c1, "v2": self.v2, "c2": self.c2}


def init_pgnet(
    embed_width: int,
    rng: np.random.Generator,
    cfg: PgConfig = PgConfig(),
) -> PgNet:
    lim1 = math.sqrt(6.0 / (2 * embed_width + cfg.mlp_hidden))
    lim2 = math.sqrt(6.0 / (cfg.mlp_hidden + 1))
    return PgNet(
        v1=rng.uniform(-lim1, lim1, size=(2 * embed_width, cfg.mlp_hidden)),
        c1=np.zeros((1, cfg.mlp_hidden)),
        v2=rng.uniform(-lim2, lim2, size=(cfg.mlp_hidden, 1)),
        c2=np.zeros((1, 1)),
        temp_start=cfg.temp_start,
        temp_end=cfg.temp_end,
        epochs=cfg.epochs,
        lr=cfg.lr,
        weight_decay=cfg.weight_decay,
        size_coef=cfg.size_coef,
        batch_size=cfg.batch_size,
    )


def gumbel_edge_sample(logit: float, temperature: float, rng: np.random.Generator) -> float:
    """One concrete-relaxation draw: sigmoid((logit + logistic noise) / temperature)."""
    if temperature <= 0:
        raise ParameterError(f"temperature must be > 0, got {temperature}")
    u = rng.uniform(1e-12, 1.0 - 1e-12)
    z = (logit + math.log(u) - math.log1p(-u)) / temperature
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def _edge_embeddings(g: Graph, emb: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    idx = np.asarray(g.edges)
    fwd = np.hstack([emb[idx[:, 0]], emb[idx[:, 1]]])
    rev = np.hstack([emb[idx[:, 1]], emb[idx[:, 0]]])
    return fwd, rev


def _pg_logits_t(params: Mapping[str, Tensor], fwd: Tensor, rev: Tensor) -> Tensor:
    def mlp(e):
        hidden = ad.relu(ad.add(ad.matmul(e, params["v1"]), params["c1"]))
        return ad.add(ad.matmul(hidden, params["v2"]), params["c2"])

    # one score per undirected edge: average both endpoint orderings
    return ad.scalar_mul(ad.add(mlp(fwd), mlp(rev)), 0.5)


def _pg_logits_numpy(net: PgNet, fwd: np.ndarray, rev: np.ndarray) -> np.ndarray:
    def mlp(e):
        return np.maximum(e @ net.v1 + net.c1, 0.0) @ net.v2 + net.c2

    return 0.5 * (mlp(fwd) + mlp(rev))


def train_pgexplainer(
    model: GcnModel,
    ds: Dataset,
    net: PgNet,
    rng: np.random.Generator,
) -> PgNet:
    """Fit the edge scorer on the training split against a frozen classifier.

    Each epoch draws fresh concrete samples per edge at the scheduled
    temperature, applies them as edge weights, and backpropagates the
    prediction-plus-size loss into the scorer only.  Returns a new PgNet;
    the input net provides initialization and hyperparameters.
    """
    if net.v1.shape[0] != 2 * model.hidden:
        raise ContractError(
            f"scorer input width {net.v1.shape[0]} does not match twice the "
            f"classifier hidden width {model.hidden}"
        )
    train_graphs = ds.graphs_in("train")
    if not train_graphs:
        raise ContractError("empty training split")

    consts = _model_consts(model)
    prepared = []
    for g in train_graphs:
        _, emb = gcn_forward(model, g)
        fwd, rev = _edge_embeddings(g, emb)
        prepared.append(
            (
                Tensor(fwd),
                Tensor(rev),
                Tensor(_scatter_matrix(g)),
                Tensor(g.node_features),
                _onehot(predict(model, g), model.n_classes),
                g.n_nodes,
                g.n_edges,
            )
        )

    params = {name: Tensor(arr.copy(), requires_grad=True) for name, arr in net.weights().items()}
    state = AdamState(lr=net.lr, weight_decay=net.weight_decay)
    n = len(prepared)
    batch_size = net.batch_size if net.batch_size > 0 else n
    for epoch in range(net.epochs):
        if net.epochs == 1:
            temp = net.temp_start
        else:
            temp = net.temp_start * (net.temp_end / net.temp_start) ** (
                epoch / (net.epochs - 1)
            )
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            batch = order[start : start + batch_size]
            with Tape() as tape:
                total = None
                for k in batch:
                    fwd, rev, scatter, x, onehot, n_nodes, n_edges = prepared[k]
                    u = rng.uniform(1e-12, 1.0 - 1e-12, size=(n_edges, 1))
                    noise = Tensor(np.log(u) - np.log1p(-u))
                    logits = _pg_logits_t(params, fwd, rev)
                    w = ad.sigmoid(ad.scalar_mul(ad.add(logits, noise), 1.0 / temp))
                    a_hat = _masked_a_hat(scatter, w, n_nodes)
                    logp, _ = forward_tensors(consts, x, a_hat)
                    ce = ad.neg(ad.sum_all(ad.mul(logp, onehot)))
                    item = ad.add(ce, ad.scalar_mul(ad.sum_all(w), net.size_coef))
                    total = item if total is None else ad.add(total, item)
                loss = ad.scalar_mul(total, 1.0 / len(batch))
            backward(tape, loss)
            adam_step(params, {k: t.grad for k, t in params.items()}, state)
            zero_grads(params)
    return replace(net, **{name: t.data for name, t in params.items()})


def pgexplainer_mask(net: PgNet, model: GcnModel, g: Graph) -> EdgeMask:
    """Deterministic inference scores: sigmoid of order-averaged edge logits."""
    if net.v1.shape[0] != 2 * model.hidden:
        raise ContractError(
            f"scorer input width {net.v1.shape[0]} does not match twice the "
            f"classifier hidden width {model.hidden}"
        )
    _, emb = gcn_forward(model, g)
    fwd, rev = _edge_embeddings(g, emb)
    logits = _pg_logits_numpy(net, fwd, rev)[:, 0]
    scores = np.where(
        logits >= 0,
        1.0 / (1.0 + np.exp(-np.clip(logits, -700, None))),
        np.exp(np.clip(logits, None, 700)) / (1.0 + np.exp(np.clip(logits, None, 700))),
    )
    return {e: float(s) for e, s in zip(g.edges, scores)}


def topk_edges(mask: EdgeMask, k: float) -> frozenset[Edge]:
    """The ceil(k * |E|) highest-scoring edges; ties break lexicographically."""
    if not 0.0 < k <= 1.0:
        raise ParameterError(f"top-k fraction must be in (0, 1], got {k}")
    if not mask:
        raise ContractError("empty edge mask")
    count = math.ceil(k * len(mask))
    ranked = sorted(mask.items(), key=lambda item: (-item[1], item[0]))
    return frozenset(e for e, _ in ranked[:count])


def export_masks(masks: Mapping[int, EdgeMask], path) -> None:
    """CSV rows (graph_index, i, j, score), sorted for stable diffs."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["graph_index", "i", "j", "score"])
        for gi in sorted(masks):
            for (i, j) in sorted(masks[gi]):
                writer.writerow([gi, i, j, repr(masks[gi][(i, j)])])


def save_pgnet(net: PgNet, path) -> None:
    """Checkpoint in the same shapes-plus-flat-arrays JSON format as the GCN."""
    doc = {
        name: {"shape": list(arr.shape), "data": arr.ravel().tolist()}
        for name, arr in net.weights().items()
    }
    doc["hyper"] = {
        "temp_start": net.temp_start,
        "temp_end": net.temp_end,
        "epochs": net.epochs,
        "lr": net.lr,
        "weight_decay": net.weight_decay,
        "size_coef": net.size_coef,
        "batch_size": net.batch_size,
    }
    Path(path).write_text(json.dumps(doc))


def load_pgnet(path) -> PgNet:
    doc = json.loads(Path(path).read_text())
    weights = {
        name: np.asarray(doc[name]["data"], dtype=np.float64).reshape(doc[name]["shape"])
        for name in ("v1", "c1", "v2", "c2")
    }
    return PgNet(**weights, **doc["hyper"])
