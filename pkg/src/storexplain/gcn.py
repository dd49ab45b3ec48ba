"""Three-layer graph convolutional classifier over weighted adjacency.

Edge weights enter messages multiplicatively through the normalized
adjacency, so scaling a weight toward zero continuously removes that edge's
influence.  Training minimizes mean negative log-likelihood with Adam and
keeps the parameters of the best validation-accuracy epoch.

Two implementation notes born of the constant-feature benchmark:

* With all-ones node features, ``X @ W`` has identical rows, so zero-init
  biases leave every relu unit fully on or fully off across all nodes and
  the whole network collapses to a linear function of one scalar field --
  a saddle that gradient descent escapes only glacially.  ``init_gcn``
  therefore centers the first layer's relu thresholds inside the
  constant-feature propagation band (a pure function of the initialized
  weights, no data involved).
* When every training graph shares one (n, d) shape, minibatches are
  trained through a vectorized forward/backward over stacked 3-D arrays;
  otherwise training falls back to the per-graph autodiff tape.  The two
  paths compute the same math (covered by an equivalence test).
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor, backward, zero_grads
from .errors import ContractError, ParameterError
from .graphs import Dataset, Graph
from .optim import AdamState, adam_step

log = logging.getLogger(__name__)

PARAM_NAMES = ("w1", "b1", "w2", "b2", "w3", "b3", "readout")

N_CLASSES = 2

# relu-threshold placement for the first layer under constant input rows
_THRESHOLD_BAND = (0.6, 1.3)


@dataclass
class GcnModel:
    """Parameters of the classifier: three conv layers plus a linear readout."""

    w1: np.ndarray  # (d, h)
    b1: np.ndarray  # (1, h)
    w2: np.ndarray  # (h, h)
    b2: np.ndarray  # (1, h)
    w3: np.ndarray  # (h, h)
    b3: np.ndarray  # (1, h)
    readout: np.ndarray  # (h, n_classes)

    @property
    def feature_dim(self) -> int:
        return self.w1.shape[0]

    @property
    def hidden(self) -> int:
        return self.w1.shape[1]

    @property
    def n_classes(self) -> int:
        return self.readout.shape[1]

    def params(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def copy(self) -> "GcnModel":
        return GcnModel(**{k: v.copy() for k, v in self.params().items()})


@dataclass(frozen=True)
class TrainConfig:
    """Classifier training settings.

    A training attempt whose best validation accuracy stays below
    ``restart_threshold`` is retried from a fresh derived initialization
    (up to ``max_restarts`` extra attempts, deterministically); the best
    attempt wins.  Symmetry-breaking on this benchmark is initialization
    sensitive, so occasional restarts buy a lot of robustness.

    ``val_tolerance`` only matters when a robustness probe set is supplied
    to :func:`train_gnn`: the checkpoint then maximizes probe accuracy
    among epochs whose validation accuracy is within the tolerance of the
    best seen.
    """

    epochs: int = 500
    lr: float = 1e-3
    seed: int = 0
    hidden: int = 20
    patience: int = 100
    batch_size: int = 32
    max_restarts: int = 2
    restart_threshold: float = 0.9
    val_tolerance: float = 0.04

    def __post_init__(self):
        if self.epochs < 1:
            raise ParameterError(f"epochs must be >= 1, got {self.epochs}")
        if self.lr <= 0:
            raise ParameterError(f"learning rate must be > 0, got {self.lr}")


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_gcn(feature_dim: int, hidden: int, rng: np.random.Generator) -> GcnModel:
    w1 = _glorot(rng, feature_dim, hidden)
    # place layer-1 relu thresholds inside the band the propagation of a
    # constant all-ones row would produce, so units start diversified
    response = w1.sum(axis=0)
    b1 = -response * rng.uniform(*_THRESHOLD_BAND, size=response.shape)
    return GcnModel(
        w1=w1,
        b1=b1.reshape(1, -1),
        w2=_glorot(rng, hidden, hidden),
        b2=np.zeros((1, hidden)),
        w3=_glorot(rng, hidden, hidden),
        b3=np.zeros((1, hidden)),
        readout=_glorot(rng, hidden, N_CLASSES),
    )


def normalize_adjacency(adj: np.ndarray) -> np.ndarray:
    """Symmetric degree normalization with self-loops: D^(-1/2) (A+I) D^(-1/2).

    An isolated node keeps degree 1 from its self-loop, so this is total.
    """
    a = adj + np.eye(adj.shape[0])
    s = 1.0 / np.sqrt(a.sum(axis=1))
    return a * s[:, None] * s[None, :]


def normalize_adjacency_t(a_weighted: Tensor) -> Tensor:
    """Differentiable twin of :func:`normalize_adjacency` for mask training."""
    n = a_weighted.data.shape[0]
    if a_weighted.data.shape != (n, n):
        raise ContractError(f"adjacency must be square, got {a_weighted.data.shape}")
    with_loops = ad.add(a_weighted, ad.const(np.eye(n)))
    deg = ad.matmul(with_loops, ad.const(np.ones((n, 1))))
    s = ad.rsqrt(deg)
    scale = ad.matmul(s, ad.reshape(s, 1, n))
    return ad.mul(with_loops, scale)


def forward_tensors(
    params: Mapping[str, Tensor], x: Tensor, a_hat: Tensor
) -> tuple[Tensor, Tensor]:
    """Log-probabilities (1, C) and final node embeddings (n, h), on the tape."""
    h = x
    for w, b in (("w1", "b1"), ("w2", "b2"), ("w3", "b3")):
        h = ad.relu(ad.add(ad.matmul(a_hat, ad.matmul(h, params[w])), params[b]))
    pooled = ad.mean_rows(h)
    logits = ad.matmul(pooled, params["readout"])
    return ad.log_softmax_rows(logits), h


def _forward_numpy(model: GcnModel, a_hat: np.ndarray, feats: np.ndarray):
    h = feats
    for w, b in ((model.w1, model.b1), (model.w2, model.b2), (model.w3, model.b3)):
        h = np.maximum(a_hat @ (h @ w) + b, 0.0)
    logits = h.mean(axis=0, keepdims=True) @ model.readout
    shifted = logits - logits.max()
    logp = shifted - np.log(np.exp(shifted).sum())
    return logp, h


def gcn_forward(model: GcnModel, g: Graph) -> tuple[np.ndarray, np.ndarray]:
    """Evaluate the classifier on one graph: (log-probs (1, C), embeddings (n, h))."""
    if g.node_features.shape[1] != model.feature_dim:
        raise ContractError(
            f"feature dim {g.node_features.shape[1]} does not match model "
            f"input dim {model.feature_dim}"
        )
    a_hat = normalize_adjacency(g.adjacency)
    return _forward_numpy(model, a_hat, g.node_features)


def predict(model: GcnModel, g: Graph) -> int:
    """Argmax class; ties resolve toward the lower class index."""
    logp, _ = gcn_forward(model, g)
    return int(np.argmax(logp[0]))


def evaluate_accuracy(model: GcnModel, graphs: Sequence[Graph]) -> float:
    if len(graphs) == 0:
        raise ContractError("cannot evaluate accuracy on an empty graph set")
    hits = sum(1 for g in graphs if predict(model, g) == g.label)
    return hits / len(graphs)


# ---------------------------------------------------------------------------
# training


def _stacks(ds: Dataset, indices) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    feats = np.stack([ds.graphs[i].node_features for i in indices])
    a_hat = np.stack([normalize_adjacency(ds.graphs[i].adjacency) for i in indices])
    labels = np.array([ds.graphs[i].label for i in indices])
    return feats, a_hat, labels


def _batched_forward(params: dict[str, np.ndarray], x: np.ndarray, a: np.ndarray):
    """Stacked-graph forward; returns (logp (B, C), cache for backward)."""
    cache = {"z": [x], "r": []}
    h = x
    for w, b in (("w1", "b1"), ("w2", "b2"), ("w3", "b3")):
        r = a @ (h @ params[w]) + params[b]
        h = np.maximum(r, 0.0)
        cache["r"].append(r)
        cache["z"].append(h)
    pooled = h.mean(axis=1)
    logits = pooled @ params["readout"]
    shifted = logits - logits.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    cache["pooled"] = pooled
    cache["logp"] = logp
    return logp, cache


def _batched_backward(
    params: dict[str, np.ndarray], x: np.ndarray, a: np.ndarray, labels: np.ndarray, cache
) -> dict[str, np.ndarray]:
    """Gradients of mean NLL over the batch; mirrors the tape path exactly."""
    batch, n, _ = x.shape
    onehot = np.eye(params["readout"].shape[1])[labels]
    dlogits = (np.exp(cache["logp"]) - onehot) / batch
    grads = {"readout": cache["pooled"].T @ dlogits}
    dh = (dlogits @ params["readout"].T)[:, None, :] / n
    dh = np.broadcast_to(dh, cache["z"][3].shape)
    for layer in (3, 2, 1):
        dr = dh * (cache["r"][layer - 1] > 0.0)
        grads[f"b{layer}"] = dr.sum(axis=(0, 1), keepdims=False).reshape(1, -1)
        dp = a.transpose(0, 2, 1) @ dr
        z_prev = cache["z"][layer - 1]
        grads[f"w{layer}"] = np.einsum("bnd,bnh->dh", z_prev, dp)
        if layer > 1:
            dh = dp @ params[f"w{layer}"].T
    return grads


def _batched_accuracy(params: dict[str, np.ndarray], x, a, labels) -> float:
    h = x
    for w, b in (("w1", "b1"), ("w2", "b2"), ("w3", "b3")):
        h = np.maximum(a @ (h @ params[w]) + params[b], 0.0)
    logits = h.mean(axis=1) @ params["readout"]
    return float((np.argmax(logits, axis=1) == labels).mean())


def _train_attempt_batched(
    ds: Dataset,
    cfg: TrainConfig,
    rng,
    init_model: GcnModel | None = None,
    robust_probe=None,
) -> tuple[dict, float]:
    train_idx = ds.indices("train")
    val_idx = ds.indices("val") or train_idx
    x_tr, a_tr, y_tr = _stacks(ds, train_idx)
    x_va, a_va, y_va = _stacks(ds, val_idx)
    probe = None
    if robust_probe is not None:
        x_p = np.stack([g.node_features for g in robust_probe])
        a_p = np.stack([normalize_adjacency(g.adjacency) for g in robust_probe])
        y_p = np.array([g.label for g in robust_probe])
        probe = (x_p, a_p, y_p)
    model = init_model.copy() if init_model is not None else init_gcn(x_tr.shape[2], cfg.hidden, rng)
    state = AdamState(lr=cfg.lr)
    tensors = {k: Tensor(v, requires_grad=True) for k, v in model.params().items()}
    params = {k: t.data for k, t in tensors.items()}

    def snapshot():
        val = _batched_accuracy(params, x_va, a_va, y_va)
        rob = _batched_accuracy(params, *probe) if probe is not None else 0.0
        return val, rob, {k: v.copy() for k, v in params.items()}

    # a warm start is itself a candidate checkpoint
    candidates = [snapshot()] if init_model is not None else []
    best_acc = candidates[0][0] if candidates else -1.0
    stale = 0
    n = len(train_idx)
    for _epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            xb, ab, yb = x_tr[idx], a_tr[idx], y_tr[idx]
            _, cache = _batched_forward(params, xb, ab)
            grads = _batched_backward(params, xb, ab, yb, cache)
            adam_step(tensors, grads, state)
            params = {k: t.data for k, t in tensors.items()}
        val, rob, snap = snapshot()
        if probe is not None:
            candidates.append((val, rob, snap))
        elif val > best_acc:
            candidates = [(val, rob, snap)]
        if val > best_acc:
            best_acc = val
            stale = 0
        else:
            stale += 1
            if stale > cfg.patience:
                break
    if probe is not None:
        floor = best_acc - cfg.val_tolerance
        eligible = [c for c in candidates if c[0] >= floor]
        val, rob, snap = max(eligible, key=lambda c: (c[1], c[0]))
        return snap, val
    val, rob, snap = candidates[0]
    return snap, val


def _nll(params: Mapping[str, Tensor], x: Tensor, a_hat: Tensor, onehot: Tensor) -> Tensor:
    logp, _ = forward_tensors(params, x, a_hat)
    return ad.neg(ad.sum_all(ad.mul(logp, onehot)))


def _train_attempt_tape(
    ds: Dataset,
    cfg: TrainConfig,
    rng,
    init_model: GcnModel | None = None,
    robust_probe=None,
) -> tuple[dict, float]:
    train_idx = ds.indices("train")
    val_idx = ds.indices("val") or train_idx
    if init_model is not None:
        model = init_model.copy()
    else:
        model = init_gcn(ds.graphs[train_idx[0]].node_features.shape[1], cfg.hidden, rng)
    params = {name: Tensor(arr, requires_grad=True) for name, arr in model.params().items()}
    state = AdamState(lr=cfg.lr)
    train_tensors = [
        (
            Tensor(ds.graphs[i].node_features),
            Tensor(normalize_adjacency(ds.graphs[i].adjacency)),
            Tensor(np.eye(N_CLASSES)[ds.graphs[i].label].reshape(1, -1)),
        )
        for i in train_idx
    ]
    val_graphs = [ds.graphs[i] for i in val_idx]

    def snapshot():
        current = GcnModel(**{k: t.data for k, t in params.items()})
        val = evaluate_accuracy(current, val_graphs)
        rob = evaluate_accuracy(current, robust_probe) if robust_probe is not None else 0.0
        return val, rob, {k: t.data.copy() for k, t in params.items()}

    candidates = [snapshot()] if init_model is not None else []
    best_acc = candidates[0][0] if candidates else -1.0
    stale = 0
    n = len(train_idx)
    for _epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            with Tape() as tape:
                total = None
                for k in batch:
                    x, a_hat, onehot = train_tensors[k]
                    nll = _nll(params, x, a_hat, onehot)
                    total = nll if total is None else ad.add(total, nll)
                loss = ad.scalar_mul(total, 1.0 / len(batch))
            backward(tape, loss)
            adam_step(params, {n_: t.grad for n_, t in params.items()}, state)
            zero_grads(params)
        val, rob, snap = snapshot()
        if robust_probe is not None:
            candidates.append((val, rob, snap))
        elif val > best_acc:
            candidates = [(val, rob, snap)]
        if val > best_acc:
            best_acc = val
            stale = 0
        else:
            stale += 1
            if stale > cfg.patience:
                break
    if robust_probe is not None:
        floor = best_acc - cfg.val_tolerance
        eligible = [c for c in candidates if c[0] >= floor]
        val, rob, snap = max(eligible, key=lambda c: (c[1], c[0]))
        return snap, val
    val, rob, snap = candidates[0]
    return snap, val


def train_gnn(
    ds: Dataset,
    cfg: TrainConfig = TrainConfig(),
    init_model: GcnModel | None = None,
    robust_probe: Sequence[Graph] | None = None,
) -> GcnModel:
    """Train on the dataset's train split; early-stop on validation accuracy.

    The returned model carries the parameters of the best validation epoch
    of the best attempt.  When the validation split is empty, training
    accuracy stands in for it.  Deterministic given (ds, cfg).

    ``init_model`` warm-starts from an existing model (restarts are then
    skipped: the point of a warm start is continuity).  ``robust_probe``
    switches checkpoint selection to the tolerance-band rule: among epochs
    within ``cfg.val_tolerance`` of the best validation accuracy, pick the
    one most accurate on the probe graphs.
    """
    train_idx = ds.indices("train")
    if not train_idx:
        raise ContractError("empty training split")
    shapes = {ds.graphs[i].node_features.shape for i in train_idx} | {
        ds.graphs[i].node_features.shape for i in ds.indices("val")
    }
    if robust_probe is not None:
        shapes |= {g.node_features.shape for g in robust_probe}
    attempt_fn = _train_attempt_batched if len(shapes) == 1 else _train_attempt_tape
    restarts = 0 if init_model is not None else cfg.max_restarts
    best_params, best_acc = None, -1.0
    for attempt in range(restarts + 1):
        rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, attempt)))
        params, acc = attempt_fn(ds, cfg, rng, init_model, robust_probe)
        log.debug("training attempt %d: best val accuracy %.3f", attempt, acc)
        if acc > best_acc:
            best_params, best_acc = params, acc
        if best_acc >= cfg.restart_threshold:
            break
    return GcnModel(**best_params)


def save_model(model: GcnModel, path) -> None:
    """Checkpoint as JSON of shapes plus flat parameter arrays (exact floats)."""
    doc = {
        name: {"shape": list(arr.shape), "data": arr.ravel().tolist()}
        for name, arr in model.params().items()
    }
    Path(path).write_text(json.dumps(doc))


def load_model(path) -> GcnModel:
    doc = json.loads(Path(path).read_text())
    kwargs = {}
    for name in PARAM_NAMES:
        entry = doc[name]
        kwargs[name] = np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
    return GcnModel(**kwargs)
