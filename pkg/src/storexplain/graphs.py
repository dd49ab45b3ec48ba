"""Graph data model, synthetic motif benchmark generation, and dataset I/O.

Graphs are undirected with real edge weights in [0, 1]; a zero adjacency
entry means the edge is absent.  The synthetic benchmark attaches a 5-node
motif (house or five-cycle) to a small preferential-attachment base graph;
the motif's internal edges are the ground-truth explanation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .errors import ContractError, DatasetFormatError, ParameterError, ValidationError

Edge = tuple[int, int]

FEATURE_DIM = 10
BASE_NODES = 20
BASE_EDGES_PER_NODE = 1
SPLITS = ("train", "val", "test")

# Fractions of each class routed to val and test; the remainder is train.
VAL_FRACTION = 0.1
TEST_FRACTION = 0.1


def _canonical_edge(i: int, j: int) -> Edge:
    return (i, j) if i < j else (j, i)


@dataclass(frozen=True)
class Graph:
    """A labeled, weighted, undirected graph.

    Instances are immutable: the numpy buffers are marked read-only so a
    graph can be shared freely across threads and evaluation passes.
    """

    node_features: np.ndarray
    adjacency: np.ndarray
    label: Optional[int] = None
    gt_edge_mask: Optional[frozenset[Edge]] = None

    def __post_init__(self):
        feats = np.ascontiguousarray(self.node_features, dtype=np.float64)
        adj = np.ascontiguousarray(self.adjacency, dtype=np.float64)
        if feats.ndim != 2:
            raise ValidationError(f"node_features must be 2-D, got shape {feats.shape}")
        n = feats.shape[0]
        if adj.shape != (n, n):
            raise ValidationError(
                f"adjacency shape {adj.shape} does not match {n} nodes"
            )
        if not np.array_equal(adj, adj.T):
            raise ValidationError("adjacency is not symmetric")
        if np.any(np.diagonal(adj) != 0.0):
            raise ValidationError("adjacency diagonal must be zero (no self-loops)")
        if n and (adj.min() < 0.0 or adj.max() > 1.0):
            raise ValidationError("weight out of [0,1]")
        feats.setflags(write=False)
        adj.setflags(write=False)
        object.__setattr__(self, "node_features", feats)
        object.__setattr__(self, "adjacency", adj)
        if self.gt_edge_mask is not None:
            gt = frozenset(_canonical_edge(i, j) for i, j in self.gt_edge_mask)
            for i, j in gt:
                if not (0 <= i < n and 0 <= j < n) or adj[i, j] == 0.0:
                    raise ValidationError(f"gt edge ({i},{j}) is not a present edge")
            object.__setattr__(self, "gt_edge_mask", gt)

    @property
    def n_nodes(self) -> int:
        return self.adjacency.shape[0]

    @cached_property
    def edges(self) -> tuple[Edge, ...]:
        """Present undirected edges as (i, j) with i < j, in lexicographic order."""
        ii, jj = np.nonzero(np.triu(self.adjacency, k=1))
        return tuple(zip(ii.tolist(), jj.tolist()))

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def same_content(self, other: "Graph") -> bool:
        return (
            np.array_equal(self.node_features, other.node_features)
            and np.array_equal(self.adjacency, other.adjacency)
            and self.label == other.label
            and self.gt_edge_mask == other.gt_edge_mask
        )


class MotifKind(Enum):
    """The two 5-node motifs that define the benchmark's classes."""

    HOUSE = "house"
    FIVE_CYCLE = "five_cycle"

    @property
    def label(self) -> int:
        return 0 if self is MotifKind.HOUSE else 1

    @property
    def internal_edges(self) -> tuple[Edge, ...]:
        if self is MotifKind.HOUSE:
            # square 0-1-2-3 plus roof node 4 joined to corners 0 and 1
            return ((0, 1), (1, 2), (2, 3), (0, 3), (0, 4), (1, 4))
        return ((0, 1), (1, 2), (2, 3), (3, 4), (0, 4))

    @property
    def n_internal_edges(self) -> int:
        return len(self.internal_edges)


@dataclass(frozen=True)
class Dataset:
    """An ordered collection of labeled graphs with train/val/test tags."""

    graphs: tuple[Graph, ...]
    split: tuple[str, ...]
    provenance: str
    seed: int

    def __post_init__(self):
        object.__setattr__(self, "graphs", tuple(self.graphs))
        object.__setattr__(self, "split", tuple(self.split))
        if len(self.graphs) != len(self.split):
            raise ValidationError(
                f"{len(self.split)} split tags for {len(self.graphs)} graphs"
            )
        for tag in self.split:
            if tag not in SPLITS:
                raise ValidationError(f"unknown split tag {tag!r}")
        for idx, g in enumerate(self.graphs):
            if g.label not in (0, 1):
                raise ValidationError(f"graph {idx}: label {g.label!r} not in {{0,1}}")

    def __len__(self) -> int:
        return len(self.graphs)

    def indices(self, split: str) -> tuple[int, ...]:
        if split not in SPLITS:
            raise ParameterError(f"unknown split {split!r}")
        return tuple(i for i, tag in enumerate(self.split) if tag == split)

    def graphs_in(self, split: str) -> tuple[Graph, ...]:
        return tuple(self.graphs[i] for i in self.indices(split))

    def subset(self, indices: Sequence[int], provenance: str) -> "Dataset":
        return Dataset(
            graphs=tuple(self.graphs[i] for i in indices),
            split=tuple(self.split[i] for i in indices),
            provenance=provenance,
            seed=self.seed,
        )

    def with_extra_train(self, extra: Sequence[Graph], provenance: str) -> "Dataset":
        """Append graphs to the training pool, leaving val/test untouched."""
        return Dataset(
            graphs=self.graphs + tuple(extra),
            split=self.split + ("train",) * len(extra),
            provenance=provenance,
            seed=self.seed,
        )

    def same_content(self, other: "Dataset") -> bool:
        """Field-for-field equality, ignoring provenance (which records origin)."""
        return (
            self.seed == other.seed
            and self.split == other.split
            and len(self.graphs) == len(other.graphs)
            and all(a.same_content(b) for a, b in zip(self.graphs, other.graphs))
        )


def ba_base(n_nodes: int, edges_per_new_node: int, rng: np.random.Generator) -> Graph:
    """Grow a preferential-attachment graph from a two-node seed clique.

    Each new node attaches to ``min(edges_per_new_node, existing)`` distinct
    nodes chosen proportionally to degree, so the result is connected.
    """
    if n_nodes < 2:
        raise ParameterError(f"need at least 2 nodes, got {n_nodes}")
    if edges_per_new_node < 1:
        raise ParameterError(f"need at least 1 edge per new node, got {edges_per_new_node}")
    adj = np.zeros((n_nodes, n_nodes))
    adj[0, 1] = adj[1, 0] = 1.0
    # each node appears once per unit of degree; sampling uniformly from this
    # list is sampling proportionally to degree
    repeated = [0, 1]
    for new in range(2, n_nodes):
        m = min(edges_per_new_node, new)
        targets: set[int] = set()
        while len(targets) < m:
            targets.add(repeated[int(rng.integers(len(repeated)))])
        for t in sorted(targets):
            adj[new, t] = adj[t, new] = 1.0
            repeated.append(t)
        repeated.extend([new] * m)
    return Graph(node_features=np.ones((n_nodes, FEATURE_DIM)), adjacency=adj)


def attach_motif(base: Graph, kind: MotifKind, rng: np.random.Generator) -> Graph:
    """Attach a 5-node motif to ``base`` by one random edge and label the result.

    The ground-truth explanation is the motif's internal edges; the random
    attachment edge is deliberately excluded from it.
    """
    n = base.n_nodes
    if n < 1:
        raise ParameterError("base graph must have at least one node")
    total = n + 5
    adj = np.zeros((total, total))
    adj[:n, :n] = base.adjacency
    motif_edges = []
    for a, b in kind.internal_edges:
        i, j = n + a, n + b
        adj[i, j] = adj[j, i] = 1.0
        motif_edges.append((i, j))
    u = int(rng.integers(n))
    v = n + int(rng.integers(5))
    adj[u, v] = adj[v, u] = 1.0
    feats = np.vstack([base.node_features, np.ones((5, base.node_features.shape[1]))])
    return Graph(
        node_features=feats,
        adjacency=adj,
        label=kind.label,
        gt_edge_mask=frozenset(motif_edges),
    )


def generate_ba2motifs(n_graphs: int, seed: int) -> Dataset:
    """Generate the balanced two-motif benchmark: half houses, half five-cycles.

    Every graph is a 20-node preferential-attachment tree plus one motif,
    with constant all-ones 10-dim node features.  The split is 80/10/10
    stratified by class.  Identical (n_graphs, seed) yield identical datasets.
    """
    if n_graphs < 2:
        raise ParameterError(f"need at least 2 graphs, got {n_graphs}")
    if n_graphs % 2 != 0:
        raise ParameterError(f"odd n_graphs {n_graphs}: class balance requires an even count")
    rng = np.random.default_rng(seed)
    per_class = n_graphs // 2
    graphs = []
    for kind in (MotifKind.HOUSE, MotifKind.FIVE_CYCLE):
        for _ in range(per_class):
            base = ba_base(BASE_NODES, BASE_EDGES_PER_NODE, rng)
            graphs.append(attach_motif(base, kind, rng))
    n_val = int(per_class * VAL_FRACTION)
    n_test = int(per_class * TEST_FRACTION)
    n_train = per_class - n_val - n_test
    class_tags = ("train",) * n_train + ("val",) * n_val + ("test",) * n_test
    return Dataset(
        graphs=tuple(graphs),
        split=class_tags * 2,
        provenance=f"ba2motifs(n_graphs={n_graphs}, seed={seed})",
        seed=seed,
    )


def apply_edge_weights(g: Graph, weights: Mapping[Edge, float]) -> Graph:
    """Return a copy of ``g`` whose edges carry the given weights.

    ``weights`` must be keyed by exactly the present edges (either
    orientation).  A weight of 0 removes the edge; ground-truth edges that
    disappear this way are dropped from the mask.  ``g`` itself is untouched.
    """
    normalized: dict[Edge, float] = {}
    for key, w in weights.items():
        e = _canonical_edge(*key)
        if e in normalized:
            raise ContractError(f"edge {e} given twice (both orientations?)")
        normalized[e] = float(w)
    present = set(g.edges)
    missing = present - normalized.keys()
    extra = normalized.keys() - present
    if missing or extra:
        raise ContractError(
            f"weight keys do not match present edges: missing {sorted(missing)[:5]}, "
            f"extra {sorted(extra)[:5]}"
        )
    for e, w in normalized.items():
        if not (0.0 <= w <= 1.0):
            raise ValidationError(f"weight out of [0,1] for edge {e}: {w}")
    adj = np.zeros_like(g.adjacency)
    for (i, j), w in normalized.items():
        adj[i, j] = adj[j, i] = w
    gt = g.gt_edge_mask
    if gt is not None:
        gt = frozenset(e for e in gt if normalized[e] > 0.0)
    return Graph(node_features=g.node_features, adjacency=adj, label=g.label, gt_edge_mask=gt)


def save_dataset(ds: Dataset, path) -> None:
    """Write ``ds`` as JSON: {"seed", "graphs": [{label, features, edges, ...}]}.

    Edges are listed once per undirected pair with i < j.  Floats round-trip
    exactly (shortest-repr decimal serialization of 64-bit values).
    """
    doc = {"seed": ds.seed, "graphs": []}
    for g, tag in zip(ds.graphs, ds.split):
        entry = {
            "label": g.label,
            "features": g.node_features.tolist(),
            "edges": [[i, j, float(g.adjacency[i, j])] for i, j in g.edges],
            "split": tag,
        }
        if g.gt_edge_mask is not None:
            entry["gt_edges"] = [[i, j] for i, j in sorted(g.gt_edge_mask)]
        doc["graphs"].append(entry)
    Path(path).write_text(json.dumps(doc))


def load_dataset(path) -> Dataset:
    """Parse a dataset file, validating every graph; errors name the graph index."""
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or "graphs" not in doc or "seed" not in doc:
        raise DatasetFormatError('top level must be {"seed": ..., "graphs": [...]}')
    graphs, tags = [], []
    for idx, entry in enumerate(doc["graphs"]):
        try:
            graphs.append(_graph_from_json(entry))
            tag = entry["split"]
            if tag not in SPLITS:
                raise DatasetFormatError(f"unknown split tag {tag!r}")
            tags.append(tag)
        except (DatasetFormatError, ValidationError, KeyError, TypeError) as exc:
            msg = exc.args[0] if exc.args else repr(exc)
            raise DatasetFormatError(f"graph {idx}: {msg}") from exc
    return Dataset(
        graphs=tuple(graphs),
        split=tuple(tags),
        provenance=str(path),
        seed=int(doc["seed"]),
    )


def _graph_from_json(entry: dict) -> Graph:
    feats = np.asarray(entry["features"], dtype=np.float64)
    if feats.ndim != 2:
        raise DatasetFormatError("features must be a list of equal-length rows")
    n = feats.shape[0]
    adj = np.zeros((n, n))
    for item in entry["edges"]:
        if len(item) != 3:
            raise DatasetFormatError(f"edge entry {item} must be [i, j, w]")
        i, j, w = int(item[0]), int(item[1]), float(item[2])
        if not (0 <= i < n and 0 <= j < n):
            raise DatasetFormatError(f"edge ({i},{j}) out of range for {n} nodes")
        if i >= j:
            raise DatasetFormatError(f"edge ({i},{j}) must be listed with i < j")
        if adj[i, j] != 0.0:
            raise DatasetFormatError(f"edge ({i},{j}) listed twice")
        if not (0.0 <= w <= 1.0):
            raise DatasetFormatError(f"weight out of [0,1] for edge ({i},{j}): {w}")
        adj[i, j] = adj[j, i] = w
    gt = None
    if "gt_edges" in entry:
        gt = frozenset((int(i), int(j)) for i, j in entry["gt_edges"])
    return Graph(node_features=feats, adjacency=adj, label=int(entry["label"]), gt_edge_mask=gt)
