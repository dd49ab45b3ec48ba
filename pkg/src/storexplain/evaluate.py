"""Quantitative evaluation: edge AUC, robust fidelity, heatmaps, histograms.

Fidelity here is the stochastic-perturbation variant: instead of deleting
the explanation outright (which drags the probe far out of distribution),
each relevant edge is deleted independently with a small probability and
the prediction-agreement drop is averaged over Monte Carlo samples.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import ContractError, ParameterError
from .explain import EdgeMask
from .gcn import GcnModel, evaluate_accuracy, predict
from .graphs import Dataset, Edge, Graph, apply_edge_weights
from .reweight import GaussianWeightParams, std_normal_pdf


def auc_roc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """P(random positive outranks random negative), ties counted half.

    Rank-based, O(n log n); agrees exactly with brute-force pair counting.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise ContractError(f"scores {s.shape} and labels {y.shape} must be equal-length 1-D")
    n_pos = int((y == 1).sum())
    n_neg = int((y == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise ContractError("AUC needs both classes present")
    order = np.argsort(s, kind="mergesort")
    ranks = np.empty(len(s))
    i = 0
    ss = s[order]
    while i < len(s):
        j = i
        while j + 1 < len(s) and ss[j + 1] == ss[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0  # average of 1-based ranks
        i = j + 1
    pos_rank_sum = ranks[y == 1].sum()
    return float((pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def explanation_auc(
    masks: Mapping[int, EdgeMask],
    ds: Dataset,
    per_graph_mean: bool = False,
) -> float:
    """Edge-level AUC of mask scores against ground-truth motif edges.

    Default pools all (score, is-gt) pairs across the masked graphs into one
    ranking; ``per_graph_mean`` instead averages per-graph AUCs.
    """
    missing = [i for i in sorted(masks) if ds.graphs[i].gt_edge_mask is None]
    if missing:
        raise ContractError(f"graphs without ground-truth masks: {missing[:10]}")
    if not masks:
        raise ContractError("no masks to evaluate")
    if per_graph_mean:
        per_graph = []
        for i in sorted(masks):
            g = ds.graphs[i]
            scores = [masks[i][e] for e in g.edges]
            labels = [1 if e in g.gt_edge_mask else 0 for e in g.edges]
            per_graph.append(auc_roc(scores, labels))
        return float(np.mean(per_graph))
    scores, labels = [], []
    for i in sorted(masks):
        g = ds.graphs[i]
        for e in g.edges:
            scores.append(masks[i][e])
            labels.append(1 if e in g.gt_edge_mask else 0)
    return auc_roc(scores, labels)


@dataclass(frozen=True)
class FidelityConfig:
    alpha1: float = 0.1
    alpha2: float = 0.9
    mc_samples: int = 50
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.alpha1 <= 1.0 and 0.0 <= self.alpha2 <= 1.0):
            raise ParameterError("alphas must lie in [0, 1]")
        if self.mc_samples < 1:
            raise ParameterError(f"mc_samples must be >= 1, got {self.mc_samples}")


def _agreement(model, g, target, flip_edges, keep_prob_complement, rng, m_samples):
    """Fraction of samples whose prediction survives random edge deletion."""
    base_weights = {e: float(g.adjacency[e[0], e[1]]) for e in g.edges}
    agree = 0
    for _ in range(m_samples):
        weights = dict(base_weights)
        for e in flip_edges:
            if rng.uniform() < keep_prob_complement:
                weights[e] = 0.0
        if predict(model, apply_edge_weights(g, weights)) == target:
            agree += 1
    return agree / m_samples


def fid_plus(
    model: GcnModel,
    g: Graph,
    expl_edges: frozenset[Edge],
    cfg: FidelityConfig,
    rng: np.random.Generator,
) -> float:
    """Necessity: agreement drop when explanation edges are deleted w.p. alpha1."""
    bad = set(expl_edges) - set(g.edges)
    if bad:
        raise ContractError(f"explanation edges not in graph: {sorted(bad)[:5]}")
    target = predict(model, g)
    agree = _agreement(model, g, target, sorted(expl_edges), cfg.alpha1, rng, cfg.mc_samples)
    return 1.0 - agree


def fid_minus(
    model: GcnModel,
    g: Graph,
    expl_edges: frozenset[Edge],
    cfg: FidelityConfig,
    rng: np.random.Generator,
) -> float:
    """Sufficiency: agreement drop when non-explanation edges are deleted w.p. alpha2."""
    bad = set(expl_edges) - set(g.edges)
    if bad:
        raise ContractError(f"explanation edges not in graph: {sorted(bad)[:5]}")
    target = predict(model, g)
    others = sorted(set(g.edges) - set(expl_edges))
    agree = _agreement(model, g, target, others, cfg.alpha2, rng, cfg.mc_samples)
    return 1.0 - agree


@dataclass(frozen=True)
class HeatmapGrid:
    """Accuracy under every (explanation weight, non-explanation weight) pair.

    Rows follow ``non_expl_weights``, columns follow ``expl_weights``.
    """

    expl_weights: tuple[float, ...]
    non_expl_weights: tuple[float, ...]
    accuracy: np.ndarray

    def __post_init__(self):
        acc = np.asarray(self.accuracy, dtype=np.float64)
        if acc.shape != (len(self.non_expl_weights), len(self.expl_weights)):
            raise ContractError(
                f"accuracy shape {acc.shape} does not match axes "
                f"({len(self.non_expl_weights)}, {len(self.expl_weights)})"
            )
        acc.setflags(write=False)
        object.__setattr__(self, "accuracy", acc)

    def cell(self, w_exp: float, w_non: float) -> float:
        col = self.expl_weights.index(w_exp)
        row = self.non_expl_weights.index(w_non)
        return float(self.accuracy[row, col])


def weight_sweep_heatmap(
    model: GcnModel, ds: Dataset, grid_step: float = 0.1
) -> HeatmapGrid:
    """Accuracy over the test split with gt edges at w_exp and the rest at w_non."""
    k = round(1.0 / grid_step)
    if k < 2 or abs(k * grid_step - 1.0) > 1e-9:
        raise ParameterError(
            f"grid_step {grid_step} must divide (0, 1] into at least 2 points"
        )
    values = tuple((i + 1) / k for i in range(k))
    test_idx = ds.indices("test")
    graphs = [ds.graphs[i] for i in test_idx]
    missing = [i for i, g in zip(test_idx, graphs) if g.gt_edge_mask is None]
    if missing:
        raise ContractError(f"test graphs without gt masks: {missing[:10]}")
    acc = np.zeros((k, k))
    for row, w_non in enumerate(values):
        for col, w_exp in enumerate(values):
            hits = 0
            for g in graphs:
                weights = {
                    e: (w_exp if e in g.gt_edge_mask else w_non) for e in g.edges
                }
                hits += int(predict(model, apply_edge_weights(g, weights)) == g.label)
            acc[row, col] = hits / len(graphs)
    return HeatmapGrid(expl_weights=values, non_expl_weights=values, accuracy=acc)


def mean_heatmap(grids: Sequence[HeatmapGrid]) -> HeatmapGrid:
    first = grids[0]
    for grid in grids[1:]:
        if (
            grid.expl_weights != first.expl_weights
            or grid.non_expl_weights != first.non_expl_weights
        ):
            raise ContractError("heatmap axes differ; cannot average")
    stacked = np.stack([g.accuracy for g in grids])
    return HeatmapGrid(first.expl_weights, first.non_expl_weights, stacked.mean(axis=0))


def heatmap_to_csv(grid: HeatmapGrid, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["non_expl_weight\\expl_weight"] + [repr(w) for w in grid.expl_weights])
        for row, w_non in enumerate(grid.non_expl_weights):
            writer.writerow([repr(w_non)] + [repr(v) for v in grid.accuracy[row]])


def load_heatmap_csv(path) -> HeatmapGrid:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    expl = tuple(float(v) for v in rows[0][1:])
    non_expl = tuple(float(r[0]) for r in rows[1:])
    acc = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    return HeatmapGrid(expl_weights=expl, non_expl_weights=non_expl, accuracy=acc)


def _lerp_color(t: float) -> str:
    # dark blue -> teal -> yellow, a simple perceptual-ish ramp
    stops = [(13, 8, 135), (33, 145, 140), (253, 231, 37)]
    t = min(max(t, 0.0), 1.0)
    scaled = t * (len(stops) - 1)
    i = min(int(scaled), len(stops) - 2)
    frac = scaled - i
    rgb = [round(a + (b - a) * frac) for a, b in zip(stops[i], stops[i + 1])]
    return f"rgb({rgb[0]},{rgb[1]},{rgb[2]})"


def heatmap_to_svg(grid: HeatmapGrid, path, title: str = "accuracy") -> None:
    """Self-contained SVG: linear color map, axis labels, per-cell values."""
    cell = 46
    margin_left, margin_top, margin_bottom = 70, 40, 60
    n_rows = len(grid.non_expl_weights)
    n_cols = len(grid.expl_weights)
    width = margin_left + n_cols * cell + 20
    height = margin_top + n_rows * cell + margin_bottom
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'font-family="sans-serif" font-size="11">',
        f'<text x="{margin_left}" y="20" font-size="14">{title}</text>',
    ]
    # rows are drawn with the highest non-explanation weight at the top
    for row, w_non in enumerate(grid.non_expl_weights):
        y = margin_top + (n_rows - 1 - row) * cell
        for col, w_exp in enumerate(grid.expl_weights):
            x = margin_left + col * cell
            v = grid.accuracy[row, col]
            parts.append(
                f'<rect x="{x}" y="{y}" width="{cell}" height="{cell}" '
                f'fill="{_lerp_color(v)}" stroke="white"/>'
            )
            text_fill = "white" if v < 0.65 else "black"
            parts.append(
                f'<text x="{x + cell / 2}" y="{y + cell / 2 + 4}" text-anchor="middle" '
                f'fill="{text_fill}">{v:.2f}</text>'
            )
        parts.append(
            f'<text x="{margin_left - 8}" y="{y + cell / 2 + 4}" text-anchor="end">'
            f"{w_non:g}</text>"
        )
    for col, w_exp in enumerate(grid.expl_weights):
        x = margin_left + col * cell
        parts.append(
            f'<text x="{x + cell / 2}" y="{margin_top + n_rows * cell + 16}" '
            f'text-anchor="middle">{w_exp:g}</text>'
        )
    parts.append(
        f'<text x="{margin_left + n_cols * cell / 2}" '
        f'y="{margin_top + n_rows * cell + 36}" text-anchor="middle">'
        "explanation edge weight</text>"
    )
    parts.append(
        f'<text x="16" y="{margin_top + n_rows * cell / 2}" text-anchor="middle" '
        f'transform="rotate(-90 16 {margin_top + n_rows * cell / 2})">'
        "non-explanation edge weight</text>"
    )
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts))


@dataclass(frozen=True)
class WeightHistogram:
    """Binned samples for both edge groups plus untruncated normal overlays."""

    bin_centers: tuple[float, ...]
    count_expl: tuple[int, ...]
    count_non: tuple[int, ...]
    density_expl: tuple[float, ...]
    density_non: tuple[float, ...]


def weight_histogram(
    samples_expl: Sequence[float],
    samples_non: Sequence[float],
    bins: int,
    params: GaussianWeightParams,
) -> WeightHistogram:
    """Equal-width bins over [0, 1] with Normal(mu, sigma^2) density overlays."""
    if bins < 2:
        raise ParameterError(f"need at least 2 bins, got {bins}")
    if len(samples_expl) == 0 or len(samples_non) == 0:
        raise ContractError("both sample sets must be nonempty")
    edges = np.linspace(0.0, 1.0, bins + 1)
    count_expl, _ = np.histogram(samples_expl, bins=edges)
    count_non, _ = np.histogram(samples_non, bins=edges)
    centers = (edges[:-1] + edges[1:]) / 2.0
    dens1 = [std_normal_pdf((c - params.mu1) / params.sigma) / params.sigma for c in centers]
    dens2 = [std_normal_pdf((c - params.mu2) / params.sigma) / params.sigma for c in centers]
    return WeightHistogram(
        bin_centers=tuple(float(c) for c in centers),
        count_expl=tuple(int(c) for c in count_expl),
        count_non=tuple(int(c) for c in count_non),
        density_expl=tuple(dens1),
        density_non=tuple(dens2),
    )


def histogram_to_csv(hist: WeightHistogram, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_center", "count_expl", "count_non", "density_expl", "density_non"])
        for i, c in enumerate(hist.bin_centers):
            writer.writerow(
                [
                    repr(c),
                    hist.count_expl[i],
                    hist.count_non[i],
                    repr(hist.density_expl[i]),
                    repr(hist.density_non[i]),
                ]
            )


def load_histogram_csv(path) -> WeightHistogram:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    return WeightHistogram(
        bin_centers=tuple(float(r[0]) for r in rows),
        count_expl=tuple(int(r[1]) for r in rows),
        count_non=tuple(int(r[2]) for r in rows),
        density_expl=tuple(float(r[3]) for r in rows),
        density_non=tuple(float(r[4]) for r in rows),
    )
