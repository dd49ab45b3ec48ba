"""The iterative refinement loop: explain, re-weight, retrain, repeat.

Each round takes the previous explainer's masks over the training split,
keeps a shrinking top-k fraction of edges as the explanation, re-weights
the training graphs stochastically, retrains the classifier from scratch on
originals plus weighted copies, and finally retrains the explainer against
the new classifier on the original (unweighted) graphs.

RNG streams for every stage derive from (root, iteration, stage), so a run
with more iterations reproduces a shorter run's prefix exactly.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import ParameterError, PipelineError
from .evaluate import FidelityConfig, explanation_auc, fid_minus, fid_plus
from .explain import (
    EdgeMask,
    MaskOptConfig,
    PgConfig,
    PgNet,
    gnnexplainer,
    init_pgnet,
    pgexplainer_mask,
    topk_edges,
    train_pgexplainer,
)
from .gcn import GcnModel, TrainConfig, evaluate_accuracy, train_gnn
from .graphs import Dataset
from .reweight import GaussianWeights, WeightStrategy, augment_dataset

log = logging.getLogger(__name__)

EXPLAINER_KINDS = ("pgexplainer", "gnnexplainer")


@dataclass(frozen=True)
class StoreConfig:
    """Settings for one full iterative run.

    Retraining during iterations warm-starts from the previous model by
    default (``warm_start=False`` gives fresh random initialization each
    round) and runs ``adapt_epochs`` epochs with robust checkpoint
    selection: the kept parameters maximize accuracy on the iteration's
    weighted copies among epochs whose validation accuracy stays within
    the training config's tolerance of the best.
    """

    iterations: int = 3
    delta_mu: float = 0.5
    alpha: float = 0.001
    topk_schedule: tuple[float, ...] = (0.9, 0.5, 0.1)
    explainer: str = "pgexplainer"
    train: TrainConfig = field(default_factory=TrainConfig)
    pg: PgConfig = field(default_factory=PgConfig)
    mask_opt: MaskOptConfig = field(default_factory=MaskOptConfig)
    # retrain on weighted copies alone instead of originals + copies
    g_prime_only: bool = False
    warm_start: bool = True
    adapt_epochs: int = 400

    def __post_init__(self):
        if self.iterations < 0:
            raise ParameterError(f"iterations must be >= 0, got {self.iterations}")
        if len(self.topk_schedule) != self.iterations:
            raise ParameterError(
                f"topk_schedule length {len(self.topk_schedule)} != iterations {self.iterations}"
            )
        previous = 1.0
        for k in self.topk_schedule:
            if not 0.0 < k <= 1.0:
                raise ParameterError(f"top-k fractions must be in (0, 1], got {k}")
            if k > previous + 1e-12:
                raise ParameterError(f"topk_schedule must be non-increasing: {self.topk_schedule}")
            previous = k
        if self.explainer not in EXPLAINER_KINDS:
            raise ParameterError(
                f"unknown explainer {self.explainer!r}; valid: {EXPLAINER_KINDS}"
            )


@dataclass
class IterationRecord:
    """Metrics (and artifacts) of one completed iteration; iteration 0 is vanilla."""

    iteration: int
    test_accuracy: float
    auc: float
    fid_plus: float
    fid_minus: float
    model: GcnModel
    explainer_state: Optional[PgNet]


def shrinking_schedule(iterations: int, start: float = 0.9, end: float = 0.1) -> tuple[float, ...]:
    """Progressively smaller top-k fractions, linear from start to end."""
    if iterations == 0:
        return ()
    if iterations == 1:
        return (start,)
    return tuple(np.linspace(start, end, iterations).tolist())


def _stream(root: int, iteration: int, stage: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((root, iteration, stage)))


def _seed_for(root: int, iteration: int, stage: int) -> int:
    return int(np.random.SeedSequence((root, iteration, stage)).generate_state(1)[0])


def _fit_explainer(cfg: StoreConfig, model: GcnModel, ds: Dataset, rng) -> Optional[PgNet]:
    if cfg.explainer == "pgexplainer":
        net = init_pgnet(model.hidden, rng, cfg.pg)
        return train_pgexplainer(model, ds, net, rng)
    return None  # per-instance optimization has no shared state


def _masks_for(
    cfg: StoreConfig,
    state: Optional[PgNet],
    model: GcnModel,
    ds: Dataset,
    indices,
    rng,
) -> dict[int, EdgeMask]:
    masks: dict[int, EdgeMask] = {}
    if cfg.explainer == "pgexplainer":
        for idx in indices:
            masks[idx] = pgexplainer_mask(state, model, ds.graphs[idx])
    else:
        streams = rng.spawn(len(indices))
        for stream, idx in zip(streams, indices):
            masks[idx] = gnnexplainer(model, ds.graphs[idx], cfg.mask_opt, stream)
    return masks


def _gt_sized_explanation(g, mask) -> frozenset:
    # match the ground truth's edge budget: top-|gt| edges of the mask
    fraction = len(g.gt_edge_mask) / len(g.edges)
    return topk_edges(mask, fraction)


def _record(
    cfg: StoreConfig,
    iteration: int,
    model: GcnModel,
    state: Optional[PgNet],
    ds: Dataset,
    root: int,
    fidelity: Optional[FidelityConfig],
) -> IterationRecord:
    test_idx = ds.indices("test")
    acc = evaluate_accuracy(model, [ds.graphs[i] for i in test_idx])
    masks = _masks_for(cfg, state, model, ds, test_idx, _stream(root, iteration, 4))
    auc = explanation_auc(masks, ds)
    fplus = fminus = math.nan
    if fidelity is not None:
        rng = _stream(root, iteration, 3)
        streams = rng.spawn(2 * len(test_idx))
        plus_vals, minus_vals = [], []
        for pos, idx in enumerate(test_idx):
            g = ds.graphs[idx]
            expl = _gt_sized_explanation(g, masks[idx])
            plus_vals.append(fid_plus(model, g, expl, fidelity, streams[2 * pos]))
            minus_vals.append(fid_minus(model, g, expl, fidelity, streams[2 * pos + 1]))
        fplus = float(np.mean(plus_vals))
        fminus = float(np.mean(minus_vals))
    return IterationRecord(
        iteration=iteration,
        test_accuracy=acc,
        auc=auc,
        fid_plus=fplus,
        fid_minus=fminus,
        model=model,
        explainer_state=state,
    )


def store_loop(
    ds: Dataset,
    cfg: StoreConfig,
    rng: np.random.Generator,
    fidelity: Optional[FidelityConfig] = None,
    strategy: Optional[WeightStrategy] = None,
    initial: Optional[IterationRecord] = None,
) -> tuple[GcnModel, Optional[PgNet], list[IterationRecord]]:
    """Run the full iterative procedure; returns (model, explainer, history).

    ``history[0]`` is the vanilla baseline (classifier and explainer trained
    on the original graphs); ``history[l]`` records iteration l.  Fidelity
    columns are filled when ``fidelity`` is given, using gt-sized top-k
    explanations on the test split.  ``strategy`` swaps the re-weighting
    sampler (Gaussian by default).  ``initial`` may carry a previously
    computed iteration-0 record from an identical (ds, cfg, rng) run to skip
    recomputing it; correctness relies on the caller honoring that contract.

    On a mid-run failure, raises :class:`PipelineError` carrying the
    completed history.
    """
    if strategy is None:
        strategy = GaussianWeights(delta_mu=cfg.delta_mu, alpha=cfg.alpha)
    root = int(rng.integers(2**63))

    if initial is not None:
        history = [initial]
    else:
        log.info("training baseline classifier")
        model0 = train_gnn(ds, replace(cfg.train, seed=_seed_for(root, 0, 0)))
        state0 = _fit_explainer(cfg, model0, ds, _stream(root, 0, 1))
        history = [_record(cfg, 0, model0, state0, ds, root, fidelity)]
        log.info(
            "iteration 0: accuracy %.3f, auc %.3f",
            history[0].test_accuracy,
            history[0].auc,
        )

    train_idx = ds.indices("train")
    try:
        for l in range(1, cfg.iterations + 1):
            k = cfg.topk_schedule[l - 1]
            prev = history[-1]
            masks = _masks_for(
                cfg, prev.explainer_state, prev.model, ds, train_idx, _stream(root, l, 4)
            )
            train_view = ds.subset(train_idx, provenance=f"train split of [{ds.provenance}]")
            local_masks = {pos: masks[idx] for pos, idx in enumerate(train_idx)}
            weighted = augment_dataset(train_view, local_masks, k, strategy, _stream(root, l, 2))
            if cfg.g_prime_only:
                keep = [i for i in range(len(ds.graphs)) if ds.split[i] != "train"]
                mixed = ds.subset(keep, provenance="val/test originals").with_extra_train(
                    weighted.graphs, provenance=f"weighted-only iteration {l}"
                )
            else:
                mixed = ds.with_extra_train(
                    weighted.graphs, provenance=f"originals + weighted copies, iteration {l}"
                )
            adapt_cfg = replace(
                cfg.train,
                seed=_seed_for(root, l, 0),
                epochs=cfg.adapt_epochs,
                patience=cfg.adapt_epochs,
            )
            model = train_gnn(
                mixed,
                adapt_cfg,
                init_model=prev.model if cfg.warm_start else None,
                robust_probe=weighted.graphs,
            )
            state = _fit_explainer(cfg, model, ds, _stream(root, l, 1))
            history.append(_record(cfg, l, model, state, ds, root, fidelity))
            log.info(
                "iteration %d (k=%.2f): accuracy %.3f, auc %.3f",
                l,
                k,
                history[-1].test_accuracy,
                history[-1].auc,
            )
    except Exception as exc:
        raise PipelineError(f"iteration {len(history)} failed: {exc}", history) from exc
    final = history[-1]
    return final.model, final.explainer_state, history
