"""Multi-seed experiment orchestration and report emission.

A run executes, for every seed, the vanilla pipeline (iteration 0) and the
configured iterative pipeline, then aggregates mean and std across seeds.
Configs are flat ``key = value`` files with dotted section keys; every
emitted CSV can be re-read by the loaders in this module.
"""

from __future__ import annotations

import concurrent.futures
import csv
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field, fields, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .errors import InfeasibleParamsError, ParameterError, StorexplainError
from .evaluate import (
    FidelityConfig,
    HeatmapGrid,
    heatmap_to_csv,
    heatmap_to_svg,
    histogram_to_csv,
    mean_heatmap,
    weight_histogram,
    weight_sweep_heatmap,
)
from .explain import MaskOptConfig, PgConfig
from .gcn import TrainConfig
from .graphs import Dataset, generate_ba2motifs, load_dataset, save_dataset
from .pipeline import IterationRecord, StoreConfig, shrinking_schedule, store_loop
from .reweight import sample_truncated_normal, sample_weight_params, strategy_from_name

log = logging.getLogger(__name__)

DEFAULT_SEEDS = tuple(range(10))
ALL_STRATEGIES = ("random", "uniform", "gaussian")
HISTOGRAM_BINS = 50
HISTOGRAM_SAMPLES = 100_000


@dataclass(frozen=True)
class ExperimentConfig:
    n_graphs: int = 1000
    dataset_seed: int = 7
    dataset_path: Optional[str] = None
    store: StoreConfig = field(default_factory=StoreConfig)
    fidelity: FidelityConfig = field(default_factory=FidelityConfig)
    seeds: tuple[int, ...] = DEFAULT_SEEDS
    out_dir: str = "out"
    parallel: int = 1
    uniform_u: float = 0.5

    def __post_init__(self):
        if not self.seeds:
            raise ParameterError("need at least one seed")
        if self.parallel < 1:
            raise ParameterError(f"parallel must be >= 1, got {self.parallel}")


def parse_config_text(text: str) -> dict[str, str]:
    """Flat key = value lines; '#' starts a comment; blank lines ignored."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ParameterError(f"config line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if key in out:
            raise ParameterError(f"config line {lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def _parse_bool(value: str) -> bool:
    lowered = value.lower()
    if lowered in ("true", "1", "yes"):
        return True
    if lowered in ("false", "0", "no"):
        return False
    raise ParameterError(f"expected a boolean, got {value!r}")


def _parse_float_list(value: str) -> tuple[float, ...]:
    if not value.strip():
        return ()
    return tuple(float(v.strip()) for v in value.split(","))


def _parse_int_list(value: str) -> tuple[int, ...]:
    if not value.strip():
        return ()
    return tuple(int(v.strip()) for v in value.split(","))


def config_from_mapping(pairs: dict[str, str]) -> ExperimentConfig:
    """Build a typed config from flat keys, rejecting anything unknown."""
    store_kwargs: dict = {}
    train_kwargs: dict = {}
    pg_kwargs: dict = {}
    mask_kwargs: dict = {}
    fid_kwargs: dict = {}
    top_kwargs: dict = {}
    handlers = {
        "dataset.n_graphs": ("n_graphs", int, top_kwargs),
        "dataset.seed": ("dataset_seed", int, top_kwargs),
        "dataset.path": ("dataset_path", str, top_kwargs),
        "store.iterations": ("iterations", int, store_kwargs),
        "store.delta_mu": ("delta_mu", float, store_kwargs),
        "store.alpha": ("alpha", float, store_kwargs),
        "store.topk_schedule": ("topk_schedule", _parse_float_list, store_kwargs),
        "store.g_prime_only": ("g_prime_only", _parse_bool, store_kwargs),
        "store.uniform_u": ("uniform_u", float, top_kwargs),
        "explainer.kind": ("explainer", str, store_kwargs),
        "explainer.mlp_hidden": ("mlp_hidden", int, pg_kwargs),
        "explainer.temp_start": ("temp_start", float, pg_kwargs),
        "explainer.temp_end": ("temp_end", float, pg_kwargs),
        "explainer.epochs": ("epochs", int, pg_kwargs),
        "explainer.lr": ("lr", float, pg_kwargs),
        "explainer.weight_decay": ("weight_decay", float, pg_kwargs),
        "explainer.size_coef": ("size_coef", float, pg_kwargs),
        "explainer.batch_size": ("batch_size", int, pg_kwargs),
        "maskopt.epochs": ("epochs", int, mask_kwargs),
        "maskopt.lr": ("lr", float, mask_kwargs),
        "maskopt.size_coef": ("size_coef", float, mask_kwargs),
        "maskopt.entropy_coef": ("entropy_coef", float, mask_kwargs),
        "maskopt.init_scale": ("init_scale", float, mask_kwargs),
        "train.epochs": ("epochs", int, train_kwargs),
        "train.lr": ("lr", float, train_kwargs),
        "train.hidden": ("hidden", int, train_kwargs),
        "train.patience": ("patience", int, train_kwargs),
        "train.batch_size": ("batch_size", int, train_kwargs),
        "fidelity.alpha1": ("alpha1", float, fid_kwargs),
        "fidelity.alpha2": ("alpha2", float, fid_kwargs),
        "fidelity.samples": ("mc_samples", int, fid_kwargs),
        "fidelity.seed": ("seed", int, fid_kwargs),
        "seeds": ("seeds", _parse_int_list, top_kwargs),
        "out": ("out_dir", str, top_kwargs),
        "parallel": ("parallel", int, top_kwargs),
    }
    for key, value in pairs.items():
        if key not in handlers:
            raise ParameterError(f"unknown config key {key!r}")
        name, parse, bucket = handlers[key]
        try:
            bucket[name] = parse(value)
        except ParameterError:
            raise
        except ValueError as exc:
            raise ParameterError(f"config key {key!r}: {exc}") from exc
    if "iterations" in store_kwargs and "topk_schedule" not in store_kwargs:
        store_kwargs["topk_schedule"] = shrinking_schedule(store_kwargs["iterations"])
    store = StoreConfig(
        train=TrainConfig(**train_kwargs),
        pg=PgConfig(**pg_kwargs),
        mask_opt=MaskOptConfig(**mask_kwargs),
        **store_kwargs,
    )
    return ExperimentConfig(
        store=store, fidelity=FidelityConfig(**fid_kwargs), **top_kwargs
    )


def load_experiment_config(path) -> ExperimentConfig:
    return config_from_mapping(parse_config_text(Path(path).read_text()))


def config_flat(cfg: ExperimentConfig) -> dict[str, str]:
    """Canonical flat rendering of a resolved config (used for hashing)."""
    flat = {
        "dataset.n_graphs": str(cfg.n_graphs),
        "dataset.seed": str(cfg.dataset_seed),
        "dataset.path": str(cfg.dataset_path or ""),
        "store.iterations": str(cfg.store.iterations),
        "store.delta_mu": repr(cfg.store.delta_mu),
        "store.alpha": repr(cfg.store.alpha),
        "store.topk_schedule": ",".join(repr(k) for k in cfg.store.topk_schedule),
        "store.g_prime_only": str(cfg.store.g_prime_only).lower(),
        "store.uniform_u": repr(cfg.uniform_u),
        "explainer.kind": cfg.store.explainer,
        "seeds": ",".join(str(s) for s in cfg.seeds),
    }
    for name, obj in (
        ("explainer", cfg.store.pg),
        ("maskopt", cfg.store.mask_opt),
        ("train", cfg.store.train),
        ("fidelity", cfg.fidelity),
    ):
        for f in fields(obj):
            flat[f"{name}.{f.name}"] = repr(getattr(obj, f.name))
    return dict(sorted(flat.items()))


def config_hash(cfg: ExperimentConfig) -> str:
    canonical = "\n".join(f"{k}={v}" for k, v in config_flat(cfg).items())
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]


def build_dataset(cfg: ExperimentConfig) -> Dataset:
    if cfg.dataset_path:
        return load_dataset(cfg.dataset_path)
    return generate_ba2motifs(cfg.n_graphs, cfg.dataset_seed)


@dataclass
class SeedRun:
    """Everything one seed produced: one history per strategy, plus heatmaps."""

    seed: int
    histories: dict[str, list[IterationRecord]]
    heatmap_vanilla: Optional[HeatmapGrid] = None
    heatmap_store: Optional[HeatmapGrid] = None


def run_seed(
    cfg: ExperimentConfig,
    ds: Dataset,
    seed: int,
    strategies: Sequence[str] = ("gaussian",),
    with_heatmaps: bool = False,
    with_fidelity: bool = True,
) -> SeedRun:
    """Vanilla baseline plus one iterative branch per strategy for one seed.

    The baseline (iteration 0) is shared across branches; RNG streams make
    it identical to what each branch would compute on its own.
    """
    store = cfg.store
    fid = replace(cfg.fidelity, seed=cfg.fidelity.seed + seed) if with_fidelity else None
    vanilla_cfg = replace(store, iterations=0, topk_schedule=())
    log.info("seed %d: baseline", seed)
    _, _, base_hist = store_loop(ds, vanilla_cfg, np.random.default_rng(seed), fidelity=fid)
    base = base_hist[0]
    histories: dict[str, list[IterationRecord]] = {}
    for name in strategies:
        log.info("seed %d: %s branch", seed, name)
        strategy = strategy_from_name(
            name, delta_mu=store.delta_mu, alpha=store.alpha, u=cfg.uniform_u
        )
        _, _, hist = store_loop(
            ds,
            store,
            np.random.default_rng(seed),
            fidelity=fid,
            strategy=strategy,
            initial=base,
        )
        histories[name] = hist
    run = SeedRun(seed=seed, histories=histories)
    if with_heatmaps:
        primary = strategies[-1]
        run.heatmap_vanilla = weight_sweep_heatmap(base.model, ds)
        run.heatmap_store = weight_sweep_heatmap(histories[primary][-1].model, ds)
    return run


def _seed_worker(args) -> SeedRun:
    cfg, seed, strategies, with_heatmaps, with_fidelity = args
    ds = build_dataset(cfg)
    return run_seed(cfg, ds, seed, strategies, with_heatmaps, with_fidelity)


def run_all_seeds(
    cfg: ExperimentConfig,
    strategies: Sequence[str],
    with_heatmaps: bool,
    with_fidelity: bool = True,
) -> tuple[list[SeedRun], list[tuple[int, str]]]:
    """Execute every seed, isolating failures; returns (runs, failures)."""
    runs: list[SeedRun] = []
    failures: list[tuple[int, str]] = []
    if cfg.parallel > 1:
        jobs = [(cfg, s, tuple(strategies), with_heatmaps, with_fidelity) for s in cfg.seeds]
        with concurrent.futures.ProcessPoolExecutor(max_workers=cfg.parallel) as pool:
            futures = {pool.submit(_seed_worker, job): job[1] for job in jobs}
            for future in concurrent.futures.as_completed(futures):
                seed = futures[future]
                try:
                    runs.append(future.result())
                except Exception as exc:
                    log.error("seed %d failed: %s", seed, exc)
                    failures.append((seed, str(exc)))
        runs.sort(key=lambda r: cfg.seeds.index(r.seed))
    else:
        ds = build_dataset(cfg)
        for seed in cfg.seeds:
            try:
                runs.append(run_seed(cfg, ds, seed, strategies, with_heatmaps, with_fidelity))
            except Exception as exc:
                log.error("seed %d failed: %s", seed, exc)
                failures.append((seed, str(exc)))
    return runs, failures


def _mean_std(values: Sequence[float]) -> dict[str, float]:
    arr = np.asarray(values, dtype=np.float64)
    std = float(arr.std(ddof=1)) if len(arr) > 1 else 0.0
    return {"mean": float(arr.mean()), "std": std}


def _metrics(record: IterationRecord) -> dict[str, float]:
    return {
        "test_accuracy": record.test_accuracy,
        "auc": record.auc,
        "fid_plus": record.fid_plus,
        "fid_minus": record.fid_minus,
    }


METRIC_NAMES = ("test_accuracy", "auc", "fid_plus", "fid_minus")


def _aggregate(rows: Sequence[dict[str, float]]) -> dict[str, dict[str, float]]:
    out = {}
    for metric in METRIC_NAMES:
        values = [r[metric] for r in rows]
        if any(math.isnan(v) for v in values):
            out[metric] = {"mean": math.nan, "std": math.nan}
        else:
            out[metric] = _mean_std(values)
    return out


def write_results_csv(runs: Sequence[SeedRun], strategy: str, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["seed", "variant", "test_accuracy", "auc", "fid_plus", "fid_minus"])
        for run in runs:
            hist = run.histories[strategy]
            for variant, record in (("vanilla", hist[0]), ("store", hist[-1])):
                writer.writerow(
                    [run.seed, variant]
                    + [repr(v) for v in _metrics(record).values()]
                )


def load_results_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        row["seed"] = int(row["seed"])
        for key in METRIC_NAMES:
            row[key] = float(row[key])
    return rows


def write_history_csv(runs: Sequence[SeedRun], strategy: str, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "seed", "test_accuracy", "auc", "fid_plus", "fid_minus"])
        for run in runs:
            for record in run.histories[strategy]:
                writer.writerow(
                    [record.iteration, run.seed] + [repr(v) for v in _metrics(record).values()]
                )


def load_history_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        row["iteration"] = int(row["iteration"])
        row["seed"] = int(row["seed"])
        for key in METRIC_NAMES:
            row[key] = float(row[key])
    return rows


def emit_histograms(cfg: ExperimentConfig, out_dir: Path) -> None:
    rng = np.random.default_rng(np.random.SeedSequence((cfg.dataset_seed, 104729)))
    params = sample_weight_params(cfg.store.delta_mu, cfg.store.alpha, rng)
    expl = sample_truncated_normal(params.mu1, params.sigma, rng=rng, size=HISTOGRAM_SAMPLES)
    non = sample_truncated_normal(params.mu2, params.sigma, rng=rng, size=HISTOGRAM_SAMPLES)
    hist = weight_histogram(expl, non, HISTOGRAM_BINS, params)
    histogram_to_csv(hist, out_dir / "histograms.csv")


def run_command(cfg: ExperimentConfig) -> int:
    """The main experiment: vanilla vs iterative over all seeds, full artifacts."""
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    runs, failures = run_all_seeds(cfg, strategies=("gaussian",), with_heatmaps=True)
    if runs:
        write_results_csv(runs, "gaussian", out_dir / "results.csv")
        write_history_csv(runs, "gaussian", out_dir / "history.csv")
        vanilla_grid = mean_heatmap([r.heatmap_vanilla for r in runs])
        store_grid = mean_heatmap([r.heatmap_store for r in runs])
        heatmap_to_csv(vanilla_grid, out_dir / "heatmap_vanilla.csv")
        heatmap_to_svg(vanilla_grid, out_dir / "heatmap_vanilla.svg", "vanilla model accuracy")
        heatmap_to_csv(store_grid, out_dir / "heatmap_store.csv")
        heatmap_to_svg(store_grid, out_dir / "heatmap_store.svg", "retrained model accuracy")
        emit_histograms(cfg, out_dir)
    per_seed = [
        {
            "seed": run.seed,
            "vanilla": _metrics(run.histories["gaussian"][0]),
            "store": _metrics(run.histories["gaussian"][-1]),
        }
        for run in runs
    ]
    report = {
        "provenance": {
            "config_hash": config_hash(cfg),
            "artifact_version": __version__,
            "generated_at": datetime.now(timezone.utc).isoformat(),
        },
        "config": config_flat(cfg),
        "per_seed": per_seed,
        "aggregate": {
            "vanilla": _aggregate([row["vanilla"] for row in per_seed]) if per_seed else {},
            "store": _aggregate([row["store"] for row in per_seed]) if per_seed else {},
        },
        "failures": [{"seed": s, "error": e} for s, e in failures],
    }
    (out_dir / "report.json").write_text(json.dumps(report, indent=2))
    return 1 if failures else 0


def ablation_command(cfg: ExperimentConfig, strategies: Sequence[str]) -> int:
    """Compare re-weighting samplers; emits per-strategy mean/std AUC."""
    for name in strategies:
        if name not in ALL_STRATEGIES:
            raise ParameterError(
                f"unknown strategy {name!r}; valid: {', '.join(ALL_STRATEGIES)}"
            )
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    runs, failures = run_all_seeds(
        cfg, strategies=tuple(strategies), with_heatmaps=False, with_fidelity=False
    )
    with open(out_dir / "ablation_seeds.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["strategy", "seed", "auc", "test_accuracy"])
        for run in runs:
            for name in strategies:
                final = run.histories[name][-1]
                writer.writerow([name, run.seed, repr(final.auc), repr(final.test_accuracy)])
    with open(out_dir / "ablation.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["strategy", "mean_auc", "std_auc"])
        for name in strategies:
            stats = _mean_std([run.histories[name][-1].auc for run in runs]) if runs else None
            writer.writerow(
                [name, repr(stats["mean"]), repr(stats["std"])] if stats else [name, "", ""]
            )
    return 1 if failures else 0


def sweep_command(cfg: ExperimentConfig, parameter: str, values: Sequence[float]) -> int:
    """Re-run the pipeline over a parameter grid; one full multi-seed run per value."""
    if parameter not in ("iterations", "delta_mu"):
        raise ParameterError(f"sweep parameter must be 'iterations' or 'delta_mu', got {parameter!r}")
    if not values:
        raise ParameterError("empty sweep value list")
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    seed_rows = []
    any_failure = False
    for value in values:
        if parameter == "iterations":
            iters = int(value)
            store = replace(
                cfg.store, iterations=iters, topk_schedule=shrinking_schedule(iters)
            )
            sub = replace(cfg, store=store)
        else:
            try:
                sample_weight_params(float(value), cfg.store.alpha, np.random.default_rng(0))
            except InfeasibleParamsError as exc:
                log.warning("delta_mu=%s infeasible: %s", value, exc)
                rows.append([repr(float(value)), "", "", f"infeasible: {exc}"])
                continue
            sub = replace(cfg, store=replace(cfg.store, delta_mu=float(value)))
        runs, failures = run_all_seeds(
            sub, strategies=("gaussian",), with_heatmaps=False, with_fidelity=False
        )
        any_failure = any_failure or bool(failures)
        aucs = [run.histories["gaussian"][-1].auc for run in runs]
        for run, auc in zip(runs, aucs):
            seed_rows.append([repr(float(value)), run.seed, repr(auc)])
        stats = _mean_std(aucs) if aucs else {"mean": math.nan, "std": math.nan}
        rows.append([repr(float(value)), repr(stats["mean"]), repr(stats["std"]), "ok"])
    with open(out_dir / "sweep.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["value", "mean_auc", "std_auc", "status"])
        writer.writerows(rows)
    with open(out_dir / "sweep_seeds.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["value", "seed", "auc"])
        writer.writerows(seed_rows)
    return 1 if any_failure else 0


def gen_data_command(n_graphs: int, seed: int, out_path) -> int:
    ds = generate_ba2motifs(n_graphs, seed)
    save_dataset(ds, out_path)
    log.info("wrote %d graphs to %s", len(ds), out_path)
    return 0
