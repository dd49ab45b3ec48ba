"""storexplain: explanation-aware iterative re-weighting for graph classifiers.

The package trains a small graph convolutional classifier on a synthetic
motif benchmark, extracts soft edge-mask explanations, re-weights training
graphs through importance-aware truncated Gaussians, retrains iteratively,
and quantifies the resulting explanation-quality and distribution-shift
improvements.
"""

__version__ = "0.1.0"

from .errors import (
    ContractError,
    DatasetFormatError,
    InfeasibleParamsError,
    ParameterError,
    PipelineError,
    SamplingError,
    StorexplainError,
    ValidationError,
)
from .evaluate import (
    FidelityConfig,
    HeatmapGrid,
    WeightHistogram,
    auc_roc,
    explanation_auc,
    fid_minus,
    fid_plus,
    weight_histogram,
    weight_sweep_heatmap,
)
from .explain import (
    EdgeMask,
    MaskOptConfig,
    PgConfig,
    PgNet,
    gnnexplainer,
    gumbel_edge_sample,
    init_pgnet,
    pgexplainer_mask,
    topk_edges,
    train_pgexplainer,
)
from .gcn import (
    GcnModel,
    TrainConfig,
    evaluate_accuracy,
    gcn_forward,
    normalize_adjacency,
    train_gnn,
)
from .graphs import (
    Dataset,
    Graph,
    MotifKind,
    apply_edge_weights,
    attach_motif,
    ba_base,
    generate_ba2motifs,
    load_dataset,
    save_dataset,
)
from .pipeline import IterationRecord, StoreConfig, shrinking_schedule, store_loop
from .reweight import (
    GaussianWeightParams,
    GaussianWeights,
    RandomWeights,
    UniformProductWeights,
    augment_graphs,
    sample_truncated_normal,
    sample_weight_params,
    solve_sigma,
    std_normal_inv_cdf,
)
