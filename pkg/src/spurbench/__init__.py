"""Group-robustness benchmark built around loss-selected last-layer retraining.

The package turns a base model's per-sample training losses into a proxy for
hidden group structure: correctly and incorrectly classified examples are
bucketed per class, a balanced subset is drawn from the buckets, and only the
output layer is retrained on it.  Baselines (plain training, random and mixed
selections, a group-oracle subset, confidence reweighting) plus a sweep
harness and CLI make the comparison reproducible end to end.
"""

from .dataspec import (
    GroupedDataset,
    SplitSet,
    SpuriosityConfig,
    generate,
    group_counts,
    make_splits,
    split_spuriosity,
)
from .embio import (
    EmbFormatError,
    load_dataset,
    read_csv,
    read_emb,
    read_model_layers,
    save_dataset,
    write_csv,
    write_emb,
    write_model_layers,
)
from .evalmetrics import GroupMetrics, HpSelection, group_accuracies, select_hp
from .grouping import (
    STRATEGY_PRESETS,
    GroupPartition,
    SelectionStrategy,
    default_s,
    infer_partition,
    select,
)
from .harness import (
    ExperimentConfig,
    Report,
    ReportRow,
    parse_report,
    render_report,
    run_cell,
    summarize,
    sweep,
)
from .nnopt import MLP, TrainConfig, accuracy, fit, per_sample_losses, predict
from .retrain import (
    AfrConfig,
    RetrainConfig,
    afr_weights,
    resolve_s,
    retrain_afr,
    retrain_dfr_oracle,
    retrain_selected,
    run_retrain_method,
)
from .seeding import derive_seed

__version__ = "0.1.0"

__all__ = [
    "AfrConfig",
    "EmbFormatError",
    "ExperimentConfig",
    "GroupMetrics",
    "GroupPartition",
    "GroupedDataset",
    "HpSelection",
    "MLP",
    "Report",
    "ReportRow",
    "RetrainConfig",
    "STRATEGY_PRESETS",
    "SelectionStrategy",
    "SplitSet",
    "SpuriosityConfig",
    "TrainConfig",
    "accuracy",
    "afr_weights",
    "default_s",
    "derive_seed",
    "fit",
    "generate",
    "group_accuracies",
    "group_counts",
    "infer_partition",
    "load_dataset",
    "make_splits",
    "parse_report",
    "per_sample_losses",
    "predict",
    "read_csv",
    "read_emb",
    "read_model_layers",
    "render_report",
    "resolve_s",
    "retrain_afr",
    "retrain_dfr_oracle",
    "retrain_selected",
    "run_cell",
    "run_retrain_method",
    "save_dataset",
    "select",
    "select_hp",
    "split_spuriosity",
    "summarize",
    "sweep",
    "write_csv",
    "write_emb",
    "write_model_layers",
]
