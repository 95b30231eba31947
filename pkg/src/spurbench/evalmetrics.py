"""Group-wise accuracy metrics and validation-based hyperparameter selection.

The headline number everywhere is worst-group accuracy: the minimum accuracy
over (class, alignment) groups. Hyperparameters are chosen to maximize it on
the validation split; test indices never enter the selection path.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import nnopt, retrain
from .dataspec import MAJORITY, MINORITY, GroupedDataset, group_key


@dataclass
class GroupMetrics:
    """Per-group accuracies plus the worst/mean/overall summaries.

    Groups with no samples in the evaluated split are listed in empty_groups
    and excluded from wga and mean_group rather than scored zero.
    """

    accuracies: dict[tuple[int, int], float]
    sizes: dict[tuple[int, int], int]
    empty_groups: list[tuple[int, int]]
    wga: float
    mean_group: float
    overall: float

    def to_json_dict(self) -> dict:
        return {
            "wga": self.wga,
            "mean_group": self.mean_group,
            "overall": self.overall,
            "groups": {
                group_key(*key): {"accuracy": self.accuracies[key], "size": self.sizes[key]}
                for key in sorted(self.accuracies)
            },
            "empty_groups": [group_key(*key) for key in self.empty_groups],
        }


def group_accuracies(
    model: nnopt.MLP, dataset: GroupedDataset, split: np.ndarray
) -> GroupMetrics:
    """Accuracy per (class, alignment) group over the given split."""
    if not dataset.has_groups:
        raise ValueError("group annotations required to compute group metrics")
    split = np.asarray(split, dtype=np.int64)
    if len(split) == 0:
        raise ValueError("cannot evaluate on an empty split")

    correct = nnopt.predict(model, dataset.features[split]) == dataset.labels[split]
    groups = dataset.group_ids[split]
    classes = sorted(np.unique(dataset.group_ids[:, 0]).tolist())

    accuracies: dict[tuple[int, int], float] = {}
    sizes: dict[tuple[int, int], int] = {}
    empty: list[tuple[int, int]] = []
    for c in classes:
        for a in (MAJORITY, MINORITY):
            mask = (groups[:, 0] == c) & (groups[:, 1] == a)
            count = int(mask.sum())
            if count == 0:
                empty.append((c, a))
                continue
            accuracies[(c, a)] = float(correct[mask].mean())
            sizes[(c, a)] = count
    if empty:
        warnings.warn(
            f"groups {[group_key(*key) for key in empty]} have no samples in this "
            "split and are excluded from wga/mean_group",
            stacklevel=2,
        )
    values = list(accuracies.values())
    return GroupMetrics(
        accuracies=accuracies,
        sizes=sizes,
        empty_groups=empty,
        wga=min(values),
        mean_group=float(np.mean(values)),
        overall=float(correct.mean()),
    )


@dataclass
class HpSelection:
    """Winner of a validation-WGA grid search plus the skipped-point record."""

    config: retrain.RetrainConfig | retrain.AfrConfig
    model: nnopt.MLP
    val_metrics: GroupMetrics
    provenance: dict
    failures: list[dict] = field(default_factory=list)


def select_hp(
    model: nnopt.MLP,
    dataset: GroupedDataset,
    llr_split: np.ndarray,
    val_split: np.ndarray,
    method: str,
    grid: list,
) -> HpSelection:
    """Retrain per grid point, keep the best validation WGA (first wins ties).

    A grid point that raises is skipped and recorded in failures; only if
    every point fails does the search itself fail. Test indices are not a
    parameter here on purpose.
    """
    if not grid:
        raise ValueError("hyperparameter grid is empty")
    best: HpSelection | None = None
    failures: list[dict] = []
    for i, config in enumerate(grid):
        try:
            candidate, provenance = retrain.run_retrain_method(
                method, model, dataset, llr_split, config
            )
            metrics = group_accuracies(candidate, dataset, val_split)
        except (ValueError, TypeError) as exc:
            failures.append({"grid_index": i, "error": str(exc)})
            continue
        if best is None or metrics.wga > best.val_metrics.wga:
            best = HpSelection(
                config=config, model=candidate, val_metrics=metrics, provenance=provenance
            )
    if best is None:
        summary = "; ".join(f"[{f['grid_index']}] {f['error']}" for f in failures)
        raise RuntimeError(f"all {len(grid)} grid points failed for {method}: {summary}")
    best.failures = failures
    return best


DEFAULT_LRS = (1e-3, 1e-2)
DEFAULT_WDS = (1e-4, 1e-3)
DEFAULT_S_GRID = ("auto", "auto/2", "2*auto")
DEFAULT_RETRAIN_EPOCHS = 500
DEFAULT_GAMMAS = (0.5, 1.0, 2.0, 5.0)


def default_retrain_grid(
    seed: int,
    lrs: tuple[float, ...] = DEFAULT_LRS,
    wds: tuple[float, ...] = DEFAULT_WDS,
    s_grid: tuple = DEFAULT_S_GRID,
    epochs: int = DEFAULT_RETRAIN_EPOCHS,
) -> list[retrain.RetrainConfig]:
    """lr x weight_decay x s, full-batch, fixed epoch budget."""
    return [
        retrain.RetrainConfig(
            learning_rate=lr,
            weight_decay=wd,
            epochs=epochs,
            batch_size=None,
            seed=seed,
            s=s,
        )
        for lr, wd, s in itertools.product(lrs, wds, s_grid)
    ]


def default_oracle_grid(
    seed: int,
    lrs: tuple[float, ...] = DEFAULT_LRS,
    wds: tuple[float, ...] = DEFAULT_WDS,
    epochs: int = DEFAULT_RETRAIN_EPOCHS,
) -> list[retrain.RetrainConfig]:
    """lr x weight_decay; the oracle fixes its own subset size."""
    return [
        retrain.RetrainConfig(
            learning_rate=lr,
            weight_decay=wd,
            epochs=epochs,
            batch_size=None,
            seed=seed,
        )
        for lr, wd in itertools.product(lrs, wds)
    ]


def default_afr_grid(
    seed: int,
    gammas: tuple[float, ...] = DEFAULT_GAMMAS,
    lrs: tuple[float, ...] = DEFAULT_LRS,
    wds: tuple[float, ...] = DEFAULT_WDS,
    epochs: int = DEFAULT_RETRAIN_EPOCHS,
) -> list[retrain.AfrConfig]:
    """gamma x lr x weight_decay."""
    return [
        retrain.AfrConfig(
            gamma=gamma,
            learning_rate=lr,
            weight_decay=wd,
            epochs=epochs,
            batch_size=None,
            seed=seed,
        )
        for gamma, lr, wd in itertools.product(gammas, lrs, wds)
    ]


def default_grid_for(
    method: str,
    seed: int,
    gammas: tuple[float, ...] = DEFAULT_GAMMAS,
    lrs: tuple[float, ...] = DEFAULT_LRS,
    wds: tuple[float, ...] = DEFAULT_WDS,
    s_grid: tuple = DEFAULT_S_GRID,
    epochs: int = DEFAULT_RETRAIN_EPOCHS,
) -> list:
    if method in retrain.SELECTION_METHODS:
        return default_retrain_grid(seed, lrs=lrs, wds=wds, s_grid=s_grid, epochs=epochs)
    if method == "dfr_oracle":
        return default_oracle_grid(seed, lrs=lrs, wds=wds, epochs=epochs)
    if method == "afr":
        return default_afr_grid(seed, gammas=gammas, lrs=lrs, wds=wds, epochs=epochs)
    raise ValueError(f"no grid for method {method!r}")
