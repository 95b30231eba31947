"""Head-retraining methods on a frozen feature extractor.

Every method here takes a trained model, picks or weights retraining data
from the held-out split, reinitializes the output layer, and retrains only
that layer. The feature extractor is never touched.

The annotation-free paths (retrain_selected, retrain_afr) accept plain
feature/label arrays, so group annotations cannot reach them by
construction. retrain_dfr_oracle is the single deliberate exception: it
reads true group ids and serves as the upper-reference baseline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import grouping, nnopt
from .dataspec import MAJORITY, MINORITY, GroupedDataset, group_key
from .seeding import derive_seed

S_TOKENS = ("auto", "auto/2", "2*auto")


@dataclass
class RetrainConfig:
    """Training knobs plus the selection count and strategy.

    s is either an explicit count or one of the tokens "auto" (smallest
    missed-bucket size), "auto/2" (half that, rounded up), "2*auto". Tokens
    resolve only after the partition is known. batch_size None means full
    batch.
    """

    learning_rate: float = 1e-2
    weight_decay: float = 1e-4
    epochs: int = 500
    batch_size: int | None = None
    seed: int = 0
    s: int | str = "auto"
    strategy: grouping.SelectionStrategy = field(
        default=grouping.STRATEGY_PRESETS["lfr"]
    )

    def __post_init__(self) -> None:
        if self.learning_rate <= 0 or self.weight_decay < 0:
            raise ValueError("learning_rate must be > 0 and weight_decay >= 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be None (full batch) or >= 1")
        if isinstance(self.s, str):
            if self.s not in S_TOKENS:
                raise ValueError(f"s token must be one of {S_TOKENS}, got {self.s!r}")
        elif self.s < 0:
            raise ValueError("explicit s must be >= 0")


@dataclass
class AfrConfig:
    """Confidence-weighted retraining knobs; gamma scales the upweighting."""

    gamma: float = 1.0
    learning_rate: float = 1e-2
    weight_decay: float = 1e-4
    epochs: int = 500
    batch_size: int | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if self.learning_rate <= 0 or self.weight_decay < 0:
            raise ValueError("learning_rate must be > 0 and weight_decay >= 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be None (full batch) or >= 1")


def resolve_s(s: int | str, auto: int) -> int:
    """Map an s spec to a concrete count given the auto (smallest-missed) value."""
    if isinstance(s, str):
        if s == "auto":
            return auto
        if s == "auto/2":
            return math.ceil(auto / 2)
        if s == "2*auto":
            return 2 * auto
        raise ValueError(f"unknown s token {s!r}")
    return int(s)


def _train_config(config, head_only: bool, class_balance: bool, n: int) -> nnopt.TrainConfig:
    batch = config.batch_size if config.batch_size is not None else max(n, 1)
    return nnopt.TrainConfig(
        lr=config.learning_rate,
        weight_decay=config.weight_decay,
        momentum=0.9,
        batch_size=batch,
        epochs=config.epochs,
        head_only=head_only,
        class_balance=class_balance,
    )


def retrain_selected(
    model: nnopt.MLP,
    features: np.ndarray,
    labels: np.ndarray,
    config: RetrainConfig,
) -> tuple[nnopt.MLP, dict]:
    """Select a balanced subset by the configured strategy, retrain the head on it.

    Returns the new model and a JSON-ready provenance record. The input model
    is left untouched.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if len(features) == 0:
        raise ValueError("retraining split is empty")

    new_model = model.clone()
    losses = nnopt.per_sample_losses(new_model, features, labels)
    predictions = nnopt.predict(new_model, features)
    partition = grouping.infer_partition(predictions, labels)
    s = resolve_s(config.s, grouping.default_s(partition))
    chosen = grouping.select(
        partition, losses, s, config.strategy, seed=derive_seed(config.seed, "select")
    )
    if len(chosen) == 0:
        raise ValueError(
            f"empty selection (s resolved to {s}); the model may classify the "
            "whole split correctly, or s was set to 0"
        )

    new_model.reinit_head(seed=derive_seed(config.seed, "head"))
    # the selection is bucket-balanced already, so no class balancing on top
    nnopt.fit(
        new_model,
        features[chosen],
        labels[chosen],
        _train_config(config, head_only=True, class_balance=False, n=len(chosen)),
        seed=derive_seed(config.seed, "fit"),
    )
    provenance = {
        "method": "selected",
        "strategy": {
            "correct_rule": config.strategy.correct_rule,
            "missed_rule": config.strategy.missed_rule,
        },
        "s": int(s),
        "bucket_sizes": partition.bucket_sizes(),
        "selected": len(chosen),
        "hyperparameters": {
            "learning_rate": config.learning_rate,
            "weight_decay": config.weight_decay,
            "epochs": config.epochs,
            "batch_size": config.batch_size,
        },
        "seed": config.seed,
    }
    return new_model, provenance


def retrain_dfr_oracle(
    model: nnopt.MLP,
    dataset: GroupedDataset,
    llr_split: np.ndarray,
    config: RetrainConfig,
) -> tuple[nnopt.MLP, dict]:
    """Group-balanced head retraining using TRUE group annotations.

    The only operation in the package allowed to read group_ids; everything
    else must get by without them. s and strategy in the config are ignored:
    the subset is min-group-size per true group, uniformly at random.
    """
    if not dataset.has_groups:
        raise ValueError("group annotations required: the oracle reads true groups")
    llr_split = np.asarray(llr_split, dtype=np.int64)
    if len(llr_split) == 0:
        raise ValueError("retraining split is empty")

    groups = dataset.group_ids[llr_split]
    keys = [(c, a) for c in sorted(np.unique(groups[:, 0])) for a in (MAJORITY, MINORITY)]
    members = {
        key: llr_split[(groups[:, 0] == key[0]) & (groups[:, 1] == key[1])] for key in keys
    }
    empty = [group_key(*key) for key, idx in members.items() if len(idx) == 0]
    if empty:
        raise ValueError(
            f"true groups {empty} are empty in the retraining split; regenerate "
            "splits with llr_rho_cap <= 0.95 so every group keeps members"
        )
    m = min(len(idx) for idx in members.values())

    rng = np.random.default_rng(derive_seed(config.seed, "oracle-select"))
    chosen = np.sort(
        np.concatenate([rng.choice(members[key], size=m, replace=False) for key in keys])
    )
    new_model = model.clone()
    new_model.reinit_head(seed=derive_seed(config.seed, "head"))
    nnopt.fit(
        new_model,
        dataset.features[chosen],
        dataset.labels[chosen],
        _train_config(config, head_only=True, class_balance=False, n=len(chosen)),
        seed=derive_seed(config.seed, "fit"),
    )
    provenance = {
        "method": "dfr_oracle",
        "s": int(m),
        "group_sizes": {group_key(*key): len(idx) for key, idx in members.items()},
        "selected": len(chosen),
        "hyperparameters": {
            "learning_rate": config.learning_rate,
            "weight_decay": config.weight_decay,
            "epochs": config.epochs,
            "batch_size": config.batch_size,
        },
        "seed": config.seed,
    }
    return new_model, provenance


def afr_weights(p_true: np.ndarray, gamma: float, labels: np.ndarray) -> np.ndarray:
    """exp(-gamma * p_true), renormalized to mean 1 within each class."""
    p_true = np.asarray(p_true, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    if p_true.shape != labels.shape:
        raise ValueError("p_true and labels must align")
    if (p_true < 0).any() or (p_true > 1).any():
        raise ValueError("p_true must lie in [0, 1]")
    weights = np.exp(-gamma * p_true)
    for c in np.unique(labels):
        cls = labels == c
        weights[cls] /= weights[cls].mean()
    return weights


def retrain_afr(
    model: nnopt.MLP,
    features: np.ndarray,
    labels: np.ndarray,
    config: AfrConfig,
) -> tuple[nnopt.MLP, dict]:
    """Confidence-weighted head retraining on the whole split (no subsetting).

    Weights come from the input model's probabilities before the head is
    reinitialized: samples the original model found hard get upweighted.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if len(features) == 0:
        raise ValueError("retraining split is empty")

    new_model = model.clone()
    probs = nnopt.softmax(new_model.forward(features))
    p_true = probs[np.arange(len(labels)), labels]
    weights = afr_weights(p_true, config.gamma, labels)

    new_model.reinit_head(seed=derive_seed(config.seed, "head"))
    # weights fix hardness, not class skew, so balancing stays on
    nnopt.fit(
        new_model,
        features,
        labels,
        _train_config(config, head_only=True, class_balance=True, n=len(labels)),
        seed=derive_seed(config.seed, "fit"),
        sample_weights=weights,
    )
    provenance = {
        "method": "afr",
        "gamma": config.gamma,
        "selected": len(labels),
        "hyperparameters": {
            "learning_rate": config.learning_rate,
            "weight_decay": config.weight_decay,
            "epochs": config.epochs,
            "batch_size": config.batch_size,
        },
        "seed": config.seed,
    }
    return new_model, provenance


SELECTION_METHODS = ("lfr", "cfr", "cr_ml", "cl_mr")
RETRAIN_METHODS = SELECTION_METHODS + ("dfr_oracle", "afr")


def run_retrain_method(
    name: str,
    model: nnopt.MLP,
    dataset: GroupedDataset,
    llr_split: np.ndarray,
    config: RetrainConfig | AfrConfig,
) -> tuple[nnopt.MLP, dict]:
    """Dispatch a method by name; annotation-free methods get arrays only."""
    llr_split = np.asarray(llr_split, dtype=np.int64)
    if name in SELECTION_METHODS:
        if not isinstance(config, RetrainConfig):
            raise TypeError(f"{name} needs a RetrainConfig")
        forced = replace(config, strategy=grouping.STRATEGY_PRESETS[name])
        features = dataset.features[llr_split]
        labels = dataset.labels[llr_split]
        new_model, provenance = retrain_selected(model, features, labels, forced)
        provenance["method"] = name
        return new_model, provenance
    if name == "afr":
        if not isinstance(config, AfrConfig):
            raise TypeError("afr needs an AfrConfig")
        features = dataset.features[llr_split]
        labels = dataset.labels[llr_split]
        return retrain_afr(model, features, labels, config)
    if name == "dfr_oracle":
        if not isinstance(config, RetrainConfig):
            raise TypeError("dfr_oracle needs a RetrainConfig")
        return retrain_dfr_oracle(model, dataset, llr_split, config)
    raise ValueError(f"unknown retraining method {name!r}")
