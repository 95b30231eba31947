"""Proxy groups from model correctness, and balanced subset selection.

Without group annotations, a trained model's own mistakes on held-out data
are the group signal: within each class, misclassified samples skew toward
the minority pattern and correctly-classified ones toward the majority.
This module splits a scored split into those buckets and picks an equal
number from each, ordered by loss or at random.

Everything here works on plain prediction/label/loss arrays; group
annotations are not part of any signature.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np

LOSS_LOW = "loss_low"
LOSS_HIGH = "loss_high"
RANDOM = "random"
SELECTION_RULES = (LOSS_LOW, LOSS_HIGH, RANDOM)


@dataclass(frozen=True)
class SelectionStrategy:
    """Which rule each bucket family uses: one for correct, one for missed."""

    correct_rule: str
    missed_rule: str

    def __post_init__(self) -> None:
        for rule in (self.correct_rule, self.missed_rule):
            if rule not in SELECTION_RULES:
                raise ValueError(f"unknown selection rule {rule!r}")


# the flagship pairing takes confident hits and hard misses; the rest are
# ablations and the polarity flip
STRATEGY_PRESETS = {
    "lfr": SelectionStrategy(LOSS_LOW, LOSS_HIGH),
    "lfr_reversed": SelectionStrategy(LOSS_HIGH, LOSS_LOW),
    "cfr": SelectionStrategy(RANDOM, RANDOM),
    "cr_ml": SelectionStrategy(RANDOM, LOSS_HIGH),
    "cl_mr": SelectionStrategy(LOSS_LOW, RANDOM),
}


@dataclass
class GroupPartition:
    """Per class: indices the model got right (correct) and wrong (missed).

    Indices refer to positions in the scored arrays (the split ordering, not
    dataset row ids). Buckets are kept sorted ascending and must partition
    0..n-1 exactly.
    """

    correct: dict[int, np.ndarray]
    missed: dict[int, np.ndarray]
    n: int

    def __post_init__(self) -> None:
        if set(self.correct) != set(self.missed):
            raise ValueError("correct and missed must cover the same classes")
        self.correct = {c: np.sort(np.asarray(v, dtype=np.int64)) for c, v in self.correct.items()}
        self.missed = {c: np.sort(np.asarray(v, dtype=np.int64)) for c, v in self.missed.items()}
        pooled = np.concatenate(
            [v for v in self.correct.values()] + [v for v in self.missed.values()]
        )
        if len(pooled) != self.n or len(np.unique(pooled)) != self.n:
            raise ValueError("buckets must partition the split exactly")
        if self.n and (pooled.min() < 0 or pooled.max() >= self.n):
            raise ValueError("bucket indices out of range")

    @property
    def classes(self) -> list[int]:
        return sorted(self.correct)

    def buckets(self) -> list[tuple[str, int, np.ndarray]]:
        """Deterministic bucket order: per class ascending, correct then missed."""
        out = []
        for c in self.classes:
            out.append(("correct", c, self.correct[c]))
            out.append(("missed", c, self.missed[c]))
        return out

    def bucket_sizes(self) -> dict[str, int]:
        return {f"{kind}[{c}]": len(idx) for kind, c, idx in self.buckets()}


def infer_partition(predictions: np.ndarray, labels: np.ndarray) -> GroupPartition:
    """Bucket each sample by (true class, whether the prediction matched)."""
    predictions = np.asarray(predictions, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.ndim != 1 or predictions.shape != labels.shape:
        raise ValueError("predictions and labels must be equal-length vectors")
    if len(labels) == 0:
        raise ValueError("cannot infer a partition from an empty split")
    hit = predictions == labels
    correct = {}
    missed = {}
    for c in np.unique(labels):
        cls = labels == c
        correct[int(c)] = np.flatnonzero(cls & hit)
        missed[int(c)] = np.flatnonzero(cls & ~hit)
    return GroupPartition(correct=correct, missed=missed, n=len(labels))


def default_s(partition: GroupPartition) -> int:
    """Smallest missed-bucket size: the usable per-bucket count the misses allow."""
    return min(len(partition.missed[c]) for c in partition.classes)


def _take(
    bucket: np.ndarray,
    losses: np.ndarray,
    s: int,
    rule: str,
    rng: np.random.Generator,
) -> np.ndarray:
    count = min(s, len(bucket))
    if count == 0:
        return bucket[:0]
    if rule == RANDOM:
        return np.sort(rng.choice(bucket, size=count, replace=False))
    keys = losses[bucket]
    if rule == LOSS_HIGH:
        keys = -keys
    # stable sort on an ascending-index bucket breaks loss ties by lowest index
    order = np.argsort(keys, kind="stable")
    return np.sort(bucket[order[:count]])


def select(
    partition: GroupPartition,
    losses: np.ndarray,
    s: int,
    strategy: SelectionStrategy,
    seed: int,
) -> np.ndarray:
    """Pick min(s, |bucket|) samples from every bucket, merged and sorted.

    Buckets smaller than s are clamped to their full size with a warning that
    names them; callers that need strict balance can escalate the warning.
    """
    losses = np.asarray(losses, dtype=np.float64)
    if losses.shape != (partition.n,):
        raise ValueError("losses must align 1:1 with the partitioned split")
    if s < 0:
        raise ValueError("s must be >= 0")
    rng = np.random.default_rng(seed)
    picked = []
    short = []
    for kind, c, bucket in partition.buckets():
        rule = strategy.correct_rule if kind == "correct" else strategy.missed_rule
        picked.append(_take(bucket, losses, s, rule, rng))
        if len(bucket) < s:
            short.append(f"{kind}[{c}]={len(bucket)}")
    if short:
        warnings.warn(
            f"selection clamped to bucket size in: {', '.join(short)} (s={s})",
            stacklevel=2,
        )
    return np.sort(np.concatenate(picked))


def selection_to_json(indices: np.ndarray) -> str:
    """Audit export: the selected indices as a JSON array."""
    return json.dumps([int(i) for i in np.asarray(indices)])
