"""Synthetic spurious-correlation datasets and the Tr/LLR/V/Te split protocol.

Samples are binary-labeled Gaussian feature vectors laid out as
[core | spurious | noise].  The core block separates the classes equally in
every group; the spurious block is more separable but only aligned with the
label inside each class's majority group, so a model that shortcuts onto it
fails on minority samples.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

MAJORITY = 0
MINORITY = 1

ALIGNMENT_NAMES = {MAJORITY: "majority", MINORITY: "minority"}


def group_key(class_id: int, alignment: int) -> str:
    """Canonical string key for a (class, alignment) group, e.g. 'y0_majority'."""
    return f"y{class_id}_{ALIGNMENT_NAMES[alignment]}"


@dataclass
class SpuriosityConfig:
    """Knobs for the synthetic generator.

    rho is the spuriosity rate: the fraction of each class drawn from its
    majority (spuriously aligned) group.  Defaults make the spurious block
    more separable than the core block (mu_spur > mu_core), so a classifier
    that prefers the simple spurious direction wins on high-rho training data.
    """

    n_per_class: int = 10000
    rho: float = 0.95
    d_core: int = 2
    d_spur: int = 2
    d_noise: int = 16
    mu_core: float = 1.0
    mu_spur: float = 2.0
    sigma: float = 1.0
    label_noise: float = 0.0

    def __post_init__(self) -> None:
        if self.n_per_class <= 0:
            raise ValueError("n_per_class must be >= 1")
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError(f"rho must be in [0, 1], got {self.rho}")
        if self.d_core < 1:
            raise ValueError("d_core must be >= 1")
        if self.d_spur < 0 or self.d_noise < 0:
            raise ValueError("feature dimensions must be >= 0")
        if self.sigma <= 0:
            raise ValueError("sigma must be > 0")
        if not 0.0 <= self.label_noise < 1.0:
            raise ValueError("label_noise must be in [0, 1)")

    @property
    def d(self) -> int:
        return self.d_core + self.d_spur + self.d_noise

    @classmethod
    def from_dict(cls, doc: dict) -> "SpuriosityConfig":
        unknown = set(doc) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ValueError(f"unknown SpuriosityConfig fields: {sorted(unknown)}")
        return cls(**doc)

    @classmethod
    def from_json(cls, text: str) -> "SpuriosityConfig":
        return cls.from_dict(json.loads(text))

    def to_dict(self) -> dict:
        return {
            "n_per_class": self.n_per_class,
            "rho": self.rho,
            "d_core": self.d_core,
            "d_spur": self.d_spur,
            "d_noise": self.d_noise,
            "mu_core": self.mu_core,
            "mu_spur": self.mu_spur,
            "sigma": self.sigma,
            "label_noise": self.label_noise,
        }


@dataclass
class GroupedDataset:
    """Feature matrix with class labels and (optionally hidden) group annotations.

    group_ids is an (n, 2) int array of [class, alignment] rows, or None for
    unannotated data.  Group annotations exist for evaluation and the
    group-oracle baseline only; the annotation-free retraining paths never
    read them.
    """

    features: np.ndarray
    labels: np.ndarray
    group_ids: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise ValueError("features must be a 2-D matrix")
        if self.labels.shape != (self.features.shape[0],):
            raise ValueError("labels must align with feature rows")
        if self.group_ids is not None:
            self.group_ids = np.asarray(self.group_ids, dtype=np.int64)
            if self.group_ids.shape != (self.features.shape[0], 2):
                raise ValueError("group_ids must be an (n, 2) [class, alignment] array")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def has_groups(self) -> bool:
        return self.group_ids is not None

    @property
    def n_classes(self) -> int:
        return int(self.labels.max()) + 1 if self.n else 0


@dataclass
class SplitSet:
    """Disjoint index lists into one GroupedDataset: train, last-layer-retrain, val, test."""

    tr: np.ndarray
    llr: np.ndarray
    val: np.ndarray
    te: np.ndarray

    def __post_init__(self) -> None:
        for name in ("tr", "llr", "val", "te"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.int64))
        all_idx = np.concatenate([self.tr, self.llr, self.val, self.te])
        if len(np.unique(all_idx)) != len(all_idx):
            raise ValueError("splits must be pairwise disjoint")

    def as_dict(self) -> dict[str, np.ndarray]:
        return {"tr": self.tr, "llr": self.llr, "val": self.val, "te": self.te}


def generate(config: SpuriosityConfig, seed: int) -> GroupedDataset:
    """Draw a synthetic dataset with exactly n_per_class samples per (pre-flip) class.

    Majority counts use exact quotas round(rho * n_per_class) rather than
    Bernoulli draws, so group-count tables are deterministic.  When
    label_noise > 0, labels flip after the features are drawn; group_ids keep
    the pre-flip class.
    """
    rng = np.random.default_rng(seed)
    n_maj = int(round(config.rho * config.n_per_class))
    n_min = config.n_per_class - n_maj
    n = 2 * config.n_per_class

    labels = np.repeat([0, 1], config.n_per_class)
    alignments = np.tile(
        np.concatenate([np.full(n_maj, MAJORITY), np.full(n_min, MINORITY)]), 2
    )

    features = rng.normal(0.0, config.sigma, size=(n, config.d))
    class_sign = 2.0 * labels - 1.0
    # spurious sign matches the class inside majority groups and opposes it
    # inside minority groups
    spur_sign = np.where(
        ((labels == 1) & (alignments == MAJORITY)) | ((labels == 0) & (alignments == MINORITY)),
        1.0,
        -1.0,
    )
    features[:, : config.d_core] += config.mu_core * class_sign[:, None]
    features[:, config.d_core : config.d_core + config.d_spur] += (
        config.mu_spur * spur_sign[:, None]
    )

    group_ids = np.column_stack([labels, alignments]).astype(np.int64)
    observed = labels.copy()
    if config.label_noise > 0:
        flips = rng.random(n) < config.label_noise
        observed = np.where(flips, 1 - observed, observed)

    perm = rng.permutation(n)
    return GroupedDataset(
        features=features[perm], labels=observed[perm], group_ids=group_ids[perm]
    )


def group_counts(dataset: GroupedDataset, split: np.ndarray) -> dict[tuple[int, int], int]:
    """Count split members per (class, alignment) group; counts sum to |split|."""
    if not dataset.has_groups:
        raise ValueError("dataset has no group annotations")
    split = np.asarray(split, dtype=np.int64)
    if split.size and (split.min() < 0 or split.max() >= dataset.n):
        raise IndexError("split index out of range")
    classes = sorted(np.unique(dataset.group_ids[:, 0]).tolist())
    counts = {(c, a): 0 for c in classes for a in (MAJORITY, MINORITY)}
    for c, a in dataset.group_ids[split]:
        counts[(int(c), int(a))] += 1
    return counts


def split_spuriosity(dataset: GroupedDataset, split: np.ndarray) -> float:
    """Majority fraction of a split (pooled over classes)."""
    counts = group_counts(dataset, split)
    total = sum(counts.values())
    if total == 0:
        return float("nan")
    return sum(v for (c, a), v in counts.items() if a == MAJORITY) / total


DEFAULT_FRACTIONS = (0.48, 0.12, 0.20, 0.20)


def make_splits(
    dataset: GroupedDataset,
    fractions: tuple[float, float, float, float] = DEFAULT_FRACTIONS,
    llr_rho_cap: float = 0.95,
    seed: int = 0,
) -> SplitSet:
    """Build disjoint tr/llr/val/te index lists.

    Allocation is stratified per group: tr and llr take their fraction of each
    group (so their spuriosity matches the dataset's), while val and te take
    an equal count from every nonempty group so worst-group accuracy is
    estimated with the same precision everywhere.  Excess majority samples
    beyond the balanced val/te quotas are left unassigned rather than allowed
    to distort the training spuriosity.

    If the llr split ends up more spurious than llr_rho_cap, its majority
    groups are subsampled (uniformly at random) until it matches the cap.
    """
    if dataset.n == 0:
        raise ValueError("dataset is empty")
    if not dataset.has_groups:
        raise ValueError("make_splits needs group annotations to stratify")
    f_tr, f_llr, f_val, f_te = fractions
    if min(fractions) < 0 or sum(fractions) > 1.0 + 1e-9:
        raise ValueError("fractions must be nonnegative and sum to <= 1")
    if not 0.0 < llr_rho_cap <= 1.0:
        raise ValueError("llr_rho_cap must be in (0, 1]")

    rng = np.random.default_rng(seed)
    counts = group_counts(dataset, np.arange(dataset.n))
    keys = sorted(counts)
    members = {
        key: rng.permutation(
            np.flatnonzero(
                (dataset.group_ids[:, 0] == key[0]) & (dataset.group_ids[:, 1] == key[1])
            )
        )
        for key in keys
    }

    empty = [key for key in keys if counts[key] == 0]
    nonempty = [key for key in keys if counts[key] > 0]
    if empty and (f_val > 0 or f_te > 0):
        if llr_rho_cap >= 1.0:
            raise ValueError(
                f"groups {[group_key(*k) for k in empty]} are empty and llr_rho_cap=1 "
                "gives retraining no minority samples either; lower the cap or rho"
            )
        warnings.warn(
            f"empty groups {[group_key(*k) for k in empty]}: val/te are balanced over "
            "the remaining groups only",
            stacklevel=2,
        )

    n = dataset.n
    m_val = m_te = 0
    if f_val > 0 and nonempty:
        m_val = min(
            int(round(f_val * n)) // len(nonempty),
            min(int(f_val * counts[k]) for k in nonempty),
        )
    if f_te > 0 and nonempty:
        m_te = min(
            int(round(f_te * n)) // len(nonempty),
            min(int(f_te * counts[k]) for k in nonempty),
        )

    tr_parts, llr_parts, val_parts, te_parts = [], [], [], []
    for key in keys:
        pool = members[key]
        val_parts.append(pool[:m_val])
        te_parts.append(pool[m_val : m_val + m_te])
        rest = pool[m_val + m_te :]
        take_tr = min(int(round(f_tr * counts[key])), len(rest))
        take_llr = min(int(round(f_llr * counts[key])), len(rest) - take_tr)
        tr_parts.append(rest[:take_tr])
        llr_parts.append(rest[take_tr : take_tr + take_llr])

    tr = np.sort(np.concatenate(tr_parts))
    llr = np.sort(np.concatenate(llr_parts))
    val = np.sort(np.concatenate(val_parts))
    te = np.sort(np.concatenate(te_parts))

    llr = _cap_llr_spuriosity(dataset, llr, llr_rho_cap, rng)
    return SplitSet(tr=tr, llr=llr, val=val, te=te)


def _cap_llr_spuriosity(
    dataset: GroupedDataset, llr: np.ndarray, cap: float, rng: np.random.Generator
) -> np.ndarray:
    if llr.size == 0 or cap >= 1.0:
        return llr
    realized = split_spuriosity(dataset, llr)
    if not realized > cap:
        return llr
    counts = group_counts(dataset, llr)
    classes = sorted({c for c, _ in counts})
    keep = []
    capped = False
    for c in classes:
        cls_mask = dataset.group_ids[llr, 0] == c
        maj = llr[cls_mask & (dataset.group_ids[llr, 1] == MAJORITY)]
        mino = llr[cls_mask & (dataset.group_ids[llr, 1] == MINORITY)]
        keep.append(mino)
        n_min = len(mino)
        if n_min == 0:
            # nothing to rebalance against; leave this class's majority intact
            keep.append(maj)
            continue
        maj_quota = int(round(cap / (1.0 - cap) * n_min))
        if maj_quota < len(maj):
            maj = rng.choice(maj, size=maj_quota, replace=False)
            capped = True
        keep.append(maj)
    if not capped and all(
        counts[(c, MINORITY)] == 0 for c in classes
    ):
        warnings.warn(
            "llr split has no minority samples at all; spuriosity cap has nothing to work with",
            stacklevel=3,
        )
    return np.sort(np.concatenate(keep))
