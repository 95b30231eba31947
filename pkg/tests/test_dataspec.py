"""Generator and split-protocol tests."""

import numpy as np
import pytest

from spurbench.dataspec import (
    DEFAULT_FRACTIONS,
    MAJORITY,
    MINORITY,
    GroupedDataset,
    SpuriosityConfig,
    generate,
    group_counts,
    group_key,
    make_splits,
    split_spuriosity,
)

SEEDS = [42, 123, 456]


def small_config(**overrides) -> SpuriosityConfig:
    base = dict(n_per_class=1000, rho=0.9, d_core=2, d_spur=2, d_noise=4)
    base.update(overrides)
    return SpuriosityConfig(**base)


def test_group_key_names():
    assert group_key(0, MAJORITY) == "y0_majority"
    assert group_key(1, MINORITY) == "y1_minority"


def test_config_validation_errors():
    with pytest.raises(ValueError):
        SpuriosityConfig(rho=1.5)
    with pytest.raises(ValueError):
        SpuriosityConfig(rho=-0.1)
    with pytest.raises(ValueError):
        SpuriosityConfig(n_per_class=0)
    with pytest.raises(ValueError):
        SpuriosityConfig(d_core=0)
    with pytest.raises(ValueError):
        SpuriosityConfig(sigma=0.0)
    with pytest.raises(ValueError):
        SpuriosityConfig(label_noise=1.0)
    with pytest.raises(ValueError):
        SpuriosityConfig.from_dict({"rho": 0.5, "bogus": 3})


def test_config_json_round_trip():
    config = small_config(rho=0.85, label_noise=0.05)
    back = SpuriosityConfig.from_dict(config.to_dict())
    assert back == config


def test_exact_group_quotas():
    dataset = generate(small_config(rho=0.9), seed=0)
    counts = group_counts(dataset, np.arange(dataset.n))
    assert counts[(0, MAJORITY)] == 900
    assert counts[(0, MINORITY)] == 100
    assert counts[(1, MAJORITY)] == 900
    assert counts[(1, MINORITY)] == 100


def test_quota_rounding_matches_scan():
    # quota = round(rho * n_per_class) for every rho on a coarse scan
    for rho in np.linspace(0.0, 1.0, 21):
        config = small_config(rho=float(rho), n_per_class=100)
        dataset = generate(config, seed=1)
        counts = group_counts(dataset, np.arange(dataset.n))
        expect_maj = int(round(rho * 100))
        assert counts[(0, MAJORITY)] == expect_maj
        assert counts[(0, MINORITY)] == 100 - expect_maj


def test_rho_one_has_no_minorities():
    dataset = generate(small_config(rho=1.0), seed=0)
    counts = group_counts(dataset, np.arange(dataset.n))
    assert counts[(0, MINORITY)] == 0
    assert counts[(1, MINORITY)] == 0


def test_generate_is_reproducible():
    config = small_config()
    a = generate(config, seed=7)
    b = generate(config, seed=7)
    c = generate(config, seed=8)
    np.testing.assert_array_equal(a.features, b.features)
    np.testing.assert_array_equal(a.labels, b.labels)
    np.testing.assert_array_equal(a.group_ids, b.group_ids)
    assert not np.array_equal(a.features, c.features)


def test_feature_block_means():
    # each block's empirical mean should sit near its configured offset
    config = small_config(n_per_class=20000, rho=0.8)
    dataset = generate(config, seed=3)
    y1 = dataset.labels == 1
    core = dataset.features[:, : config.d_core]
    assert core[y1].mean() == pytest.approx(config.mu_core, abs=0.05)
    assert core[~y1].mean() == pytest.approx(-config.mu_core, abs=0.05)

    spur = dataset.features[:, config.d_core : config.d_core + config.d_spur]
    maj = dataset.group_ids[:, 1] == MAJORITY
    assert spur[y1 & maj].mean() == pytest.approx(config.mu_spur, abs=0.05)
    assert spur[y1 & ~maj].mean() == pytest.approx(-config.mu_spur, abs=0.05)
    assert spur[~y1 & maj].mean() == pytest.approx(-config.mu_spur, abs=0.05)
    assert spur[~y1 & ~maj].mean() == pytest.approx(config.mu_spur, abs=0.05)

    noise = dataset.features[:, config.d_core + config.d_spur :]
    assert noise.mean() == pytest.approx(0.0, abs=0.05)


def test_label_noise_flips_labels_not_groups():
    config = small_config(n_per_class=20000, label_noise=0.1)
    dataset = generate(config, seed=5)
    # group_ids keep the pre-flip class, so disagreement rate ~ label_noise
    flipped = dataset.labels != dataset.group_ids[:, 0]
    assert flipped.mean() == pytest.approx(0.1, abs=0.01)
    # pre-flip classes stay exactly balanced
    assert (dataset.group_ids[:, 0] == 0).sum() == config.n_per_class


def test_zero_label_noise_labels_match_groups():
    dataset = generate(small_config(label_noise=0.0), seed=2)
    np.testing.assert_array_equal(dataset.labels, dataset.group_ids[:, 0])


def test_core_signal_symmetric_across_groups():
    # a fixed core-only rule must score all four groups equally (within noise)
    config = small_config(n_per_class=50000, rho=0.95)
    dataset = generate(config, seed=11)
    pred = (dataset.features[:, : config.d_core].sum(axis=1) > 0).astype(int)
    correct = pred == dataset.labels
    accs = []
    for c in (0, 1):
        for a in (MAJORITY, MINORITY):
            mask = (dataset.group_ids[:, 0] == c) & (dataset.group_ids[:, 1] == a)
            accs.append(correct[mask].mean())
    assert max(accs) - min(accs) < 0.03


def test_grouped_dataset_validation():
    with pytest.raises(ValueError):
        GroupedDataset(features=np.zeros(5), labels=np.zeros(5, dtype=int))
    with pytest.raises(ValueError):
        GroupedDataset(features=np.zeros((5, 3)), labels=np.zeros(4, dtype=int))
    with pytest.raises(ValueError):
        GroupedDataset(
            features=np.zeros((5, 3)),
            labels=np.zeros(5, dtype=int),
            group_ids=np.zeros((5, 3), dtype=int),
        )


def test_splits_are_disjoint_and_cover_expected_sizes():
    dataset = generate(small_config(rho=0.7, n_per_class=5000), seed=0)
    splits = make_splits(dataset, seed=1)
    idx = np.concatenate([splits.tr, splits.llr, splits.val, splits.te])
    assert len(np.unique(idx)) == len(idx)
    assert idx.min() >= 0 and idx.max() < dataset.n
    # tr/llr keep their fraction of each group, so llr is a quarter of tr
    assert abs(len(splits.llr) - len(splits.tr) / 4) <= 8


def test_splits_reproducible():
    dataset = generate(small_config(), seed=0)
    a = make_splits(dataset, seed=9)
    b = make_splits(dataset, seed=9)
    c = make_splits(dataset, seed=10)
    for name in ("tr", "llr", "val", "te"):
        np.testing.assert_array_equal(getattr(a, name), getattr(b, name))
    assert not np.array_equal(a.tr, c.tr)


def test_val_te_group_balanced():
    dataset = generate(small_config(rho=0.9, n_per_class=5000), seed=0)
    splits = make_splits(dataset, seed=2)
    for split in (splits.val, splits.te):
        counts = group_counts(dataset, split)
        values = list(counts.values())
        assert min(values) == max(values)
        assert min(values) > 0


def test_tr_keeps_nominal_spuriosity():
    for rho in (0.7, 0.9, 0.95):
        dataset = generate(small_config(rho=rho, n_per_class=5000), seed=0)
        splits = make_splits(dataset, seed=3)
        assert split_spuriosity(dataset, splits.tr) == pytest.approx(rho, abs=0.01)


def test_llr_cap_subsamples_majorities():
    dataset = generate(small_config(rho=0.99, n_per_class=5000), seed=0)
    splits = make_splits(dataset, llr_rho_cap=0.95, seed=4)
    assert split_spuriosity(dataset, splits.llr) == pytest.approx(0.95, abs=0.005)
    counts = group_counts(dataset, splits.llr)
    # minorities are never dropped by the cap
    full = make_splits(dataset, llr_rho_cap=1.0, seed=4)
    full_counts = group_counts(dataset, full.llr)
    for c in (0, 1):
        assert counts[(c, MINORITY)] == full_counts[(c, MINORITY)]
        assert counts[(c, MAJORITY)] < full_counts[(c, MAJORITY)]


def test_llr_cap_inactive_below_threshold():
    dataset = generate(small_config(rho=0.8, n_per_class=5000), seed=0)
    capped = make_splits(dataset, llr_rho_cap=0.95, seed=5)
    uncapped = make_splits(dataset, llr_rho_cap=1.0, seed=5)
    np.testing.assert_array_equal(capped.llr, uncapped.llr)


def test_rho_one_with_cap_errors():
    dataset = generate(small_config(rho=1.0), seed=0)
    with pytest.raises(ValueError, match="empty"):
        make_splits(dataset, llr_rho_cap=1.0, seed=0)


def test_rho_one_without_minorities_warns():
    dataset = generate(small_config(rho=1.0), seed=0)
    with pytest.warns(UserWarning):
        splits = make_splits(dataset, llr_rho_cap=0.95, seed=0)
    counts = group_counts(dataset, splits.val)
    assert counts[(0, MINORITY)] == 0
    assert counts[(0, MAJORITY)] > 0


def test_make_splits_fraction_validation():
    dataset = generate(small_config(), seed=0)
    with pytest.raises(ValueError):
        make_splits(dataset, fractions=(0.5, 0.5, 0.3, 0.3), seed=0)
    with pytest.raises(ValueError):
        make_splits(dataset, fractions=(-0.1, 0.5, 0.3, 0.3), seed=0)
    with pytest.raises(ValueError):
        make_splits(dataset, llr_rho_cap=0.0, seed=0)


def test_group_counts_requires_annotations():
    dataset = GroupedDataset(features=np.zeros((4, 2)), labels=np.zeros(4, dtype=int))
    with pytest.raises(ValueError):
        group_counts(dataset, np.arange(4))


def test_group_counts_rejects_bad_indices():
    dataset = generate(small_config(n_per_class=10), seed=0)
    with pytest.raises(IndexError):
        group_counts(dataset, np.array([dataset.n]))


def test_default_fractions_leave_headroom():
    assert sum(DEFAULT_FRACTIONS) <= 1.0


def test_splits_seed_varies_membership_not_counts():
    dataset = generate(small_config(rho=0.9, n_per_class=2000), seed=0)
    for seed in SEEDS:
        splits = make_splits(dataset, seed=seed)
        counts = group_counts(dataset, splits.tr)
        assert counts[(0, MAJORITY)] == int(round(0.48 * 1800))
        assert counts[(0, MINORITY)] == int(round(0.48 * 200))
