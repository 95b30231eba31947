"""Network and optimizer tests, anchored on finite-difference gradients."""

import numpy as np
import pytest

from spurbench.embio import EmbFormatError
from spurbench.nnopt import (
    MLP,
    TrainConfig,
    accuracy,
    finite_difference_grads,
    fit,
    loss_and_grads,
    per_sample_ce,
    per_sample_losses,
    predict,
    softmax,
)


def toy_batch(seed: int, n: int = 8, d: int = 5, n_classes: int = 2):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(n, d)), rng.integers(0, n_classes, size=n)


def well_conditioned_case(seed: int, margin: float = 1e-3):
    """Model plus batch whose ReLU pre-activations all clear the kink.

    Finite differences straddle x=0 badly, so resample until no unit sits
    within `margin` of it.
    """
    for attempt in range(200):
        case_seed = seed * 1000 + attempt
        model = MLP(d_in=4, hidden=(6, 5), n_classes=3, seed=case_seed)
        features, labels = toy_batch(case_seed + 1, n=6, d=4, n_classes=3)
        pre, _ = model.forward_trace(features)
        if min(np.abs(z).min() for z in pre[:-1]) > margin:
            return model, features, labels
    raise AssertionError("could not build a well-conditioned case")


def test_softmax_rows_sum_to_one():
    logits = np.array([[1.0, 2.0, 3.0], [-5.0, 0.0, 5.0]])
    probs = softmax(logits)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0)
    assert (probs > 0).all()


def test_softmax_handles_huge_logits():
    probs = softmax(np.array([[1e4, -1e4], [0.0, 0.0]]))
    assert np.isfinite(probs).all()
    np.testing.assert_allclose(probs[0], [1.0, 0.0], atol=1e-12)


def test_ce_clamp_keeps_loss_finite():
    # true class assigned essentially zero probability
    logits = np.array([[100.0, -100.0]])
    loss = per_sample_ce(logits, np.array([1]))
    assert np.isfinite(loss).all()
    assert loss[0] == pytest.approx(-np.log(1e-12))


def test_ce_matches_manual_value():
    logits = np.array([[0.0, 0.0]])
    loss = per_sample_ce(logits, np.array([0]))
    assert loss[0] == pytest.approx(np.log(2.0))


def test_mlp_shapes_and_determinism():
    a = MLP(d_in=7, hidden=(4, 3), n_classes=2, seed=5)
    b = MLP(d_in=7, hidden=(4, 3), n_classes=2, seed=5)
    c = MLP(d_in=7, hidden=(4, 3), n_classes=2, seed=6)
    assert [w.shape for w in a.weights] == [(7, 4), (4, 3), (3, 2)]
    for wa, wb in zip(a.weights, b.weights):
        np.testing.assert_array_equal(wa, wb)
    assert not np.array_equal(a.weights[0], c.weights[0])


def test_mlp_rejects_bad_sizes():
    with pytest.raises(ValueError):
        MLP(d_in=0)
    with pytest.raises(ValueError):
        MLP(d_in=3, n_classes=1)
    with pytest.raises(ValueError):
        MLP(d_in=3, hidden=(0,))


def test_gradients_match_finite_differences():
    for seed in range(5):
        model, features, labels = well_conditioned_case(seed)
        _, analytic = loss_and_grads(model, features, labels, weight_decay=1e-3)
        numeric = finite_difference_grads(model, features, labels, weight_decay=1e-3)
        for a, n in zip(analytic, numeric):
            denom = np.maximum(1.0, np.abs(n))
            assert (np.abs(a - n) / denom).max() <= 1e-5


def test_weighted_gradients_match_finite_differences():
    model, features, labels = well_conditioned_case(7)
    rng = np.random.default_rng(7)
    weights = rng.uniform(0.2, 3.0, size=len(labels))
    _, analytic = loss_and_grads(model, features, labels, sample_weights=weights)
    numeric = finite_difference_grads(model, features, labels, sample_weights=weights)
    for a, n in zip(analytic, numeric):
        assert (np.abs(a - n) / np.maximum(1.0, np.abs(n))).max() <= 1e-5


def test_loss_includes_decay_term():
    model, features, labels = well_conditioned_case(3)
    plain, _ = loss_and_grads(model, features, labels, weight_decay=0.0)
    decayed, _ = loss_and_grads(model, features, labels, weight_decay=0.1)
    penalty = 0.05 * sum(float(np.sum(w * w)) for w in model.weights)
    assert decayed == pytest.approx(plain + penalty)


def test_decay_leaves_bias_gradient_alone():
    model, features, labels = well_conditioned_case(4)
    _, g0 = loss_and_grads(model, features, labels, weight_decay=0.0)
    _, g1 = loss_and_grads(model, features, labels, weight_decay=0.5)
    for k in range(1, len(g0), 2):
        np.testing.assert_array_equal(g0[k], g1[k])
    for k in range(0, len(g0), 2):
        assert not np.array_equal(g0[k], g1[k])


def test_fit_learns_linearly_separable_data():
    rng = np.random.default_rng(0)
    n = 400
    labels = np.repeat([0, 1], n // 2)
    features = rng.normal(size=(n, 4)) + 2.0 * (2 * labels - 1)[:, None]
    model = MLP(d_in=4, seed=1)
    losses = fit(model, features, labels, TrainConfig(lr=0.05, epochs=30), seed=2)
    assert losses[-1] < losses[0]
    assert accuracy(model, features, labels) > 0.95


def test_fit_is_deterministic():
    features, labels = toy_batch(9, n=120, d=6)
    config = TrainConfig(lr=0.02, epochs=5, batch_size=32)
    runs = []
    for _ in range(2):
        model = MLP(d_in=6, seed=3)
        fit(model, features, labels, config, seed=4)
        runs.append([w.copy() for w in model.weights])
    for wa, wb in zip(*runs):
        np.testing.assert_array_equal(wa, wb)


def test_momentum_matches_manual_update():
    # one batch, two steps: v = m*v - lr*g; w += v
    model, features, labels = well_conditioned_case(11)
    config = TrainConfig(
        lr=0.1, weight_decay=0.0, momentum=0.9, batch_size=len(labels), epochs=2
    )
    manual = model.clone()
    velocity = [np.zeros_like(p) for p in manual.params]
    for _ in range(2):
        _, grads = loss_and_grads(manual, features, labels)
        for vel, param, grad in zip(velocity, manual.params, grads):
            vel *= 0.9
            vel -= 0.1 * grad
            param += vel
    fit(model, features, labels, config, seed=0)
    for wa, wb in zip(model.weights, manual.weights):
        np.testing.assert_allclose(wa, wb, atol=1e-12)


def test_head_only_freezes_lower_layers():
    features, labels = toy_batch(13, n=100, d=6)
    model = MLP(d_in=6, seed=5)
    before = [w.copy() for w in model.weights[:-1]]
    fit(model, features, labels, TrainConfig(epochs=3, head_only=True), seed=6)
    for orig, now in zip(before, model.weights[:-1]):
        np.testing.assert_array_equal(orig, now)


def test_head_only_matches_manual_head_descent():
    # cached hidden features must reproduce exact full-batch head updates
    features, labels = toy_batch(17, n=40, d=6)
    model = MLP(d_in=6, seed=7)
    reference = model.clone()
    config = TrainConfig(
        lr=0.05, weight_decay=1e-3, momentum=0.9, batch_size=40, epochs=3, head_only=True
    )
    hidden = reference.hidden_features(features)
    head_w = reference.weights[-1]
    head_b = reference.biases[-1]
    vel_w = np.zeros_like(head_w)
    vel_b = np.zeros_like(head_b)
    n = len(labels)
    for _ in range(3):
        logits = hidden @ head_w + head_b
        probs = softmax(logits)
        delta = probs.copy()
        delta[np.arange(n), labels] -= 1.0
        delta /= n
        g_w = hidden.T @ delta + 1e-3 * head_w
        g_b = delta.sum(axis=0)
        vel_w = 0.9 * vel_w - 0.05 * g_w
        vel_b = 0.9 * vel_b - 0.05 * g_b
        head_w = head_w + vel_w
        head_b = head_b + vel_b
    fit(model, features, labels, config, seed=8)
    np.testing.assert_allclose(model.weights[-1], head_w, atol=1e-12)
    np.testing.assert_allclose(model.biases[-1], head_b, atol=1e-12)


def test_reinit_head_changes_only_head():
    model = MLP(d_in=5, seed=9)
    lower = [w.copy() for w in model.weights[:-1]]
    old_head = model.weights[-1].copy()
    model.biases[-1][:] = 3.0
    model.reinit_head(seed=10)
    for orig, now in zip(lower, model.weights[:-1]):
        np.testing.assert_array_equal(orig, now)
    assert not np.array_equal(model.weights[-1], old_head)
    np.testing.assert_array_equal(model.biases[-1], 0.0)


def test_class_balance_upsamples_minority_class():
    rng = np.random.default_rng(1)
    labels = np.array([0] * 90 + [1] * 10)
    features = rng.normal(size=(100, 3)) + 3.0 * (2 * labels - 1)[:, None]
    # with heavy imbalance and balancing on, the model should not collapse to
    # always predicting the majority class
    model = MLP(d_in=3, seed=2)
    fit(
        model,
        features,
        labels,
        TrainConfig(lr=0.05, epochs=20, class_balance=True),
        seed=3,
    )
    preds = predict(model, features)
    assert (preds == 1).sum() >= 5


def test_sample_weights_steer_the_fit():
    rng = np.random.default_rng(21)
    # two clusters share x but disagree on the label; weights pick the winner
    features = np.concatenate([rng.normal(0, 0.1, size=(50, 2)) for _ in range(2)])
    labels = np.array([0] * 50 + [1] * 50)
    weights = np.array([0.01] * 50 + [10.0] * 50)
    model = MLP(d_in=2, seed=4)
    fit(
        model,
        features,
        labels,
        TrainConfig(lr=0.05, epochs=25, weight_decay=0.0),
        seed=5,
        sample_weights=weights,
    )
    preds = predict(model, features)
    assert (preds == 1).mean() > 0.9


def test_fit_validation_errors():
    model = MLP(d_in=3, seed=0)
    features, labels = toy_batch(1, n=10, d=3)
    with pytest.raises(ValueError):
        fit(model, features, labels[:5], TrainConfig(), seed=0)
    with pytest.raises(ValueError):
        fit(model, features[:0], labels[:0], TrainConfig(), seed=0)
    with pytest.raises(ValueError):
        fit(model, features, labels + 5, TrainConfig(), seed=0)
    with pytest.raises(ValueError):
        fit(model, features, labels, TrainConfig(), seed=0, sample_weights=np.ones(3))
    with pytest.raises(ValueError):
        TrainConfig(lr=-1.0)
    with pytest.raises(ValueError):
        TrainConfig(momentum=1.0)


def test_per_sample_losses_match_ce():
    model, features, labels = well_conditioned_case(15)
    direct = per_sample_ce(model.forward(features), labels)
    np.testing.assert_array_equal(per_sample_losses(model, features, labels), direct)


def test_save_load_round_trip(tmp_path):
    model = MLP(d_in=6, hidden=(5, 4), n_classes=3, seed=11)
    features, _ = toy_batch(2, n=7, d=6)
    path = tmp_path / "model.ckpt"
    model.save(path)
    back = MLP.load(path)
    np.testing.assert_array_equal(back.forward(features), model.forward(features))
    assert back.layer_sizes == model.layer_sizes


def test_load_rejects_bad_activation_pattern(tmp_path):
    from spurbench.embio import ACT_RELU, write_model_layers

    path = tmp_path / "bad.ckpt"
    # output layer marked ReLU instead of linear
    write_model_layers(
        path,
        [(np.zeros((4, 3)), np.zeros(3), ACT_RELU), (np.zeros((3, 2)), np.zeros(2), ACT_RELU)],
    )
    with pytest.raises(EmbFormatError, match="activation"):
        MLP.load(path)


def test_load_rejects_unchained_shapes(tmp_path):
    from spurbench.embio import ACT_NONE, ACT_RELU, write_model_layers

    path = tmp_path / "bad.ckpt"
    write_model_layers(
        path,
        [(np.zeros((4, 3)), np.zeros(3), ACT_RELU), (np.zeros((9, 2)), np.zeros(2), ACT_NONE)],
    )
    with pytest.raises(EmbFormatError, match="chain"):
        MLP.load(path)


def test_linear_model_supported():
    features, labels = toy_batch(30, n=60, d=3)
    model = MLP(d_in=3, hidden=(), seed=1)
    assert model.n_layers == 1
    assert model.forward(features).shape == (60, 2)
    np.testing.assert_array_equal(model.hidden_features(features), features)
    fit(model, features, labels, TrainConfig(epochs=2, batch_size=16), seed=0)
    fit(model, features, labels, TrainConfig(epochs=2, head_only=True), seed=0)


def test_head_init_is_bounded_uniform():
    model = MLP(d_in=5, hidden=(8,), seed=0)
    bound = 1.0 / np.sqrt(8)
    assert np.abs(model.weights[-1]).max() <= bound
    model.reinit_head(seed=1)
    assert np.abs(model.weights[-1]).max() <= bound
    np.testing.assert_array_equal(model.biases[-1], 0.0)
