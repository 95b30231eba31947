"""Small fully-connected classifier trained with minibatch SGD.

Everything is plain numpy in float64: forward, backprop, momentum updates.
The model exposes its last hidden activations as reusable features so the
output layer can be reinitialized and retrained on its own, which is the
operation the rest of the package is built around.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import embio

LOSS_CLAMP = 1e-12
DEFAULT_HIDDEN = (32, 16)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction so large logits cannot overflow."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def per_sample_ce(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Cross-entropy per row, with the true-class probability clamped away from 0."""
    probs = softmax(logits)
    p_true = probs[np.arange(len(labels)), labels]
    return -np.log(np.maximum(p_true, LOSS_CLAMP))


class MLP:
    """ReLU network: d_in -> hidden[0] -> ... -> hidden[-1] -> n_classes."""

    def __init__(
        self,
        d_in: int,
        hidden: tuple[int, ...] = DEFAULT_HIDDEN,
        n_classes: int = 2,
        seed: int = 0,
    ) -> None:
        if d_in < 1 or n_classes < 2 or any(h < 1 for h in hidden):
            raise ValueError("layer sizes must be positive and n_classes >= 2")
        self.layer_sizes = (d_in, *hidden, n_classes)
        rng = np.random.default_rng(seed)
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        last = len(self.layer_sizes) - 2
        for k, (fan_in, fan_out) in enumerate(zip(self.layer_sizes, self.layer_sizes[1:])):
            if k < last:
                # He initialization, suited to the ReLU hidden layers
                weights = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
            else:
                bound = 1.0 / np.sqrt(fan_in)
                weights = rng.uniform(-bound, bound, size=(fan_in, fan_out))
            self.weights.append(weights)
            self.biases.append(np.zeros(fan_out))

    @property
    def d_in(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_classes(self) -> int:
        return self.layer_sizes[-1]

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def params(self) -> list[np.ndarray]:
        """Interleaved [W0, b0, W1, b1, ...]; arrays are the live ones, not copies."""
        out: list[np.ndarray] = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def forward_trace(
        self, features: np.ndarray
    ) -> tuple[list[np.ndarray], list[np.ndarray]]:
        """Run the network, returning (pre_activations, layer_inputs).

        layer_inputs[k] is what layer k consumed; pre_activations[k] is its
        affine output before ReLU (the last entry is the logits).
        """
        x = np.asarray(features, dtype=np.float64)
        inputs = [x]
        pre = []
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = inputs[-1] @ w + b
            pre.append(z)
            if k < self.n_layers - 1:
                inputs.append(np.maximum(z, 0.0))
        return pre, inputs

    def forward(self, features: np.ndarray) -> np.ndarray:
        pre, _ = self.forward_trace(features)
        return pre[-1]

    def hidden_features(self, features: np.ndarray) -> np.ndarray:
        """Last hidden activations: the representation the output layer reads.

        For a linear model (no hidden layers) this is the raw input.
        """
        if self.n_layers == 1:
            return np.asarray(features, dtype=np.float64)
        pre, _ = self.forward_trace(features)
        return np.maximum(pre[-2], 0.0)

    def head_logits(self, hidden: np.ndarray) -> np.ndarray:
        return np.asarray(hidden, dtype=np.float64) @ self.weights[-1] + self.biases[-1]

    def reinit_head(self, seed: int) -> None:
        """Fresh uniform(+-1/sqrt(fan_in)) output layer; everything below stays put."""
        rng = np.random.default_rng(seed)
        fan_in = self.layer_sizes[-2]
        bound = 1.0 / np.sqrt(fan_in)
        self.weights[-1] = rng.uniform(-bound, bound, size=(fan_in, self.n_classes))
        self.biases[-1] = np.zeros(self.n_classes)

    def clone(self) -> "MLP":
        other = MLP.__new__(MLP)
        other.layer_sizes = self.layer_sizes
        other.weights = [w.copy() for w in self.weights]
        other.biases = [b.copy() for b in self.biases]
        return other

    def save(self, path) -> None:
        layers = []
        for k, (weights, biases) in enumerate(zip(self.weights, self.biases)):
            act = embio.ACT_RELU if k < self.n_layers - 1 else embio.ACT_NONE
            layers.append((weights, biases, act))
        embio.write_model_layers(path, layers)

    @classmethod
    def load(cls, path) -> "MLP":
        layers = embio.read_model_layers(path)
        for k, (weights, _, act) in enumerate(layers):
            want = embio.ACT_RELU if k < len(layers) - 1 else embio.ACT_NONE
            if act != want:
                raise embio.EmbFormatError(
                    f"{path}: layer {k} activation {act} does not fit hidden-ReLU/"
                    "linear-output structure"
                )
            if k > 0 and weights.shape[0] != layers[k - 1][0].shape[1]:
                raise embio.EmbFormatError(f"{path}: layer {k} shape does not chain")
        sizes = [layers[0][0].shape[0]] + [w.shape[1] for w, _, _ in layers]
        if sizes[-1] < 2:
            raise embio.EmbFormatError(f"{path}: output layer has {sizes[-1]} class(es)")
        model = cls.__new__(cls)
        model.layer_sizes = tuple(sizes)
        model.weights = [w for w, _, _ in layers]
        model.biases = [b for _, b, _ in layers]
        return model


def _normalized_weights(sample_weights: np.ndarray | None, idx: np.ndarray) -> np.ndarray:
    """Per-batch weights rescaled to mean 1 so they shift emphasis, not step size."""
    if sample_weights is None:
        return np.ones(len(idx))
    w = np.asarray(sample_weights, dtype=np.float64)[idx]
    mean = w.mean()
    if mean <= 0:
        raise ValueError("sample weights must have positive batch mean")
    return w / mean


def loss_and_grads(
    model: MLP,
    features: np.ndarray,
    labels: np.ndarray,
    sample_weights: np.ndarray | None = None,
    weight_decay: float = 0.0,
) -> tuple[float, list[np.ndarray]]:
    """Weighted cross-entropy plus L2 penalty, and its gradient via backprop.

    The returned loss includes the 0.5 * weight_decay * ||W||^2 term (biases
    excluded) so the gradients are exactly the derivative of the returned
    scalar. Gradients come back in model.params order.
    """
    labels = np.asarray(labels, dtype=np.int64)
    n = len(labels)
    if sample_weights is None:
        w = np.ones(n)
    else:
        w = np.asarray(sample_weights, dtype=np.float64)
    pre, inputs = model.forward_trace(features)
    logits = pre[-1]
    loss = float(np.mean(w * per_sample_ce(logits, labels)))

    probs = softmax(logits)
    delta = probs.copy()
    delta[np.arange(n), labels] -= 1.0
    delta *= (w / n)[:, None]

    grads_w = [np.empty(0)] * model.n_layers
    grads_b = [np.empty(0)] * model.n_layers
    for k in range(model.n_layers - 1, -1, -1):
        grads_w[k] = inputs[k].T @ delta
        grads_b[k] = delta.sum(axis=0)
        if k > 0:
            delta = (delta @ model.weights[k].T) * (pre[k - 1] > 0)

    if weight_decay > 0:
        for k, w_k in enumerate(model.weights):
            loss += 0.5 * weight_decay * float(np.sum(w_k * w_k))
            grads_w[k] = grads_w[k] + weight_decay * w_k

    grads: list[np.ndarray] = []
    for gw, gb in zip(grads_w, grads_b):
        grads.extend((gw, gb))
    return loss, grads


def finite_difference_grads(
    model: MLP,
    features: np.ndarray,
    labels: np.ndarray,
    sample_weights: np.ndarray | None = None,
    weight_decay: float = 0.0,
    step: float = 1e-5,
) -> list[np.ndarray]:
    """Central-difference gradient of the same scalar loss_and_grads returns.

    Touches the loss only through forward passes, so it is an independent
    check on the backprop path. O(n_params) forward passes: keep inputs small.
    """

    def loss_only() -> float:
        labels_arr = np.asarray(labels, dtype=np.int64)
        w = (
            np.ones(len(labels_arr))
            if sample_weights is None
            else np.asarray(sample_weights, dtype=np.float64)
        )
        logits = model.forward(features)
        value = float(np.mean(w * per_sample_ce(logits, labels_arr)))
        if weight_decay > 0:
            for w_k in model.weights:
                value += 0.5 * weight_decay * float(np.sum(w_k * w_k))
        return value

    grads = []
    for param in model.params:
        grad = np.zeros_like(param)
        flat_p = param.ravel()
        flat_g = grad.ravel()
        for i in range(flat_p.size):
            orig = flat_p[i]
            flat_p[i] = orig + step
            up = loss_only()
            flat_p[i] = orig - step
            down = loss_only()
            flat_p[i] = orig
            flat_g[i] = (up - down) / (2.0 * step)
        grads.append(grad)
    return grads


@dataclass
class TrainConfig:
    """Optimizer settings for one fit() call."""

    lr: float = 0.01
    weight_decay: float = 1e-4
    momentum: float = 0.9
    batch_size: int = 256
    epochs: int = 40
    head_only: bool = False
    class_balance: bool = False

    def __post_init__(self) -> None:
        if self.lr <= 0 or self.batch_size < 1 or self.epochs < 0:
            raise ValueError("lr must be > 0, batch_size >= 1, epochs >= 0")
        if self.weight_decay < 0 or not 0.0 <= self.momentum < 1.0:
            raise ValueError("weight_decay must be >= 0 and momentum in [0, 1)")


def _balanced_epoch_indices(labels: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """All indices plus with-replacement extras so every class matches the largest."""
    classes, counts = np.unique(labels, return_counts=True)
    parts = [np.arange(len(labels))]
    top = counts.max()
    for cls, count in zip(classes, counts):
        if count < top:
            pool = np.flatnonzero(labels == cls)
            parts.append(rng.choice(pool, size=top - count, replace=True))
    return np.concatenate(parts)


def fit(
    model: MLP,
    features: np.ndarray,
    labels: np.ndarray,
    config: TrainConfig,
    seed: int,
    sample_weights: np.ndarray | None = None,
) -> list[float]:
    """Train in place with SGD + momentum; returns the mean loss per epoch.

    head_only freezes every layer below the output: the frozen representation
    is computed once up front and reused, which changes nothing numerically
    because those layers never move.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if len(features) != len(labels):
        raise ValueError("features and labels length mismatch")
    if len(features) == 0:
        raise ValueError("cannot fit on an empty dataset")
    if labels.min() < 0 or labels.max() >= model.n_classes:
        raise ValueError("labels out of range for model's class count")
    if sample_weights is not None and len(sample_weights) != len(labels):
        raise ValueError("sample_weights length mismatch")

    rng = np.random.default_rng(seed)
    if config.head_only:
        inputs = model.hidden_features(features)
        head = MLP.__new__(MLP)
        head.layer_sizes = (model.layer_sizes[-2], model.layer_sizes[-1])
        head.weights = [model.weights[-1]]
        head.biases = [model.biases[-1]]
        active = head
    else:
        inputs = features
        active = model

    velocity = [np.zeros_like(p) for p in active.params]
    epoch_losses: list[float] = []
    for _ in range(config.epochs):
        if config.class_balance:
            epoch_idx = _balanced_epoch_indices(labels, rng)
            rng.shuffle(epoch_idx)
        else:
            epoch_idx = rng.permutation(len(labels))
        loss_sum = 0.0
        for start in range(0, len(epoch_idx), config.batch_size):
            idx = epoch_idx[start : start + config.batch_size]
            w_batch = _normalized_weights(sample_weights, idx)
            loss, grads = loss_and_grads(
                active,
                inputs[idx],
                labels[idx],
                sample_weights=w_batch,
                weight_decay=config.weight_decay,
            )
            for vel, param, grad in zip(velocity, active.params, grads):
                vel *= config.momentum
                vel -= config.lr * grad
                param += vel
            loss_sum += loss * len(idx)
        epoch_losses.append(loss_sum / len(epoch_idx))
    # in the head_only path the updates hit model.weights[-1]/biases[-1]
    # directly: the head wrapper shares those arrays and += is in place
    return epoch_losses


def predict(model: MLP, features: np.ndarray) -> np.ndarray:
    return model.forward(features).argmax(axis=1)


def per_sample_losses(model: MLP, features: np.ndarray, labels: np.ndarray) -> np.ndarray:
    return per_sample_ce(model.forward(features), np.asarray(labels, dtype=np.int64))


def accuracy(model: MLP, features: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(predict(model, features) == np.asarray(labels)))
