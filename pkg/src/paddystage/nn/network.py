"""Sequential networks, softmax cross-entropy and momentum SGD training."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .layers import (
    ACTIVATIONS, BatchNorm, Conv1D, Dense, Dropout, Flatten, Layer, ReLU, Reshape, Softmax, softmax,
)

LINEAR = (Dense, Conv1D)


class TrainingDivergedError(FloatingPointError):
    """Loss became non-finite; the message names the epoch and batch."""


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    momentum: float = 0.9
    batch_size: int = 128
    epochs: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")

    def to_dict(self):
        return asdict(self)


class Network:
    """An ordered stack of layers ending in a :class:`Softmax` marker.

    Construction checks shape compatibility and the block composition rules:
    a batch-norm layer that follows a linear map must be followed by an
    activation (and the linear map must have its bias disabled), and dropout
    sits directly after an activation. Batch norm and dropout placed on the
    raw input are also accepted.
    """

    def __init__(self, layers, input_shape):
        self.layers = list(layers)
        self.input_shape = tuple(input_shape)
        self._validate()
        self.mode = "train"
        self.set_mode("train")

    # ------------------------------------------------------------- checks
    def _validate(self):
        if not self.layers or not isinstance(self.layers[-1], Softmax):
            raise ValueError("network must end with a softmax output layer")
        if sum(isinstance(l, Softmax) for l in self.layers) != 1:
            raise ValueError("network must contain exactly one softmax layer")

        shape = self.input_shape
        prev = None
        for i, layer in enumerate(self.layers):
            nxt = self.layers[i + 1] if i + 1 < len(self.layers) else None
            at_input = prev is None or isinstance(prev, Reshape)
            if isinstance(layer, BatchNorm) and not at_input:
                if not isinstance(prev, LINEAR):
                    raise ValueError(f"layer {i}: batchnorm must follow a dense/conv1d layer or the input")
                if prev.use_bias:
                    raise ValueError(f"layer {i - 1}: linear layer feeding batchnorm must have bias disabled")
                if not isinstance(nxt, ACTIVATIONS):
                    raise ValueError(f"layer {i}: batchnorm after a linear map must be followed by an activation")
            if isinstance(layer, Dropout) and not (at_input or isinstance(prev, ACTIVATIONS)):
                raise ValueError(f"layer {i}: dropout must follow an activation")
            if isinstance(layer, Softmax):
                if not isinstance(prev, LINEAR) or len(shape) != 1:
                    raise ValueError("softmax must directly follow a dense layer")
            else:
                shape = layer.output_shape(shape)
            prev = layer
        self.n_classes = shape[0]
        if self.n_classes < 2:
            raise ValueError("softmax output needs at least 2 classes")

    # ------------------------------------------------------------ running
    def set_mode(self, mode):
        if mode not in ("train", "infer"):
            raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
        self.mode = mode
        for layer in self.layers:
            layer.training = mode == "train"
        return self

    @property
    def n_features(self):
        return int(np.prod(self.input_shape))

    def logits(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.n_features:
            raise ValueError(f"network expects (batch, {self.n_features}) input, got {x.shape}")
        for layer in self.layers[:-1]:
            x = layer.forward(x)
        return x

    def backward(self, grad):
        for layer in reversed(self.layers[:-1]):
            grad = layer.backward(grad)
        return grad

    def parameters(self):
        """``(layer_index, name, array)`` for every trainable tensor."""
        return [(i, name, p) for i, layer in enumerate(self.layers) for name, p in layer.params().items()]

    def gradients(self):
        return [(i, name, g) for i, layer in enumerate(self.layers) for name, g in layer.grads().items()]

    def describe(self):
        return [layer.kind for layer in self.layers]


def softmax_cross_entropy(logits, labels):
    """Mean negative log-likelihood and its gradient with respect to the logits."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ValueError("one label per logit row required")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"labels must lie in [0, {k})")
    z = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(n)
    loss = float(np.mean(log_norm - z[rows, labels]))
    grad = np.exp(z - log_norm[:, None])
    grad[rows, labels] -= 1.0
    return loss, grad / n


def sgd_step(params, grads, velocity, cfg: TrainConfig):
    """In-place momentum update ``v = m*v - lr*g; p += v`` over parallel lists."""
    if not len(params) == len(grads) == len(velocity):
        raise ValueError("params, grads and velocity must have equal length")
    for p, g, v in zip(params, grads, velocity):
        if p.shape != g.shape or p.shape != v.shape:
            raise ValueError(f"shape mismatch: param {p.shape}, grad {g.shape}, velocity {v.shape}")
        v *= cfg.momentum
        v -= cfg.learning_rate * g
        p += v
    return params, velocity


def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    cuts = list(range(0, n, batch_size))
    batches = [order[c:c + batch_size] for c in cuts]
    # batch statistics need two rows; fold a lone straggler into its neighbour
    if len(batches) > 1 and len(batches[-1]) == 1:
        last = batches.pop()
        batches[-1] = np.concatenate([batches[-1], last])
    return batches


def train(net: Network, X, y, cfg: TrainConfig):
    """Minibatch momentum SGD on softmax cross-entropy.

    Returns the network (left in infer mode) and a per-epoch trace of
    ``{"epoch", "loss", "accuracy"}`` where loss is the mean minibatch loss and
    accuracy is measured in infer mode on the full training set. Everything
    random (shuffling and dropout masks) is derived from ``cfg.seed``.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.shape[0] == 0:
        raise ValueError("training data is empty")
    if X.shape[0] != y.shape[0]:
        raise ValueError("X and y lengths differ")
    if X.shape[1] != net.n_features:
        raise ValueError(f"network expects {net.n_features} features, data has {X.shape[1]}")

    seeds = np.random.SeedSequence(cfg.seed)
    shuffle_rng = np.random.default_rng(seeds.spawn(1)[0])
    for layer in net.layers:
        if isinstance(layer, Dropout):
            layer.reseed(np.random.SeedSequence([cfg.seed, layer.rng_seed]))

    params = [p for _, _, p in net.parameters()]
    velocity = [np.zeros_like(p) for p in params]
    trace = []
    for epoch in range(cfg.epochs):
        net.set_mode("train")
        total, count = 0.0, 0
        for b, idx in enumerate(_batches(X.shape[0], cfg.batch_size, shuffle_rng)):
            with np.errstate(over="ignore", invalid="ignore"):
                loss, grad = softmax_cross_entropy(net.logits(X[idx]), y[idx])
            if not np.isfinite(loss):
                net.set_mode("infer")
                raise TrainingDivergedError(f"non-finite loss at epoch {epoch + 1}, batch {b + 1}")
            net.backward(grad)
            sgd_step(params, [g for _, _, g in net.gradients()], velocity, cfg)
            total += loss * len(idx)
            count += len(idx)
        net.set_mode("infer")
        acc = float(np.mean(predict(net, X)[0] == y))
        trace.append({"epoch": epoch + 1, "loss": total / count, "accuracy": acc})
    net.set_mode("infer")
    return net, trace


def predict_proba(net: Network, X):
    if net.mode != "infer":
        raise RuntimeError("predict requires the network in infer mode")
    return softmax(net.logits(X))


def predict(net: Network, X):
    """Class indices (argmax, ties to the lowest index) and probabilities."""
    proba = predict_proba(net, X)
    return np.argmax(proba, axis=1), proba


# --------------------------------------------------------------- builders

def build_softmax_regression(n_features=11, n_classes=5, seed=0):
    rng = np.random.default_rng(seed)
    return Network([Dense(n_features, n_classes, rng=rng), Softmax()], (n_features,))


def build_dnn(n_features=11, n_classes=5, hidden=(64, 32), batch_norm=False, dropout=0.0,
              input_batch_norm=False, seed=0):
    """Dense network: per hidden block ``dense -> [BN] -> relu -> [dropout]``."""
    rng = np.random.default_rng(seed)
    layers: list[Layer] = []
    if input_batch_norm:
        layers.append(BatchNorm(n_features))
    width = n_features
    for j, h in enumerate(hidden):
        layers.append(Dense(width, h, bias=not batch_norm, rng=rng))
        if batch_norm:
            layers.append(BatchNorm(h))
        layers.append(ReLU())
        if dropout > 0:
            layers.append(Dropout(dropout, rng_seed=j))
        width = h
    layers += [Dense(width, n_classes, rng=rng), Softmax()]
    return Network(layers, (n_features,))


def build_cnn(n_features=11, n_classes=5, filters=(16, 16), width=3, batch_norm=False, dropout=0.0,
              input_batch_norm=False, seed=0):
    """1-D CNN over the feature vector treated as a one-channel signal.

    The first conv block takes the optional BN/dropout; later conv blocks are
    plain ``conv -> relu``; then flatten and a dense softmax head.
    """
    rng = np.random.default_rng(seed)
    layers: list[Layer] = [Reshape((1, n_features))]
    if input_batch_norm:
        layers.append(BatchNorm(1))
    channels, length = 1, n_features
    for j, f in enumerate(filters):
        first = j == 0
        conv = Conv1D(channels, f, width, bias=not (batch_norm and first), rng=rng)
        layers.append(conv)
        if batch_norm and first:
            layers.append(BatchNorm(f))
        layers.append(ReLU())
        if dropout > 0 and first:
            layers.append(Dropout(dropout, rng_seed=j))
        channels, length = f, conv.out_length(length)
    layers += [Flatten(), Dense(channels * length, n_classes, rng=rng), Softmax()]
    return Network(layers, (n_features,))
