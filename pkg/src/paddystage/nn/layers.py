"""Layer zoo: dense, 1-D convolution, batch normalization, dropout, activations.

All arrays are float64. Dense inputs are ``(batch, features)``; convolution
inputs are ``(batch, channels, length)``. Batch normalization accepts either
and normalizes per feature/channel.

Forward products are evaluated row by row so that a sample's output does not
depend on which other samples share its batch.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def rowwise_dot(x, W):
    """``x @ W.T`` as a stack of independent one-row products.

    A plain 2-D matmul may pick a different BLAS blocking for different batch
    sizes; the stacked form runs the same (1, k) x (k, out) product per row.
    """
    x = np.asarray(x, dtype=np.float64)
    return (x[:, None, :] @ np.ascontiguousarray(W.T))[:, 0, :]


class Layer:
    """Base class. ``training`` switches batch-statistics/dropout behaviour."""

    kind = "layer"
    training = True

    def forward(self, x):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError

    def params(self):
        return {}

    def grads(self):
        return {}

    def state(self):
        """Non-trainable arrays that must survive serialization."""
        return {}

    def config(self):
        return {}

    def output_shape(self, input_shape):
        return input_shape


# ------------------------------------------------------------------ dense

class Dense(Layer):
    kind = "dense"

    def __init__(self, n_in, n_out, bias=True, rng=None):
        rng = np.random.default_rng(rng)
        limit = 1.0 / np.sqrt(n_in)
        self.W = rng.uniform(-limit, limit, size=(n_out, n_in))
        self.b = np.zeros(n_out)
        self.use_bias = bias
        self.dW = np.zeros_like(self.W)
        self.db = np.zeros_like(self.b)
        self._x = None

    @property
    def n_in(self):
        return self.W.shape[1]

    @property
    def n_out(self):
        return self.W.shape[0]

    def forward(self, x):
        self._x = x
        return dense_forward(self, x)

    def backward(self, grad):
        self.dW = grad.T @ self._x
        if self.use_bias:
            self.db = grad.sum(axis=0)
        return grad @ self.W

    def params(self):
        return {"W": self.W, "b": self.b} if self.use_bias else {"W": self.W}

    def grads(self):
        return {"W": self.dW, "b": self.db} if self.use_bias else {"W": self.dW}

    def config(self):
        return {"n_in": self.n_in, "n_out": self.n_out, "bias": self.use_bias}

    def output_shape(self, input_shape):
        if input_shape != (self.n_in,):
            raise ValueError(f"dense layer expects input width {self.n_in}, got shape {input_shape}")
        return (self.n_out,)


def dense_forward(layer: Dense, x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != layer.n_in:
        raise ValueError(f"dense layer expects (batch, {layer.n_in}) input, got {x.shape}")
    return rowwise_dot(x, layer.W) + layer.b


# ------------------------------------------------------------- batch norm

class BatchNorm(Layer):
    """Batch normalization with learnable scale ``gamma`` and shift ``beta``.

    Training normalizes with the batch mean and biased (divide-by-n)
    variance; inference uses running estimates updated as
    ``running = momentum * running + (1 - momentum) * batch_stat``.
    """

    kind = "batchnorm"

    def __init__(self, n_features, eps=1e-5, momentum=0.9):
        if eps <= 0:
            raise ValueError("eps must be positive")
        if not 0.0 < momentum < 1.0:
            raise ValueError("momentum must be in (0, 1)")
        self.n_features = n_features
        self.eps = eps
        self.momentum = momentum
        self.gamma = np.ones(n_features)
        self.beta = np.zeros(n_features)
        self.running_mean = np.zeros(n_features)
        self.running_var = np.ones(n_features)
        self.tracked = False
        self.dgamma = np.zeros(n_features)
        self.dbeta = np.zeros(n_features)
        self._cache = None

    def forward(self, x):
        if self.training:
            y, self._cache = batchnorm_forward_train(self, x)
            return y
        return batchnorm_forward_infer(self, x)

    def backward(self, grad):
        dx, self.dgamma, self.dbeta = batchnorm_backward(self._cache, grad)
        return dx

    def params(self):
        return {"gamma": self.gamma, "beta": self.beta}

    def grads(self):
        return {"gamma": self.dgamma, "beta": self.dbeta}

    def state(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var,
                "tracked": np.array([1.0 if self.tracked else 0.0])}

    def config(self):
        return {"n_features": self.n_features, "eps": self.eps, "momentum": self.momentum}

    def output_shape(self, input_shape):
        if input_shape[0] != self.n_features:
            raise ValueError(f"batchnorm expects {self.n_features} features/channels, got shape {input_shape}")
        return input_shape


def _to_rows(x):
    """View ``(N, C, L)`` as ``(N*L, C)`` so statistics run per channel."""
    if x.ndim == 2:
        return x, None
    n, c, length = x.shape
    return x.transpose(0, 2, 1).reshape(n * length, c), (n, c, length)


def _from_rows(rows, shape):
    if shape is None:
        return rows
    n, c, length = shape
    return rows.reshape(n, length, c).transpose(0, 2, 1)


def batchnorm_forward_train(layer: BatchNorm, x):
    """Normalize with batch statistics; return output and the backward cache."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] < 2:
        raise ValueError(f"batch normalization needs a batch of at least 2, got {x.shape[0]}")
    rows, shape = _to_rows(x)
    if rows.shape[1] != layer.n_features:
        raise ValueError(f"batchnorm expects {layer.n_features} features, got {rows.shape[1]}")
    mean = rows.mean(axis=0)
    var = ((rows - mean) ** 2).mean(axis=0)
    inv_std = 1.0 / np.sqrt(var + layer.eps)
    xhat = (rows - mean) * inv_std
    out = layer.gamma * xhat + layer.beta

    m = layer.momentum
    if layer.tracked:
        layer.running_mean = m * layer.running_mean + (1.0 - m) * mean
        layer.running_var = m * layer.running_var + (1.0 - m) * var
    else:
        layer.running_mean = mean.copy()
        layer.running_var = var.copy()
        layer.tracked = True

    cache = {"xhat": xhat, "inv_std": inv_std, "gamma": layer.gamma.copy(), "shape": shape}
    return _from_rows(out, shape), cache


def batchnorm_forward_infer(layer: BatchNorm, x):
    if not layer.tracked:
        raise RuntimeError("batch normalization layer has no running statistics (never trained)")
    x = np.asarray(x, dtype=np.float64)
    rows, shape = _to_rows(x)
    out = layer.gamma * ((rows - layer.running_mean) / np.sqrt(layer.running_var + layer.eps)) + layer.beta
    return _from_rows(out, shape)


def batchnorm_backward(cache, grad):
    """Exact gradient through mean and variance; returns ``(dx, dgamma, dbeta)``."""
    rows, shape = _to_rows(np.asarray(grad, dtype=np.float64))
    xhat, inv_std, gamma = cache["xhat"], cache["inv_std"], cache["gamma"]
    if rows.shape != xhat.shape or shape != cache["shape"]:
        raise ValueError(f"gradient shape {grad.shape} does not match the cached forward pass")
    n = rows.shape[0]
    dbeta = rows.sum(axis=0)
    dgamma = (rows * xhat).sum(axis=0)
    dxhat = rows * gamma
    dx = (inv_std / n) * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
    return _from_rows(dx, shape), dgamma, dbeta


# ---------------------------------------------------------------- dropout

class Dropout(Layer):
    """Inverted dropout: survivors are scaled by ``1 / (1 - rate)``."""

    kind = "dropout"

    def __init__(self, rate=0.5, rng_seed=0):
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self.rng_seed = rng_seed
        self.rng = np.random.default_rng(rng_seed)
        self.mask = None

    def reseed(self, seed):
        self.rng = np.random.default_rng(seed)

    def forward(self, x, mask=None):
        if not self.training:
            return x
        y, self.mask = dropout_forward(self, x, mask)
        return y

    def backward(self, grad):
        if not self.training:
            return grad
        return grad * self.mask / (1.0 - self.rate)

    def config(self):
        return {"rate": self.rate, "rng_seed": self.rng_seed}


def dropout_forward(layer: Dropout, x, mask=None):
    """Apply a freshly drawn (or the given) keep-mask; identity in infer mode."""
    if not 0.0 <= layer.rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {layer.rate}")
    x = np.asarray(x, dtype=np.float64)
    if not layer.training:
        return x, np.ones(x.shape, dtype=bool)
    if mask is None:
        mask = layer.rng.random(x.shape) >= layer.rate
    elif mask.shape != x.shape:
        raise ValueError("dropout mask shape does not match input")
    return x * mask / (1.0 - layer.rate), mask


# ------------------------------------------------------------ convolution

class Conv1D(Layer):
    """Valid (unpadded) 1-D cross-correlation with ``filters`` output channels."""

    kind = "conv1d"

    def __init__(self, in_channels, filters, width, stride=1, bias=True, rng=None):
        if width < 1 or stride < 1:
            raise ValueError("kernel width and stride must be >= 1")
        rng = np.random.default_rng(rng)
        fan_in = in_channels * width
        limit = 1.0 / np.sqrt(fan_in)
        self.kernels = rng.uniform(-limit, limit, size=(filters, in_channels, width))
        self.bias = np.zeros(filters)
        self.use_bias = bias
        self.stride = stride
        self.dkernels = np.zeros_like(self.kernels)
        self.dbias = np.zeros_like(self.bias)
        self._cols = None
        self._in_shape = None

    @property
    def filters(self):
        return self.kernels.shape[0]

    @property
    def in_channels(self):
        return self.kernels.shape[1]

    @property
    def width(self):
        return self.kernels.shape[2]

    def out_length(self, length):
        if length < self.width:
            raise ValueError(f"input length {length} shorter than kernel width {self.width}")
        return (length - self.width) // self.stride + 1

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        self._in_shape = x.shape
        self._cols = _im2col(self, x)
        return conv1d_forward(self, x, cols=self._cols)

    def backward(self, grad):
        n, f, lout = grad.shape
        g = grad.transpose(0, 2, 1).reshape(n * lout, f)
        cols = self._cols.reshape(n * lout, -1)
        self.dkernels = (g.T @ cols).reshape(self.kernels.shape)
        if self.use_bias:
            self.dbias = g.sum(axis=0)
        dcols = (g @ self.kernels.reshape(f, -1)).reshape(n, lout, self.in_channels, self.width)
        dx = np.zeros(self._in_shape)
        for k in range(self.width):
            stop = k + self.stride * (lout - 1) + 1
            dx[:, :, k:stop:self.stride] += dcols[:, :, :, k].transpose(0, 2, 1)
        return dx

    def params(self):
        return {"kernels": self.kernels, "bias": self.bias} if self.use_bias else {"kernels": self.kernels}

    def grads(self):
        return {"kernels": self.dkernels, "bias": self.dbias} if self.use_bias else {"kernels": self.dkernels}

    def config(self):
        return {"in_channels": self.in_channels, "filters": self.filters, "width": self.width,
                "stride": self.stride, "bias": self.use_bias}

    def output_shape(self, input_shape):
        if len(input_shape) != 2 or input_shape[0] != self.in_channels:
            raise ValueError(f"conv1d expects ({self.in_channels}, length) input, got {input_shape}")
        return (self.filters, self.out_length(input_shape[1]))


def _im2col(layer: Conv1D, x):
    """``(N, C, L)`` -> ``(N, L_out, C*W)`` patches."""
    if x.ndim != 3 or x.shape[1] != layer.in_channels:
        raise ValueError(f"conv1d expects (batch, {layer.in_channels}, length) input, got {x.shape}")
    lout = layer.out_length(x.shape[2])
    win = sliding_window_view(x, layer.width, axis=2)[:, :, : layer.stride * (lout - 1) + 1: layer.stride, :]
    return win.transpose(0, 2, 1, 3).reshape(x.shape[0], lout, -1)


def conv1d_forward(layer: Conv1D, x, cols=None):
    x = np.asarray(x, dtype=np.float64)
    if cols is None:
        cols = _im2col(layer, x)
    n, lout, _ = cols.shape
    out = rowwise_dot(cols.reshape(n * lout, -1), layer.kernels.reshape(layer.filters, -1)) + layer.bias
    return out.reshape(n, lout, layer.filters).transpose(0, 2, 1)


# ------------------------------------------------------------ activations

class ReLU(Layer):
    kind = "relu"

    def forward(self, x):
        self._on = x > 0
        return np.where(self._on, x, 0.0)

    def backward(self, grad):
        return grad * self._on


class Sigmoid(Layer):
    kind = "sigmoid"

    def forward(self, x):
        self._y = 0.5 * (1.0 + np.tanh(0.5 * x))
        return self._y

    def backward(self, grad):
        return grad * self._y * (1.0 - self._y)


ACTIVATIONS = (ReLU, Sigmoid)


class Reshape(Layer):
    """Reshape each sample, e.g. ``(11,)`` -> ``(1, 11)`` for convolution."""

    kind = "reshape"

    def __init__(self, shape):
        self.shape = tuple(int(s) for s in shape)

    def forward(self, x):
        self._in = x.shape
        return x.reshape((x.shape[0],) + self.shape)

    def backward(self, grad):
        return grad.reshape(self._in)

    def config(self):
        return {"shape": list(self.shape)}

    def output_shape(self, input_shape):
        if int(np.prod(input_shape)) != int(np.prod(self.shape)):
            raise ValueError(f"cannot reshape {input_shape} to {self.shape}")
        return self.shape


class Flatten(Layer):
    kind = "flatten"

    def forward(self, x):
        self._in = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        return grad.reshape(self._in)

    def output_shape(self, input_shape):
        return (int(np.prod(input_shape)),)


class Softmax(Layer):
    """Terminal output marker. Training consumes the logits before it."""

    kind = "softmax"

    def forward(self, x):
        return softmax(x)

    def backward(self, grad):
        raise RuntimeError("backpropagate through softmax_cross_entropy, not the softmax marker")


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


LAYER_TYPES = {cls.kind: cls for cls in (Dense, BatchNorm, Dropout, Conv1D, ReLU, Sigmoid, Reshape, Flatten, Softmax)}
