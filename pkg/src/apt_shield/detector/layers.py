"""Numpy layers with explicit backward passes.

Tensors are laid out ``(batch, channels, width)``.  Each layer caches what
its backward pass needs during ``forward`` and stores parameter gradients
in ``self.grads`` keyed like ``self.params``.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class Layer:
    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dout: np.ndarray) -> np.ndarray:
        raise NotImplementedError


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Conv1D(Layer):
    """Stride-1 convolution with 'same' padding (extra pad goes on the right)."""

    def __init__(self, in_channels: int, out_channels: int, kernel: int,
                 rng: np.random.Generator):
        super().__init__()
        self.kernel = kernel
        self.pad_left = (kernel - 1) // 2
        self.pad_right = kernel - 1 - self.pad_left
        self.params["W"] = glorot_uniform(rng, (out_channels, in_channels, kernel),
                                          in_channels * kernel, out_channels * kernel)
        self.params["b"] = np.zeros(out_channels)

    def forward(self, x, training=False):
        n, c, w = x.shape
        xp = np.pad(x, ((0, 0), (0, 0), (self.pad_left, self.pad_right)))
        # (n, c, w, k) -> (n*w, c*k)
        cols = sliding_window_view(xp, self.kernel, axis=2).transpose(0, 2, 1, 3)
        cols = cols.reshape(n * w, c * self.kernel)
        W = self.params["W"]
        out = cols @ W.reshape(W.shape[0], -1).T + self.params["b"]
        self._cache = (cols, x.shape)
        return out.reshape(n, w, -1).transpose(0, 2, 1)

    def backward(self, dout):
        cols, (n, c, w) = self._cache
        W = self.params["W"]
        k = self.kernel
        d2 = dout.transpose(0, 2, 1).reshape(n * w, -1)
        self.grads["W"] = (d2.T @ cols).reshape(W.shape)
        self.grads["b"] = d2.sum(axis=0)
        dcols = (d2 @ W.reshape(W.shape[0], -1)).reshape(n, w, c, k)
        dxp = np.zeros((n, c, w + k - 1))
        for j in range(k):
            dxp[:, :, j:j + w] += dcols[:, :, :, j].transpose(0, 2, 1)
        return dxp[:, :, self.pad_left:self.pad_left + w]


class BatchNorm1D(Layer):
    """Per-channel normalisation over batch and width."""

    def __init__(self, channels: int, momentum: float = 0.9, eps: float = 1e-3):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.params["gamma"] = np.ones(channels)
        self.params["beta"] = np.zeros(channels)
        self.buffers["running_mean"] = np.zeros(channels)
        self.buffers["running_var"] = np.ones(channels)

    def forward(self, x, training=False):
        gamma = self.params["gamma"][None, :, None]
        beta = self.params["beta"][None, :, None]
        if training:
            mu = x.mean(axis=(0, 2))
            var = x.var(axis=(0, 2))
            m = self.momentum
            self.buffers["running_mean"] = m * self.buffers["running_mean"] + (1 - m) * mu
            self.buffers["running_var"] = m * self.buffers["running_var"] + (1 - m) * var
        else:
            mu = self.buffers["running_mean"]
            var = self.buffers["running_var"]
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mu[None, :, None]) * inv_std[None, :, None]
        self._cache = (xhat, inv_std, training)
        return gamma * xhat + beta

    def backward(self, dout):
        xhat, inv_std, training = self._cache
        gamma = self.params["gamma"]
        self.grads["gamma"] = (dout * xhat).sum(axis=(0, 2))
        self.grads["beta"] = dout.sum(axis=(0, 2))
        dxhat = dout * gamma[None, :, None]
        if not training:
            return dxhat * inv_std[None, :, None]
        m = dout.shape[0] * dout.shape[2]
        sum_d = dxhat.sum(axis=(0, 2), keepdims=True)
        sum_dx = (dxhat * xhat).sum(axis=(0, 2), keepdims=True)
        return inv_std[None, :, None] / m * (m * dxhat - sum_d - xhat * sum_dx)


class ReLU(Layer):
    def forward(self, x, training=False):
        self._mask = x > 0
        return x * self._mask

    def backward(self, dout):
        return dout * self._mask


class GlobalAvgPool1D(Layer):
    def forward(self, x, training=False):
        self._width = x.shape[2]
        return x.mean(axis=2)

    def backward(self, dout):
        return np.repeat(dout[:, :, None], self._width, axis=2) / self._width


class Dense(Layer):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator):
        super().__init__()
        self.params["W"] = glorot_uniform(rng, (in_features, out_features), in_features,
                                          out_features)
        self.params["b"] = np.zeros(out_features)

    def forward(self, x, training=False):
        self._x = x
        return x @ self.params["W"] + self.params["b"]

    def backward(self, dout):
        self.grads["W"] = self._x.T @ dout
        self.grads["b"] = dout.sum(axis=0)
        return dout @ self.params["W"].T


def softmax(logits: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):  # -inf after the shift still exponentiates to 0
        z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean categorical cross-entropy of softmax(logits) and its logit gradient."""
    n = logits.shape[0]
    z = logits - logits.max(axis=1, keepdims=True)
    log_p = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = -log_p[np.arange(n), labels].mean()
    grad = np.exp(log_p)
    grad[np.arange(n), labels] -= 1.0
    return float(loss), grad / n


class Adam:
    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-7):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self._m: dict[int, np.ndarray] = {}
        self._v: dict[int, np.ndarray] = {}

    def step(self, pairs) -> None:
        """Update ``(param, grad)`` pairs in place."""
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        lr_t = self.lr * np.sqrt(1 - b2 ** self.t) / (1 - b1 ** self.t)
        for i, (p, g) in enumerate(pairs):
            m = self._m.setdefault(i, np.zeros_like(p))
            v = self._v.setdefault(i, np.zeros_like(p))
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p -= lr_t * m / (np.sqrt(v) + self.eps)
