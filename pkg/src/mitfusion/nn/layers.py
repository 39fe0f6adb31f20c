"""Layers with explicit forward and backward passes.

Every layer works on a leading batch axis. Shapes reported by
``output_shape`` exclude that axis. Parameters, their gradients and
non-trainable buffers (batch-norm running statistics) live in plain dicts
of float64 arrays so optimizers and the checkpoint writer can walk them
uniformly.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..exceptions import ShapeError

BN_EPSILON = 1e-5
BN_MOMENTUM = 0.1


def glorot_uniform(shape, fan_in, fan_out, rng):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def _default_rng(rng):
    return rng if rng is not None else np.random.default_rng(0)


class Layer:
    kind: str = ""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self._cache = None

    def dims(self) -> tuple[int, ...]:
        return ()

    def output_shape(self, in_shape: tuple[int, ...]) -> tuple[int, ...]:
        return tuple(in_shape)

    def forward(self, x: np.ndarray, train: bool = True) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _cached(self):
        if self._cache is None:
            raise RuntimeError(f"{self.kind}: backward called without a cached forward pass")
        return self._cache

    def zero_grad(self):
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}

    def __repr__(self):
        return f"{type(self).__name__}{self.dims()}"


class Dense(Layer):
    """``y = x @ W + b`` with ``W`` of shape (in_features, out_features)."""

    kind = "dense"

    def __init__(self, in_features, out_features, rng=None):
        super().__init__()
        self.in_features = int(in_features)
        self.out_features = int(out_features)
        rng = _default_rng(rng)
        self.params["W"] = glorot_uniform(
            (self.in_features, self.out_features), self.in_features, self.out_features, rng
        )
        self.params["b"] = np.zeros(self.out_features)
        self.zero_grad()

    def dims(self):
        return (self.in_features, self.out_features)

    def output_shape(self, in_shape):
        if tuple(in_shape) != (self.in_features,):
            raise ShapeError(f"dense expects ({self.in_features},), got {tuple(in_shape)}")
        return (self.out_features,)

    def forward(self, x, train=True):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ShapeError(f"dense expects (N, {self.in_features}), got {x.shape}")
        self._cache = x
        return x @ self.params["W"] + self.params["b"]

    def backward(self, grad):
        x = self._cached()
        self.grads["W"] = x.T @ grad
        self.grads["b"] = grad.sum(axis=0)
        return grad @ self.params["W"].T


class Conv2d(Layer):
    """2-D cross-correlation on (N, C, H, W) inputs.

    Weights have shape (out_channels, in_channels, kh, kw). The forward pass
    unrolls input patches with a strided view and contracts them in a single
    ``tensordot``; the input gradient scatters back one kernel tap at a time.
    """

    def __init__(self, in_channels, out_channels, kernel_size=3, stride=1, padding=0, rng=None):
        super().__init__()
        if isinstance(kernel_size, int):
            kernel_size = (kernel_size, kernel_size)
        self.in_channels = int(in_channels)
        self.out_channels = int(out_channels)
        self.kernel_size = (int(kernel_size[0]), int(kernel_size[1]))
        self.stride = int(stride)
        self.padding = int(padding)
        if self.stride < 1 or self.padding < 0:
            raise ValueError("stride must be >= 1 and padding >= 0")
        kh, kw = self.kernel_size
        rng = _default_rng(rng)
        self.params["W"] = glorot_uniform(
            (self.out_channels, self.in_channels, kh, kw),
            self.in_channels * kh * kw,
            self.out_channels * kh * kw,
            rng,
        )
        self.params["b"] = np.zeros(self.out_channels)
        self.zero_grad()

    @property
    def kind(self):
        if self.kernel_size == (3, 3) and self.stride == 1 and self.padding == 1:
            return "conv3x3"
        return "conv_kxk"

    def dims(self):
        kh, kw = self.kernel_size
        return (self.in_channels, self.out_channels, kh, kw, self.stride, self.padding)

    def _out_hw(self, h, w):
        kh, kw = self.kernel_size
        hp, wp = h + 2 * self.padding, w + 2 * self.padding
        if hp < kh or wp < kw:
            raise ShapeError(f"{self.kind}: padded input {hp}x{wp} smaller than kernel {kh}x{kw}")
        return (hp - kh) // self.stride + 1, (wp - kw) // self.stride + 1

    def output_shape(self, in_shape):
        if len(in_shape) != 3 or in_shape[0] != self.in_channels:
            raise ShapeError(f"{self.kind} expects ({self.in_channels}, H, W), got {tuple(in_shape)}")
        return (self.out_channels, *self._out_hw(in_shape[1], in_shape[2]))

    def forward(self, x, train=True):
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ShapeError(f"{self.kind} expects (N, {self.in_channels}, H, W), got {x.shape}")
        p, s = self.padding, self.stride
        ho, wo = self._out_hw(x.shape[2], x.shape[3])
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
        # (N, C, Ho', Wo', kh, kw) view, subsampled by the stride
        cols = sliding_window_view(xp, self.kernel_size, axis=(2, 3))[:, :, ::s, ::s][:, :, :ho, :wo]
        out = np.tensordot(cols, self.params["W"], axes=([1, 4, 5], [1, 2, 3]))
        out += self.params["b"]
        self._cache = (x.shape, cols)
        return np.ascontiguousarray(out.transpose(0, 3, 1, 2))

    def backward(self, grad):
        x_shape, cols = self._cached()
        n, c, h, w = x_shape
        p, s = self.padding, self.stride
        kh, kw = self.kernel_size
        _, _, ho, wo = grad.shape
        W = self.params["W"]
        self.grads["W"] = np.tensordot(grad, cols, axes=([0, 2, 3], [0, 2, 3]))
        self.grads["b"] = grad.sum(axis=(0, 2, 3))
        g = grad.transpose(0, 2, 3, 1)  # (N, Ho, Wo, O)
        dxp = np.zeros((n, c, h + 2 * p, w + 2 * p))
        for i in range(kh):
            for j in range(kw):
                tap = g @ W[:, :, i, j]  # (N, Ho, Wo, C)
                dxp[:, :, i : i + s * ho : s, j : j + s * wo : s] += tap.transpose(0, 3, 1, 2)
        if p:
            dxp = dxp[:, :, p:-p, p:-p]
        return dxp


def conv3x3(in_channels, out_channels, rng=None):
    return Conv2d(in_channels, out_channels, kernel_size=3, stride=1, padding=1, rng=rng)


class MaxPool2x2(Layer):
    """Non-overlapping 2x2 max pooling; odd spatial dims are rejected."""

    kind = "maxpool2x2"

    def output_shape(self, in_shape):
        if len(in_shape) != 3:
            raise ShapeError(f"maxpool2x2 expects (C, H, W), got {tuple(in_shape)}")
        c, h, w = in_shape
        if h % 2 or w % 2:
            raise ShapeError(f"maxpool2x2 needs even spatial dims, got {h}x{w}")
        return (c, h // 2, w // 2)

    def forward(self, x, train=True):
        if x.ndim != 4:
            raise ShapeError(f"maxpool2x2 expects (N, C, H, W), got {x.shape}")
        self.output_shape(x.shape[1:])
        n, c, h, w = x.shape
        win = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
        # first maximal element wins on ties, so the subgradient is well defined
        idx = win.argmax(axis=-1)
        self._cache = (x.shape, idx)
        return np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]

    def backward(self, grad):
        x_shape, idx = self._cached()
        n, c, h, w = x_shape
        win = np.zeros((n, c, h // 2, w // 2, 4))
        np.put_along_axis(win, idx[..., None], grad[..., None], axis=-1)
        return win.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(x_shape)


class BatchNorm(Layer):
    """Batch normalization over features (N, D) or channels (N, C, H, W).

    Train mode normalizes with biased batch statistics and folds them into
    the running estimates with ``BN_MOMENTUM``; eval mode uses the running
    estimates only, so its output never depends on batch composition.
    """

    kind = "batchnorm"

    def __init__(self, num_features, eps=BN_EPSILON, momentum=BN_MOMENTUM):
        super().__init__()
        self.num_features = int(num_features)
        self.eps = eps
        self.momentum = momentum
        self.params["gamma"] = np.ones(self.num_features)
        self.params["beta"] = np.zeros(self.num_features)
        self.buffers["running_mean"] = np.zeros(self.num_features)
        self.buffers["running_var"] = np.ones(self.num_features)
        self.zero_grad()

    def dims(self):
        return (self.num_features,)

    def output_shape(self, in_shape):
        if len(in_shape) not in (1, 3) or in_shape[0] != self.num_features:
            raise ShapeError(f"batchnorm expects ({self.num_features}, ...), got {tuple(in_shape)}")
        return tuple(in_shape)

    def _axes(self, x):
        if x.ndim == 2:
            return (0,), (1, -1)
        if x.ndim == 4:
            return (0, 2, 3), (1, -1, 1, 1)
        raise ShapeError(f"batchnorm expects 2-D or 4-D input, got {x.shape}")

    def forward(self, x, train=True):
        axes, bshape = self._axes(x)
        if x.shape[1] != self.num_features:
            raise ShapeError(f"batchnorm expects {self.num_features} features, got {x.shape[1]}")
        gamma = self.params["gamma"].reshape(bshape)
        beta = self.params["beta"].reshape(bshape)
        if train:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            m = x.size // self.num_features
            unbiased = var * m / (m - 1) if m > 1 else var
            mom = self.momentum
            self.buffers["running_mean"] = (1 - mom) * self.buffers["running_mean"] + mom * mean
            self.buffers["running_var"] = (1 - mom) * self.buffers["running_var"] + mom * unbiased
        else:
            mean = self.buffers["running_mean"]
            var = self.buffers["running_var"]
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean.reshape(bshape)) * inv_std.reshape(bshape)
        self._cache = (train, xhat, inv_std, axes, bshape)
        return gamma * xhat + beta

    def backward(self, grad):
        train, xhat, inv_std, axes, bshape = self._cached()
        gamma = self.params["gamma"].reshape(bshape)
        self.grads["gamma"] = (grad * xhat).sum(axis=axes)
        self.grads["beta"] = grad.sum(axis=axes)
        dxhat = grad * gamma
        if not train:
            return dxhat * inv_std.reshape(bshape)
        mean_d = dxhat.mean(axis=axes, keepdims=True)
        mean_dx = (dxhat * xhat).mean(axis=axes, keepdims=True)
        return (dxhat - mean_d - xhat * mean_dx) * inv_std.reshape(bshape)


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, train=True):
        mask = x > 0  # subgradient at 0 is 0
        self._cache = mask
        return x * mask

    def backward(self, grad):
        return grad * self._cached()


class GlobalAvgPool(Layer):
    """Average over the spatial axes: (N, C, H, W) -> (N, C)."""

    kind = "global_avg_pool"

    def output_shape(self, in_shape):
        if len(in_shape) != 3:
            raise ShapeError(f"global_avg_pool expects (C, H, W), got {tuple(in_shape)}")
        return (in_shape[0],)

    def forward(self, x, train=True):
        if x.ndim != 4:
            raise ShapeError(f"global_avg_pool expects (N, C, H, W), got {x.shape}")
        self._cache = x.shape
        return x.mean(axis=(2, 3))

    def backward(self, grad):
        n, c, h, w = self._cached()
        return np.broadcast_to(grad[:, :, None, None] / (h * w), (n, c, h, w)).copy()


class Flatten(Layer):
    kind = "flatten"

    def output_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x, train=True):
        self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        return grad.reshape(self._cached())
