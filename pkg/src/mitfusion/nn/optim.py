from __future__ import annotations

import numpy as np

from ..exceptions import TrainingDivergedError


def _check_finite(grads):
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingDivergedError(f"non-finite gradient for parameter {name!r}")


def sgd_step(params, grads, lr, weight_decay=0.0):
    """Return updated parameters ``p - lr * (g + weight_decay * p)``.

    ``params`` and ``grads`` are dicts keyed identically; inputs are not
    modified.
    """
    if lr < 0 or weight_decay < 0:
        raise ValueError("lr and weight_decay must be non-negative")
    if params.keys() != grads.keys():
        raise KeyError("params and grads have different keys")
    _check_finite(grads)
    out = {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
        out[name] = p - lr * (g + weight_decay * p)
    return out


class SGD:
    def __init__(self, lr=0.01, weight_decay=0.0):
        self.lr = lr
        self.weight_decay = weight_decay

    def step(self, net):
        new = sgd_step(net.parameters(), net.gradients(), self.lr, self.weight_decay)
        net.load_state(new)


class Adam:
    """Adam with decoupled bookkeeping per parameter name."""

    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self._m = {}
        self._v = {}
        self._t = 0

    def step(self, net):
        grads = net.gradients()
        _check_finite(grads)
        self._t += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1 - b1**self._t
        bias2 = 1 - b2**self._t
        for layer_idx, layer in enumerate(net.layers):
            for name, p in layer.params.items():
                key = f"{layer_idx}.{name}"
                g = layer.grads[name]
                if self.weight_decay:
                    g = g + self.weight_decay * p
                m = self._m.get(key)
                if m is None:
                    m = self._m[key] = np.zeros_like(p)
                    self._v[key] = np.zeros_like(p)
                v = self._v[key]
                m *= b1
                m += (1 - b1) * g
                v *= b2
                v += (1 - b2) * g * g
                layer.params[name] = p - self.lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)


def make_optimizer(name, lr, weight_decay=0.0):
    if name == "sgd":
        return SGD(lr=lr, weight_decay=weight_decay)
    if name == "adam":
        return Adam(lr=lr, weight_decay=weight_decay)
    raise ValueError(f"unknown optimizer {name!r}; expected 'sgd' or 'adam'")
