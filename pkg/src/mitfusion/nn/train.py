from __future__ import annotations

import numpy as np

from ..exceptions import TrainingDivergedError
from .layers import BatchNorm, Dense, ReLU
from .network import Sequential


def build_mlp(in_dim, hidden_dims, out_dim, rng, batchnorm=True) -> Sequential:
    """Dense -> [BatchNorm] -> ReLU per hidden width, then a linear output layer."""
    layers = []
    prev = in_dim
    for width in hidden_dims:
        layers.append(Dense(prev, width, rng=rng))
        if batchnorm:
            layers.append(BatchNorm(width))
        layers.append(ReLU())
        prev = width
    layers.append(Dense(prev, out_dim, rng=rng))
    return Sequential(layers)


def minibatches(n, batch_size, rng):
    """Shuffled index batches; a trailing batch of one joins its neighbour
    so batch-norm never sees a single-sample batch unless n == 1."""
    order = rng.permutation(n)
    batches = [order[i : i + batch_size] for i in range(0, n, batch_size)]
    if len(batches) > 1 and len(batches[-1]) == 1:
        last = batches.pop()
        batches[-1] = np.concatenate([batches[-1], last])
    return batches


def fit_network(net, X, targets, loss_fn, epochs, batch_size, optimizer, rng):
    """Minibatch training loop; returns the per-epoch mean loss."""
    n = len(X)
    curve = []
    for epoch in range(epochs):
        total = 0.0
        for idx in minibatches(n, batch_size, rng):
            out = net.forward(X[idx], mode="train")
            loss, grad = loss_fn(out, targets[idx])
            if not np.isfinite(loss):
                raise TrainingDivergedError(f"loss became non-finite at epoch {epoch + 1}", epoch=epoch + 1)
            net.backward(grad)
            try:
                optimizer.step(net)
            except TrainingDivergedError as exc:
                raise TrainingDivergedError(f"{exc} at epoch {epoch + 1}", epoch=epoch + 1) from None
            total += loss * len(idx)
        curve.append(total / n)
    return curve
