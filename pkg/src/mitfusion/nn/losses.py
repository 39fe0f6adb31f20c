"""Loss functions. Each returns ``(loss, d loss / d prediction)``."""

from __future__ import annotations

import numpy as np

from ..exceptions import ShapeError


def huber_loss(x, y):
    """Element-wise Huber loss averaged over all ``n`` elements.

    Per element, with ``d = x - y``: ``0.5 * d**2`` when ``|d| < 1``,
    otherwise ``|d| - 0.5``. The gradient is ``d / n`` in the quadratic
    region and ``sign(d) / n`` outside it, which meet at ``|d| = 1``.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ShapeError(f"huber_loss: shapes differ, {x.shape} vs {y.shape}")
    n = x.size
    if n == 0:
        raise ValueError("huber_loss: empty input")
    d = x - y
    ad = np.abs(d)
    quad = ad < 1.0
    z = np.where(quad, 0.5 * d * d, ad - 0.5)
    grad = np.where(quad, d, np.sign(d)) / n
    return float(z.sum() / n), grad


def log_softmax(logits, axis=-1):
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def softmax(logits, axis=-1):
    return np.exp(log_softmax(logits, axis=axis))


def _check_labels(labels, n_classes):
    labels = np.asarray(labels)
    if not np.issubdtype(labels.dtype, np.integer):
        raise ValueError("labels must be integer class indices")
    if n_classes < 2:
        raise ValueError(f"need at least 2 classes, got {n_classes}")
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError(f"label out of range for {n_classes} classes")
    return labels


def softmax_cross_entropy(logits, labels):
    """Mean negative log-likelihood of ``labels`` under ``softmax(logits)``.

    Accepts a single logit vector with an integer label, or a batch
    (N, C) with N labels. Gradient is ``softmax - one_hot`` (divided by N
    for batches).
    """
    logits = np.asarray(logits, dtype=np.float64)
    single = logits.ndim == 1
    if single:
        logits = logits[None, :]
        labels = np.asarray([labels])
    labels = _check_labels(labels, logits.shape[1])
    if labels.shape != (logits.shape[0],):
        raise ShapeError(f"expected {logits.shape[0]} labels, got shape {labels.shape}")
    n = logits.shape[0]
    logp = log_softmax(logits)
    rows = np.arange(n)
    loss = -logp[rows, labels].mean()
    grad = np.exp(logp)
    grad[rows, labels] -= 1.0
    grad /= n
    return float(loss), (grad[0] if single else grad)


def hinge_ovr_loss(scores, labels):
    """One-vs-rest hinge loss, summed over classes and averaged over samples.

    Each class acts as a binary problem with target +1 for its own samples
    and -1 for everyone else; the per-entry loss is ``max(0, 1 - t * s)``.
    The returned gradient is a subgradient (0 exactly on the hinge).
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2:
        raise ShapeError(f"hinge_ovr_loss expects (N, C) scores, got {scores.shape}")
    labels = _check_labels(labels, scores.shape[1])
    n = scores.shape[0]
    t = -np.ones_like(scores)
    t[np.arange(n), labels] = 1.0
    margin = 1.0 - t * scores
    active = margin > 0
    loss = np.where(active, margin, 0.0).sum() / n
    grad = np.where(active, -t, 0.0) / n
    return float(loss), grad


def squared_error(x, y):
    """Half the summed squared error; used as a plain test objective."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ShapeError(f"squared_error: shapes differ, {x.shape} vs {y.shape}")
    d = x - y
    return float(0.5 * (d * d).sum()), d
