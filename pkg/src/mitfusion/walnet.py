"""WALNet: a segment-level CNN over log-mel patches, mean-pooled to a
recording-level prediction and trained from recording (weak) labels.

Layout per segment is (1, frames, mels). Six blocks L1..L6 each hold two
3x3 convolutions (batchnorm, relu) and a 2x2 max-pool; L7 is a convolution
with 1024 filters whose kernel covers what is left of the spatial grid
(2x2 for 128x128 input), followed by relu; L8 maps the flattened L7 output
to one score per class for each segment; P averages segment scores over a
recording. Softmax is applied after pooling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .dsp import segment
from .nn.checkpoint import dumps, loads
from .exceptions import ShapeError, TrainingDivergedError
from .nn import (
    BatchNorm,
    Conv2d,
    Dense,
    Flatten,
    MaxPool2x2,
    ReLU,
    Sequential,
    conv3x3,
    load_checkpoint,
    make_optimizer,
    minibatches,
    softmax,
    softmax_cross_entropy,
)


@dataclass(frozen=True)
class WalNetSpec:
    n_classes: int = 20
    block_filters: tuple[int, ...] = (16, 32, 64, 128, 256, 512)
    l7_filters: int = 1024
    l7_kernel: int = 2
    input_shape: tuple[int, int, int] = (1, 128, 128)

    @classmethod
    def reduced(cls, n_classes=2, n_blocks=2, base_filters=4, l7_filters=16, segment_frames=16, n_mels=16):
        """Smaller variant with the same structure; L7 covers the remaining grid."""
        if n_blocks < 1:
            raise ValueError("need at least one block")
        filters = tuple(base_filters * 2**i for i in range(n_blocks))
        scale = 2**n_blocks
        if segment_frames % scale or n_mels % scale:
            raise ShapeError(f"input {segment_frames}x{n_mels} is not divisible by 2^{n_blocks}")
        kernel = min(segment_frames, n_mels) // scale
        return cls(n_classes, filters, l7_filters, kernel, (1, segment_frames, n_mels))

    @property
    def n_blocks(self) -> int:
        return len(self.block_filters)


def infer_shapes(spec: WalNetSpec) -> list[tuple[str, tuple[int, ...]]]:
    """Output shape after each stage, from shape arithmetic alone.

    Raises ShapeError when a pool would see an odd size or L7's kernel
    does not fit.
    """
    c, h, w = spec.input_shape
    if c != 1:
        raise ShapeError("WALNet segments have a single input channel")
    chain = [("input", (c, h, w))]
    for i, filters in enumerate(spec.block_filters, start=1):
        if h % 2 or w % 2:
            raise ShapeError(f"L{i}: cannot 2x2-pool a {h}x{w} map (non-integral output)")
        h, w = h // 2, w // 2
        chain.append((f"L{i}", (filters, h, w)))
    k = spec.l7_kernel
    if k > h or k > w:
        raise ShapeError(f"L7: {k}x{k} kernel does not fit a {h}x{w} map")
    h, w = h - k + 1, w - k + 1
    chain.append((f"L{spec.n_blocks + 1}", (spec.l7_filters, h, w)))
    chain.append((f"L{spec.n_blocks + 2}", (spec.n_classes,)))
    return chain


def build_walnet(spec: WalNetSpec, rng=None) -> Sequential:
    rng = np.random.default_rng(0) if rng is None else rng
    infer_shapes(spec)
    layers = []
    cin = spec.input_shape[0]
    for filters in spec.block_filters:
        for _ in range(2):
            layers += [conv3x3(cin, filters, rng=rng), BatchNorm(filters), ReLU()]
            cin = filters
        layers.append(MaxPool2x2())
    layers += [Conv2d(cin, spec.l7_filters, spec.l7_kernel, stride=1, padding=0, rng=rng), ReLU(), Flatten()]
    out_h, out_w = infer_shapes(spec)[-2][1][1:]
    layers.append(Dense(spec.l7_filters * out_h * out_w, spec.n_classes, rng=rng))
    return Sequential(layers)


def _ordered_mean(rows) -> np.ndarray:
    # summing each column in sorted order makes the result independent of
    # segment order bit for bit, not just up to rounding
    return np.sort(rows, axis=0).sum(axis=0) / len(rows)


def pool_segments(scores, counts) -> np.ndarray:
    """Mean of consecutive runs of segment scores: (sum(counts), C) -> (len(counts), C)."""
    scores = np.asarray(scores, dtype=np.float64)
    counts = np.asarray(counts, dtype=int)
    if counts.size == 0 or counts.min() < 1:
        raise ValueError("every recording needs at least one segment")
    if counts.sum() != len(scores):
        raise ValueError(f"{len(scores)} segment rows for {counts.sum()} declared segments")
    bounds = np.concatenate([[0], np.cumsum(counts)])
    return np.vstack([_ordered_mean(scores[a:b]) for a, b in zip(bounds[:-1], bounds[1:])])


def unpool_gradient(grad, counts) -> np.ndarray:
    """Backward of :func:`pool_segments`: each segment gets its recording's gradient / S."""
    counts = np.asarray(counts, dtype=int)
    return np.repeat(np.asarray(grad) / counts[:, None], counts, axis=0)


def segment_scores(net: Sequential, segments) -> np.ndarray:
    """(S, C) class scores, batch-norm in eval mode. Accepts one (1, H, W) segment or a stack."""
    x = np.asarray(segments, dtype=np.float64)
    if x.ndim == 3:
        x = x[None]
    return net.forward(x, mode="eval")


def recording_scores(scores) -> np.ndarray:
    """Arithmetic mean of a recording's segment score vectors."""
    scores = [np.asarray(s, dtype=np.float64) for s in scores]
    if not scores:
        raise ValueError("a recording needs at least one segment")
    return _ordered_mean(np.vstack(scores))


class RecordingNet(Sequential):
    """A WALNet whose forward pass ends in P: segments in, recording scores out.

    ``counts`` gives the number of consecutive segments per recording; the
    default treats the whole batch as one recording.
    """

    def __init__(self, layers, counts=None):
        super().__init__(list(layers))
        self.counts = counts
        self._last_counts = None

    def forward(self, x, mode="train"):
        scores = super().forward(x, mode=mode)
        self._last_counts = [len(scores)] if self.counts is None else list(self.counts)
        return pool_segments(scores, self._last_counts)

    __call__ = forward

    def backward(self, grad):
        if self._last_counts is None:
            raise RuntimeError("backward called without a cached forward pass")
        return super().backward(unpool_gradient(grad, self._last_counts))


class WalNetClassifier(ClassifierMixin, BaseEstimator):
    """Recording-level classifier over variable-length log-mel matrices.

    ``X`` is a list of (frames, n_mels) arrays. Each recording is cut into
    ``segment_frames``-long segments (short tails padded per ``pad``),
    scored segment by segment, and mean-pooled.
    """

    def __init__(
        self,
        n_blocks=6,
        base_filters=16,
        l7_filters=1024,
        segment_frames=128,
        n_mels=128,
        epochs=10,
        learning_rate=1e-3,
        batch_size=8,
        optimizer="adam",
        pad="mean",
        classes=None,
        random_state=0,
    ):
        self.n_blocks = n_blocks
        self.base_filters = base_filters
        self.l7_filters = l7_filters
        self.segment_frames = segment_frames
        self.n_mels = n_mels
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.optimizer = optimizer
        self.pad = pad
        self.classes = classes
        self.random_state = random_state

    def _spec(self, n_classes):
        # with the defaults this is exactly the full six-block network
        return WalNetSpec.reduced(
            n_classes, self.n_blocks, self.base_filters, self.l7_filters, self.segment_frames, self.n_mels
        )

    def _segments(self, X):
        out = []
        for i, mel in enumerate(X):
            mel = np.asarray(mel, dtype=np.float64)
            if mel.ndim != 2 or mel.shape[1] != self.n_mels:
                raise ShapeError(f"recording {i}: expected (frames, {self.n_mels}) log-mels, got {mel.shape}")
            out.append(segment(mel, self.segment_frames, pad=self.pad))
        return out

    def fit(self, X, y):
        X = list(X)
        y = np.asarray(y)
        if len(X) != len(y):
            raise ValueError(f"{len(X)} recordings but {len(y)} labels")
        self.classes_ = np.unique(y) if self.classes is None else np.asarray(list(self.classes))
        lookup = {c: i for i, c in enumerate(self.classes_.tolist())}
        unknown = sorted({str(v) for v in y.tolist() if v not in lookup})
        if unknown:
            raise ValueError(f"labels outside the class list: {unknown}")
        y_idx = np.array([lookup[v] for v in y.tolist()])
        rng = np.random.default_rng(self.random_state)
        self.spec_ = self._spec(len(self.classes_))
        self.net_ = build_walnet(self.spec_, rng)
        segs = self._segments(X)
        opt = make_optimizer(self.optimizer, self.learning_rate)
        self.loss_curve_ = []
        for epoch in range(self.epochs):
            total = 0.0
            for idx in minibatches(len(segs), self.batch_size, rng):
                counts = [len(segs[i]) for i in idx]
                batch = np.concatenate([segs[i] for i in idx])
                scores = pool_segments(self.net_.forward(batch, mode="train"), counts)
                loss, grad = softmax_cross_entropy(scores, y_idx[idx])
                if not np.isfinite(loss):
                    raise TrainingDivergedError(f"loss became non-finite at epoch {epoch + 1}", epoch=epoch + 1)
                self.net_.backward(unpool_gradient(grad, counts))
                opt.step(self.net_)
                total += loss * len(idx)
            self.loss_curve_.append(total / len(segs))
        return self

    def decision_function(self, X) -> np.ndarray:
        """Recording-level (pooled) class scores."""
        check_is_fitted(self, "net_")
        return np.vstack([recording_scores(segment_scores(self.net_, s)) for s in self._segments(X)])

    def predict_proba(self, X) -> np.ndarray:
        return softmax(self.decision_function(X), axis=1)

    def predict(self, X) -> np.ndarray:
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]

    def embed(self, X) -> np.ndarray:
        """Recording-level audio features: L7 activations averaged over segments."""
        check_is_fitted(self, "net_")
        n_head = 1  # the L8 dense layer
        out = []
        for s in self._segments(X):
            h = s
            for layer in self.net_.layers[:-n_head]:
                h = layer.forward(h, train=False)
            out.append(h.mean(axis=0))
        return np.vstack(out)

    def to_bytes(self) -> bytes:
        check_is_fitted(self, "net_")
        meta = {
            "model": "walnet",
            "classes": self.classes_.tolist(),
            "params": {k: v for k, v in self.get_params().items() if k != "classes"},
            "loss_curve": self.loss_curve_,
        }
        return dumps(self.net_, meta)

    @classmethod
    def from_bytes(cls, data: bytes) -> "WalNetClassifier":
        return cls._from_parts(*loads(data))

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "WalNetClassifier":
        return cls._from_parts(*load_checkpoint(path))

    @classmethod
    def _from_parts(cls, net, meta):
        if meta.get("model") != "walnet":
            raise ValueError("checkpoint does not hold a WALNet model")
        model = cls(**meta["params"])
        model.classes_ = np.asarray(meta["classes"])
        model.spec_ = model._spec(len(model.classes_))
        model.net_ = net
        model.loss_curve_ = list(meta["loss_curve"])
        return model
