"""VisText: regress visual features onto the word embedding of the class label.

A three-layer perceptron (dense -> batchnorm -> relu, twice, then a linear
output) is trained with an element-wise Huber loss against the embedding of
each sample's label. Its output is used two ways: decoded to the nearest class
word by cosine similarity, or fed to the fusion classifiers as a 300-d feature.

Targets are used as-is; they are not L2-normalised before the loss.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .embeddings import EmbeddingTable, nearest
from .features import FeatureRecord
from .nn import build_mlp, fit_network, huber_loss, load_checkpoint, make_optimizer
from .nn.checkpoint import dumps, loads

VISTEXT = "vistext"


class VisTextRegressor(TransformerMixin, BaseEstimator):
    """Visual feature -> word-embedding regressor.

    Parameters
    ----------
    embeddings : EmbeddingTable
        Class-label embeddings. Every training label must be in the table;
        decoding ranks over all of its words.
    hidden_dims : tuple of int
        Widths of the two hidden layers.
    optimizer : {"adam", "sgd"}
    """

    def __init__(
        self,
        embeddings=None,
        hidden_dims=(512, 512),
        epochs=35,
        learning_rate=1e-3,
        batch_size=64,
        optimizer="adam",
        weight_decay=0.0,
        random_state=0,
    ):
        self.embeddings = embeddings
        self.hidden_dims = hidden_dims
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.optimizer = optimizer
        self.weight_decay = weight_decay
        self.random_state = random_state

    def _validate_params(self):
        if not isinstance(self.embeddings, EmbeddingTable):
            raise TypeError("embeddings must be an EmbeddingTable of class labels")
        if len(tuple(self.hidden_dims)) != 2:
            raise ValueError("VisText has exactly two hidden layers (three dense layers in total)")
        if self.epochs < 0 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ValueError("need epochs >= 0, batch_size >= 1 and learning_rate > 0")

    def fit(self, X, y):
        self._validate_params()
        X = check_array(X, dtype=np.float64)
        y = np.asarray(y)
        if len(y) != len(X):
            raise ValueError(f"{len(X)} feature rows but {len(y)} labels")
        missing = sorted({str(lab) for lab in y if lab not in self.embeddings})
        if missing:
            raise KeyError(f"labels without an embedding: {missing}")
        targets = self.embeddings.matrix(list(y))
        rng = np.random.default_rng(self.random_state)
        self.net_ = build_mlp(X.shape[1], tuple(self.hidden_dims), self.embeddings.dim, rng)
        opt = make_optimizer(self.optimizer, self.learning_rate, self.weight_decay)
        self.loss_curve_ = fit_network(self.net_, X, targets, huber_loss, self.epochs, self.batch_size, opt, rng)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X) -> np.ndarray:
        """Predicted embedding vectors, batch-norm in eval mode."""
        check_is_fitted(self, "net_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} visual features, got {X.shape[1]}")
        return self.net_.forward(X, mode="eval")

    def decode(self, X, k=1) -> list[list[tuple[str, float]]]:
        """Nearest class words, best first, for each row of ``X``."""
        return [nearest(self.embeddings, v, k) for v in self.transform(X)]

    def predict(self, X) -> np.ndarray:
        return np.array([hits[0][0] for hits in self.decode(X, 1)])

    def score(self, X, y) -> float:
        """Nearest-class decoding accuracy."""
        return float(np.mean(self.predict(X) == np.asarray(y)))

    def to_bytes(self) -> bytes:
        check_is_fitted(self, "net_")
        meta = {
            "model": "vistext",
            "n_features_in": self.n_features_in_,
            "words": self.embeddings.words,
            "vectors": self.embeddings.vectors.tolist(),
            "params": {k: v for k, v in self.get_params().items() if k != "embeddings"},
            "loss_curve": self.loss_curve_,
        }
        meta["params"]["hidden_dims"] = list(meta["params"]["hidden_dims"])
        return dumps(self.net_, meta)

    @classmethod
    def from_bytes(cls, data: bytes) -> "VisTextRegressor":
        net, meta = loads(data)
        return cls._from_parts(net, meta)

    def save(self, path):
        check_is_fitted(self, "net_")
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "VisTextRegressor":
        net, meta = load_checkpoint(path)
        return cls._from_parts(net, meta)

    @classmethod
    def _from_parts(cls, net, meta):
        if meta.get("model") != "vistext":
            raise ValueError("checkpoint does not hold a VisText model")
        params = dict(meta["params"])
        params["hidden_dims"] = tuple(params["hidden_dims"])
        model = cls(embeddings=EmbeddingTable(meta["words"], meta["vectors"]), **params)
        model.net_ = net
        model.n_features_in_ = meta["n_features_in"]
        model.loss_curve_ = list(meta["loss_curve"])
        return model


def vistext_as_feature(model: VisTextRegressor, records, source_modality, name=VISTEXT) -> list[FeatureRecord]:
    """Copies of ``records`` with the model's output added as modality ``name``.

    Existing modalities are shared, not modified.
    """
    records = list(records)
    if not records:
        return []
    X = np.vstack([r.get(source_modality) for r in records])
    out = model.transform(X)
    return [r.with_features(**{name: out[i].copy()}) for i, r in enumerate(records)]
