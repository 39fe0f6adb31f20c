"""Classifiers over modality features: early fusion, late fusion, and
missing-audio routing between a with-audio and a without-audio model.

All estimators follow the scikit-learn conventions (constructor stores
parameters, ``fit`` learns attributes ending in ``_``). The fusion
estimators take lists of :class:`~mitfusion.features.FeatureRecord` in
place of a feature matrix.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, clone
from sklearn.model_selection import StratifiedKFold
from sklearn.preprocessing import StandardScaler
from sklearn.utils.validation import check_array, check_is_fitted

from .features import AUDIO, FeatureRecord
from .nn import Dense, Sequential, build_mlp, fit_network, hinge_ovr_loss, make_optimizer, softmax, softmax_cross_entropy

CLASSIFIER_KINDS = ("logistic_regression", "linear_hinge", "mlp")
STRATEGIES = ("early_concat", "late_average", "late_stacked_lr", "multi_classifier_route")


# ---------------------------------------------------------------- base learner


class FeatureClassifier(ClassifierMixin, BaseEstimator):
    """Linear or small MLP classifier trained with the in-house network engine.

    ``logistic_regression`` is one dense layer under softmax cross-entropy.
    ``linear_hinge`` is one dense layer under a one-vs-rest hinge loss,
    trained by subgradient descent; its probabilities are a softmax over the
    margins. ``mlp`` has two hidden layers (dense, batchnorm, relu).

    Linear models start from all-zero weights, so relabelling the classes
    permutes the learned model and nothing else.
    """

    def __init__(
        self,
        kind="logistic_regression",
        hidden_dims=(128, 128),
        epochs=60,
        learning_rate=0.01,
        batch_size=64,
        alpha=1e-3,
        optimizer="adam",
        standardize=True,
        classes=None,
        random_state=0,
    ):
        self.kind = kind
        self.hidden_dims = hidden_dims
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.alpha = alpha
        self.optimizer = optimizer
        self.standardize = standardize
        self.classes = classes
        self.random_state = random_state

    def _encode(self, y):
        lookup = {c: i for i, c in enumerate(self.classes_.tolist())}
        unknown = sorted({str(v) for v in y.tolist() if v not in lookup})
        if unknown:
            raise ValueError(f"labels outside the class list: {unknown}")
        return np.array([lookup[v] for v in y.tolist()], dtype=np.int64)

    def fit(self, X, y):
        if self.kind not in CLASSIFIER_KINDS:
            raise ValueError(f"unknown classifier kind {self.kind!r}; expected one of {CLASSIFIER_KINDS}")
        X = check_array(X, dtype=np.float64)
        y = np.asarray(y)
        if len(y) != len(X):
            raise ValueError(f"{len(X)} feature rows but {len(y)} labels")
        self.classes_ = np.unique(y) if self.classes is None else np.asarray(list(self.classes))
        if len(self.classes_) < 2:
            raise ValueError("need at least 2 classes")
        if len(np.unique(y)) < 2:
            raise ValueError("training data contains a single class")
        y_idx = self._encode(y)
        self.scaler_ = StandardScaler().fit(X) if self.standardize else None
        Xs = self.scaler_.transform(X) if self.standardize else X
        rng = np.random.default_rng(self.random_state)
        n_classes = len(self.classes_)
        if self.kind == "mlp":
            if len(tuple(self.hidden_dims)) != 2:
                raise ValueError("the mlp classifier has exactly two hidden layers")
            self.net_ = build_mlp(X.shape[1], tuple(self.hidden_dims), n_classes, rng)
        else:
            dense = Dense(X.shape[1], n_classes, rng=rng)
            dense.params["W"][:] = 0.0
            self.net_ = Sequential([dense])
        loss = hinge_ovr_loss if self.kind == "linear_hinge" else softmax_cross_entropy
        opt = make_optimizer(self.optimizer, self.learning_rate, self.alpha)
        self.loss_curve_ = fit_network(self.net_, Xs, y_idx, loss, self.epochs, self.batch_size, opt, rng)
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X) -> np.ndarray:
        check_is_fitted(self, "net_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        if self.scaler_ is not None:
            X = self.scaler_.transform(X)
        return self.net_.forward(X, mode="eval")

    def predict_proba(self, X) -> np.ndarray:
        return softmax(self.decision_function(X), axis=1)

    def predict(self, X) -> np.ndarray:
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]


# ---------------------------------------------------------------- predictions


@dataclass
class Prediction:
    sample_id: str
    proba: np.ndarray
    source: str = ""


@dataclass
class Predictions:
    """Aligned probability rows for a set of samples."""

    sample_ids: list[str]
    proba: np.ndarray
    classes: list[str]
    sources: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.proba = np.asarray(self.proba, dtype=np.float64)
        if self.proba.shape != (len(self.sample_ids), len(self.classes)):
            raise ValueError(
                f"probabilities have shape {self.proba.shape}, expected ({len(self.sample_ids)}, {len(self.classes)})"
            )

    def __len__(self):
        return len(self.sample_ids)

    def __getitem__(self, i) -> Prediction:
        return Prediction(self.sample_ids[i], self.proba[i], self.sources[i] if self.sources else "")


def write_predictions_tsv(path, predictions: Predictions) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(["sample_id", *predictions.classes])
        for sid, row in zip(predictions.sample_ids, predictions.proba):
            w.writerow([sid, *(f"{p:.9f}" for p in row)])


def read_predictions_tsv(path) -> Predictions:
    with open(path, encoding="utf-8") as fh:
        rows = list(csv.reader(fh, delimiter="\t"))
    if not rows or rows[0][0] != "sample_id":
        raise ValueError(f"{path}: not a predictions file")
    classes = rows[0][1:]
    ids = [r[0] for r in rows[1:]]
    proba = np.array([[float(v) for v in r[1:]] for r in rows[1:]]).reshape(len(ids), len(classes))
    return Predictions(ids, proba, classes)


META_FEATURES = ("log_proba", "proba")
# keeps log-probabilities finite when a base model assigns exactly zero
LOG_FLOOR = 1e-12


def stack_meta_features(probas, kind="log_proba") -> np.ndarray:
    """Concatenate per-modality probability matrices as meta-classifier input.

    On log-probabilities a linear softmax layer can reproduce any single
    base model exactly, or their product; on raw probabilities it cannot.
    """
    if kind not in META_FEATURES:
        raise ValueError(f"unknown meta features {kind!r}; expected one of {META_FEATURES}")
    Z = np.hstack(probas)
    return np.log(np.maximum(Z, LOG_FLOOR)) if kind == "log_proba" else Z


def late_fuse(prediction_sets, mode="average", meta=None, meta_features="log_proba") -> Predictions:
    """Combine per-modality predictions for the same samples.

    ``average`` takes the renormalised mean of the probability vectors.
    ``stacked_lr`` feeds the concatenated vectors (as log-probabilities by
    default) to ``meta``, a classifier already trained on out-of-fold
    train-split predictions.
    """
    sets = list(prediction_sets)
    if not sets:
        raise ValueError("nothing to fuse")
    first = sets[0]
    for s in sets[1:]:
        if s.sample_ids != first.sample_ids:
            raise ValueError("prediction sets are not aligned on sample_id")
        if s.classes != first.classes:
            raise ValueError("prediction sets use different class lists")
    if mode == "average":
        p = np.mean([s.proba for s in sets], axis=0)
        p /= p.sum(axis=1, keepdims=True)
    elif mode == "stacked_lr":
        if meta is None:
            raise ValueError("stacked_lr needs a trained meta classifier")
        p = meta.predict_proba(stack_meta_features([s.proba for s in sets], meta_features))
    else:
        raise ValueError(f"unknown late-fusion mode {mode!r}; expected 'average' or 'stacked_lr'")
    return Predictions(list(first.sample_ids), p, list(first.classes))


# ---------------------------------------------------------------- fusion models


def early_fuse(record: FeatureRecord, modalities) -> np.ndarray:
    """Concatenate a record's modality vectors in the declared order."""
    return np.concatenate([record.get(m) for m in modalities])


def _stack_modalities(records, modalities):
    if not records:
        raise ValueError("no records")
    return np.vstack([early_fuse(r, modalities) for r in records])


def _labels(records, y):
    return np.asarray([r.label for r in records] if y is None else y)


class _RecordClassifier(ClassifierMixin, BaseEstimator):
    def _resolve_classes(self, y):
        classes = np.unique(y) if self.classes is None else np.asarray(list(self.classes))
        self.classes_ = classes
        return classes.tolist()

    def _template(self, classes):
        est = FeatureClassifier() if self.estimator is None else self.estimator
        return clone(est).set_params(classes=classes)

    def predict(self, records) -> np.ndarray:
        return self.classes_[np.argmax(self.predict_proba(records), axis=1)]

    def predictions(self, records) -> Predictions:
        return Predictions([r.sample_id for r in records], self.predict_proba(records), self.classes_.tolist())

    def score(self, records, y=None) -> float:
        return float(np.mean(self.predict(records) == _labels(records, y)))


class EarlyFusionClassifier(_RecordClassifier):
    """One classifier on the concatenation of the listed modalities."""

    def __init__(self, modalities=("spatiotemporal", "vistext"), estimator=None, classes=None):
        self.modalities = modalities
        self.estimator = estimator
        self.classes = classes

    def fit(self, records, y=None):
        y = _labels(records, y)
        classes = self._resolve_classes(y)
        self.estimator_ = self._template(classes).fit(_stack_modalities(records, self.modalities), y)
        return self

    def predict_proba(self, records) -> np.ndarray:
        check_is_fitted(self, "estimator_")
        return self.estimator_.predict_proba(_stack_modalities(records, self.modalities))


class LateFusionClassifier(_RecordClassifier):
    """One classifier per modality, combined by averaging or a stacked LR.

    For ``stacked_lr`` the meta classifier is trained on out-of-fold
    probabilities of the train split (``cv`` stratified folds), since
    in-sample probabilities are overconfident and would teach the meta
    model to trust whichever base model overfits most.
    """

    def __init__(
        self,
        modalities=("spatiotemporal", "vistext"),
        estimator=None,
        mode="stacked_lr",
        meta_estimator=None,
        cv=5,
        meta_features="log_proba",
        classes=None,
        random_state=0,
    ):
        self.modalities = modalities
        self.estimator = estimator
        self.mode = mode
        self.meta_estimator = meta_estimator
        self.cv = cv
        self.meta_features = meta_features
        self.classes = classes
        self.random_state = random_state

    def _out_of_fold(self, template, X, y):
        counts = np.unique(y, return_counts=True)[1]
        n_splits = min(self.cv, int(counts.min()))
        if n_splits < 2:
            return clone(template).fit(X, y).predict_proba(X)
        out = np.zeros((len(y), len(template.get_params()["classes"])))
        folds = StratifiedKFold(n_splits=n_splits, shuffle=True, random_state=self.random_state)
        for train_idx, test_idx in folds.split(X, y):
            out[test_idx] = clone(template).fit(X[train_idx], y[train_idx]).predict_proba(X[test_idx])
        return out

    def fit(self, records, y=None):
        if self.mode not in ("average", "stacked_lr"):
            raise ValueError(f"unknown late-fusion mode {self.mode!r}; expected 'average' or 'stacked_lr'")
        y = _labels(records, y)
        classes = self._resolve_classes(y)
        template = self._template(classes)
        self.estimators_ = {}
        oof = []
        for m in self.modalities:
            X = _stack_modalities(records, [m])
            self.estimators_[m] = clone(template).fit(X, y)
            if self.mode == "stacked_lr":
                oof.append(self._out_of_fold(template, X, y))
        self.meta_ = None
        if self.mode == "stacked_lr":
            meta = self.meta_estimator
            if meta is None:
                meta = FeatureClassifier(kind="logistic_regression", standardize=False, epochs=100)
            self.meta_ = clone(meta).set_params(classes=classes).fit(stack_meta_features(oof, self.meta_features), y)
        return self

    def modality_predictions(self, records) -> list[Predictions]:
        check_is_fitted(self, "estimators_")
        ids = [r.sample_id for r in records]
        return [
            Predictions(ids, self.estimators_[m].predict_proba(_stack_modalities(records, [m])), self.classes_.tolist())
            for m in self.modalities
        ]

    def predict_proba(self, records) -> np.ndarray:
        mode = "average" if self.mode == "average" else "stacked_lr"
        return late_fuse(self.modality_predictions(records), mode, self.meta_, self.meta_features).proba


# ---------------------------------------------------------------- routing

WITH_AUDIO = "with_audio"
WITHOUT_AUDIO = "without_audio"


def _select(p_with, p_without):
    """Index 0 picks the with-audio prediction; ties go to it."""
    return 0 if p_with.max() >= p_without.max() else 1


def route_multi_classifier(with_audio_clf, without_audio_clf, record: FeatureRecord) -> Prediction:
    """Prediction for one record under the missing-audio routing rule.

    Without audio, only the two-modality classifier is consulted. With
    audio, both run and the prediction with the larger top probability
    wins; a tie goes to the three-modality classifier.
    """
    p_without = without_audio_clf.predict_proba([record])[0]
    if not record.has_audio:
        return Prediction(record.sample_id, p_without, WITHOUT_AUDIO)
    p_with = with_audio_clf.predict_proba([record])[0]
    if _select(p_with, p_without) == 0:
        return Prediction(record.sample_id, p_with, WITH_AUDIO)
    return Prediction(record.sample_id, p_without, WITHOUT_AUDIO)


class MultiClassifierRouter(_RecordClassifier):
    """Separate classifiers for samples with and without audio.

    ``with_audio`` must use three modalities including audio and is trained
    only on records that have audio. ``without_audio`` uses the two other
    modalities and is trained on every record.
    """

    def __init__(self, with_audio=None, without_audio=None, classes=None):
        self.with_audio = with_audio
        self.without_audio = without_audio
        self.classes = classes

    def _check_specs(self):
        if self.with_audio is None or self.without_audio is None:
            raise ValueError("routing needs both a with_audio and a without_audio classifier")
        with_mods = list(self.with_audio.get_params()["modalities"])
        without_mods = list(self.without_audio.get_params()["modalities"])
        if len(with_mods) != 3 or AUDIO not in with_mods:
            raise ValueError(f"the with-audio classifier must use 3 modalities including audio, got {with_mods}")
        if len(without_mods) != 2 or AUDIO in without_mods:
            raise ValueError(f"the without-audio classifier must use 2 non-audio modalities, got {without_mods}")

    def fit(self, records, y=None):
        self._check_specs()
        records = list(records)
        y = _labels(records, y)
        classes = self._resolve_classes(y)
        audio_idx = [i for i, r in enumerate(records) if r.has_audio]
        if not audio_idx:
            raise ValueError("no training record has audio")
        self.with_audio_ = clone(self.with_audio).set_params(classes=classes)
        self.with_audio_.fit([records[i] for i in audio_idx], y[audio_idx])
        self.without_audio_ = clone(self.without_audio).set_params(classes=classes).fit(records, y)
        return self

    def route(self, records) -> Predictions:
        check_is_fitted(self, "with_audio_")
        records = list(records)
        proba = self.without_audio_.predict_proba(records)
        sources = [WITHOUT_AUDIO] * len(records)
        audio_idx = [i for i, r in enumerate(records) if r.has_audio]
        if audio_idx:
            p_with = self.with_audio_.predict_proba([records[i] for i in audio_idx])
            for row, i in zip(p_with, audio_idx):
                if _select(row, proba[i]) == 0:
                    proba[i] = row
                    sources[i] = WITH_AUDIO
        return Predictions([r.sample_id for r in records], proba, self.classes_.tolist(), sources)

    def predict_proba(self, records) -> np.ndarray:
        return self.route(records).proba

    def predictions(self, records) -> Predictions:
        return self.route(records)


# ---------------------------------------------------------------- plans


class PlanError(ValueError):
    pass


KIND_LABELS = {"logistic_regression": "lr", "linear_hinge": "svm", "mlp": "mlp"}

_PLAN_DEFAULTS = {
    "strategy": None,
    "modalities": "spatiotemporal,vistext,audio",
    "classifier": "logistic_regression",
    "route_base": "late_stacked_lr",
    "missing_audio": "zero_fill",
    "epochs": "60",
    "learning_rate": "0.01",
    "batch_size": "64",
    "alpha": "0.001",
    "hidden_dims": "128,128",
    "standardize": "true",
    "cv": "5",
    "meta_features": "log_proba",
    "visual": "spatiotemporal",
    "vistext_epochs": "35",
    "vistext_hidden_dims": "512,512",
    "vistext_learning_rate": "0.001",
    "eval_split": "val",
}


def _ints(text):
    return tuple(int(v) for v in text.split(",") if v.strip())


@dataclass
class FusionPlan:
    """Flat key=value description of one fusion configuration."""

    strategy: str
    modalities: tuple[str, ...]
    classifier: str = "logistic_regression"
    route_base: str = "late_stacked_lr"
    missing_audio: str = "zero_fill"
    epochs: int = 60
    learning_rate: float = 0.01
    batch_size: int = 64
    alpha: float = 1e-3
    hidden_dims: tuple[int, ...] = (128, 128)
    standardize: bool = True
    cv: int = 5
    meta_features: str = "log_proba"
    visual: str = "spatiotemporal"
    vistext_epochs: int = 35
    vistext_hidden_dims: tuple[int, ...] = (512, 512)
    vistext_learning_rate: float = 1e-3
    eval_split: str = "val"

    @classmethod
    def from_dict(cls, values: dict) -> "FusionPlan":
        unknown = sorted(set(values) - set(_PLAN_DEFAULTS))
        if unknown:
            raise PlanError(f"unknown plan keys: {unknown}")
        v = {**_PLAN_DEFAULTS, **values}
        if v["strategy"] is None:
            raise PlanError("plan must set 'strategy'")
        try:
            plan = cls(
                strategy=v["strategy"],
                modalities=tuple(m.strip() for m in v["modalities"].split(",") if m.strip()),
                classifier=v["classifier"],
                route_base=v["route_base"],
                missing_audio=v["missing_audio"],
                epochs=int(v["epochs"]),
                learning_rate=float(v["learning_rate"]),
                batch_size=int(v["batch_size"]),
                alpha=float(v["alpha"]),
                hidden_dims=_ints(v["hidden_dims"]),
                standardize=v["standardize"].lower() in ("1", "true", "yes"),
                cv=int(v["cv"]),
                meta_features=v["meta_features"],
                visual=v["visual"],
                vistext_epochs=int(v["vistext_epochs"]),
                vistext_hidden_dims=_ints(v["vistext_hidden_dims"]),
                vistext_learning_rate=float(v["vistext_learning_rate"]),
                eval_split=v["eval_split"],
            )
        except ValueError as exc:
            raise PlanError(f"bad plan value: {exc}") from None
        plan.validate()
        return plan

    def validate(self):
        if self.strategy not in STRATEGIES:
            raise PlanError(f"unknown strategy {self.strategy!r}; expected one of {STRATEGIES}")
        if self.classifier not in CLASSIFIER_KINDS:
            raise PlanError(f"unknown classifier {self.classifier!r}; expected one of {CLASSIFIER_KINDS}")
        if self.route_base not in STRATEGIES[:3]:
            raise PlanError(f"route_base must be one of {STRATEGIES[:3]}")
        if self.missing_audio not in ("zero_fill", "drop"):
            raise PlanError("missing_audio must be 'zero_fill' or 'drop'")
        if self.meta_features not in META_FEATURES:
            raise PlanError(f"meta_features must be one of {META_FEATURES}")
        if not self.modalities:
            raise PlanError("plan lists no modalities")
        if self.strategy == "multi_classifier_route" and (len(self.modalities) != 3 or AUDIO not in self.modalities):
            raise PlanError("multi_classifier_route needs exactly 3 modalities, one of them audio")

    @property
    def uses_audio(self) -> bool:
        return AUDIO in self.modalities

    def name(self) -> str:
        """Configuration label in the style of the fusion results table."""
        mods = " + ".join(self.modalities)
        kind = KIND_LABELS[self.classifier]
        if self.strategy == "multi_classifier_route":
            family = "early" if self.route_base == "early_concat" else "late"
            return f"{mods} ({family}, multi-route)"
        if self.strategy == "early_concat":
            detail = f"early, {kind}"
        elif self.strategy == "late_average":
            detail = f"late, {kind}, average"
        else:
            detail = f"late, {kind}"
        if self.uses_audio:
            detail += ", zero-fill" if self.missing_audio == "zero_fill" else ", audio only"
        return f"{mods} ({detail})"

    def base_estimator(self, random_state) -> FeatureClassifier:
        return FeatureClassifier(
            kind=self.classifier,
            hidden_dims=self.hidden_dims,
            epochs=self.epochs,
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            alpha=self.alpha,
            standardize=self.standardize,
            random_state=random_state,
        )

    def _single(self, strategy, modalities, random_state):
        base = self.base_estimator(random_state)
        if strategy == "early_concat":
            return EarlyFusionClassifier(modalities=tuple(modalities), estimator=base)
        mode = "average" if strategy == "late_average" else "stacked_lr"
        return LateFusionClassifier(
            modalities=tuple(modalities),
            estimator=base,
            mode=mode,
            cv=self.cv,
            meta_features=self.meta_features,
            random_state=random_state,
        )

    def build(self, random_state=0):
        """Unfitted estimator for this plan."""
        if self.strategy != "multi_classifier_route":
            return self._single(self.strategy, self.modalities, random_state)
        without = [m for m in self.modalities if m != AUDIO]
        return MultiClassifierRouter(
            with_audio=self._single(self.route_base, self.modalities, random_state),
            without_audio=self._single(self.route_base, without, random_state),
        )


def parse_plan(text) -> FusionPlan:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise PlanError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key] = value
    return FusionPlan.from_dict(values)


def load_plan(path) -> FusionPlan:
    return parse_plan(Path(path).read_text(encoding="utf-8"))
