"""End-to-end run of one fusion plan: load features, derive VisText
features, train the plan's classifiers, evaluate and write the report.

Every stage draws its randomness from its own stream of the run seed.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.model_selection import StratifiedKFold

from ._rng import stage_seed
from .embeddings import EmbeddingTable, load_embeddings
from .features import FeatureRecord, apply_missing_audio_policy, load_manifest, materialize, read_class_list, stack
from .fusion import FusionPlan, Predictions, write_predictions_tsv
from .metrics import EvalResult, evaluate, render_report, report_tsv
from .vistext import VISTEXT, VisTextRegressor, vistext_as_feature

log = logging.getLogger(__name__)

REPORT_NAME = "report.txt"
TSV_NAME = "report.tsv"
PREDICTIONS_NAME = "predictions.tsv"
VISTEXT_FOLDS = 3


class StageError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage, cause):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class PipelineResult:
    plan: FusionPlan
    result: EvalResult
    predictions: Predictions
    report: str
    tsv: str


def load_dataset(manifest_path, classes_path=None):
    """Records (audio kept as flagged-absent) and the class list of a dataset directory."""
    manifest_path = Path(manifest_path)
    classes_path = manifest_path.parent / "classes.txt" if classes_path is None else Path(classes_path)
    classes = read_class_list(classes_path)
    manifest = load_manifest(manifest_path, classes)
    return materialize(manifest, missing_audio_policy="keep_flag"), classes


def _vistext_model(plan, table, random_state):
    return VisTextRegressor(
        embeddings=table,
        hidden_dims=plan.vistext_hidden_dims,
        epochs=plan.vistext_epochs,
        learning_rate=plan.vistext_learning_rate,
        random_state=random_state,
    )


def crossfit_vistext(records, plan: FusionPlan, table: EmbeddingTable, seed=0, folds=VISTEXT_FOLDS):
    """Add VisText features to every record without leaking training labels.

    Training-split features come from models that never saw that sample
    (out-of-fold); every other split is mapped by one model fit on the whole
    training split. Returns ``(records, full_model)``.
    """
    train_idx = [i for i, r in enumerate(records) if r.split == "train"]
    if not train_idx:
        raise ValueError("no training records")
    train = [records[i] for i in train_idx]
    X = stack(train, plan.visual)
    y = np.array([r.label for r in train])
    rs = stage_seed(seed, "vistext")

    oof = np.zeros((len(train), table.dim))
    splitter = StratifiedKFold(folds, shuffle=True, random_state=stage_seed(seed, "vistext.folds"))
    for k, (fit_idx, held) in enumerate(splitter.split(X, y), start=1):
        log.info("vistext fold %d/%d: %d train samples", k, folds, len(fit_idx))
        oof[held] = _vistext_model(plan, table, rs).fit(X[fit_idx], y[fit_idx]).transform(X[held])
    log.info("vistext: fitting on all %d train samples", len(train))
    full = _vistext_model(plan, table, rs).fit(X, y)

    out = list(records)
    for row, i in enumerate(train_idx):
        out[i] = records[i].with_features(**{VISTEXT: oof[row]})
    rest = [i for i in range(len(records)) if records[i].split != "train"]
    for i, rec in zip(rest, vistext_as_feature(full, [records[i] for i in rest], plan.visual)):
        out[i] = rec
    return out, full


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except Exception as exc:
        raise StageError(name, exc) from exc


def prepare_audio(records: list[FeatureRecord], plan: FusionPlan):
    """Apply the plan's missing-audio handling; plans without audio pass through."""
    if not plan.uses_audio:
        return records
    # routing needs every record; it reads the absent flag, not the zeros
    policy = "zero_fill" if plan.strategy == "multi_classifier_route" else plan.missing_audio
    return apply_missing_audio_policy(records, policy)


def run_pipeline(manifest_path, plan: FusionPlan, embeddings_path=None, seed=0, outdir=None, classes_path=None):
    """Train and evaluate ``plan`` on a dataset directory; write files to ``outdir`` if given.

    ``embeddings_path`` defaults to ``embeddings.txt`` next to the manifest.
    Stage failures are raised as :class:`StageError`.
    """
    manifest_path = Path(manifest_path)
    records, classes = _stage("load", load_dataset, manifest_path, classes_path)
    log.info("loaded %d records, %d classes", len(records), len(classes))

    if VISTEXT in plan.modalities:
        emb_path = manifest_path.parent / "embeddings.txt" if embeddings_path is None else embeddings_path
        table = _stage("embeddings", load_embeddings, emb_path, restrict_to=classes)
        records, _ = _stage("vistext", crossfit_vistext, records, plan, table, seed)

    records = _stage("missing_audio", prepare_audio, records, plan)
    train = [r for r in records if r.split == "train"]
    held = [r for r in records if r.split == plan.eval_split]
    if not held:
        raise StageError("evaluate", f"no records in split {plan.eval_split!r}")

    def fit():
        model = plan.build(stage_seed(seed, "fusion")).set_params(classes=classes)
        return model.fit(train, [r.label for r in train])

    log.info("training %s on %d records", plan.name(), len(train))
    model = _stage("train", fit)
    preds = _stage("predict", model.predictions, held)
    result = _stage("evaluate", evaluate, preds.proba, [r.label for r in held], classes)
    report = render_report(result, title=plan.name())
    tsv = report_tsv(result)

    if outdir is not None:
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        (outdir / REPORT_NAME).write_text(report, encoding="utf-8")
        (outdir / TSV_NAME).write_text(tsv, encoding="utf-8")
        write_predictions_tsv(outdir / PREDICTIONS_NAME, preds)
        log.info("wrote %s", outdir / REPORT_NAME)
    return PipelineResult(plan, result, preds, report, tsv)


__all__ = ["PipelineResult", "StageError", "crossfit_vistext", "load_dataset", "run_pipeline"]
