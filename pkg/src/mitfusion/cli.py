"""``mitfusion`` command line.

Exit status: 0 on success, 1 on a runtime or numeric failure, 2 on a usage
or validation error. Logs go to standard error; results go to files, except
for the two query commands (``validate``, ``nearest-word``), which print.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from .dsp import read_logmel
from .embeddings import load_embeddings, nearest
from .exceptions import FormatError, ManifestError, MissingModalityError, ShapeError
from .features import load_manifest, read_class_list, read_feature
from .fusion import (
    CLASSIFIER_KINDS,
    EarlyFusionClassifier,
    FeatureClassifier,
    PlanError,
    late_fuse,
    parse_plan,
    read_predictions_tsv,
    write_predictions_tsv,
)
from .metrics import evaluate, render_report, report_tsv
from .pipeline import REPORT_NAME, TSV_NAME, StageError, prepare_audio, load_dataset, run_pipeline
from .synth import band_energy_logmels, write_synthetic_dataset
from .vistext import VisTextRegressor, vistext_as_feature
from .walnet import WalNetClassifier

log = logging.getLogger("mitfusion")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2
# errors that mean "your input is wrong" rather than "the computation failed"
VALIDATION_ERRORS = (
    PlanError,
    ManifestError,
    FormatError,
    MissingModalityError,
    ShapeError,
    FileNotFoundError,
    FileExistsError,
    IsADirectoryError,
)


class UsageError(Exception):
    pass


# ------------------------------------------------------------------ commands


def cmd_validate(args):
    manifest = load_manifest(args.manifest, args.classes)
    print(f"{len(manifest)} samples, {len(manifest.classes)} classes, modalities: {', '.join(manifest.modalities)}")
    for split, by_modality in manifest.coverage().items():
        for modality, frac in by_modality.items():
            print(f"{split} {modality} coverage {frac * 100:.1f}%")
    return EXIT_OK


def cmd_synth(args):
    path = write_synthetic_dataset(
        args.outdir,
        n_classes=args.n_classes,
        samples_per_class=args.samples_per_class,
        visual_dim=args.visual_dim,
        audio_dim=args.audio_dim,
        audio_coverage=args.audio_coverage,
        confusable_pairs=args.confusable_pairs,
        embedding_dim=args.embedding_dim,
        seed=args.seed,
        force=args.force,
    )
    log.info("wrote %s", path)
    return EXIT_OK


def cmd_train_vistext(args):
    records, classes = load_dataset(args.manifest, args.classes)
    table = load_embeddings(args.embeddings, restrict_to=classes)
    train = [r for r in records if r.split == "train"]
    X = np.vstack([r.get(args.visual) for r in train])
    model = VisTextRegressor(
        embeddings=table,
        hidden_dims=tuple(args.hidden_dims),
        epochs=args.epochs,
        learning_rate=args.learning_rate,
        random_state=args.seed,
    ).fit(X, [r.label for r in train])
    model.save(args.out)
    held = [r for r in records if r.split == args.eval_split]
    if held:
        acc = model.score(np.vstack([r.get(args.visual) for r in held]), [r.label for r in held])
        log.info("%s nearest-class accuracy %.3f", args.eval_split, acc)
    log.info("final loss %.4f; wrote %s", model.loss_curve_[-1] if model.loss_curve_ else float("nan"), args.out)
    return EXIT_OK


def _read_logmel_list(path):
    """``path<TAB>label`` lines; relative paths resolve against the list file."""
    path = Path(path)
    X, y = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh, delimiter="\t"), start=1):
            if not row or row[0].startswith("#"):
                continue
            if len(row) < 2:
                raise FormatError(f"{path}:{lineno}: expected path<TAB>label")
            X.append(read_logmel(path.parent / row[0]))
            y.append(row[1])
    if not X:
        raise FormatError(f"{path}: no recordings listed")
    return X, np.asarray(y)


def cmd_train_walnet(args):
    if args.toy:
        data = band_energy_logmels(n_mels=args.n_mels, seed=args.seed)
        X, y = [m for m, _ in data], np.array([str(label) for _, label in data])
    elif args.list:
        X, y = _read_logmel_list(args.list)
    else:
        raise UsageError("train-walnet needs --list or --toy")
    classes = read_class_list(args.classes) if args.classes else None
    model = WalNetClassifier(
        n_blocks=args.blocks,
        base_filters=args.base_filters,
        l7_filters=args.l7_filters,
        segment_frames=args.segment_frames,
        n_mels=args.n_mels,
        epochs=args.epochs,
        learning_rate=args.learning_rate,
        batch_size=args.batch_size,
        classes=classes,
        random_state=args.seed,
    ).fit(X, y)
    log.info("train accuracy %.3f", model.score(X, y))
    model.save(args.out)
    log.info("wrote %s", args.out)
    return EXIT_OK


def cmd_train_classifier(args):
    records, classes = load_dataset(args.manifest, args.classes)
    modalities = tuple(args.modalities.split(","))
    if "vistext" in modalities:
        if not args.vistext:
            raise UsageError("modality 'vistext' needs --vistext MODEL")
        vt = VisTextRegressor.load(args.vistext)
        records = vistext_as_feature(vt, records, args.visual)
    plan = parse_plan(f"strategy=early_concat\nmodalities={','.join(modalities)}\nmissing_audio={args.missing_audio}")
    records = prepare_audio(records, plan)
    train = [r for r in records if r.split == "train"]
    held = [r for r in records if r.split == args.eval_split]
    if not held:
        raise UsageError(f"no records in split {args.eval_split!r}")
    base = FeatureClassifier(kind=args.kind, epochs=args.epochs, learning_rate=args.learning_rate, random_state=args.seed)
    model = EarlyFusionClassifier(modalities=modalities, estimator=base, classes=classes)
    model.fit(train, [r.label for r in train])
    preds = model.predictions(held)
    write_predictions_tsv(args.out, preds)
    log.info("%s top-1 %.3f; wrote %s", args.eval_split, model.score(held, [r.label for r in held]), args.out)
    return EXIT_OK


def cmd_fuse(args):
    sets = [read_predictions_tsv(p) for p in args.predictions]
    write_predictions_tsv(args.out, late_fuse(sets, mode="average"))
    log.info("averaged %d prediction files into %s", len(sets), args.out)
    return EXIT_OK


def cmd_evaluate(args):
    preds = read_predictions_tsv(args.predictions)
    manifest = load_manifest(args.manifest, args.classes, check_paths=False)
    labels = {r.sample_id: r.label for r in manifest.rows}
    missing = [s for s in preds.sample_ids if s not in labels]
    if missing:
        raise ManifestError(f"{len(missing)} predicted samples are not in the manifest, e.g. {missing[0]!r}")
    if list(preds.classes) != list(manifest.classes):
        raise FormatError("prediction columns do not match the class list")
    result = evaluate(preds.proba, [labels[s] for s in preds.sample_ids], manifest.classes)
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / REPORT_NAME).write_text(render_report(result, title=args.title or ""), encoding="utf-8")
    (outdir / TSV_NAME).write_text(report_tsv(result), encoding="utf-8")
    log.info("top-1 %.4f top-5 %.4f; wrote %s", result.top1, result.top5, outdir / REPORT_NAME)
    return EXIT_OK


def _plan_from_args(args):
    text = Path(args.plan).read_text(encoding="utf-8") if args.plan else ""
    overrides = []
    for item in args.set or []:
        if "=" not in item:
            raise PlanError(f"--set expects key=value, got {item!r}")
        overrides.append(item)
    return parse_plan("\n".join([text, *overrides]))


def cmd_pipeline(args):
    plan = _plan_from_args(args)
    out = run_pipeline(args.manifest, plan, args.embeddings, seed=args.seed, outdir=args.outdir, classes_path=args.classes)
    log.info("%s: top-1 %.4f top-5 %.4f", plan.name(), out.result.top1, out.result.top5)
    return EXIT_OK


def cmd_nearest_word(args):
    if args.vistext:
        model = VisTextRegressor.load(args.vistext)
        table = model.embeddings
    else:
        if not args.embeddings:
            raise UsageError("nearest-word needs --embeddings or --vistext")
        table = load_embeddings(args.embeddings)
        model = None
    if args.word:
        query = table[args.word]
    elif args.feature:
        query = read_feature(args.feature)
        if model is not None:
            query = model.transform(query[None])[0]
    else:
        raise UsageError("nearest-word needs --word or --feature")
    for word, sim in nearest(table, query, args.k):
        print(f"{word}\t{round(sim, 6) + 0.0:.6f}")  # + 0.0 folds -0.0
    return EXIT_OK


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mitfusion", description="Multimodal action classification from precomputed features.")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    def dataset_args(sp):
        sp.add_argument("--manifest", required=True, help="manifest.tsv of a dataset directory")
        sp.add_argument("--classes", help="class list (default: classes.txt beside the manifest)")

    def seed_arg(sp):
        sp.add_argument("--seed", type=int, required=True, help="run seed (required for reproducibility)")

    sp = sub.add_parser("validate", help="check a manifest and print per-split modality coverage")
    sp.add_argument("manifest")
    sp.add_argument("--classes")
    sp.set_defaults(func=cmd_validate)

    sp = sub.add_parser("synth", help="write a synthetic dataset with complementary modalities")
    sp.add_argument("--outdir", required=True)
    sp.add_argument("--n-classes", type=int, default=20)
    sp.add_argument("--samples-per-class", type=int, default=50)
    sp.add_argument("--visual-dim", type=int, default=32)
    sp.add_argument("--audio-dim", type=int, default=32)
    sp.add_argument("--audio-coverage", type=float, default=0.6)
    sp.add_argument("--confusable-pairs", type=int, default=0)
    sp.add_argument("--embedding-dim", type=int, default=300)
    sp.add_argument("--force", action="store_true", help="overwrite a non-empty output directory")
    seed_arg(sp)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("train-vistext", help="fit the visual-to-word-embedding regressor")
    dataset_args(sp)
    sp.add_argument("--embeddings", required=True)
    sp.add_argument("--visual", default="spatiotemporal", help="source modality (default: %(default)s)")
    sp.add_argument("--hidden-dims", type=int, nargs=2, default=[512, 512])
    sp.add_argument("--epochs", type=int, default=35)
    sp.add_argument("--learning-rate", type=float, default=1e-3)
    sp.add_argument("--eval-split", default="val")
    sp.add_argument("--out", required=True, help="checkpoint path")
    seed_arg(sp)
    sp.set_defaults(func=cmd_train_vistext)

    sp = sub.add_parser("train-walnet", help="fit WALNet on log-mel recordings with recording labels")
    src = sp.add_mutually_exclusive_group()
    src.add_argument("--list", help="TSV of log-mel file path and label")
    src.add_argument("--toy", action="store_true", help="use the two-class band-energy toy recordings")
    sp.add_argument("--classes")
    sp.add_argument("--blocks", type=int, default=6)
    sp.add_argument("--base-filters", type=int, default=16)
    sp.add_argument("--l7-filters", type=int, default=1024)
    sp.add_argument("--segment-frames", type=int, default=128)
    sp.add_argument("--n-mels", type=int, default=128)
    sp.add_argument("--epochs", type=int, default=10)
    sp.add_argument("--learning-rate", type=float, default=1e-3)
    sp.add_argument("--batch-size", type=int, default=8)
    sp.add_argument("--out", required=True)
    seed_arg(sp)
    sp.set_defaults(func=cmd_train_walnet)

    sp = sub.add_parser("train-classifier", help="fit one early-fusion classifier and write eval-split predictions")
    dataset_args(sp)
    sp.add_argument("--modalities", required=True, help="comma-separated")
    sp.add_argument("--kind", choices=CLASSIFIER_KINDS, default="logistic_regression")
    sp.add_argument("--missing-audio", choices=("zero_fill", "drop"), default="zero_fill")
    sp.add_argument("--vistext", help="VisText checkpoint, needed for the vistext modality")
    sp.add_argument("--visual", default="spatiotemporal")
    sp.add_argument("--epochs", type=int, default=60)
    sp.add_argument("--learning-rate", type=float, default=0.01)
    sp.add_argument("--eval-split", default="val")
    sp.add_argument("--out", required=True, help="predictions TSV")
    seed_arg(sp)
    sp.set_defaults(func=cmd_train_classifier)

    sp = sub.add_parser("fuse", help="average prediction files for the same samples")
    sp.add_argument("predictions", nargs="+")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_fuse)

    sp = sub.add_parser("evaluate", help="top-k report for a predictions file")
    dataset_args(sp)
    sp.add_argument("--predictions", required=True)
    sp.add_argument("--title")
    sp.add_argument("--outdir", required=True)
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("pipeline", help="VisText, classifiers per fusion plan, evaluation and report")
    dataset_args(sp)
    sp.add_argument("--plan", help="key=value plan file")
    sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one plan key (repeatable)")
    sp.add_argument("--embeddings", help="default: embeddings.txt beside the manifest")
    sp.add_argument("--outdir", required=True)
    seed_arg(sp)
    sp.set_defaults(func=cmd_pipeline)

    sp = sub.add_parser("nearest-word", help="nearest vocabulary words to a word or feature vector")
    sp.add_argument("--embeddings")
    sp.add_argument("--vistext", help="map --feature through this VisText model first")
    sp.add_argument("--word")
    sp.add_argument("--feature", help="feature vector file")
    sp.add_argument("-k", type=int, default=5)
    sp.set_defaults(func=cmd_nearest_word)
    return p


def _is_validation(exc) -> bool:
    if isinstance(exc, StageError):
        return exc.stage in ("load", "embeddings") and _is_validation(exc.cause)
    return isinstance(exc, VALIDATION_ERRORS)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    pkg_log = logging.getLogger("mitfusion")
    pkg_log.addHandler(handler)
    pkg_log.setLevel(logging.DEBUG if args.verbose else logging.INFO)
    try:
        return args.func(args)
    except UsageError as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - mapped to the exit-code contract
        log.error("%s: %s", type(exc).__name__, exc)
        return EXIT_USAGE if _is_validation(exc) else EXIT_RUNTIME
    finally:
        pkg_log.removeHandler(handler)


if __name__ == "__main__":
    sys.exit(main())
