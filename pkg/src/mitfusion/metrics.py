"""Top-k accuracy, the top-k error score, and per-class accuracy reports."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def topk_indices(proba, k) -> np.ndarray:
    """(N, k) class indices by descending probability; ties go to the lower index."""
    proba = np.atleast_2d(np.asarray(proba, dtype=np.float64))
    n_classes = proba.shape[1]
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > n_classes:
        raise ValueError(f"k={k} exceeds the number of classes ({n_classes})")
    return np.argsort(-proba, axis=1, kind="stable")[:, :k]


def topk_labels(prediction, k, classes=None) -> list:
    """Ranked top-``k`` labels for one probability vector."""
    idx = topk_indices(np.asarray(prediction)[None, :], k)[0]
    return [int(i) for i in idx] if classes is None else [classes[i] for i in idx]


def _encode_truth(y_true, classes, n_classes):
    y = np.asarray(y_true)
    if classes is not None and y.dtype.kind in "UOS":
        lookup = {c: i for i, c in enumerate(classes)}
        unknown = sorted({str(v) for v in y if v not in lookup})
        if unknown:
            raise ValueError(f"labels outside the class list: {unknown}")
        return np.array([lookup[v] for v in y], dtype=int)
    y = y.astype(int)
    if y.size and (y.min() < 0 or y.max() >= n_classes):
        raise ValueError(f"class index outside 0..{n_classes - 1}")
    return y


def _aligned(proba, y_true, classes=None):
    proba = np.atleast_2d(np.asarray(proba, dtype=np.float64))
    y = _encode_truth(y_true, classes, proba.shape[1])
    if len(y) != proba.shape[0]:
        raise ValueError(f"{proba.shape[0]} predictions but {len(y)} ground-truth labels")
    if len(y) == 0:
        raise ValueError("cannot score an empty prediction set")
    return proba, y


def sample_errors(proba, y_true, k, classes=None) -> np.ndarray:
    """Per-sample error: 0 when the truth is among the top-k labels, else 1."""
    proba, y = _aligned(proba, y_true, classes)
    hits = (topk_indices(proba, k) == y[:, None]).any(axis=1)
    return (~hits).astype(float)


def error_score(proba, y_true, k, classes=None) -> float:
    """Average top-k error over all samples."""
    return float(sample_errors(proba, y_true, k, classes).mean())


def topk_accuracy(proba, y_true, k, classes=None) -> float:
    return 1.0 - error_score(proba, y_true, k, classes)


@dataclass
class EvalResult:
    top1: float
    top5: float
    n_samples: int
    errors: dict[int, float] = field(default_factory=dict)
    per_class: dict[str, float | None] = field(default_factory=dict)
    class_counts: dict[str, int] = field(default_factory=dict)


def evaluate(proba, y_true, classes, ks=(1, 5)) -> EvalResult:
    """Top-1/top-5 accuracy, error per k, and top-1 accuracy per class.

    When fewer than five classes exist, top-5 is computed over all of them.
    Classes without samples get ``None``.
    """
    classes = list(classes)
    proba, y = _aligned(proba, y_true, classes)
    if proba.shape[1] != len(classes):
        raise ValueError(f"probability vectors have {proba.shape[1]} entries for {len(classes)} classes")
    n_classes = len(classes)
    errors = {k: error_score(proba, y, min(k, n_classes)) for k in sorted(set(ks) | {1, 5})}
    top1_hit = topk_indices(proba, 1)[:, 0] == y
    per_class, counts = {}, {}
    for i, name in enumerate(classes):
        mask = y == i
        counts[name] = int(mask.sum())
        per_class[name] = float(top1_hit[mask].mean()) if mask.any() else None
    return EvalResult(
        top1=1.0 - errors[1],
        top5=1.0 - errors[5],
        n_samples=len(y),
        errors=errors,
        per_class=per_class,
        class_counts=counts,
    )


def _fmt(acc):
    return "n/a" if acc is None else f"{acc:.3f}"


def render_report(result: EvalResult, title="") -> str:
    """Plain-text report with the per-class table laid out in two column pairs."""
    lines = []
    if title:
        lines += [title, "=" * len(title)]
    lines.append(f"samples       {result.n_samples}")
    lines.append(f"top-1 acc     {result.top1 * 100:.2f}%")
    lines.append(f"top-5 acc     {result.top5 * 100:.2f}%")
    for k, e in result.errors.items():
        lines.append(f"error@{k:<7d} {e:.4f}")
    names = list(result.per_class)
    half = -(-len(names) // 2)
    left, right = names[:half], names[half:]
    width = max([len("Class")] + [len(n) for n in names])
    sep = f"+-{'-' * width}-+----------+-{'-' * width}-+----------+"
    lines += ["", sep, f"| {'Class':<{width}} | Accuracy | {'Class':<{width}} | Accuracy |", sep]
    for i in range(half):
        a = left[i]
        b = right[i] if i < len(right) else ""
        b_acc = _fmt(result.per_class[b]) if b else ""
        lines.append(f"| {a:<{width}} | {_fmt(result.per_class[a]):>8} | {b:<{width}} | {b_acc:>8} |")
    lines.append(sep)
    lines.append("Per-class accuracy is top-1 over that class's samples.")
    return "\n".join(lines) + "\n"


def report_tsv(result: EvalResult) -> str:
    rows = ["metric\tvalue"]
    rows.append(f"samples\t{result.n_samples}")
    rows.append(f"top1\t{result.top1:.6f}")
    rows.append(f"top5\t{result.top5:.6f}")
    rows += [f"error@{k}\t{e:.6f}" for k, e in result.errors.items()]
    rows.append("")
    rows.append("class\tcount\ttop1")
    rows += [f"{c}\t{result.class_counts[c]}\t{_fmt(a)}" for c, a in result.per_class.items()]
    return "\n".join(rows) + "\n"
