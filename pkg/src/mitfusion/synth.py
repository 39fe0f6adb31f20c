"""Seeded synthetic datasets for desk-scale experiments and acceptance runs.

Nothing here models real video or audio. Each generator builds data whose
structure is known exactly, so that properties of the learners (separability,
complementarity across modalities, confusable label pairs) can be checked.
"""

from __future__ import annotations

import shutil
from pathlib import Path

import numpy as np

from ._rng import stage_rng
from .embeddings import EmbeddingTable, save_embeddings_text
from .features import AUDIO, FeatureRecord, save_records

# The 20-class subset used for the audio analysis and fusion experiments.
PAPER_CLASSES = (
    "arresting",
    "attacking",
    "baking",
    "bulldozing",
    "camping",
    "chewing",
    "crying",
    "driving",
    "exercising",
    "fishing",
    "gardening",
    "hammering",
    "hugging",
    "juggling",
    "opening",
    "painting",
    "reading",
    "swimming",
    "welding",
    "yawning",
)

VISUAL = "spatiotemporal"
SPLIT_FRACTIONS = (("train", 0.6), ("val", 0.2), ("test", 0.2))


def class_names(n_classes) -> list[str]:
    if n_classes <= len(PAPER_CLASSES):
        return list(PAPER_CLASSES[:n_classes])
    return [f"class{i:03d}" for i in range(n_classes)]


def class_embeddings(classes, dim=300, confusable_pairs=0, cosine=0.8, rng=None) -> EmbeddingTable:
    """Unit-norm class embeddings, mutually orthogonal except for twins.

    The first ``confusable_pairs`` pairs (0, 1), (2, 3), ... are built as
    ``e_b = cosine * e_a + sqrt(1 - cosine^2) * u`` with ``u`` orthogonal to
    every other vector, so their cosine similarity is ``cosine`` exactly (up
    to rounding) and all other pairs stay orthogonal.
    """
    classes = list(classes)
    n = len(classes)
    if 2 * confusable_pairs > n:
        raise ValueError(f"{confusable_pairs} confusable pairs need at least {2 * confusable_pairs} classes")
    if dim < n:
        raise ValueError(f"cannot build {n} orthogonal vectors in {dim} dimensions")
    if not -1.0 < cosine < 1.0:
        raise ValueError("cosine must lie strictly between -1 and 1")
    rng = np.random.default_rng(0) if rng is None else rng
    q, _ = np.linalg.qr(rng.normal(size=(dim, n)))
    vectors = q.T.copy()
    for p in range(confusable_pairs):
        a, b = 2 * p, 2 * p + 1
        vectors[b] = cosine * vectors[a] + np.sqrt(1.0 - cosine**2) * q.T[b]
    return EmbeddingTable(classes, vectors)


def _split_labels(n_per_class):
    """Deterministic split per class: 60/20/20 with remainders going to train."""
    n_val = int(round(n_per_class * 0.2))
    n_test = int(round(n_per_class * 0.2))
    n_train = n_per_class - n_val - n_test
    return ["train"] * n_train + ["val"] * n_val + ["test"] * n_test


def make_fusion_records(
    n_classes=20,
    samples_per_class=50,
    visual_dim=32,
    audio_dim=32,
    audio_coverage=0.6,
    seed=0,
    group_scale=4.0,
    pair_scale=1.3,
    audio_parity_gap=4.0,
    audio_offset=8.0,
    audio_class_scale=1.0,
):
    """Records with one visual and one audio modality that carry complementary information.

    Classes come in pairs (2g, 2g+1). The visual features separate pair groups
    well but the two classes inside a pair only weakly. The audio features
    separate the two members of a pair (class parity) and hardly anything
    else. So neither modality alone resolves a class, and fusing them does.

    Audio class means sit at ``audio_offset`` along a fixed direction, far
    from the origin, so zero-filled audio looks like an extreme odd-parity
    sample: that is the bias that makes zero filling a poor stand-in for
    a missing recording.

    Exactly ``round(audio_coverage * n)`` samples of each split carry audio.
    Returns ``(records, classes)``.
    """
    if n_classes < 2 or n_classes % 2:
        raise ValueError("n_classes must be an even number >= 2")
    if samples_per_class < 5:
        raise ValueError("need at least 5 samples per class to fill train/val/test")
    if not 0.0 <= audio_coverage <= 1.0:
        raise ValueError("audio_coverage must lie in [0, 1]")
    if visual_dim < 1 or audio_dim < 1:
        raise ValueError("feature dimensions must be positive")
    classes = class_names(n_classes)
    rng = stage_rng(seed, "synth.fusion")

    n_groups = n_classes // 2
    group_centers = rng.normal(size=(n_groups, visual_dim))
    group_centers *= group_scale / np.linalg.norm(group_centers, axis=1, keepdims=True)
    pair_dirs = rng.normal(size=(n_groups, visual_dim))
    pair_dirs /= np.linalg.norm(pair_dirs, axis=1, keepdims=True)
    visual_means = np.empty((n_classes, visual_dim))
    for c in range(n_classes):
        sign = -0.5 if c % 2 == 0 else 0.5
        visual_means[c] = group_centers[c // 2] + sign * pair_scale * pair_dirs[c // 2]

    axis = rng.normal(size=audio_dim)
    axis /= np.linalg.norm(axis)
    class_jitter = rng.normal(size=(n_classes, audio_dim)) * audio_class_scale / np.sqrt(audio_dim)
    audio_means = np.empty((n_classes, audio_dim))
    for c in range(n_classes):
        audio_means[c] = (audio_offset - audio_parity_gap * (c % 2)) * axis + class_jitter[c]

    splits = _split_labels(samples_per_class)
    rows = []
    for c in range(n_classes):
        for i, split in enumerate(splits):
            v = visual_means[c] + rng.normal(size=visual_dim)
            a = audio_means[c] + rng.normal(size=audio_dim)
            rows.append((f"{classes[c]}_{i:04d}", split, classes[c], v, a))

    has_audio = {}
    for split, _ in SPLIT_FRACTIONS:
        ids = [r[0] for r in rows if r[1] == split]
        n_audio = int(round(audio_coverage * len(ids)))
        chosen = set(rng.choice(len(ids), size=n_audio, replace=False).tolist())
        for j, sid in enumerate(ids):
            has_audio[sid] = j in chosen

    records = []
    for sid, split, label, v, a in rows:
        # float32 round trip so in-memory records equal what is written to disk
        v32 = v.astype(np.float32).astype(np.float64)
        a32 = a.astype(np.float32).astype(np.float64) if has_audio[sid] else None
        records.append(FeatureRecord(sid, label, {VISUAL: v32, AUDIO: a32}, split))
    return records, classes


def write_synthetic_dataset(
    outdir,
    n_classes=20,
    samples_per_class=50,
    visual_dim=32,
    audio_dim=32,
    audio_coverage=0.6,
    confusable_pairs=0,
    embedding_dim=300,
    seed=0,
    force=False,
) -> Path:
    """Write manifest, feature files, class list and class embeddings; returns the manifest path."""
    outdir = Path(outdir)
    if outdir.exists() and any(outdir.iterdir()):
        if not force:
            raise FileExistsError(f"{outdir} already exists and is not empty (use force to overwrite)")
        shutil.rmtree(outdir)
    records, classes = make_fusion_records(
        n_classes, samples_per_class, visual_dim, audio_dim, audio_coverage, seed=seed
    )
    table = class_embeddings(classes, embedding_dim, confusable_pairs, rng=stage_rng(seed, "synth.embeddings"))
    manifest = save_records(records, outdir, classes)
    save_embeddings_text(outdir / "embeddings.txt", table)
    return manifest


def vistext_toy(
    n_classes=4,
    n_train=100,
    n_test=50,
    visual_dim=64,
    sigma=0.5,
    center_scale=4.0,
    embedding_dim=300,
    confusable=False,
    pair_separation=8.0,
    seed=0,
):
    """Gaussian visual clusters paired with orthogonal class embeddings.

    With ``confusable`` the embeddings of classes 0 and 1 have cosine 0.8 and
    their visual centres sit ``pair_separation`` sigmas apart (default 4.0 in
    absolute terms, a little closer than a typical pair of random centres).
    ``pair_separation=None`` leaves the centres independent.

    Returns ``(X_train, y_train, X_test, y_test, table)``; per-class counts.
    """
    rng = stage_rng(seed, "synth.vistext")
    classes = class_names(n_classes)
    table = class_embeddings(classes, embedding_dim, 1 if confusable else 0, rng=rng)
    centers = rng.normal(size=(n_classes, visual_dim))
    centers *= center_scale / np.linalg.norm(centers, axis=1, keepdims=True)
    if confusable and pair_separation is not None:
        d = rng.normal(size=visual_dim)
        d /= np.linalg.norm(d)
        mid = centers[0]
        centers[0] = mid - 0.5 * pair_separation * sigma * d
        centers[1] = mid + 0.5 * pair_separation * sigma * d

    def draw(n):
        X = np.vstack([centers[c] + sigma * rng.normal(size=(n, visual_dim)) for c in range(n_classes)])
        y = np.repeat(np.array(classes), n)
        return X, y

    X_train, y_train = draw(n_train)
    X_test, y_test = draw(n_test)
    return X_train, y_train, X_test, y_test, table


def initial_hypothesis_features(backbone_proba, backbone_table: EmbeddingTable, k=5) -> np.ndarray:
    """Negative control: mean embedding of the top-k backbone labels per sample.

    This is the refuted first idea for a text feature (embed the words of the
    backbone's own top-k ImageNet-style labels). It is kept only to show that
    unrelated label vocabularies carry little class information; it is not
    used by any pipeline.
    """
    proba = np.atleast_2d(np.asarray(backbone_proba, dtype=np.float64))
    if proba.shape[1] != len(backbone_table):
        raise ValueError("one probability per backbone label is required")
    top = np.argsort(-proba, axis=1, kind="stable")[:, :k]
    return backbone_table.vectors[top].mean(axis=1)


def negative_control_dataset(n_classes=20, n_per_class=30, n_backbone_labels=1000, dim=300, seed=0):
    """Backbone label scores that are statistically independent of the class.

    Returns ``(features, y, class_table)`` where ``features`` come from
    :func:`initial_hypothesis_features`; nearest-class decoding of them
    should sit near chance.
    """
    rng = stage_rng(seed, "synth.negative_control")
    classes = class_names(n_classes)
    class_table = class_embeddings(classes, dim, rng=rng)
    backbone = EmbeddingTable([f"label{i:04d}" for i in range(n_backbone_labels)], rng.normal(size=(n_backbone_labels, dim)))
    n = n_classes * n_per_class
    logits = rng.normal(size=(n, n_backbone_labels))
    proba = np.exp(logits - logits.max(axis=1, keepdims=True))
    proba /= proba.sum(axis=1, keepdims=True)
    y = np.repeat(np.array(classes), n_per_class)
    return initial_hypothesis_features(proba, backbone), y, class_table


def band_energy_logmels(n_per_class=12, n_mels=16, min_frames=12, max_frames=40, seed=0):
    """Two-class toy log-mel recordings: energy in the low or the high half of the bands.

    Returns a list of ``(mel, label)`` with ``mel`` of shape (frames, n_mels)
    and label 0 (low band) or 1 (high band); lengths vary per recording.
    """
    rng = stage_rng(seed, "synth.band_energy")
    half = n_mels // 2
    out = []
    for i in range(2 * n_per_class):
        label = i % 2
        frames = int(rng.integers(min_frames, max_frames + 1))
        mel = rng.normal(scale=0.5, size=(frames, n_mels)) - 4.0
        band = slice(0, half) if label == 0 else slice(half, n_mels)
        mel[:, band] += 3.0
        out.append((mel, label))
    return out


def complementary_records(n_per_class=40, dim=4, seed=0):
    """Four classes, two modalities: A separates {0, 1} and B separates {2, 3}.

    In A, classes 2 and 3 share one centre; in B, classes 0 and 1 share one.
    """
    rng = stage_rng(seed, "synth.complementary")
    centers_a = np.array([[3, 0], [-3, 0], [0, 3], [0, 3]], dtype=float)
    centers_b = np.array([[0, 3], [0, 3], [3, 0], [-3, 0]], dtype=float)
    records = []
    for split, count in (("train", n_per_class), ("val", n_per_class // 2)):
        for c in range(4):
            for i in range(count):
                a = np.zeros(dim)
                b = np.zeros(dim)
                a[:2] = centers_a[c]
                b[:2] = centers_b[c]
                a += rng.normal(scale=0.8, size=dim)
                b += rng.normal(scale=0.8, size=dim)
                records.append(FeatureRecord(f"{split}{c}_{i:03d}", f"c{c}", {"A": a, "B": b}, split))
    return records, ["c0", "c1", "c2", "c3"]
