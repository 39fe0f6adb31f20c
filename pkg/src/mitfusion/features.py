"""Per-modality feature files, dataset manifests and record materialization.

On-disk layout of a dataset directory::

    classes.txt      one label per line; the line number is the class index
    manifest.tsv     header, then: sample_id, split, label, has_audio,
                     then any number of ``modality=relative/path`` cells
    features/*.fv    MFFV1 vectors: b"MFFV1", u32 dim, dim x float32 (LE)
"""

from __future__ import annotations

import struct
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .exceptions import FormatError, ManifestError, MissingModalityError

FEATURE_MAGIC = b"MFFV1"
SPLITS = ("train", "val", "test")
AUDIO = "audio"
MANIFEST_HEADER = ("sample_id", "split", "label", "has_audio")
MISSING_AUDIO_POLICIES = ("zero_fill", "drop", "keep_flag")


def write_feature(path, vector) -> None:
    vector = np.asarray(vector)
    if vector.ndim != 1:
        raise ValueError(f"feature vector must be 1-D, got shape {vector.shape}")
    Path(path).write_bytes(FEATURE_MAGIC + struct.pack("<I", vector.size) + vector.astype("<f4").tobytes())


def read_feature(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:5] != FEATURE_MAGIC or len(data) < 9:
        raise FormatError(f"{path}: not an MFFV1 feature file")
    (dim,) = struct.unpack("<I", data[5:9])
    if len(data) != 9 + 4 * dim:
        raise FormatError(f"{path}: header says {dim} floats, file holds {(len(data) - 9) / 4:g}")
    return np.frombuffer(data, dtype="<f4", offset=9).astype(np.float64)


def read_class_list(path) -> list[str]:
    labels = [line.strip() for line in Path(path).read_text(encoding="utf-8").splitlines()]
    labels = [lab for lab in labels if lab]
    dup = [lab for lab, n in Counter(labels).items() if n > 1]
    if dup:
        raise ManifestError(f"{path}: duplicate class labels {dup}")
    return labels


def write_class_list(path, classes) -> None:
    Path(path).write_text("".join(f"{c}\n" for c in classes), encoding="utf-8")


@dataclass(frozen=True)
class ManifestRow:
    sample_id: str
    split: str
    label: str
    has_audio: bool
    paths: dict[str, Path] = field(default_factory=dict)


@dataclass
class DatasetManifest:
    rows: list[ManifestRow]
    classes: list[str]
    root: Path = Path(".")

    def __len__(self):
        return len(self.rows)

    @property
    def modalities(self) -> list[str]:
        seen = {}
        for row in self.rows:
            for m in row.paths:
                seen.setdefault(m, None)
        return list(seen)

    def audio_coverage(self, split=None) -> float | None:
        """Fraction of rows (optionally in one split) that carry audio; None if no rows."""
        rows = [r for r in self.rows if split is None or r.split == split]
        if not rows:
            return None
        return sum(r.has_audio for r in rows) / len(rows)

    def coverage(self) -> dict[str, dict[str, float]]:
        """split -> modality -> fraction of that split's rows providing it."""
        out = {}
        for split in SPLITS:
            rows = [r for r in self.rows if r.split == split]
            if not rows:
                continue
            out[split] = {m: sum(m in r.paths for r in rows) / len(rows) for m in self.modalities}
        return out

    def split(self, name) -> list[ManifestRow]:
        return [r for r in self.rows if r.split == name]


def _parse_flag(text, lineno):
    t = text.strip().lower()
    if t in ("1", "true", "yes"):
        return True
    if t in ("0", "false", "no"):
        return False
    raise ManifestError(f"line {lineno}: has_audio must be 0/1/true/false, got {text!r}")


def load_manifest(path, classes=None, check_paths=True) -> DatasetManifest:
    """Read and validate a TSV manifest.

    ``classes`` may be a label list or a class-list path; by default the
    ``classes.txt`` next to the manifest is used.
    """
    path = Path(path)
    root = path.parent
    if classes is None:
        classes = root / "classes.txt"
    if isinstance(classes, (str, Path)):
        classes = read_class_list(classes)
    class_set = set(classes)

    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines:
        raise ManifestError(f"{path}: missing header line")
    header = tuple(lines[0].split("\t")[:4])
    if header != MANIFEST_HEADER:
        raise ManifestError(f"{path}: header must start with {'/'.join(MANIFEST_HEADER)}")

    rows = []
    seen = set()
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        cells = line.split("\t")
        if len(cells) < 4:
            raise ManifestError(f"line {lineno}: expected at least 4 columns, got {len(cells)}")
        sample_id, split, label, flag = cells[:4]
        if sample_id in seen:
            raise ManifestError(f"line {lineno}: duplicate sample_id {sample_id!r}")
        seen.add(sample_id)
        if split not in SPLITS:
            raise ManifestError(f"line {lineno}: unknown split {split!r}")
        if label not in class_set:
            raise ManifestError(f"line {lineno}: unknown label {label!r}")
        has_audio = _parse_flag(flag, lineno)
        paths = {}
        for cell in cells[4:]:
            if not cell:
                continue
            modality, sep, rel = cell.partition("=")
            if not sep or not modality or not rel:
                raise ManifestError(f"line {lineno}: expected modality=path, got {cell!r}")
            if modality in paths:
                raise ManifestError(f"line {lineno}: modality {modality!r} listed twice")
            full = root / rel
            if check_paths and not full.is_file():
                raise ManifestError(f"line {lineno}: feature file not found: {full}")
            paths[modality] = full
        if has_audio != (AUDIO in paths):
            raise ManifestError(f"line {lineno}: has_audio={int(has_audio)} disagrees with the audio path column")
        rows.append(ManifestRow(sample_id, split, label, has_audio, paths))
    return DatasetManifest(rows, list(classes), root)


def write_manifest(path, rows) -> None:
    path = Path(path)
    out = ["\t".join(MANIFEST_HEADER)]
    for r in rows:
        cells = [r.sample_id, r.split, r.label, "1" if r.has_audio else "0"]
        for m, p in r.paths.items():
            p = Path(p)
            rel = p.relative_to(path.parent) if p.is_absolute() else p
            cells.append(f"{m}={rel.as_posix()}")
        out.append("\t".join(cells))
    path.write_text("\n".join(out) + "\n", encoding="utf-8")


@dataclass(frozen=True)
class FeatureRecord:
    """One sample's per-modality vectors.

    A modality is present when it has a vector and is not listed in
    ``absent``; zero-filled audio carries a vector yet stays absent.
    """

    sample_id: str
    label: str
    features: dict[str, np.ndarray | None]
    split: str = "train"
    absent: frozenset[str] = frozenset()

    @property
    def has_audio(self) -> bool:
        return self.present(AUDIO)

    def present(self, modality) -> bool:
        return self.features.get(modality) is not None and modality not in self.absent

    def get(self, modality) -> np.ndarray:
        vec = self.features.get(modality)
        if vec is None:
            raise MissingModalityError(f"sample {self.sample_id!r} has no {modality!r} features")
        return vec

    def with_features(self, **updates) -> "FeatureRecord":
        feats = dict(self.features)
        feats.update(updates)
        return replace(self, features=feats)


def average_frames(frame_features) -> np.ndarray:
    """Element-wise mean of per-frame feature vectors."""
    if len(frame_features) == 0:
        raise ValueError("cannot average an empty list of frames")
    try:
        arr = np.asarray(frame_features, dtype=np.float64)
    except ValueError:
        raise ValueError("frame features have inconsistent dimensions") from None
    if arr.ndim != 2:
        raise ValueError(f"expected a list of 1-D vectors, got array of shape {arr.shape}")
    return arr.mean(axis=0)


def modality_dims(records, modalities=None) -> dict[str, int]:
    """Dimension of every modality seen in ``records``; raises if inconsistent."""
    dims: dict[str, int] = {}
    for rec in records:
        for m, vec in rec.features.items():
            if vec is None or (modalities is not None and m not in modalities):
                continue
            if dims.setdefault(m, vec.shape[0]) != vec.shape[0]:
                raise ValueError(
                    f"modality {m!r}: sample {rec.sample_id!r} has dim {vec.shape[0]}, expected {dims[m]}"
                )
    return dims


def apply_missing_audio_policy(records, policy, audio_dim=None) -> list[FeatureRecord]:
    """Turn keep-flag records into zero-filled or audio-only record lists.

    ``zero_fill`` substitutes a zero vector for absent audio but leaves
    ``has_audio`` False; ``drop`` removes rows without audio; ``keep_flag``
    returns the records unchanged.
    """
    if policy not in MISSING_AUDIO_POLICIES:
        raise ValueError(f"unknown missing-audio policy {policy!r}; expected one of {MISSING_AUDIO_POLICIES}")
    records = list(records)
    if policy == "keep_flag":
        return records
    if policy == "drop":
        return [r for r in records if r.has_audio]
    if audio_dim is None:
        audio_dim = modality_dims(records, [AUDIO]).get(AUDIO)
        if audio_dim is None:
            raise ValueError("zero_fill needs audio_dim: no record carries audio")
    out = []
    for r in records:
        if r.has_audio:
            out.append(r)
        else:
            filled = r.with_features(**{AUDIO: np.zeros(audio_dim)})
            out.append(replace(filled, absent=r.absent | {AUDIO}))
    return out


def materialize(manifest: DatasetManifest, modalities=None, missing_audio_policy="zero_fill", audio_dim=None):
    """Load feature vectors for every manifest row.

    Non-audio modalities must be present for every row; audio follows
    ``missing_audio_policy``.
    """
    modalities = list(manifest.modalities if modalities is None else modalities)
    records = []
    for row in manifest.rows:
        feats = {}
        for m in modalities:
            if m in row.paths:
                feats[m] = read_feature(row.paths[m])
            elif m == AUDIO:
                feats[m] = None
            else:
                raise MissingModalityError(f"sample {row.sample_id!r} has no {m!r} path in the manifest")
        records.append(FeatureRecord(row.sample_id, row.label, feats, row.split))
    modality_dims(records)
    if AUDIO not in modalities:
        return records
    return apply_missing_audio_policy(records, missing_audio_policy, audio_dim)


def stack(records, modality) -> np.ndarray:
    """(N, D) matrix of one modality across records."""
    if not records:
        raise ValueError("no records to stack")
    return np.vstack([r.get(modality) for r in records])


def save_records(records, directory, classes) -> Path:
    """Write a dataset directory (features, manifest, class list); returns the manifest path."""
    directory = Path(directory)
    feat_dir = directory / "features"
    feat_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for rec in records:
        paths = {}
        for m, vec in rec.features.items():
            if vec is None or not rec.present(m):
                continue
            rel = Path("features") / f"{rec.sample_id}.{m}.fv"
            write_feature(directory / rel, vec)
            paths[m] = rel
        rows.append(ManifestRow(rec.sample_id, rec.split, rec.label, AUDIO in paths, paths))
    write_class_list(directory / "classes.txt", classes)
    manifest_path = directory / "manifest.tsv"
    write_manifest(manifest_path, rows)
    return manifest_path
