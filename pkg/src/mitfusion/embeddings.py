"""Word-embedding tables and cosine nearest-neighbour lookup."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .exceptions import FormatError

EMBEDDING_MAGIC = b"MFEM1"
# similarities closer than this compare equal, so ties fall back to word order
TIE_DECIMALS = 12


class EmbeddingTable:
    """Immutable word -> vector mapping with a dense (V, D) matrix behind it."""

    def __init__(self, words, vectors):
        words = list(words)
        vectors = np.array(vectors, dtype=np.float64)
        if vectors.ndim != 2 or vectors.shape[0] != len(words):
            raise ValueError(f"need one row per word: {len(words)} words, matrix {vectors.shape}")
        if len(set(words)) != len(words):
            raise ValueError("duplicate words in embedding table")
        self.words = words
        self.vectors = vectors
        self.vectors.flags.writeable = False
        self._index = {w: i for i, w in enumerate(words)}
        self._norms = np.linalg.norm(vectors, axis=1)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self):
        return len(self.words)

    def __contains__(self, word):
        return word in self._index

    def __getitem__(self, word) -> np.ndarray:
        return self.vectors[self._index[word]]

    def __repr__(self):
        return f"EmbeddingTable({len(self)} words, dim={self.dim})"

    def index(self, word) -> int:
        return self._index[word]

    def subset(self, words) -> "EmbeddingTable":
        missing = [w for w in words if w not in self._index]
        if missing:
            raise KeyError(f"words not in embedding table: {missing}")
        return EmbeddingTable(words, self.vectors[[self._index[w] for w in words]])

    def matrix(self, words) -> np.ndarray:
        return self.vectors[[self._index[w] for w in words]]


def cosine(u, v) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValueError(f"dimension mismatch: {u.shape} vs {v.shape}")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise ValueError("cosine similarity is undefined for a zero vector")
    return float(np.clip(u @ v / (nu * nv), -1.0, 1.0))


def nearest(table: EmbeddingTable, query, k=1) -> list[tuple[str, float]]:
    """Top-``k`` words by cosine similarity to ``query``, best first.

    Ties (equal to 12 decimals) are broken by lexicographic word order, so
    the result does not depend on table order. ``k`` larger than the table
    returns every word.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    query = np.asarray(query, dtype=np.float64)
    if query.shape != (table.dim,):
        raise ValueError(f"query has shape {query.shape}, table dim is {table.dim}")
    qn = np.linalg.norm(query)
    if qn == 0:
        raise ValueError("cosine similarity is undefined for a zero query")
    if np.any(table._norms == 0):
        raise ValueError("embedding table contains a zero vector")
    sims = np.clip(table.vectors @ query / (table._norms * qn), -1.0, 1.0)
    keys = np.round(sims, TIE_DECIMALS)
    order = sorted(range(len(table)), key=lambda i: (-keys[i], table.words[i]))
    return [(table.words[i], float(sims[i])) for i in order[:k]]


# ------------------------------------------------------------------ files


def _load_text(path, wanted):
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise FormatError(f"{path}:1: header must be 'V D'")
        try:
            n_words, dim = int(header[0]), int(header[1])
        except ValueError:
            raise FormatError(f"{path}:1: header must be two integers") from None
        words, rows = [], []
        seen = set()
        count = 0
        for lineno, line in enumerate(fh, start=2):
            parts = line.rstrip("\n").rstrip(" ").split(" ")
            if parts == [""]:
                continue
            count += 1
            if len(parts) != dim + 1:
                raise FormatError(f"{path}:{lineno}: expected {dim} values, got {len(parts) - 1}")
            word = parts[0]
            if word in seen:
                raise FormatError(f"{path}:{lineno}: duplicate word {word!r}")
            seen.add(word)
            if wanted is not None and word not in wanted:
                continue
            try:
                rows.append([float(v) for v in parts[1:]])
            except ValueError:
                raise FormatError(f"{path}:{lineno}: non-numeric value") from None
            words.append(word)
    if count != n_words:
        raise FormatError(f"{path}: header declares {n_words} words, found {count}")
    return words, np.array(rows, dtype=np.float64).reshape(len(rows), dim)


def _load_binary(path, wanted):
    data = Path(path).read_bytes()
    pos = 5
    try:
        n_words, dim = struct.unpack_from("<II", data, pos)
        pos += 8
        words, rows = [], []
        for _ in range(n_words):
            (length,) = struct.unpack_from("<I", data, pos)
            pos += 4
            word = data[pos : pos + length].decode("utf-8")
            pos += length
            vec = np.frombuffer(data, dtype="<f4", count=dim, offset=pos)
            pos += 4 * dim
            if wanted is None or word in wanted:
                words.append(word)
                rows.append(vec.astype(np.float64))
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise FormatError(f"{path}: corrupt MFEM1 file ({exc})") from None
    if pos != len(data):
        raise FormatError(f"{path}: trailing bytes after {n_words} words")
    return words, np.array(rows, dtype=np.float64).reshape(len(rows), dim)


def load_embeddings(path, restrict_to=None) -> EmbeddingTable:
    """Load a word2vec text file (``V D`` header) or an MFEM1 binary file.

    With ``restrict_to`` only those words are kept, in that order; a
    requested word missing from the file is an error.
    """
    with open(path, "rb") as fh:
        is_binary = fh.read(5) == EMBEDDING_MAGIC
    wanted = None if restrict_to is None else set(restrict_to)
    words, vectors = (_load_binary if is_binary else _load_text)(path, wanted)
    table = EmbeddingTable(words, vectors)
    if restrict_to is None:
        return table
    missing = [w for w in restrict_to if w not in table]
    if missing:
        raise KeyError(f"{path}: requested words not found: {missing}")
    return table.subset(list(restrict_to))


def save_embeddings_text(path, table: EmbeddingTable) -> None:
    lines = [f"{len(table)} {table.dim}"]
    for w, v in zip(table.words, table.vectors):
        lines.append(w + " " + " ".join(repr(float(x)) for x in v))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def save_embeddings_binary(path, table: EmbeddingTable) -> None:
    parts = [EMBEDDING_MAGIC, struct.pack("<II", len(table), table.dim)]
    for w, v in zip(table.words, table.vectors):
        raw = w.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)) + raw + v.astype("<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))
