"""Sparse feature containers, bag-of-words vectorization and dataset loaders.

A :class:`Dataset` keeps its features in a CSR matrix so that the model can
do full-batch products; individual rows are exposed as :class:`DataPoint`
objects for per-point operations.
"""

from __future__ import annotations

import hashlib
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Hashable, Iterable, Sequence

import numpy as np
import scipy.sparse as sp

__all__ = [
    "DataError",
    "SparseVector",
    "DataPoint",
    "Dataset",
    "VectorizerConfig",
    "Vocabulary",
    "tokenize",
    "fit_vectorizer",
    "transform",
    "vectorize",
    "read_tsv",
    "load_tsv",
    "load_svmlight",
    "save_svmlight",
    "synth_generate",
]

_TOKEN_RE = re.compile(r"[^\W_]+")


class DataError(ValueError):
    """Raised for malformed input files or inconsistent datasets."""


@dataclass(frozen=True)
class SparseVector:
    indices: np.ndarray
    values: np.ndarray
    dim: int

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        val = np.asarray(self.values, dtype=np.float64)
        if idx.shape != val.shape or idx.ndim != 1:
            raise DataError("indices and values must be 1-D arrays of equal length")
        if self.dim < 1:
            raise DataError("dim must be positive")
        if idx.size:
            if np.any(np.diff(idx) <= 0):
                raise DataError("indices not increasing")
            if idx[0] < 0 or idx[-1] >= self.dim:
                raise DataError("index out of range")
            if np.any(val == 0.0):
                raise DataError("explicit zero values are not stored")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "values", val)

    @classmethod
    def from_dict(cls, entries: dict[int, float], dim: int) -> SparseVector:
        items = sorted((i, v) for i, v in entries.items() if v != 0.0)
        return cls(np.array([i for i, _ in items], dtype=np.int64),
                   np.array([v for _, v in items], dtype=np.float64), dim)

    @property
    def entries(self) -> list[tuple[int, float]]:
        return list(zip(self.indices.tolist(), self.values.tolist()))

    @property
    def nnz(self) -> int:
        return int(self.indices.size)

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.dim)
        out[self.indices] = self.values
        return out

    def dot(self, w: np.ndarray) -> float:
        if len(w) != self.dim:
            raise DataError(f"dimension mismatch: vector dim {self.dim}, weights {len(w)}")
        return float(np.dot(self.values, w[self.indices]))


@dataclass(frozen=True)
class DataPoint:
    features: SparseVector
    label: int

    def __post_init__(self):
        if self.label not in (0, 1):
            raise DataError(f"label must be 0 or 1, got {self.label!r}")


@dataclass(frozen=True, eq=False)
class Dataset:
    """Binary-labelled sparse dataset.

    ``X`` is an ``(n, dim)`` CSR matrix with sorted indices and no stored
    zeros, ``y`` an int array of 0/1 labels and ``ids`` unique, stable
    identifiers (row numbers for file-backed data).
    """

    X: sp.csr_matrix
    y: np.ndarray
    ids: tuple = field(default=())

    def __post_init__(self):
        X = sp.csr_matrix(self.X, dtype=np.float64)
        X.eliminate_zeros()
        X.sort_indices()
        y = np.asarray(self.y, dtype=np.int64).ravel()
        if X.shape[0] != y.shape[0]:
            raise DataError("feature rows and labels differ in length")
        if X.shape[1] < 1:
            raise DataError("dim must be positive")
        if y.size and not np.all((y == 0) | (y == 1)):
            raise DataError("labels must be 0 or 1")
        ids = tuple(self.ids) if len(self.ids) else tuple(range(y.shape[0]))
        if len(ids) != y.shape[0]:
            raise DataError("ids and labels differ in length")
        if len(set(ids)) != len(ids):
            raise DataError("ids must be unique")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "ids", ids)

    @classmethod
    def from_points(cls, points: Sequence[DataPoint], dim: int | None = None,
                    ids: Sequence[Hashable] | None = None) -> Dataset:
        if dim is None:
            if not points:
                raise DataError("dim required for an empty point list")
            dim = points[0].features.dim
        indptr = [0]
        indices, values = [], []
        for p in points:
            if p.features.dim != dim:
                raise DataError("all points must share dim")
            indices.append(p.features.indices)
            values.append(p.features.values)
            indptr.append(indptr[-1] + p.features.nnz)
        X = sp.csr_matrix(
            (np.concatenate(values) if values else np.zeros(0),
             np.concatenate(indices) if indices else np.zeros(0, dtype=np.int64),
             np.array(indptr)),
            shape=(len(points), dim),
        )
        return cls(X, np.array([p.label for p in points], dtype=np.int64),
                   tuple(ids) if ids is not None else ())

    def __len__(self) -> int:
        return self.y.shape[0]

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def __getitem__(self, pos: int) -> DataPoint:
        row = self.X.getrow(pos)
        return DataPoint(SparseVector(row.indices, row.data, self.dim), int(self.y[pos]))

    @property
    def points(self) -> list[DataPoint]:
        return [self[i] for i in range(len(self))]

    def positions(self, ids: Iterable[Hashable]) -> np.ndarray:
        lookup = {pid: i for i, pid in enumerate(self.ids)}
        try:
            return np.array([lookup[i] for i in ids], dtype=np.int64)
        except KeyError as exc:
            raise KeyError(f"unknown id {exc.args[0]!r}") from None

    def take(self, positions: Sequence[int]) -> Dataset:
        pos = np.asarray(positions, dtype=np.int64)
        return Dataset(self.X[pos], self.y[pos], tuple(self.ids[i] for i in pos))

    def subset(self, ids: Iterable[Hashable]) -> Dataset:
        return self.take(self.positions(ids))

    def with_dim(self, dim: int) -> Dataset:
        """Zero-pad the feature space to ``dim`` columns."""
        if dim < self.dim:
            raise DataError(f"cannot shrink dim {self.dim} to {dim}")
        if dim == self.dim:
            return self
        X = sp.csr_matrix((self.X.data, self.X.indices, self.X.indptr), shape=(len(self), dim))
        return Dataset(X, self.y, self.ids)

    def with_bias(self) -> Dataset:
        """Append a constant-1 feature as the last column."""
        ones = sp.csr_matrix(np.ones((len(self), 1)))
        return Dataset(sp.hstack([self.X, ones], format="csr"), self.y, self.ids)

    @staticmethod
    def concat(first: Dataset, second: Dataset) -> Dataset:
        """Stack two datasets; ids of ``second`` are tagged to stay unique."""
        if first.dim != second.dim:
            raise DataError("cannot concatenate datasets of different dim")
        ids = first.ids + tuple(("+", i) for i in second.ids)
        return Dataset(sp.vstack([first.X, second.X], format="csr"),
                       np.concatenate([first.y, second.y]), ids)


# -- bag of words -----------------------------------------------------------

@dataclass(frozen=True)
class VectorizerConfig:
    lowercase: bool = True
    min_token_count: int = 1
    max_vocab: int | None = None
    binary_counts: bool = False

    def __post_init__(self):
        if self.min_token_count < 1:
            raise ValueError("min_token_count must be >= 1")
        if self.max_vocab is not None and self.max_vocab < 1:
            raise ValueError("max_vocab must be positive or None")


@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple[str, ...]
    index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "index", {t: i for i, t in enumerate(self.tokens)})
        if len(self.index) != len(self.tokens):
            raise DataError("duplicate tokens in vocabulary")

    @property
    def size(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def digest(self) -> str:
        return hashlib.sha256("\n".join(self.tokens).encode("utf-8")).hexdigest()


def tokenize(doc: str, cfg: VectorizerConfig) -> list[str]:
    if cfg.lowercase:
        doc = doc.lower()
    return _TOKEN_RE.findall(doc)


def fit_vectorizer(docs: Sequence[str], cfg: VectorizerConfig) -> Vocabulary:
    counts: Counter[str] = Counter()
    for doc in docs:
        counts.update(tokenize(doc, cfg))
    if not counts:
        raise DataError("empty corpus")
    kept = [(t, c) for t, c in counts.items() if c >= cfg.min_token_count]
    kept.sort(key=lambda tc: (-tc[1], tc[0]))
    if cfg.max_vocab is not None:
        kept = kept[: cfg.max_vocab]
    if not kept:
        raise DataError("empty corpus")
    return Vocabulary(tuple(sorted(t for t, _ in kept)))


def _count_row(doc: str, vocab: Vocabulary, cfg: VectorizerConfig) -> tuple[list[int], list[float]]:
    counts = Counter(vocab.index[t] for t in tokenize(doc, cfg) if t in vocab.index)
    idx = sorted(counts)
    return idx, [1.0 if cfg.binary_counts else float(counts[i]) for i in idx]


def transform(doc: str, vocab: Vocabulary, cfg: VectorizerConfig) -> SparseVector:
    idx, val = _count_row(doc, vocab, cfg)
    return SparseVector(np.array(idx, dtype=np.int64), np.array(val), vocab.size)


def vectorize(docs: Sequence[str], labels: Sequence[int], vocab: Vocabulary,
              cfg: VectorizerConfig, ids: Sequence[Hashable] | None = None) -> Dataset:
    indptr, indices, values = [0], [], []
    for doc in docs:
        idx, val = _count_row(doc, vocab, cfg)
        indices.extend(idx)
        values.extend(val)
        indptr.append(len(indices))
    X = sp.csr_matrix((np.array(values, dtype=np.float64), np.array(indices, dtype=np.int64),
                       np.array(indptr)), shape=(len(docs), vocab.size))
    return Dataset(X, np.asarray(labels, dtype=np.int64), tuple(ids) if ids is not None else ())


# -- file formats -------------------------------------------------------------

def _parse_label(tok: str, path, lineno: int) -> int:
    try:
        val = float(tok)
    except ValueError:
        raise DataError(f"{path}:{lineno}: invalid label {tok!r}") from None
    if val not in (0.0, 1.0):
        raise DataError(f"{path}:{lineno}: invalid label {tok!r}")
    return int(val)


def read_tsv(path: str | Path) -> tuple[list[str], list[int]]:
    """Read ``label<TAB>text`` lines; blank lines are skipped."""
    texts, labels = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            label, sep, text = line.partition("\t")
            if not sep:
                raise DataError(f"{path}:{lineno}: missing tab separator")
            labels.append(_parse_label(label.strip(), path, lineno))
            texts.append(text)
    if not texts:
        raise DataError(f"empty corpus: {path}")
    return texts, labels


def load_tsv(path: str | Path, cfg: VectorizerConfig,
             vocab: Vocabulary | None = None) -> tuple[Dataset, Vocabulary]:
    texts, labels = read_tsv(path)
    if vocab is None:
        vocab = fit_vectorizer(texts, cfg)
    return vectorize(texts, labels, vocab, cfg), vocab


def load_svmlight(path: str | Path, dim: int | None = None) -> Dataset:
    """Parse ``label idx:val ...`` lines with 1-based indices on disk.

    A leading ``# dim=<d>`` comment (as written by :func:`save_svmlight`)
    fixes the feature dimension; an explicit ``dim`` argument overrides it.
    """
    labels, indptr, indices, values = [], [0], [], []
    header_dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if line.startswith("#"):
                m = re.match(r"#\s*dim=(\d+)", line)
                if m:
                    header_dim = int(m.group(1))
                continue
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            toks = line.split()
            labels.append(_parse_label(toks[0], path, lineno))
            last = -1
            for tok in toks[1:]:
                try:
                    i_str, v_str = tok.split(":", 1)
                    i, v = int(i_str) - 1, float(v_str)
                except ValueError:
                    raise DataError(f"{path}:{lineno}: malformed feature {tok!r}") from None
                if i < 0:
                    raise DataError(f"{path}:{lineno}: indices are 1-based")
                if i <= last:
                    raise DataError(f"{path}:{lineno}: indices not increasing")
                last = i
                if v != 0.0:
                    indices.append(i)
                    values.append(v)
            indptr.append(len(indices))
    if not labels:
        raise DataError(f"empty corpus: {path}")
    needed = max(indices) + 1 if indices else 1
    dim = dim if dim is not None else (header_dim if header_dim is not None else needed)
    if dim < needed:
        raise DataError(f"{path}: feature index {needed} exceeds dim {dim}")
    X = sp.csr_matrix((np.array(values, dtype=np.float64), np.array(indices, dtype=np.int64),
                       np.array(indptr)), shape=(len(labels), dim))
    return Dataset(X, np.array(labels, dtype=np.int64))


def save_svmlight(data: Dataset, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# dim={data.dim}\n")
        X = data.X
        for r in range(len(data)):
            lo, hi = X.indptr[r], X.indptr[r + 1]
            feats = " ".join(f"{i + 1}:{v!r}" for i, v in zip(X.indices[lo:hi].tolist(),
                                                               X.data[lo:hi].tolist()))
            fh.write(f"{data.y[r]} {feats}".rstrip() + "\n")


def synth_generate(n: int, p: int, seed: int, separation: float = 1.0,
                   label_noise: float = 0.0) -> Dataset:
    """Two unit-variance Gaussian clusters centred at ``±separation * u``.

    ``u`` is the fixed direction ``(1, ..., 1) / sqrt(p)``, so datasets drawn
    with different seeds come from the same distribution.  Cluster membership
    sets the label, which is then flipped with probability ``label_noise``.
    """
    if n < 2 or p < 1:
        raise ValueError("need n >= 2 and p >= 1")
    if not 0.0 <= label_noise <= 1.0:
        raise ValueError("label_noise must be a probability")
    rng = np.random.default_rng(seed)
    u = np.full(p, 1.0 / np.sqrt(p))
    cluster = rng.integers(0, 2, size=n)
    X = rng.standard_normal((n, p)) + np.outer(2 * cluster - 1, separation * u)
    flip = rng.random(n) < label_noise
    y = np.where(flip, 1 - cluster, cluster)
    return Dataset(sp.csr_matrix(X), y)
