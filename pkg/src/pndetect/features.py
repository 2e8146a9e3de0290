"""Vocabulary, sparse count vectors and class weights."""
from __future__ import annotations

import hashlib
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence, TextIO

import numpy as np
import scipy.sparse as sp

from .labeling import Label


@dataclass(frozen=True)
class Vocabulary:
    index: dict[str, int]
    counts: dict[str, int]
    min_count: int = 1

    @property
    def size(self) -> int:
        return len(self.index)

    def __len__(self) -> int:
        return len(self.index)

    def __contains__(self, term: str) -> bool:
        return term in self.index

    @property
    def terms(self) -> list[str]:
        out = [""] * len(self.index)
        for t, i in self.index.items():
            out[i] = t
        return out

    def lines(self) -> list[str]:
        return [f"{t}\t{i}\t{self.counts[t]}" for i, t in enumerate(self.terms)]

    def write(self, out: TextIO) -> None:
        for line in self.lines():
            out.write(line + "\n")

    @classmethod
    def read(cls, stream: Iterable[str], min_count: int = 1) -> "Vocabulary":
        index, counts = {}, {}
        for line in stream:
            if not line.strip():
                continue
            term, idx, count = line.rstrip("\n").split("\t")
            index[term] = int(idx)
            counts[term] = int(count)
        if sorted(index.values()) != list(range(len(index))):
            raise ValueError("vocabulary indices are not a dense 0-based range")
        return cls(index, counts, min_count)

    def digest(self) -> str:
        return hashlib.sha256("\n".join(self.lines()).encode("utf-8")).hexdigest()


def build_vocab(corpus: Iterable[Iterable[str]], min_count: int = 1) -> Vocabulary:
    """Terms with corpus frequency >= min_count, most frequent first.

    Ties break lexicographically, so the result does not depend on
    document order.
    """
    freq: Counter = Counter()
    n_docs = 0
    for doc in corpus:
        freq.update(doc)
        n_docs += 1
    if n_docs == 0:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    kept = sorted((t for t, c in freq.items() if c >= min_count), key=lambda t: (-freq[t], t))
    return Vocabulary({t: i for i, t in enumerate(kept)}, {t: freq[t] for t in kept}, min_count)


@dataclass(frozen=True)
class SparseVector:
    indices: np.ndarray
    counts: np.ndarray
    dim: int

    def __post_init__(self):
        if self.indices.size and (np.any(np.diff(self.indices) <= 0) or self.indices[-1] >= self.dim
                                  or self.indices[0] < 0):
            raise ValueError("indices must be strictly ascending and below dim")
        if np.any(self.counts <= 0):
            raise ValueError("counts must be positive")

    @property
    def total(self) -> float:
        return float(self.counts.sum())

    def __len__(self) -> int:
        return int(self.indices.size)

    def as_dict(self) -> dict[int, float]:
        return dict(zip(self.indices.tolist(), self.counts.tolist()))

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.dim)
        out[self.indices] = self.counts
        return out

    @classmethod
    def from_dense(cls, x: Sequence[float]) -> "SparseVector":
        x = np.asarray(x, dtype=float)
        idx = np.flatnonzero(x)
        return cls(idx, x[idx], x.size)


def vectorize(tokens: Iterable[str], vocab: Vocabulary) -> SparseVector:
    c = Counter(vocab.index[t] for t in tokens if t in vocab.index)
    idx = np.array(sorted(c), dtype=np.int64)
    return SparseVector(idx, np.array([c[i] for i in idx], dtype=float), vocab.size)


def to_csr(vectors: Sequence[SparseVector], dim: int | None = None) -> sp.csr_matrix:
    """Stack sparse vectors row-wise into a CSR matrix."""
    if dim is None:
        if not vectors:
            raise ValueError("dim required for an empty stack")
        dim = vectors[0].dim
    indptr = np.zeros(len(vectors) + 1, dtype=np.int64)
    for i, v in enumerate(vectors):
        if v.dim != dim:
            raise ValueError(f"vector {i} has dim {v.dim}, expected {dim}")
        indptr[i + 1] = indptr[i] + len(v)
    indices = np.concatenate([v.indices for v in vectors]) if vectors else np.zeros(0, np.int64)
    data = np.concatenate([v.counts for v in vectors]) if vectors else np.zeros(0)
    return sp.csr_matrix((data, indices, indptr), shape=(len(vectors), dim))


def as_csr(X, dim: int | None = None) -> sp.csr_matrix:
    if sp.issparse(X):
        return sp.csr_matrix(X, dtype=float)
    if isinstance(X, SparseVector):
        return to_csr([X])
    return to_csr(list(X), dim)


def vectorize_corpus(corpus: Iterable[Iterable[str]], vocab: Vocabulary) -> sp.csr_matrix:
    return to_csr([vectorize(doc, vocab) for doc in corpus], vocab.size)


def idf_weights(X: sp.csr_matrix) -> np.ndarray:
    """Smoothed inverse document frequency per column."""
    df = np.bincount(X.indices, minlength=X.shape[1])
    return np.log((1 + X.shape[0]) / (1 + df)) + 1.0


def apply_tfidf(X: sp.csr_matrix, idf: np.ndarray) -> sp.csr_matrix:
    return sp.csr_matrix(X @ sp.diags(idf))


@dataclass(frozen=True)
class ClassWeights:
    weight_pnd: float
    weight_not: float

    def __post_init__(self):
        if not (self.weight_pnd > 0 and self.weight_not > 0):
            raise ValueError("class weights must be positive")

    def for_labels(self, labels) -> np.ndarray:
        y = np.asarray(labels, dtype=int)
        return np.where(y == int(Label.PND), self.weight_pnd, self.weight_not)


def class_weights(labels) -> ClassWeights:
    """Balanced weights N / (2 N_c)."""
    y = np.asarray(labels, dtype=int)
    n = y.size
    n_pnd = int(np.sum(y == int(Label.PND)))
    n_not = n - n_pnd
    if n_pnd == 0 or n_not == 0:
        raise ValueError("class weights need both classes present")
    return ClassWeights(weight_pnd=n / (2 * n_pnd), weight_not=n / (2 * n_not))
