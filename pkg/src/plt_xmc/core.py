"""Sparse vectors, label sets and dataset containers."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

logger = logging.getLogger(__name__)


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SparseVector:
    """Index/value pairs with strictly increasing indices and no stored zeros."""

    indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64).reshape(-1)
        val = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if idx.shape != val.shape:
            raise ValueError("indices and values must have the same length")
        if idx.size:
            if idx[0] < 0:
                raise ValueError("negative index")
            if np.any(np.diff(idx) <= 0):
                raise ValueError("indices must be strictly increasing")
        keep = val != 0.0
        if not keep.all():
            idx, val = idx[keep], val[keep]
        object.__setattr__(self, "indices", _frozen(idx.copy()))
        object.__setattr__(self, "values", _frozen(val.copy()))

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[int, float]]) -> "SparseVector":
        pairs = list(pairs)
        if not pairs:
            return cls(np.empty(0, np.int64), np.empty(0))
        idx, val = zip(*pairs)
        return cls(np.array(idx, dtype=np.int64), np.array(val, dtype=np.float64))

    @classmethod
    def empty(cls) -> "SparseVector":
        return cls(np.empty(0, np.int64), np.empty(0))

    def pairs(self) -> list[tuple[int, float]]:
        return list(zip(self.indices.tolist(), self.values.tolist()))

    @property
    def nnz(self) -> int:
        return int(self.indices.size)

    def norm(self) -> float:
        if self.nnz == 0:
            return 0.0
        scale = float(np.max(np.abs(self.values)))
        if 1e-150 < scale < 1e150:
            return float(np.sqrt(np.dot(self.values, self.values)))
        # rescale first so the squares neither underflow nor overflow
        w = self.values / scale
        return scale * float(np.sqrt(np.dot(w, w)))

    def __len__(self) -> int:
        return self.nnz

    def __eq__(self, other) -> bool:
        if not isinstance(other, SparseVector):
            return NotImplemented
        return np.array_equal(self.indices, other.indices) and np.array_equal(
            self.values, other.values
        )

    def __repr__(self) -> str:
        body = ",".join(f"({i}:{v:g})" for i, v in self.pairs())
        return "{" + body + "}"


def l2_normalize(v: SparseVector) -> SparseVector:
    n = v.norm()
    if n == 0.0:
        return v
    if 1e-150 < n < 1e150:
        return SparseVector(v.indices, v.values / n)
    scale = float(np.max(np.abs(v.values)))
    w = v.values / scale
    return SparseVector(v.indices, w / float(np.sqrt(np.dot(w, w))))


def sparse_dot(a: SparseVector, b: SparseVector) -> float:
    _, ia, ib = np.intersect1d(a.indices, b.indices, assume_unique=True, return_indices=True)
    return float(np.dot(a.values[ia], b.values[ib]))


@dataclass(frozen=True, eq=False)
class LabelSet:
    labels: np.ndarray

    def __post_init__(self):
        lab = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if lab.size and (lab[0] < 0 or np.any(np.diff(lab) <= 0)):
            lab = np.unique(lab)
            if lab.size and lab[0] < 0:
                raise ValueError("negative label id")
        object.__setattr__(self, "labels", _frozen(lab.copy()))

    @classmethod
    def of(cls, labels: Iterable[int]) -> "LabelSet":
        return cls(np.unique(np.fromiter(labels, dtype=np.int64)))

    def __contains__(self, j) -> bool:
        k = np.searchsorted(self.labels, j)
        return bool(k < self.labels.size and self.labels[k] == j)

    def __iter__(self):
        return iter(self.labels.tolist())

    def __len__(self) -> int:
        return int(self.labels.size)

    def __eq__(self, other) -> bool:
        if not isinstance(other, LabelSet):
            return NotImplemented
        return np.array_equal(self.labels, other.labels)

    def __repr__(self) -> str:
        return "LabelSet(" + str(self.labels.tolist()) + ")"


@dataclass(frozen=True, eq=False)
class TokenSequence:
    """Token ids of one document after truncation, plus the untruncated length."""

    ids: np.ndarray
    original_length: int = -1

    def __post_init__(self):
        ids = _frozen(np.asarray(self.ids, dtype=np.int64).reshape(-1).copy())
        object.__setattr__(self, "ids", ids)
        if self.original_length < 0:
            object.__setattr__(self, "original_length", int(ids.size))

    def __len__(self) -> int:
        return int(self.ids.size)

    def __eq__(self, other) -> bool:
        if not isinstance(other, TokenSequence):
            return NotImplemented
        return (
            np.array_equal(self.ids, other.ids)
            and self.original_length == other.original_length
        )


@dataclass(frozen=True, eq=False)
class Sample:
    features: SparseVector
    labels: LabelSet
    tokens: TokenSequence = field(default_factory=lambda: TokenSequence(np.empty(0, np.int64)))

    def __eq__(self, other) -> bool:
        if not isinstance(other, Sample):
            return NotImplemented
        return (
            self.features == other.features
            and self.labels == other.labels
            and self.tokens == other.tokens
        )


@dataclass(frozen=True, eq=False)
class Dataset:
    samples: tuple[Sample, ...]
    num_features: int
    num_labels: int
    vocab_size: int = 0

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))

    def __len__(self) -> int:
        return len(self.samples)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.num_features == other.num_features
            and self.num_labels == other.num_labels
            and self.vocab_size == other.vocab_size
            and self.samples == other.samples
        )

    def validate(self) -> None:
        """Raise ``ValueError`` if any index, label or token id is out of range."""
        for n, s in enumerate(self.samples):
            if s.features.nnz and s.features.indices[-1] >= self.num_features:
                raise ValueError(f"sample {n}: feature index >= D={self.num_features}")
            if len(s.labels) and s.labels.labels[-1] >= self.num_labels:
                raise ValueError(f"sample {n}: label >= L={self.num_labels}")
            if len(s.tokens) and self.vocab_size and s.tokens.ids.max() >= self.vocab_size:
                raise ValueError(f"sample {n}: token id >= vocab_size={self.vocab_size}")

    def subset(self, index: Sequence[int]) -> "Dataset":
        return Dataset(
            tuple(self.samples[i] for i in index),
            self.num_features,
            self.num_labels,
            self.vocab_size,
        )

    def feature_matrix(self) -> sp.csr_matrix:
        indptr = np.zeros(len(self.samples) + 1, dtype=np.int64)
        for n, s in enumerate(self.samples):
            indptr[n + 1] = indptr[n] + s.features.nnz
        if self.samples:
            indices = np.concatenate([s.features.indices for s in self.samples])
            data = np.concatenate([s.features.values for s in self.samples])
        else:
            indices, data = np.empty(0, np.int64), np.empty(0)
        return sp.csr_matrix(
            (data, indices, indptr), shape=(len(self.samples), self.num_features)
        )

    def label_matrix(self) -> sp.csr_matrix:
        indptr = np.zeros(len(self.samples) + 1, dtype=np.int64)
        for n, s in enumerate(self.samples):
            indptr[n + 1] = indptr[n] + len(s.labels)
        if self.samples:
            indices = np.concatenate([s.labels.labels for s in self.samples])
        else:
            indices = np.empty(0, np.int64)
        return sp.csr_matrix(
            (np.ones(indices.size), indices, indptr),
            shape=(len(self.samples), self.num_labels),
        )

    def label_counts(self) -> np.ndarray:
        counts = np.zeros(self.num_labels, dtype=np.int64)
        for s in self.samples:
            counts[s.labels.labels] += 1
        return counts


def csr_rows(m: sp.csr_matrix) -> list[SparseVector]:
    m = m.tocsr()
    m.sort_indices()
    return [
        SparseVector(m.indices[m.indptr[i] : m.indptr[i + 1]], m.data[m.indptr[i] : m.indptr[i + 1]])
        for i in range(m.shape[0])
    ]


def label_representations(data: Dataset, return_unused: bool = False):
    """Per-label normalized sum of the BOW features of the samples carrying it.

    Labels with no samples get the zero vector; their count is logged and,
    with ``return_unused=True``, returned alongside the vectors.
    """
    x = data.feature_matrix()
    y = data.label_matrix()
    sums = (y.T @ x).tocsr()
    sums.eliminate_zeros()
    sums.sort_indices()
    reps = [l2_normalize(v) for v in csr_rows(sums)]
    unused = int(np.sum(data.label_counts() == 0))
    if unused:
        logger.warning("%d labels have no annotated samples", unused)
    if return_unused:
        return reps, unused
    return reps
