"""Dataset readers/writers, vocabulary building and the synthetic corpus generator."""

from __future__ import annotations

import os
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .core import Dataset, LabelSet, Sample, SparseVector, TokenSequence

UNK_ID = 0
DEFAULT_VOCAB_SIZE = 500_000
DEFAULT_MAX_LEN = 500


class ParseError(ValueError):
    def __init__(self, path, lineno: int, msg: str):
        super().__init__(f"{path}:{lineno}: {msg}")
        self.path = path
        self.lineno = lineno


# ---------------------------------------------------------------------------
# sparse repository format
# ---------------------------------------------------------------------------


def _parse_sparse_line(line: str, path, lineno: int):
    parts = line.split()
    labels: list[int] = []
    if parts and ":" not in parts[0]:
        try:
            labels = [int(t) for t in parts[0].split(",") if t != ""]
        except ValueError:
            raise ParseError(path, lineno, f"bad label list {parts[0]!r}") from None
        parts = parts[1:]
    idx, val = [], []
    for tok in parts:
        i, sep, v = tok.partition(":")
        if not sep:
            raise ParseError(path, lineno, f"bad feature {tok!r}")
        try:
            idx.append(int(i))
            val.append(float(v))
        except ValueError:
            raise ParseError(path, lineno, f"bad feature {tok!r}") from None
    if len(set(idx)) != len(idx):
        raise ParseError(path, lineno, "duplicate feature index")
    if len(set(labels)) != len(labels):
        raise ParseError(path, lineno, "duplicate label")
    if any(i < 0 for i in idx) or any(j < 0 for j in labels):
        raise ParseError(path, lineno, "negative index")
    order = np.argsort(idx, kind="stable")
    feats = SparseVector(np.array(idx, np.int64)[order], np.array(val, np.float64)[order])
    return feats, LabelSet(np.array(sorted(labels), np.int64))


def parse_sparse_dataset(feature_file, header: bool = True) -> Dataset:
    """Read the ``N D L`` header format used by the extreme classification repository.

    Each subsequent line is ``l1,l2,... f:v f:v ...`` with zero-based ids.
    """
    with open(feature_file, encoding="ascii") as fh:
        lines = fh.read().splitlines()
    n_decl = d = l = None
    start = 0
    if header:
        if not lines:
            raise ParseError(feature_file, 1, "missing header")
        try:
            n_decl, d, l = (int(t) for t in lines[0].split())
        except ValueError:
            raise ParseError(feature_file, 1, f"bad header {lines[0]!r}") from None
        start = 1
    samples = []
    for lineno, line in enumerate(lines[start:], start=start + 1):
        if not line.strip() and n_decl is not None and len(samples) >= n_decl:
            continue
        feats, labels = _parse_sparse_line(line, feature_file, lineno)
        if d is not None and feats.nnz and feats.indices[-1] >= d:
            raise ParseError(feature_file, lineno, f"feature index >= D={d}")
        if l is not None and len(labels) and labels.labels[-1] >= l:
            raise ParseError(feature_file, lineno, f"label >= L={l}")
        samples.append(Sample(feats, labels))
    if n_decl is not None and len(samples) != n_decl:
        raise ParseError(
            feature_file, len(lines), f"header declares {n_decl} samples, found {len(samples)}"
        )
    if d is None:
        d = 1 + max((int(s.features.indices[-1]) for s in samples if s.features.nnz), default=-1)
        l = 1 + max((int(s.labels.labels[-1]) for s in samples if len(s.labels)), default=-1)
    return Dataset(tuple(samples), d, l)


def write_sparse_dataset(data: Dataset, path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"{len(data)} {data.num_features} {data.num_labels}\n")
        for s in data.samples:
            labels = ",".join(str(j) for j in s.labels)
            feats = " ".join(f"{i}:{v!r}" for i, v in s.features.pairs())
            fh.write(f"{labels} {feats}".rstrip() + "\n")


# ---------------------------------------------------------------------------
# text format
# ---------------------------------------------------------------------------


class Vocabulary:
    """Token <-> id map. Id 0 is reserved for unknown tokens; kept tokens start at 1."""

    def __init__(self, tokens: Sequence[str], max_size: int = DEFAULT_VOCAB_SIZE):
        tokens = list(tokens)
        if len(tokens) > max_size:
            raise ValueError(f"{len(tokens)} tokens exceed max_size={max_size}")
        if len(set(tokens)) != len(tokens):
            raise ValueError("duplicate tokens")
        self.max_size = max_size
        self.id_to_token = ["<unk>"] + tokens
        self.token_to_id = {t: i + 1 for i, t in enumerate(tokens)}

    @classmethod
    def build(cls, docs: Iterable[Sequence[str]], max_size: int = DEFAULT_VOCAB_SIZE):
        """Keep the ``max_size`` most frequent tokens; ties go to the earlier first occurrence."""
        counts: Counter = Counter()
        first: dict[str, int] = {}
        for doc in docs:
            for tok in doc:
                if tok not in first:
                    first[tok] = len(first)
                counts[tok] += 1
        ranked = sorted(first, key=lambda t: (-counts[t], first[t]))
        return cls(ranked[:max_size], max_size)

    def __len__(self) -> int:
        # includes the unknown-token id
        return len(self.id_to_token)

    def encode(self, doc: Sequence[str]) -> list[int]:
        get = self.token_to_id.get
        return [get(t, UNK_ID) for t in doc]

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"{self.max_size}\n")
            for t in self.id_to_token[1:]:
                fh.write(t + "\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().split("\n")
        max_size = int(lines[0])
        return cls([t for t in lines[1:] if t], max_size)


def truncate(ids: Sequence[int], max_len: int) -> TokenSequence:
    return TokenSequence(np.asarray(ids[:max_len], dtype=np.int64), len(ids))


def bow_features(ids: Sequence[int]) -> SparseVector:
    """Token-count vector over vocabulary ids, excluding the unknown-token id."""
    a = np.asarray(ids, dtype=np.int64)
    a = a[a != UNK_ID]
    if a.size == 0:
        return SparseVector.empty()
    uniq, counts = np.unique(a, return_counts=True)
    return SparseVector(uniq, counts.astype(np.float64))


def _parse_label_line(line: str, path, lineno: int) -> list[int]:
    line = line.strip()
    if not line:
        return []
    try:
        return [int(t) for t in line.replace(" ", ",").split(",") if t != ""]
    except ValueError:
        raise ParseError(path, lineno, f"bad label list {line!r}") from None


def read_text_lines(path) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    return lines


def parse_text_dataset(
    text_file,
    label_file,
    vocab: Vocabulary | None = None,
    max_len: int = DEFAULT_MAX_LEN,
    num_labels: int | None = None,
    max_vocab: int = DEFAULT_VOCAB_SIZE,
) -> tuple[Dataset, Vocabulary]:
    """Read whitespace-tokenized documents and their comma-separated labels.

    When ``vocab`` is None a vocabulary is built from these documents.
    Returns ``(dataset, vocab)``.
    """
    docs = [line.split() for line in read_text_lines(text_file)]
    label_lines = read_text_lines(label_file)
    if len(docs) != len(label_lines):
        raise ValueError(
            f"{text_file} has {len(docs)} lines but {label_file} has {len(label_lines)}"
        )
    if vocab is None:
        vocab = Vocabulary.build(docs, max_vocab)
    labels = [_parse_label_line(s, label_file, n + 1) for n, s in enumerate(label_lines)]
    if num_labels is None:
        num_labels = 1 + max((max(ls) for ls in labels if ls), default=-1)
    samples = []
    for n, (doc, ls) in enumerate(zip(docs, labels)):
        if any(j >= num_labels or j < 0 for j in ls):
            raise ParseError(label_file, n + 1, f"label outside [0, {num_labels})")
        ids = vocab.encode(doc)
        samples.append(Sample(bow_features(ids), LabelSet.of(ls), truncate(ids, max_len)))
    return Dataset(tuple(samples), len(vocab), num_labels, len(vocab)), vocab


def write_text_dataset(data: Dataset, vocab: Vocabulary, text_file, label_file) -> None:
    with open(text_file, "w", encoding="utf-8") as ft, open(label_file, "w", encoding="utf-8") as fl:
        for s in data.samples:
            ft.write(" ".join(vocab.id_to_token[i] for i in s.tokens.ids) + "\n")
            fl.write(",".join(str(j) for j in s.labels) + "\n")


# ---------------------------------------------------------------------------
# synthetic corpora
# ---------------------------------------------------------------------------

_MASK64 = (1 << 64) - 1


class SplitMix64:
    """64-bit splitmix generator; the same seed gives the same stream on every platform.

    state <- state + 0x9E3779B97F4A7C15; output is the state passed through
    two xor-shift-multiply rounds (constants 0xBF58476D1CE4E5B9 and
    0x94D049BB133111EB) and a final xor-shift by 31.
    """

    def __init__(self, seed: int):
        self.state = seed & _MASK64

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def random(self) -> float:
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def below(self, n: int) -> int:
        return int(self.random() * n)

    def shuffle(self, items: list) -> list:
        for i in range(len(items) - 1, 0, -1):
            j = self.below(i + 1)
            items[i], items[j] = items[j], items[i]
        return items


@dataclass(frozen=True)
class SynthSpec:
    num_labels: int = 64
    num_clusters: int = 8
    samples_per_cluster: int = 625
    vocab_size: int = 1000
    tail_skew: float = 0.5
    seed: int = 0
    doc_length: int = 40
    tokens_per_label: int = 4
    tokens_per_cluster: int = 8
    max_labels_per_sample: int = 5
    label_token_rate: float = 0.35
    cluster_token_rate: float = 0.25

    def __post_init__(self):
        if min(self.num_labels, self.num_clusters, self.samples_per_cluster, self.vocab_size) <= 0:
            raise ValueError("SynthSpec sizes must be positive")
        if self.num_clusters > self.num_labels:
            raise ValueError("more clusters than labels")
        if self.tail_skew < 0:
            raise ValueError("tail_skew must be >= 0")
        needed = 1 + self.num_labels * self.tokens_per_label + self.num_clusters * self.tokens_per_cluster
        if self.vocab_size <= needed:
            raise ValueError(f"vocab_size must exceed {needed}")


def _label_layout(spec: SynthSpec, rng: SplitMix64):
    perm = rng.shuffle(list(range(spec.num_labels)))
    clusters = [sorted(perm[c :: spec.num_clusters]) for c in range(spec.num_clusters)]
    ranks = rng.shuffle(list(range(spec.num_labels)))
    weights = [(ranks[j] + 1.0) ** (-spec.tail_skew) for j in range(spec.num_labels)]
    return clusters, weights


def synthetic_label_clusters(spec: SynthSpec) -> list[list[int]]:
    """Ground-truth label groups used by :func:`generate_synthetic` for ``spec``."""
    return _label_layout(spec, SplitMix64(spec.seed))[0]


def _weighted_sample(rng: SplitMix64, items: list[int], weights: list[float], k: int) -> list[int]:
    items, weights = list(items), list(weights)
    out = []
    for _ in range(k):
        u = rng.random() * sum(weights)
        acc = 0.0
        pick = len(items) - 1
        for i, w in enumerate(weights):
            acc += w
            if u < acc:
                pick = i
                break
        out.append(items.pop(pick))
        weights.pop(pick)
    return out


def generate_synthetic(spec: SynthSpec) -> Dataset:
    """Clustered multi-label corpus with planted label and cluster tokens.

    Label j owns ``tokens_per_label`` token ids, cluster c owns
    ``tokens_per_cluster`` ids, the rest of the vocabulary is noise. Sample n
    belongs to cluster ``n % num_clusters`` and carries 1..5 of that
    cluster's labels, drawn with power-law weights (exponent ``tail_skew``).
    """
    rng = SplitMix64(spec.seed)
    clusters, weights = _label_layout(spec, rng)
    tl, tc = spec.tokens_per_label, spec.tokens_per_cluster
    label_tok0 = 1
    cluster_tok0 = label_tok0 + spec.num_labels * tl
    noise0 = cluster_tok0 + spec.num_clusters * tc
    n_noise = spec.vocab_size - noise0
    samples = []
    for n in range(spec.num_clusters * spec.samples_per_cluster):
        c = n % spec.num_clusters
        members = clusters[c]
        k = 1 + rng.below(min(spec.max_labels_per_sample, len(members)))
        labels = _weighted_sample(rng, members, [weights[j] for j in members], k)
        ids = []
        for _ in range(spec.doc_length):
            u = rng.random()
            if u < spec.label_token_rate:
                j = labels[rng.below(len(labels))]
                ids.append(label_tok0 + j * tl + rng.below(tl))
            elif u < spec.label_token_rate + spec.cluster_token_rate:
                ids.append(cluster_tok0 + c * tc + rng.below(tc))
            else:
                ids.append(noise0 + rng.below(n_noise))
        samples.append(Sample(bow_features(ids), LabelSet.of(labels), TokenSequence(ids)))
    return Dataset(tuple(samples), spec.vocab_size, spec.num_labels, spec.vocab_size)


def synthetic_vocabulary(vocab_size: int) -> Vocabulary:
    """Token strings ``w1..w{V-1}`` so synthetic corpora can be written as text."""
    return Vocabulary([f"w{i}" for i in range(1, vocab_size)], max(vocab_size - 1, 1))


def split_dataset(data: Dataset, num_test: int) -> tuple[Dataset, Dataset]:
    n = len(data)
    if not 0 <= num_test <= n:
        raise ValueError("num_test out of range")
    return data.subset(range(n - num_test)), data.subset(range(n - num_test, n))


def ensure_dir(path) -> None:
    os.makedirs(path, exist_ok=True)
