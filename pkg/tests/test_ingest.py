import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from plt_xmc.core import Dataset, LabelSet, Sample, SparseVector, TokenSequence, label_representations, sparse_dot
from plt_xmc.ingest import (
    UNK_ID,
    ParseError,
    SplitMix64,
    SynthSpec,
    Vocabulary,
    generate_synthetic,
    parse_sparse_dataset,
    parse_text_dataset,
    split_dataset,
    synthetic_label_clusters,
    truncate,
    write_sparse_dataset,
    write_text_dataset,
)


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def test_parse_sparse_single_line(tmp_path):
    d = parse_sparse_dataset(write(tmp_path, "a.txt", "1 3 2\n0,1 0:1.0 2:2.0\n"))
    assert (len(d), d.num_features, d.num_labels) == (1, 3, 2)
    assert d.samples[0].features.pairs() == [(0, 1.0), (2, 2.0)]
    assert list(d.samples[0].labels) == [0, 1]
    assert len(d.samples[0].tokens) == 0


def test_parse_sparse_empty(tmp_path):
    d = parse_sparse_dataset(write(tmp_path, "a.txt", "0 3 2\n"))
    assert (len(d), d.num_features, d.num_labels) == (0, 3, 2)


@pytest.mark.parametrize(
    "body,lineno",
    [
        ("2 3 2\n1 0:1\n0 0:1 0:2\n", 3),  # duplicate index
        ("1 3 2\n0 3:1\n", 2),  # index >= D
        ("1 3 2\n2 0:1\n", 2),  # label >= L
        ("1 3 2\n0 0:x\n", 2),  # malformed value
    ],
)
def test_parse_sparse_errors_carry_line(tmp_path, body, lineno):
    with pytest.raises(ParseError) as e:
        parse_sparse_dataset(write(tmp_path, "a.txt", body))
    assert e.value.lineno == lineno


def test_parse_sparse_trailing_spaces_and_no_labels(tmp_path):
    d = parse_sparse_dataset(write(tmp_path, "a.txt", "2 3 2\n1   \n 0:2.5\n"))
    assert list(d.samples[0].labels) == [1] and d.samples[0].features.nnz == 0
    assert len(d.samples[1].labels) == 0 and d.samples[1].features.pairs() == [(0, 2.5)]


def _random_dataset(seed, n=20, D=30, L=9):
    rng = np.random.default_rng(seed)
    samples = []
    for _ in range(n):
        idx = np.sort(rng.choice(D, rng.integers(0, 6), replace=False))
        vals = rng.normal(size=idx.size)
        labs = rng.choice(L, rng.integers(0, 4), replace=False)
        samples.append(Sample(SparseVector(idx, vals), LabelSet.of(labs), TokenSequence(np.empty(0, np.int64))))
    return Dataset(tuple(samples), D, L, 0)


@pytest.mark.parametrize("seed", range(5))
def test_sparse_round_trip(tmp_path, seed):
    d = _random_dataset(seed)
    write_sparse_dataset(d, tmp_path / "d.txt")
    assert parse_sparse_dataset(tmp_path / "d.txt") == d


def test_text_truncation(tmp_path):
    doc = " ".join(f"t{i}" for i in range(600))
    d, vocab = parse_text_dataset(write(tmp_path, "x.txt", doc + "\n"), write(tmp_path, "y.txt", "0\n"))
    tok = d.samples[0].tokens
    assert len(tok) == 500 and tok.original_length == 600
    assert [vocab.id_to_token[i] for i in tok.ids[:3]] == ["t0", "t1", "t2"]


def test_text_small_doc_bow(tmp_path):
    vocab = Vocabulary(["a", "b"])
    d, _ = parse_text_dataset(write(tmp_path, "x.txt", "a b a\nzzz a\n\n"), write(tmp_path, "y.txt", "0\n1,2\n\n"), vocab)
    s0, s1, s2 = d.samples
    assert s0.tokens.ids.tolist() == [1, 2, 1] and s0.features.pairs() == [(1, 2.0), (2, 1.0)]
    assert s1.tokens.ids.tolist() == [UNK_ID, 1] and s1.features.pairs() == [(1, 1.0)]
    assert len(s2.tokens) == 0 and s2.features.nnz == 0 and len(s2.labels) == 0
    assert d.num_labels == 3 and d.vocab_size == 3


def test_text_line_count_mismatch(tmp_path):
    with pytest.raises(ValueError):
        parse_text_dataset(write(tmp_path, "x.txt", "a\nb\n"), write(tmp_path, "y.txt", "0\n"))


def test_text_round_trip(tmp_path):
    data = generate_synthetic(SynthSpec(samples_per_cluster=5))
    vocab = Vocabulary([f"w{i}" for i in range(1, 1000)])
    write_text_dataset(data, vocab, tmp_path / "x.txt", tmp_path / "y.txt")
    back, _ = parse_text_dataset(tmp_path / "x.txt", tmp_path / "y.txt", vocab, num_labels=64)
    assert back == data


def test_vocabulary_ties_by_first_occurrence():
    docs = [["c", "b", "a"], ["a", "b", "d"], ["d", "c"]]
    # counts: c2 b2 a2 d2 -> first-occurrence order c, b, a, d
    assert Vocabulary.build(docs, 3).id_to_token[1:] == ["c", "b", "a"]
    docs = [["x", "y", "y", "z", "z", "z"]]
    assert Vocabulary.build(docs, 2).id_to_token[1:] == ["z", "y"]


def test_vocabulary_save_load(tmp_path):
    v = Vocabulary(["a", "b", "c"], max_size=7)
    v.save(tmp_path / "v.txt")
    w = Vocabulary.load(tmp_path / "v.txt")
    assert w.id_to_token == v.id_to_token and w.max_size == 7


@given(st.lists(st.integers(0, 50), max_size=40), st.integers(1, 30))
def test_truncation_keeps_prefix(ids, max_len):
    t = truncate(ids, max_len)
    assert t.ids.tolist() == ids[:max_len] and t.original_length == len(ids)


def test_splitmix_reference_values():
    # first outputs of the reference splitmix64 generator seeded with 0
    r = SplitMix64(0)
    assert r.next_u64() == 0xE220A8397B1DCDAF
    assert r.next_u64() == 0x6E789E6AA1B965F4


def test_synthetic_deterministic():
    spec = SynthSpec(samples_per_cluster=30, seed=7)
    assert generate_synthetic(spec) == generate_synthetic(spec)
    assert generate_synthetic(spec) != generate_synthetic(SynthSpec(samples_per_cluster=30, seed=8))


def test_synthetic_labels_from_own_cluster():
    spec = SynthSpec(samples_per_cluster=20)
    clusters = synthetic_label_clusters(spec)
    data = generate_synthetic(spec)
    for n, s in enumerate(data.samples):
        assert 1 <= len(s.labels) <= 5
        assert set(s.labels) <= set(clusters[n % spec.num_clusters])


def test_synthetic_uniform_when_no_skew():
    data = generate_synthetic(SynthSpec(tail_skew=0.0, samples_per_cluster=1250))
    assert len(data) == 10_000
    c = data.label_counts()
    assert np.all(np.abs(c / c.mean() - 1) <= 0.10)


def test_synthetic_skew_makes_a_head():
    c = generate_synthetic(SynthSpec(tail_skew=1.5, samples_per_cluster=500)).label_counts()
    assert c.max() > 3 * np.median(c)


def test_single_cluster_reps_positive_against_centroid():
    data = generate_synthetic(SynthSpec(num_clusters=1, num_labels=16, samples_per_cluster=800))
    reps = label_representations(data)
    centroid_pairs: dict[int, float] = {}
    for r in reps:
        for i, v in r.pairs():
            centroid_pairs[i] = centroid_pairs.get(i, 0.0) + v / len(reps)
    centroid = SparseVector.from_pairs(sorted(centroid_pairs.items()))
    assert all(sparse_dot(r, centroid) > 0 for r in reps)


def test_split_dataset_tail():
    data = generate_synthetic(SynthSpec(samples_per_cluster=10))
    tr, te = split_dataset(data, 16)
    assert len(tr) == 64 and te.samples == data.samples[64:]
