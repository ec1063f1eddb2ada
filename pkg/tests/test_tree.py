import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from helpers import random_reps, random_tree
from oracles import ancestors_of_leaves
from plt_xmc.clustering import build_deep_tree
from plt_xmc.tree import (
    MAGIC,
    LabelTree,
    assign_node_labels,
    compress_tree,
    flat_tree,
    level_nodes,
    load_tree,
    save_tree,
    validate_tree,
)


@pytest.mark.parametrize(
    "L,M,c,H,sizes",
    [
        (8000, 8, 3, 3, [1, 16, 128, 1024, 8000]),
        (100, 8, 3, 1, [1, 16, 100]),
        (100, 8, 3, 3, [1, 2, 16, 100]),  # ancestor walk clamps at the root
    ],
)
def test_compressed_level_sizes(L, M, c, H, sizes):
    t0 = build_deep_tree(random_reps(L, dim=40, seed=L), M)
    t = compress_tree(t0, c, H)
    assert t.level_sizes() == sizes
    assert t.H == len(sizes) - 2
    assert validate_tree(t) == []


def test_compress_preserves_label_bijection():
    t0 = build_deep_tree(random_reps(300, seed=1), 4)
    t = compress_tree(t0, 2, 2)
    leaves = np.flatnonzero(t.leaf_label >= 0)
    assert sorted(t.leaf_label[leaves].tolist()) == list(range(300))
    # every label keeps its leaf-parent cluster
    for j in range(0, 300, 17):
        a = t0.children[t0.parent[t0.label_leaf[j]]]
        b = t.children[t.parent[t.label_leaf[j]]]
        assert sorted(t0.leaf_label[a].tolist()) == sorted(t.leaf_label[b].tolist())


@given(st.integers(2, 400), st.integers(1, 3), st.integers(1, 3), st.integers(0, 3), st.booleans())
def test_compressed_tree_invariants(L, c, H, seed, smaller_m):
    # leaf parents hold up to M labels, so the K bound needs M <= K
    M = 2 ** (c - 1) if smaller_m else 2**c
    t = random_tree(L, M, c, H, seed)
    assert validate_tree(t) == []
    sizes = t.level_sizes()
    assert all(a <= b for a, b in zip(sizes, sizes[1:]))
    assert sizes[-1] == L and t.H <= H
    for d in range(t.H + 2):
        nodes = level_nodes(t, d)
        assert np.array_equal(nodes, np.arange(nodes[0], nodes[0] + nodes.size))  # contiguous ids


def test_flat_tree_is_fixed_point():
    f = flat_tree(10)
    assert f.level_sizes() == [1, 10] and f.H == 0
    g = compress_tree(f, 3, 1)
    assert np.array_equal(g.parent, f.parent) and np.array_equal(g.leaf_label, f.leaf_label) and g.H == 0
    assert level_nodes(f, 1).size == 10


def test_small_tree_has_only_leaves_under_root():
    t = compress_tree(build_deep_tree(random_reps(4), 8), 3, 3)
    assert t.level_sizes() == [1, 4]


def test_level_nodes_bounds():
    t = random_tree(50)
    assert level_nodes(t, 0).tolist() == [t.root]
    assert level_nodes(t, t.H + 1).size == 50
    with pytest.raises(ValueError):
        level_nodes(t, t.H + 2)
    with pytest.raises(ValueError):
        level_nodes(t, -1)


def test_assign_examples():
    t = random_tree(64, M=4, c=2, H=2, seed=5)
    assert assign_node_labels(t, []).size == 0
    one = assign_node_labels(t, [7])
    assert one.size == t.H + 1 and t.label_leaf[7] in one
    sib = t.children[t.parent[t.label_leaf[7]]]
    j2 = int(t.leaf_label[sib[sib != t.label_leaf[7]][0]])
    two = assign_node_labels(t, [7, j2])
    assert two.size == 2 + t.H  # shared ancestors once
    assert int(t.parent[t.label_leaf[7]]) in two


@given(st.integers(2, 1000), st.integers(0, 3), st.data())
def test_assign_matches_brute_force(L, seed, data):
    t = random_tree(L, M=8, c=2, H=2, seed=seed)
    labels = data.draw(st.sets(st.integers(0, L - 1), max_size=8))
    got = assign_node_labels(t, labels)
    assert got.tolist() == ancestors_of_leaves(t.parent, t.label_leaf, labels, t.root)
    pos = set(got.tolist())
    assert all(t.parent[n] == t.root or t.parent[n] in pos for n in pos)  # upward closure


def test_validate_reports_leaf_depth():
    # root -> a -> leaf0, root -> leaf1 directly (leaf at level H)
    parent = np.array([-1, 0, 1, 0])
    leaf_label = np.array([-1, -1, 0, 1])
    t = LabelTree(parent, leaf_label, H=1, K=2)
    assert any("leaf depth violation" in r for r in validate_tree(t))


def test_validate_reports_branching():
    # internal node with K+1 = 3 children
    parent = np.array([-1, 0, 0, 1, 1, 1, 2])
    leaf_label = np.array([-1, -1, -1, 0, 1, 2, 3])
    t = LabelTree(parent, leaf_label, H=1, K=2)
    assert any("branching violation" in r for r in validate_tree(t))


def test_leaf_parent_wider_than_k_is_flagged():
    t = random_tree(40, M=8, c=1, H=1)
    assert any("branching violation" in r for r in validate_tree(t))


def test_validate_reports_label_mapping():
    t = LabelTree(np.array([-1, 0, 0]), np.array([-1, 0, 0]), H=0, K=2)
    assert any("label mapping violation" in r for r in validate_tree(t))


@pytest.mark.parametrize("seed", range(3))
def test_tree_file_round_trip(tmp_path, seed):
    t = random_tree(200, seed=seed)
    save_tree(t, tmp_path / "t.plt")
    raw = (tmp_path / "t.plt").read_bytes()
    assert raw[:4] == MAGIC
    assert np.frombuffer(raw[4:36], "<i8").tolist() == [t.num_nodes, t.L, t.H, t.K]
    back = load_tree(tmp_path / "t.plt")
    assert back == t and np.array_equal(back.parent, t.parent) and back.H == t.H and back.K == t.K
    save_tree(back, tmp_path / "u.plt")
    assert (tmp_path / "u.plt").read_bytes() == raw


def test_load_rejects_bad_magic(tmp_path):
    (tmp_path / "x.plt").write_bytes(b"NOPE" + bytes(32))
    with pytest.raises(ValueError):
        load_tree(tmp_path / "x.plt")
