"""Probabilistic label trees: structure, compression to a shallow-and-wide shape,
node-label propagation, level queries, validation and binary serialization."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .core import LabelSet

ROOT_SENTINEL = -1
MAGIC = b"PLT1"


class LabelTree:
    """A label tree stored as a parent array.

    ``leaf_label[n]`` is the label carried by leaf ``n`` and -1 for internal
    nodes. ``H`` counts the internal levels below the root, so leaves sit at
    level ``H + 1``. ``K`` is the branching bound for non-root internal nodes.
    The constructor does not enforce the tree invariants; use
    :func:`validate_tree`.
    """

    def __init__(self, parent, leaf_label, H: int, K: int, node_level=None):
        self.parent = np.asarray(parent, dtype=np.int64).copy()
        self.leaf_label = np.asarray(leaf_label, dtype=np.int64).copy()
        if self.parent.shape != self.leaf_label.shape:
            raise ValueError("parent and leaf_label must cover the same nodes")
        self.H = int(H)
        self.K = int(K)
        n = self.parent.size
        roots = np.flatnonzero(self.parent == ROOT_SENTINEL)
        if roots.size != 1:
            raise ValueError(f"expected exactly one root, found {roots.size}")
        self.root = int(roots[0])
        order = np.argsort(self.parent, kind="stable")
        counts = np.bincount(self.parent[self.parent >= 0], minlength=n)
        starts = np.concatenate([[0], np.cumsum(counts)])
        sorted_children = order[roots.size :]
        self.children = [sorted_children[starts[i] : starts[i + 1]] for i in range(n)]
        self.node_level = (
            self._levels() if node_level is None else np.asarray(node_level, np.int64).copy()
        )
        self.L = int(np.sum(self.leaf_label >= 0))
        self.label_leaf = np.full(max(self.L, int(self.leaf_label.max(initial=-1)) + 1), -1, np.int64)
        leaves = np.flatnonzero(self.leaf_label >= 0)
        self.label_leaf[self.leaf_label[leaves]] = leaves

    def _levels(self) -> np.ndarray:
        n = self.parent.size
        level = np.full(n, -1, np.int64)
        level[self.root] = 0
        frontier = np.array([self.root])
        d = 0
        while frontier.size:
            d += 1
            nxt = np.concatenate([self.children[i] for i in frontier]) if frontier.size else frontier
            nxt = nxt[level[nxt] < 0]
            level[nxt] = d
            frontier = nxt
        return level

    @property
    def num_nodes(self) -> int:
        return int(self.parent.size)

    @property
    def depth(self) -> int:
        return self.H + 1

    def level_sizes(self) -> list[int]:
        return np.bincount(self.node_level[self.node_level >= 0]).tolist()

    def is_leaf(self, n: int) -> bool:
        return bool(self.leaf_label[n] >= 0)

    def __eq__(self, other) -> bool:
        if not isinstance(other, LabelTree):
            return NotImplemented
        return (
            self.H == other.H
            and self.K == other.K
            and np.array_equal(self.parent, other.parent)
            and np.array_equal(self.leaf_label, other.leaf_label)
        )

    def __repr__(self) -> str:
        return f"LabelTree(L={self.L}, H={self.H}, K={self.K}, levels={self.level_sizes()})"


def bfs_renumber(parent: np.ndarray, leaf_label: np.ndarray, keep: np.ndarray, H: int, K: int) -> LabelTree:
    """Build a tree over the kept nodes with ids assigned breadth-first.

    Children keep the relative order of their old ids, so every level is a
    contiguous id range.
    """
    keep_ids = np.flatnonzero(keep)
    root = keep_ids[parent[keep_ids] == ROOT_SENTINEL]
    if root.size != 1:
        raise ValueError("kept nodes must contain exactly one root")
    kids_of: dict[int, list[int]] = {}
    for n in keep_ids.tolist():
        p = int(parent[n])
        if p >= 0:
            kids_of.setdefault(p, []).append(n)
    order = [int(root[0])]
    head = 0
    while head < len(order):
        order.extend(kids_of.get(order[head], ()))
        head += 1
    order = np.array(order, dtype=np.int64)
    new_id = np.full(parent.size, -1, np.int64)
    new_id[order] = np.arange(order.size)
    old_parent = parent[order]
    new_parent = np.where(old_parent >= 0, new_id[np.maximum(old_parent, 0)], ROOT_SENTINEL)
    return LabelTree(new_parent, leaf_label[order], H, K)


def flat_tree(L: int) -> LabelTree:
    """Root with ``L`` leaf children: the tree-free special case."""
    parent = np.concatenate([[ROOT_SENTINEL], np.zeros(L, np.int64)])
    leaf = np.concatenate([[-1], np.arange(L)])
    return LabelTree(parent, leaf, H=0, K=max(L, 1))


def _leaf_parents(t: LabelTree) -> np.ndarray:
    leaves = np.flatnonzero(t.leaf_label >= 0)
    return np.unique(t.parent[leaves])


def compress_tree(t0: LabelTree, c: int, H: int) -> LabelTree:
    """Compress a deep binary tree into a ``2**c``-way tree with ``H`` internal levels.

    Starting from the leaf parents, each round links the current node set to
    its ``c``-th ancestors (the last round links to the root) and drops the
    nodes in between. Ancestor walks clamp at the root; the result then
    records the smaller realized height.
    """
    if c < 1 or H < 0:
        raise ValueError("need c >= 1 and H >= 0")
    parent = t0.parent.copy()
    root = t0.root
    keep = t0.leaf_label >= 0
    keep[root] = True
    prev = _leaf_parents(t0)
    keep[prev] = True
    realized = 0
    if not (prev.size == 1 and prev[0] == root):
        for h in range(1, H + 1):
            if h < H:
                anc = prev.copy()
                for _ in range(c):
                    anc = np.where(anc == root, root, t0.parent[np.maximum(anc, 0)])
            else:
                anc = np.full(prev.size, root)
            moved = prev != root
            parent[prev[moved]] = anc[moved]
            realized = h
            prev = np.unique(anc)
            keep[prev] = True
            if prev.size == 1 and prev[0] == root:
                break
    return bfs_renumber(parent, t0.leaf_label, keep, realized, 2**c)


def assign_node_labels(tree: LabelTree, labels: LabelSet | Iterable[int]) -> np.ndarray:
    """Sorted ids of the nodes whose subtree holds a relevant label (root excluded)."""
    lab = labels.labels if isinstance(labels, LabelSet) else np.asarray(list(labels), np.int64)
    if lab.size == 0:
        return np.empty(0, np.int64)
    nodes = tree.label_leaf[lab]
    out = [nodes]
    while True:
        nodes = np.unique(tree.parent[nodes])
        nodes = nodes[nodes != tree.root]
        nodes = nodes[nodes >= 0]
        if nodes.size == 0:
            break
        out.append(nodes)
    return np.unique(np.concatenate(out))


def level_nodes(tree: LabelTree, d: int) -> np.ndarray:
    if not 0 <= d <= tree.H + 1:
        raise ValueError(f"level {d} outside [0, {tree.H + 1}]")
    return np.flatnonzero(tree.node_level == d)


def validate_tree(tree: LabelTree) -> list[str]:
    """Return a list of human-readable invariant violations (empty when valid)."""
    problems: list[str] = []
    n = tree.num_nodes
    leaves = np.flatnonzero(tree.leaf_label >= 0)
    labels = tree.leaf_label[leaves]
    if np.unique(labels).size != labels.size:
        problems.append("label mapping violation: a label is carried by several leaves")
    if labels.size and (labels.min() != 0 or labels.max() != labels.size - 1):
        problems.append("label mapping violation: leaf labels are not exactly [0, L)")
    if np.any(tree.node_level < 0):
        problems.append("connectivity violation: some nodes are unreachable from the root")
    nonroot = np.flatnonzero(tree.parent >= 0)
    bad = nonroot[tree.node_level[nonroot] != tree.node_level[tree.parent[nonroot]] + 1]
    if bad.size:
        problems.append(f"level violation: {bad.size} nodes not one level below their parent")
    deep = leaves[tree.node_level[leaves] != tree.H + 1]
    if deep.size:
        problems.append(f"leaf depth violation: {deep.size} leaves not at level {tree.H + 1}")
    for i in range(n):
        nk = tree.children[i].size
        if tree.leaf_label[i] >= 0:
            if nk:
                problems.append(f"leaf {i} has children")
        elif i != tree.root and nk > tree.K:
            problems.append(f"branching violation: node {i} has {nk} > K={tree.K} children")
        elif nk == 0:
            problems.append(f"internal node {i} has no children")
    return problems


def save_tree(tree: LabelTree, path) -> None:
    leaves = np.flatnonzero(tree.leaf_label >= 0)
    pairs = np.stack([leaves, tree.leaf_label[leaves]], axis=1).astype("<i8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<4q", tree.num_nodes, tree.L, tree.H, tree.K))
        fh.write(tree.parent.astype("<i8").tobytes())
        fh.write(pairs.tobytes())


def load_tree(path) -> LabelTree:
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != MAGIC:
        raise ValueError(f"{path}: not a PLT1 tree file")
    num_nodes, L, H, K = struct.unpack_from("<4q", buf, 4)
    off = 4 + 32
    parent = np.frombuffer(buf, "<i8", num_nodes, off).astype(np.int64)
    off += 8 * num_nodes
    pairs = np.frombuffer(buf, "<i8", 2 * L, off).reshape(L, 2)
    if off + 16 * L != len(buf):
        raise ValueError(f"{path}: trailing or missing bytes")
    leaf_label = np.full(num_nodes, -1, np.int64)
    leaf_label[pairs[:, 0]] = pairs[:, 1]
    return LabelTree(parent, leaf_label, H, K)


@dataclass
class TreeParams:
    M: int = 8
    c: int = 3
    H: int = 3
    seed: int = 0

    @property
    def K(self) -> int:
        return 2**self.c


def build_plt(label_reps, params: TreeParams) -> LabelTree:
    """Cluster label vectors into a deep binary tree and compress it."""
    from .clustering import build_deep_tree

    t0 = build_deep_tree(label_reps, params.M, params.seed)
    return compress_tree(t0, params.c, params.H)
