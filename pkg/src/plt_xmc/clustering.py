"""Balanced 2-means over label vectors and the deep binary label tree built from it.

All groups at one depth of the recursion are split together: a point's
similarity to its group's two centroids is a single sparse gather, so the
work per iteration is linear in the number of stored entries no matter how
many groups there are.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .core import SparseVector
from .tree import ROOT_SENTINEL, LabelTree

DEFAULT_TOL = 1e-4
DEFAULT_MAX_ITER = 100


@dataclass(frozen=True)
class ClusterSplit:
    left: list[int]
    right: list[int]


def _as_csr(points) -> sp.csr_matrix:
    if sp.issparse(points):
        m = sp.csr_matrix(points, dtype=np.float64)
        m.sort_indices()
        return m
    points = list(points)
    indptr = np.zeros(len(points) + 1, np.int64)
    np.cumsum([v.nnz for v in points], out=indptr[1:])
    if points:
        indices = np.concatenate([v.indices for v in points])
        data = np.concatenate([v.values for v in points])
    else:
        indices, data = np.empty(0, np.int64), np.empty(0)
    dim = int(indices.max()) + 1 if indices.size else 1
    return sp.csr_matrix((data, indices, indptr), shape=(len(points), dim))


def _expand_ranges(starts: np.ndarray, counts: np.ndarray) -> np.ndarray:
    total = int(counts.sum())
    if total == 0:
        return np.empty(0, np.int64)
    offs = np.repeat(starts - np.concatenate([[0], np.cumsum(counts)[:-1]]), counts)
    return offs + np.arange(total)


class _GroupState:
    """Entries of the nonzero rows of the still-active groups, laid out group by group."""

    def __init__(self, X, rows, group, D):
        self.rows = rows
        self.g = group[rows]
        cnt = np.diff(X.indptr)[rows]
        e_idx = _expand_ranges(X.indptr[rows], cnt)
        self.e_row = np.repeat(np.arange(rows.size), cnt)
        self.e_val = X.data[e_idx]
        key = self.g[self.e_row] * D + X.indices[e_idx]
        self.uniq, self.inv = np.unique(key, return_inverse=True)
        self.u_grp = self.uniq // D
        self._blocks = None

    def blocks(self, G: int):
        """Per-group ``(group, row slice, u slice, csr, column sums)``; rows and entries are group-contiguous."""
        if self._blocks is None:
            r_cut = np.searchsorted(self.g, np.arange(G + 1))
            u_cut = np.searchsorted(self.u_grp, np.arange(G + 1))
            e_cut = np.searchsorted(self.e_row, r_cut)
            out = []
            for g in np.flatnonzero(np.diff(r_cut)):
                r0, r1, u0, u1, e0, e1 = r_cut[g], r_cut[g + 1], u_cut[g], u_cut[g + 1], e_cut[g], e_cut[g + 1]
                indptr = np.searchsorted(self.e_row[e0:e1], np.arange(r0, r1 + 1))
                m = sp.csr_matrix(
                    (self.e_val[e0:e1], self.inv[e0:e1] - u0, indptr), shape=(r1 - r0, u1 - u0)
                )
                out.append((int(g), slice(r0, r1), slice(u0, u1), m, m.T @ np.ones(r1 - r0)))
            self._blocks = out
        return self._blocks

    def keep(self, act: np.ndarray, cent_a, cent_b):
        r_keep = act[self.g]
        e_keep = r_keep[self.e_row]
        u_keep = act[self.u_grp]
        r_new = np.cumsum(r_keep) - 1
        u_new = np.cumsum(u_keep) - 1
        self.rows = self.rows[r_keep]
        self.g = self.g[r_keep]
        self.e_row = r_new[self.e_row[e_keep]]
        self.e_val = self.e_val[e_keep]
        self.inv = u_new[self.inv[e_keep]]
        self.uniq = self.uniq[u_keep]
        self.u_grp = self.u_grp[u_keep]
        self._blocks = None
        return cent_a[u_keep], cent_b[u_keep]


def _top_half(margin: np.ndarray, k: int) -> np.ndarray:
    """Mask of the ``k`` largest margins; equal margins resolved toward lower positions."""
    n = margin.size
    out = np.zeros(n, dtype=bool)
    if k <= 0:
        return out
    if k >= n:
        out[:] = True
        return out
    t = np.partition(margin, n - k)[n - k]
    out = margin > t
    need = k - int(out.sum())
    out[np.flatnonzero(margin == t)[:need]] = True
    return out


# below this many live groups the per-group sparse-product path beats one global sort
_BLOCKWISE_GROUPS = 64


def split_groups(
    X: sp.csr_matrix,
    group: np.ndarray,
    ids: np.ndarray,
    rng: np.random.Generator,
    max_iter: int = DEFAULT_MAX_ITER,
    tol: float = DEFAULT_TOL,
) -> np.ndarray:
    """Balanced 2-way split of every group at once; returns a bool "goes left" mask.

    ``group[i]`` is the group of row ``i`` (ids ``0..G-1``), ``ids`` the
    tie-break key (label id). One seed per group is drawn from ``rng``; the
    other is the row least similar to it. Within a group, rows with a nonzero vector are
    ranked by ``sim(left centroid) - sim(right centroid)`` (ties by id) and the
    first ``ceil(n/2)`` go left. A group stops iterating once neither
    centroid moves by ``tol`` or more. Rows with an empty vector are dealt
    out afterwards, each to the currently smaller side (left on equal sizes).
    """
    n = X.shape[0]
    G = int(group.max()) + 1 if n else 0
    D = X.shape[1]
    nz = np.diff(X.indptr) > 0
    n1 = np.bincount(group[nz], minlength=G)
    half = (n1 + 1) // 2
    gstart = np.concatenate([[0], np.cumsum(n1)])[:-1]
    left = np.zeros(n, dtype=bool)

    nz_rows = np.flatnonzero(nz)
    by_id = nz_rows[np.lexsort((ids[nz_rows], group[nz_rows]))]

    act = n1 >= 2
    if act.any():
        u1 = rng.random(G)
        r1 = np.minimum((u1 * n1).astype(np.int64), np.maximum(n1 - 1, 0))
        st = _GroupState(X, by_id[act[group[by_id]]], group, D)
        first = np.searchsorted(st.g, np.arange(G))
        seed_a = np.where(act, first + r1, -1)
        g_e = st.g[st.e_row]
        U = st.uniq.size
        cent_a = np.bincount(st.inv, weights=st.e_val * (st.e_row == seed_a[g_e]), minlength=U)
        # second seed: the row least similar to the first (earliest on ties)
        nr = st.rows.size
        sim = np.bincount(st.e_row, weights=st.e_val * cent_a[st.inv], minlength=nr)
        sim[seed_a[act]] = np.inf
        by_sim = np.lexsort((np.arange(nr), sim, st.g))
        pos = np.minimum(np.searchsorted(st.g[by_sim], np.arange(G)), nr - 1)
        seed_b = np.where(act, by_sim[pos], -1)
        cent_b = np.bincount(st.inv, weights=st.e_val * (st.e_row == seed_b[g_e]), minlength=U)
        n_left = np.maximum(half, 1).astype(np.float64)
        n_right = np.maximum(n1 - half, 1).astype(np.float64)
        live = int(st.rows.size)
        for _ in range(max_iter):
            nr, U = st.rows.size, st.uniq.size
            diff = cent_a - cent_b
            if int(np.sum(act)) <= _BLOCKWISE_GROUPS:
                lft = np.zeros(nr, dtype=bool)
                new_a = cent_a.copy()
                new_b = cent_b.copy()
                for g, rs, us, m, tot in st.blocks(G):
                    if not act[g]:
                        continue
                    sel = _top_half(m @ diff[us], int(half[g]))
                    lft[rs] = sel
                    part = m.T @ sel.astype(np.float64)
                    new_a[us] = part / n_left[g]
                    new_b[us] = (tot - part) / n_right[g]
            else:
                margin = np.bincount(st.e_row, weights=st.e_val * diff[st.inv], minlength=nr)
                # rows are in (group, id) order, so the stable sort breaks ties by id
                order = np.lexsort((-margin, st.g))
                og = st.g[order]
                first = np.searchsorted(st.g, np.arange(G))
                lft = np.empty(nr, dtype=bool)
                lft[order] = (np.arange(nr) - first[og]) < half[og]
                w = lft[st.e_row]
                new_a = np.bincount(st.inv, weights=st.e_val * w, minlength=U) / n_left[st.u_grp]
                new_b = np.bincount(st.inv, weights=st.e_val * ~w, minlength=U) / n_right[st.u_grp]
            row_act = act[st.g]
            left[st.rows[row_act]] = lft[row_act]
            move = np.maximum(
                np.bincount(st.u_grp, weights=(new_a - cent_a) ** 2, minlength=G),
                np.bincount(st.u_grp, weights=(new_b - cent_b) ** 2, minlength=G),
            )
            u_act = act[st.u_grp]
            cent_a = np.where(u_act, new_a, cent_a)
            cent_b = np.where(u_act, new_b, cent_b)
            act &= np.sqrt(move) >= tol
            if not act.any():
                break
            remaining = int(np.sum(n1[act]))
            if remaining < live // 2:
                cent_a, cent_b = st.keep(act, cent_a, cent_b)
                live = remaining

    single = np.flatnonzero(n1 == 1)
    left[by_id[gstart[single]]] = True

    zero_rows = np.flatnonzero(~nz)
    if zero_rows.size:
        zr = zero_rows[np.lexsort((ids[zero_rows], group[zero_rows]))]
        zg = group[zr]
        k = np.arange(zr.size) - np.searchsorted(zg, zg, side="left")
        left[zr] = (k + n1[zg]) % 2 == 0
    return left


def balanced_two_means(
    points: Sequence[tuple[int, SparseVector]],
    seed: int = 0,
    max_iter: int = DEFAULT_MAX_ITER,
    tol: float = DEFAULT_TOL,
) -> ClusterSplit:
    """Split labelled points into two halves whose sizes differ by at most one."""
    if len(points) < 2:
        raise ValueError("balanced_two_means needs at least 2 points")
    ids = np.array([p[0] for p in points], np.int64)
    X = _as_csr([p[1] for p in points])
    go_left = split_groups(
        X, np.zeros(len(points), np.int64), ids, np.random.default_rng(seed), max_iter, tol
    )
    return ClusterSplit(sorted(ids[go_left].tolist()), sorted(ids[~go_left].tolist()))


def deep_tree_depth(L: int, M: int) -> int:
    """Number of halvings until the largest cluster holds at most ``M`` labels."""
    d = 0
    while -(-L // (1 << d)) > M:
        d += 1
    return d


def build_deep_tree(label_reps, M: int, seed: int = 0, max_iter: int = DEFAULT_MAX_ITER, tol: float = DEFAULT_TOL) -> LabelTree:
    """Recursive balanced bisection of the labels into a binary tree.

    Every cluster at the same depth is split in one pass until the largest
    holds at most ``M`` labels, so all leaf parents share one depth. The
    labels hang as leaves under their final cluster. ``label_reps`` is a
    list of :class:`SparseVector` or an ``L x D`` sparse matrix.
    """
    if M < 1:
        raise ValueError("M must be >= 1")
    X = _as_csr(label_reps)
    L = X.shape[0]
    if L < 1:
        raise ValueError("need at least one label")
    depth = deep_tree_depth(L, M)
    ids = np.arange(L, dtype=np.int64)

    # cluster node of each label at the current depth; nodes numbered per depth
    group = np.zeros(L, np.int64)
    parents_per_depth = [np.array([ROOT_SENTINEL])]
    for d in range(depth):
        G = int(group.max()) + 1
        go_left = split_groups(X, group, ids, np.random.default_rng([seed, d]), max_iter, tol)
        sizes_left = np.bincount(group[go_left], minlength=G)
        sizes_right = np.bincount(group[~go_left], minlength=G)
        # children of group g: 2g (left) and 2g+1 (right), compacted to drop empty sides
        child = 2 * group + (~go_left)
        present = np.zeros(2 * G, bool)
        present[0::2] = sizes_left > 0
        present[1::2] = sizes_right > 0
        remap = np.cumsum(present) - 1
        parents_per_depth.append((np.flatnonzero(present) // 2).astype(np.int64))
        group = remap[child]

    offsets = np.cumsum([0] + [p.size for p in parents_per_depth])
    parent = [np.array([ROOT_SENTINEL])]
    for d in range(1, depth + 1):
        parent.append(parents_per_depth[d] + offsets[d - 1])
    n_internal = offsets[-1]

    order = np.lexsort((ids, group))
    leaf_parent = group[order] + offsets[depth]
    parent.append(leaf_parent)
    parent = np.concatenate(parent)
    leaf_label = np.concatenate([np.full(n_internal, -1, np.int64), order])
    return LabelTree(parent, leaf_label, H=depth, K=2)
