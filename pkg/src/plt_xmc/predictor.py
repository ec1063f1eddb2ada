"""Beam search over a label tree, chain-rule marginals and ensembling."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .model import ScorerParams
from .trainer import model_tokens, score_candidates
from .tree import LabelTree

# score_fn(level, candidate lists) -> conditional probabilities per sample
ScoreFn = Callable[[int, Sequence[np.ndarray]], Sequence[np.ndarray]]


@dataclass(frozen=True, eq=False)
class RankedPrediction:
    """Top labels of one sample, best first."""

    labels: np.ndarray
    scores: np.ndarray

    def pairs(self) -> list[tuple[int, float]]:
        return list(zip(self.labels.tolist(), self.scores.tolist()))

    def __len__(self) -> int:
        return int(self.labels.size)

    def __eq__(self, other) -> bool:
        if not isinstance(other, RankedPrediction):
            return NotImplemented
        return np.array_equal(self.labels, other.labels) and np.array_equal(self.scores, other.scores)


def marginal(path_conditionals: Sequence[float]) -> float:
    """Product of conditionals from the root's child down to the node."""
    m = 1.0
    for p in path_conditionals:
        m = p * m
    return m


def rank_top_k(labels: np.ndarray, scores: np.ndarray, k: int) -> RankedPrediction:
    """Sort by score descending, ties by label id ascending, keep ``k``."""
    order = np.lexsort((labels, -scores))[:k]
    return RankedPrediction(np.asarray(labels)[order].astype(np.int64), np.asarray(scores, np.float64)[order])


def beam_search_batch(score_fn: ScoreFn, tree: LabelTree, n: int, C: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Level-wise beam search for ``n`` samples at once.

    Every node's marginal is its conditional times its parent's stored
    marginal. Returns, per sample, the scored final-level leaves as
    ``(labels, marginals)``.
    """
    if C < 1:
        raise ValueError("C must be >= 1")
    root_kids = tree.children[tree.root]
    cands = [root_kids] * n
    parent_m = [np.ones(root_kids.size)] * n
    depth = tree.H + 1
    for d in range(1, depth + 1):
        cond = score_fn(d, cands)
        marg = [np.asarray(c, np.float64) * pm for c, pm in zip(cond, parent_m)]
        if d == depth:
            break
        new_c, new_m = [], []
        for i in range(n):
            keep = np.lexsort((cands[i], -marg[i]))[:C]
            kids = [tree.children[x] for x in cands[i][keep]]
            new_c.append(np.concatenate(kids))
            new_m.append(np.repeat(marg[i][keep], [k.size for k in kids]))
        cands, parent_m = new_c, new_m
    return [(tree.leaf_label[c], m) for c, m in zip(cands, marg)]


def model_score_fn(models: Sequence[ScorerParams], tokens: Sequence[np.ndarray], batch_size: int = 256) -> ScoreFn:
    def score(level: int, cands):
        return score_candidates(models[level - 1], tokens, cands, batch_size)

    return score


def predict(
    token_seqs,
    tree: LabelTree,
    models: Sequence[ScorerParams],
    C: int,
    k: int,
    batch_size: int = 256,
    return_leaves: bool = False,
):
    """Beam-search predictions for many documents (a Dataset or token sequences)."""
    if len(models) != tree.H + 1:
        raise ValueError(f"tree has {tree.H + 1} levels but {len(models)} models were given")
    tokens = model_tokens(token_seqs)
    leaves = beam_search_batch(model_score_fn(models, tokens, batch_size), tree, len(tokens), C)
    ranked = [rank_top_k(lab, m, k) for lab, m in leaves]
    return (ranked, leaves) if return_leaves else ranked


def beam_search(tokens, tree: LabelTree, models: Sequence[ScorerParams], C: int, k: int) -> RankedPrediction:
    return predict([tokens], tree, models, C, k)[0]


def combine_members(member_leaves: Sequence[Sequence[tuple[np.ndarray, np.ndarray]]], k: int) -> list[RankedPrediction]:
    """Average each label's marginal over members (a label a member did not reach counts as 0)."""
    n_members = len(member_leaves)
    if n_members == 0:
        raise ValueError("need at least one ensemble member")
    out = []
    for per_sample in zip(*member_leaves):
        uniq = np.unique(np.concatenate([lab for lab, _ in per_sample]))
        total = np.zeros(uniq.size)
        for lab, m in per_sample:
            total[np.searchsorted(uniq, lab)] += m
        out.append(rank_top_k(uniq, total / n_members, k))
    return out


def ensemble_predict(
    token_seqs,
    members: Sequence[tuple[LabelTree, Sequence[ScorerParams]]],
    C: int,
    k: int,
    batch_size: int = 256,
) -> list[RankedPrediction]:
    leaves = [predict(token_seqs, t, ms, C, k, batch_size, return_leaves=True)[1] for t, ms in members]
    return combine_members(leaves, k)


def write_predictions(preds: Sequence[RankedPrediction], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in preds:
            fh.write(" ".join(f"{j}:{s:.6g}" for j, s in p.pairs()) + "\n")


def read_predictions(path) -> list[RankedPrediction]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            pairs = [tok.split(":") for tok in line.split()]
            out.append(
                RankedPrediction(
                    np.array([int(a) for a, _ in pairs], np.int64),
                    np.array([float(b) for _, b in pairs], np.float64),
                )
            )
    return out
