"""Level-wise training over a label tree.

Level 1 sees every child of the root. For deeper levels, each sample keeps
the top ``C`` nodes of its previous candidate set, ranked positives first
and then by chain-rule marginal under the already trained previous model,
and the children of those nodes become its candidates.
"""

from __future__ import annotations

import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .core import Dataset, TokenSequence
from .ingest import UNK_ID
from .model import (
    ModelConfig,
    OptimizerState,
    ScorerParams,
    SWAState,
    dropout_mask,
    adam_step,
    backward,
    forward_batch,
    init_from_previous_level,
    init_params,
    logit_bce,
    pad_candidates,
    pad_tokens,
    swa_params,
    swa_update,
)
from .tree import LabelTree, assign_node_labels, level_nodes

LogFn = Callable[[dict], None]


@dataclass
class LevelTrainConfig:
    epochs: int = 10
    batch_size: int = 64
    C: int = 4
    lr: float = 1e-3
    swa_start: int | None = None  # 0-based epoch; default epochs // 2
    seed: int = 0
    workers: int = 1  # batch shards whose gradients are computed concurrently

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.C < 1 or self.workers < 1 or self.lr < 0:
            raise ValueError("epochs, batch_size, C, workers must be positive and lr >= 0")
        if self.swa_start is None:
            self.swa_start = self.epochs // 2
        if not 0 <= self.swa_start < self.epochs:
            raise ValueError("swa_start must lie in [0, epochs)")


def jsonl_logger(stream=None) -> LogFn:
    stream = stream or sys.stdout

    def log(rec: dict) -> None:
        stream.write(json.dumps(rec, sort_keys=True) + "\n")
        stream.flush()

    return log


def model_tokens(data) -> list[np.ndarray]:
    """Token ids ready for the encoder, from a Dataset, TokenSequences or id lists.

    An empty document becomes a single unknown token.
    """
    seqs = [s.tokens for s in data.samples] if isinstance(data, Dataset) else list(data)
    ids = [np.asarray(s.ids if isinstance(s, TokenSequence) else s, np.int64) for s in seqs]
    return [a if a.size else np.array([UNK_ID], np.int64) for a in ids]


def select_candidates(
    level_nodes_prev: np.ndarray,
    z_prev: np.ndarray,
    scores_prev: np.ndarray,
    C: int,
    tree: LabelTree,
) -> np.ndarray:
    """Children of the top ``C`` previous nodes by (positive first, score desc, id asc)."""
    nodes = np.asarray(level_nodes_prev, np.int64)
    order = np.lexsort((nodes, -np.asarray(scores_prev, np.float64), -np.asarray(z_prev, np.int64)))
    top = nodes[order[:C]]
    if top.size == 0:
        return np.empty(0, np.int64)
    return np.concatenate([tree.children[n] for n in top])


def _select_with_marginals(cands, z, marg, C, tree):
    order = np.lexsort((cands, -marg, -z.astype(np.int64)))[:C]
    top, top_m = cands[order], marg[order]
    kids = [tree.children[n] for n in top]
    return np.concatenate(kids), np.repeat(top_m, [k.size for k in kids])


def score_candidates(
    params: ScorerParams,
    tokens: Sequence[np.ndarray],
    candidates: Sequence[np.ndarray],
    batch_size: int = 256,
) -> list[np.ndarray]:
    """Eval-mode conditional probabilities (float64) per sample for its candidate list."""
    out: list[np.ndarray] = []
    for s in range(0, len(tokens), batch_size):
        ids, tmask = pad_tokens(tokens[s : s + batch_size])
        cands, cmask = pad_candidates(candidates[s : s + batch_size])
        tr = forward_batch(params, ids, tmask, cands, cmask, "eval")
        probs = tr.probs.astype(np.float64)
        out.extend(probs[i, : len(c)] for i, c in enumerate(candidates[s : s + batch_size]))
    return out


def _batch_masks(params: ScorerParams, ids: np.ndarray, rng: np.random.Generator):
    cfg = params.config
    B, T = ids.shape
    emb = dropout_mask(rng, (B, T, cfg.embed_dim), cfg.emb_dropout, params.dtype)
    enc = dropout_mask(rng, (B, T, cfg.state_dim), cfg.enc_dropout, params.dtype)
    return emb, enc


def _shard_gradients(params, ids, tmask, cands, cmask, y, masks, pool, workers):
    """Gradients of the batch-mean loss, summed over row shards computed concurrently."""
    nv = max(int(cmask.sum()), 1)
    bounds = np.linspace(0, ids.shape[0], min(workers, ids.shape[0]) + 1).astype(int)

    def run(lo, hi):
        sl = slice(lo, hi)
        sm = tuple(None if m is None else m[sl] for m in masks)
        tr = forward_batch(params, ids[sl], tmask[sl], cands[sl], cmask[sl], "train", masks=sm)
        w = int(cmask[sl].sum()) / nv
        return logit_bce(tr, y[sl]) * w, {k: v * w for k, v in backward(tr, y[sl], params).items()}

    parts = list(pool.map(lambda b: run(*b), zip(bounds[:-1], bounds[1:])))
    grads = {k: sum(p[1][k] for p in parts) for k in parts[0][1]}
    return sum(p[0] for p in parts), grads


def train_level(
    tokens: Sequence[np.ndarray],
    candidates: Sequence[np.ndarray],
    targets: Sequence[np.ndarray],
    params: ScorerParams,
    cfg: LevelTrainConfig,
    log: LogFn | None = None,
) -> ScorerParams:
    """Adam over ``cfg.epochs`` epochs; returns the average of the snapshots taken
    at the end of each epoch from ``cfg.swa_start`` on."""
    params = params.copy()
    rng = np.random.default_rng([cfg.seed, params.level])
    opt = OptimizerState.for_params(params, lr=cfg.lr)
    swa = SWAState()
    n = len(tokens)
    pool = ThreadPoolExecutor(cfg.workers) if cfg.workers > 1 else None
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        perm = rng.permutation(n)
        total, count = 0.0, 0
        for s in range(0, n, cfg.batch_size):
            idx = perm[s : s + cfg.batch_size]
            ids, tmask = pad_tokens([tokens[i] for i in idx])
            cands, cmask = pad_candidates([candidates[i] for i in idx])
            y = np.zeros(cands.shape, params.dtype)
            for r, i in enumerate(idx):
                y[r, : targets[i].size] = targets[i]
            masks = _batch_masks(params, ids, rng)
            nv = int(cmask.sum())
            if pool is None:
                tr = forward_batch(params, ids, tmask, cands, cmask, "train", masks=masks)
                loss, grads = logit_bce(tr, y), backward(tr, y, params)
            else:
                loss, grads = _shard_gradients(params, ids, tmask, cands, cmask, y, masks, pool, cfg.workers)
            total += loss * nv
            count += nv
            adam_step(params, grads, opt)
        if epoch >= cfg.swa_start:
            swa_update(swa, params)
        if log is not None:
            log(
                {
                    "epoch": epoch + 1,
                    "level": params.level,
                    "loss": total / max(count, 1),
                    "wall_time": time.perf_counter() - t0,
                }
            )
    if pool is not None:
        pool.shutdown()
    return swa_params(swa, params)


@dataclass
class TrainResult:
    models: list[ScorerParams]
    max_candidates: list[int] = field(default_factory=list)  # per level
    candidate_bound_ok: bool = True


def train_all_levels(
    data: Dataset,
    tree: LabelTree,
    model_config: ModelConfig,
    cfgs: LevelTrainConfig | Sequence[LevelTrainConfig],
    seed: int = 0,
    log: LogFn | None = None,
    check_bound: bool = True,
) -> TrainResult:
    """Train one scorer per level, top-down, warm-starting all shared layers.

    With ``check_bound`` every deeper-level candidate set is asserted to have
    at most ``C * K`` entries.
    """
    depth = tree.H + 1
    if isinstance(cfgs, LevelTrainConfig):
        cfgs = [cfgs] * depth
    if len(cfgs) != depth:
        raise ValueError(f"need {depth} level configs, got {len(cfgs)}")
    if data.num_labels != tree.L:
        raise ValueError(f"dataset has L={data.num_labels} but tree has L={tree.L}")
    tokens = model_tokens(data)
    positives = [assign_node_labels(tree, s.labels) for s in data.samples]
    root_kids = tree.children[tree.root]
    cands = [root_kids] * len(tokens)
    parent_marg = [np.ones(root_kids.size)] * len(tokens)
    models: list[ScorerParams] = []
    result = TrainResult(models)
    for d in range(1, depth + 1):
        cfg = cfgs[d - 1]
        nodes = level_nodes(tree, d)
        if d == 1:
            init = init_params(model_config, nodes.size, seed=seed, level=1, node_offset=int(nodes[0]))
        else:
            prev = models[-1]
            scores = score_candidates(prev, tokens, cands)
            new_c, new_m = [], []
            C = cfg.C
            for i in range(len(tokens)):
                z = np.isin(cands[i], positives[i])
                c, m = _select_with_marginals(cands[i], z, scores[i] * parent_marg[i], C, tree)
                new_c.append(c)
                new_m.append(m)
            cands, parent_marg = new_c, new_m
            bound = C * tree.K
            worst = max(c.size for c in cands)
            if worst > bound:
                result.candidate_bound_ok = False
                if check_bound:
                    raise AssertionError(f"level {d}: candidate set of {worst} exceeds C*K={bound}")
            init = init_from_previous_level(prev, nodes.size, seed=seed + d, node_offset=int(nodes[0]))
        result.max_candidates.append(max(c.size for c in cands))
        targets = [np.isin(c, p).astype(np.float32) for c, p in zip(cands, positives)]
        models.append(train_level(tokens, cands, targets, init, cfg, log))
    return result
