"""The seeded synthetic benchmark: PLT members, their ensemble and a flat baseline."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

from .core import label_representations
from .ingest import SynthSpec, generate_synthetic, split_dataset
from .metrics import PropensityModel, compute_propensities, evaluate, report
from .model import ModelConfig
from .predictor import combine_members, predict
from .trainer import LevelTrainConfig, train_all_levels
from .tree import TreeParams, build_plt, flat_tree


@dataclass
class BenchmarkConfig:
    spec: SynthSpec = field(default_factory=SynthSpec)
    num_test: int = 1000
    M: int = 8
    c: int = 3
    H: int = 1
    members: int = 3
    embed_dim: int = 64
    hidden: int = 64
    fc_sizes: tuple[int, ...] = (64,)
    epochs: int = 15
    batch_size: int = 64
    lr: float = 1e-2
    C: int = 4
    k: int = 5
    flat: bool = True


@dataclass
class BenchmarkResult:
    members: list[dict]  # per member: metrics, level sizes, max candidates, seconds
    ensemble: dict
    flat: dict | None
    candidate_bound_ok: bool
    seconds: float


def run_benchmark(cfg: BenchmarkConfig | None = None, log=None) -> BenchmarkResult:
    """Train ``cfg.members`` PLTs with distinct clustering seeds and (optionally) the flat model."""
    cfg = cfg or BenchmarkConfig()
    t_start = time.perf_counter()
    train, test = split_dataset(generate_synthetic(cfg.spec), cfg.num_test)
    truths = [s.labels for s in test.samples]
    prop = compute_propensities(train.label_counts(), len(train))
    mc = ModelConfig(vocab_size=train.vocab_size, embed_dim=cfg.embed_dim, hidden=cfg.hidden, fc_sizes=cfg.fc_sizes)
    lcfg = LevelTrainConfig(epochs=cfg.epochs, batch_size=cfg.batch_size, C=cfg.C, lr=cfg.lr)
    reps = label_representations(train)
    members, leaves, bound_ok = [], [], True
    for m in range(cfg.members):
        t0 = time.perf_counter()
        tree = build_plt(reps, TreeParams(M=cfg.M, c=cfg.c, H=cfg.H, seed=m))
        res = train_all_levels(train, tree, mc, LevelTrainConfig(**{**lcfg.__dict__, "seed": m}), seed=m, log=log)
        bound_ok &= res.candidate_bound_ok
        preds, lv = predict(test, tree, res.models, cfg.C, cfg.k, return_leaves=True)
        leaves.append(lv)
        members.append(
            {
                "metrics": report(evaluate(preds, truths, prop)),
                "level_sizes": tree.level_sizes(),
                "K": tree.K,
                "max_candidates": res.max_candidates,
                "seconds": time.perf_counter() - t0,
            }
        )
    ensemble = report(evaluate(combine_members(leaves, cfg.k), truths, prop))
    flat = None
    if cfg.flat:
        t0 = time.perf_counter()
        ft = flat_tree(train.num_labels)
        res = train_all_levels(train, ft, mc, lcfg, log=log)
        flat = {
            "metrics": report(evaluate(predict(test, ft, res.models, cfg.C, cfg.k), truths, prop)),
            "seconds": time.perf_counter() - t0,
        }
    return BenchmarkResult(members, ensemble, flat, bound_ok, time.perf_counter() - t_start)


def uniform_report(preds, truths, L: int) -> dict:
    return report(evaluate(preds, truths, PropensityModel.uniform(L)))
