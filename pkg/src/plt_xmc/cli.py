"""``plt-xmc`` command line: build-tree, train, predict, evaluate, synth, sweep.

Exit codes: 0 success, 1 runtime failure, 2 usage, config or missing-input error.

Directory layout under the configured paths::

    <tree>/tree-<i>.plt                  one tree per ensemble member
    <model>/member<i>/level<d>.axm       one scorer per level per member
    <output>/predictions.txt, metrics.json, attention.json, sweep-<axis>.tsv
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from . import config as C
from .core import Dataset, label_representations
from .ingest import (
    ParseError,
    SynthSpec,
    Vocabulary,
    ensure_dir,
    generate_synthetic,
    parse_sparse_dataset,
    parse_text_dataset,
    split_dataset,
    synthetic_vocabulary,
    write_text_dataset,
)
from .metrics import REPORT_KEYS, PropensityModel, compute_propensities, evaluate, report, write_report
from .model import ModelConfig, forward, load_model, save_model
from .predictor import combine_members, predict, read_predictions, write_predictions
from .trainer import LevelTrainConfig, jsonl_logger, train_all_levels
from .tree import LabelTree, TreeParams, build_plt, flat_tree, load_tree, save_tree

log = logging.getLogger("plt_xmc")


# ---------------------------------------------------------------------------
# data access
# ---------------------------------------------------------------------------


def _require(path: Path, what: str) -> Path:
    if not path.is_file():
        raise FileNotFoundError(f"{what} not found: {path}")
    return path


def load_vocab(cfg: C.RunConfig) -> Vocabulary:
    """The configured vocabulary; built from the training texts and saved when absent."""
    vp = cfg.path("vocab")
    if vp.is_file():
        return Vocabulary.load(vp)
    docs = [line.split() for line in _require(cfg.path("train"), "training texts").read_text(encoding="utf-8").splitlines()]
    vocab = Vocabulary.build(docs, cfg.model.max_vocab)
    ensure_dir(vp.parent)
    vocab.save(vp)
    return vocab


def _text_num_labels(cfg: C.RunConfig) -> int:
    """Label-space size of a text corpus: one past the largest id in either label file."""
    top = -1
    for name in ("train_labels", "test_labels"):
        p = cfg.path(name)
        if getattr(cfg.paths, name) and p.is_file():
            for line in p.read_text(encoding="utf-8").splitlines():
                ids = [int(t) for t in line.replace(" ", ",").split(",") if t.strip().lstrip("-").isdigit()]
                top = max([top, *ids])
    return top + 1


def load_split(cfg: C.RunConfig, split: str) -> Dataset:
    path = _require(cfg.path(split), f"{split} data")
    if cfg.paths.format == "sparse":
        return parse_sparse_dataset(path)
    labels = _require(cfg.path(f"{split}_labels"), f"{split} labels")
    data, _ = parse_text_dataset(path, labels, load_vocab(cfg), cfg.model.max_len, _text_num_labels(cfg))
    return data


def load_train_test(cfg: C.RunConfig) -> tuple[Dataset, Dataset]:
    train, test = load_split(cfg, "train"), load_split(cfg, "test")
    if test.num_labels != train.num_labels:
        raise ValueError(f"train has L={train.num_labels} but test has L={test.num_labels}")
    return train, test


def random_label_vectors(L: int, dim: int, seed: int, nnz: int = 8) -> sp.csr_matrix:
    """Random sparse unit-free label vectors for shape experiments without data."""
    rng = np.random.default_rng(seed)
    nnz = min(nnz, dim)
    ind = np.sort(rng.choice(dim, (L, nnz), replace=True), axis=1)
    X = sp.csr_matrix((rng.random(L * nnz), ind.ravel(), np.arange(L + 1) * nnz), shape=(L, dim))
    X.sum_duplicates()
    return X


def tree_path(cfg: C.RunConfig, member: int) -> Path:
    return cfg.path("tree") / f"tree-{member}.plt"


def member_dir(cfg: C.RunConfig, member: int) -> Path:
    return cfg.path("model") / f"member{member}"


def model_config(cfg: C.RunConfig, vocab_size: int) -> ModelConfig:
    m = cfg.model
    return ModelConfig(
        vocab_size=vocab_size,
        embed_dim=m.embed_dim,
        hidden=m.hidden,
        fc_sizes=C.fc_sizes(cfg),
        encoder=m.encoder,
        emb_dropout=m.emb_dropout,
        enc_dropout=m.enc_dropout,
    )


def level_config(cfg: C.RunConfig, member: int, workers: int) -> LevelTrainConfig:
    t = cfg.train
    return LevelTrainConfig(
        epochs=t.epochs,
        batch_size=t.batch_size,
        C=t.C,
        lr=t.lr,
        swa_start=None if t.swa_start < 0 else t.swa_start,
        seed=t.seed + member,
        workers=workers,
    )


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_synth(cfg: C.RunConfig, args) -> int:
    d = cfg.data
    spec = SynthSpec(
        num_labels=d.num_labels,
        num_clusters=d.num_clusters,
        samples_per_cluster=d.samples_per_cluster,
        vocab_size=d.vocab_size,
        tail_skew=d.tail_skew,
        seed=d.seed,
    )
    data = generate_synthetic(spec)
    if not 0 < d.num_test < len(data):
        raise C.ConfigError("data.num_test must lie strictly between 0 and the sample count")
    train, test = split_dataset(data, d.num_test)
    vocab = synthetic_vocabulary(spec.vocab_size)
    for name in ("train", "train_labels", "test", "test_labels", "vocab"):
        if not getattr(cfg.paths, name):
            raise C.ConfigError(f"paths.{name} must be set for synth")
        ensure_dir(cfg.path(name).parent)
    write_text_dataset(train, vocab, cfg.path("train"), cfg.path("train_labels"))
    write_text_dataset(test, vocab, cfg.path("test"), cfg.path("test_labels"))
    vocab.save(cfg.path("vocab"))
    print(f"train {len(train)} test {len(test)} labels {data.num_labels} vocab {len(vocab)}")
    return 0


def build_trees(cfg: C.RunConfig, n_members: int, train: Dataset | None = None) -> list[LabelTree]:
    t = cfg.tree
    if t.random_labels > 0:
        reps = random_label_vectors(t.random_labels, t.random_dim, t.seed)
    elif not t.flat:
        reps = label_representations(train if train is not None else load_split(cfg, "train"))
    trees = []
    for i in range(n_members):
        if t.flat:
            L = t.random_labels or (train if train is not None else load_split(cfg, "train")).num_labels
            trees.append(flat_tree(L))
        else:
            trees.append(build_plt(reps, TreeParams(M=t.M, c=t.c, H=t.H, seed=t.seed + i)))
    return trees


def cmd_build_tree(cfg: C.RunConfig, args) -> int:
    n = cfg.predict.ensemble
    ensure_dir(cfg.path("tree"))
    for i, tree in enumerate(build_trees(cfg, n)):
        save_tree(tree, tree_path(cfg, i))
        if tree.H != cfg.tree.H and not cfg.tree.flat:
            log.warning("tree %d: requested H=%d but the label space supports only H=%d", i, cfg.tree.H, tree.H)
        print(" ".join(str(s) for s in tree.level_sizes()))
    return 0


def train_members(cfg: C.RunConfig, train: Dataset, workers: int, logfn=None) -> None:
    mc = model_config(cfg, train.vocab_size or train.num_features)
    for i in range(cfg.predict.ensemble):
        tree = load_tree(_require(tree_path(cfg, i), f"tree for member {i}"))
        if tree.L != train.num_labels:
            raise ValueError(f"tree-{i} has L={tree.L} but the training data has L={train.num_labels}")
        lcfg = level_config(cfg, i, workers)
        res = train_all_levels(train, tree, mc, lcfg, seed=cfg.train.seed + i, log=logfn)
        out = member_dir(cfg, i)
        ensure_dir(out)
        for stale in out.glob("level*.axm"):
            stale.unlink()
        for m in res.models:
            m.meta = {"member": i, "clustering_seed": cfg.tree.seed + i, "train_seed": lcfg.seed, "tree_H": tree.H}
            save_model(m, out / f"level{m.level}.axm")
        log.info("member %d: max candidates per level %s", i, res.max_candidates)


def cmd_train(cfg: C.RunConfig, args) -> int:
    train = load_split(cfg, "train")
    if cfg.paths.format == "sparse":
        raise C.ConfigError("training needs token sequences; use paths.format = text")
    logfn = jsonl_logger(sys.stdout) if args.log == "jsonl" else None
    train_members(cfg, train, args.workers, logfn)
    return 0


def load_member(cfg: C.RunConfig, i: int):
    tree = load_tree(_require(tree_path(cfg, i), f"tree for member {i}"))
    models = [load_model(_require(member_dir(cfg, i) / f"level{d}.axm", "model file")) for d in range(1, tree.H + 2)]
    return tree, models


def run_predict(cfg: C.RunConfig, test: Dataset):
    p = cfg.predict
    members = [load_member(cfg, i) for i in range(p.ensemble)]
    L = members[0][0].L
    if p.k > L:
        raise ValueError(f"k={p.k} exceeds the number of labels L={L}")
    leaves = [predict(test, t, ms, p.C, p.k, p.batch_size, return_leaves=True)[1] for t, ms in members]
    return combine_members(leaves, p.k), members


def dump_attention(cfg: C.RunConfig, members, test: Dataset, spec: str, path: Path) -> None:
    try:
        sample, label = (int(x) for x in spec.split(":"))
    except ValueError:
        raise C.ConfigError("--dump-attention expects SAMPLE:LABEL") from None
    if not 0 <= sample < len(test):
        raise C.ConfigError(f"sample {sample} outside [0, {len(test)})")
    tree, models = members[0]
    if not 0 <= label < tree.L:
        raise C.ConfigError(f"label {label} outside [0, {tree.L})")
    node = int(tree.label_leaf[label])
    tokens = test.samples[sample].tokens
    probs, trace = forward(tokens, [node], models[-1], "eval")
    vocab = load_vocab(cfg) if cfg.paths.format == "text" else None
    words = [vocab.id_to_token[i] if vocab else str(i) for i in tokens.ids.tolist()]
    rec = {
        "sample": sample,
        "label": label,
        "node": node,
        "probability": float(probs[0]),
        "tokens": words,
        "alpha": [float(a) for a in trace.alpha[0, 0, : len(words)]],
    }
    path.write_text(json.dumps(rec, indent=1) + "\n", encoding="utf-8")


def cmd_predict(cfg: C.RunConfig, args) -> int:
    train, test = load_train_test(cfg)
    preds, members = run_predict(cfg, test)
    out = cfg.path("output")
    ensure_dir(out)
    write_predictions(preds, out / "predictions.txt")
    if args.dump_attention:
        dump_attention(cfg, members, test, args.dump_attention, out / "attention.json")
    metrics = evaluate_predictions(cfg, train, test, preds)
    write_report(metrics, out / "metrics.json")
    print(json.dumps(report(metrics), sort_keys=True))
    return 0


def evaluate_predictions(cfg: C.RunConfig, train: Dataset, test: Dataset, preds) -> dict:
    if len(preds) != len(test):
        raise ValueError(f"{len(preds)} predictions for {len(test)} test samples")
    if cfg.metrics.uniform_propensity:
        prop = PropensityModel.uniform(train.num_labels)
    else:
        prop = compute_propensities(train.label_counts(), len(train), cfg.metrics.A, cfg.metrics.B)
    return evaluate(preds, [s.labels for s in test.samples], prop)


def cmd_evaluate(cfg: C.RunConfig, args) -> int:
    train, test = load_train_test(cfg)
    out = cfg.path("output")
    preds = read_predictions(_require(out / "predictions.txt", "predictions file"))
    metrics = evaluate_predictions(cfg, train, test, preds)
    write_report(metrics, out / "metrics.json")
    print(json.dumps(report(metrics), sort_keys=True))
    return 0


def sweep_settings(cfg: C.RunConfig, axis: str, values: list[int]) -> list[dict]:
    """Per-value (H, c, K, C) settings; a K sweep keeps C*K at its configured product."""
    if not values:
        raise C.ConfigError("sweep needs at least one axis value")
    rows = []
    product = cfg.predict.C * cfg.tree.K
    for v in values:
        H, c, Cb = cfg.tree.H, cfg.tree.c, cfg.predict.C
        if axis == "H":
            H = v
        elif axis == "K":
            c = int(round(math.log2(v))) if v > 1 else 0
            if c < 1 or 2**c != v:
                raise C.ConfigError(f"K={v} is not a power of two >= 2")
            Cb = max(1, product // v)
        else:
            Cb = v
        if H < 1 or Cb < 1:
            raise C.ConfigError(f"invalid sweep value {v} for axis {axis}")
        rows.append({"H": H, "c": c, "K": 2**c, "C": Cb})
    return rows


def cmd_sweep(cfg: C.RunConfig, args) -> int:
    axis = args.axis or cfg.sweep.axis
    raw = args.values if args.values is not None else cfg.sweep.values
    try:
        values = [int(v) for v in str(raw).split(",") if v.strip()]
    except ValueError:
        raise C.ConfigError(f"sweep values must be integers: {raw!r}") from None
    if axis not in ("H", "K", "C"):
        raise C.ConfigError("sweep axis must be H, K or C")
    settings = sweep_settings(cfg, axis, values)
    train, test = load_train_test(cfg)
    out = cfg.path("output")
    ensure_dir(out)
    rows = []
    for s in settings:
        sub = replace(cfg, tree=replace(cfg.tree, H=s["H"], c=s["c"], M=2 ** s["c"] if axis == "K" else cfg.tree.M))
        sub.train = replace(cfg.train, C=s["C"])
        sub.predict = replace(cfg.predict, C=s["C"])
        tag = f"{axis}{s[axis]}"
        sub.paths = replace(cfg.paths, tree=str(cfg.path("tree").resolve() / tag), model=str(cfg.path("model").resolve() / tag))
        t0 = time.perf_counter()
        ensure_dir(sub.path("tree"))
        for i, tree in enumerate(build_trees(sub, sub.predict.ensemble, train)):
            save_tree(tree, tree_path(sub, i))
        train_members(sub, train, args.workers, jsonl_logger(sys.stdout) if args.log == "jsonl" else None)
        preds, _ = run_predict(sub, test)
        m = report(evaluate_predictions(sub, train, test, preds))
        realized_H = load_tree(tree_path(sub, 0)).H
        rows.append({**s, "H": realized_H, **m, "seconds": round(time.perf_counter() - t0, 1)})
        log.info("sweep %s: %s", tag, rows[-1])
    cols = ["H", "K", "C", *REPORT_KEYS, "seconds"]
    lines = ["\t".join(cols)] + ["\t".join(str(r[c]) for c in cols) for r in rows]
    table = out / f"sweep-{axis}.tsv"
    table.write_text("\n".join(lines) + "\n", encoding="utf-8")
    print("\n".join(lines))
    return 0


COMMANDS = {
    "build-tree": cmd_build_tree,
    "train": cmd_train,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "synth": cmd_synth,
    "sweep": cmd_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="plt-xmc", description="Probabilistic label tree text classifier")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("overrides", nargs="*", help="section.key=value config overrides")
    ap.add_argument("--config", help="key=value config file")
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="config override (repeatable)")
    ap.add_argument("--workers", type=int, default=None, help="batch shards trained concurrently (default $PLT_XMC_WORKERS or 1)")
    ap.add_argument("--log", choices=("none", "jsonl"), default="none", help="training progress format")
    ap.add_argument("--ensemble", type=int, default=None, help="number of ensemble members")
    ap.add_argument("--dump-attention", metavar="SAMPLE:LABEL", help="write attention weights of one test sample")
    ap.add_argument("--uniform-propensity", action="store_true", help="score psp@k with all propensities 1")
    ap.add_argument("--axis", choices=("H", "K", "C"), help="sweep axis")
    ap.add_argument("--values", help="comma-separated sweep values")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_intermixed_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        overrides = list(args.set) + list(args.overrides)
        if args.ensemble is not None:
            overrides.append(f"predict.ensemble={args.ensemble}")
        if args.uniform_propensity:
            overrides.append("metrics.uniform_propensity=true")
        cfg = C.load_config(args.config, overrides)
        args.workers = args.workers if args.workers is not None else C.default_workers()
        if args.workers < 1:
            raise C.ConfigError("--workers must be >= 1")
        return COMMANDS[args.command](cfg, args)
    except (C.ConfigError, FileNotFoundError) as e:
        print(f"plt-xmc: error: {e}", file=sys.stderr)
        return 2
    except (ParseError, ValueError, AssertionError, OSError, FloatingPointError) as e:
        print(f"plt-xmc: {args.command} failed: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
