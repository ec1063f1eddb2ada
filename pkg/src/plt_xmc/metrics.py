"""Ranking metrics: precision@k, nDCG@k and propensity-scored precision@k.

All per-sample metrics read the ranking exactly as given (ties already
broken by the predictor). Predictions shorter than ``k`` count the missing
slots as misses.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np


DEFAULT_A = 0.55
DEFAULT_B = 1.5
REPORT_KEYS = ("p@1", "p@3", "p@5", "n@3", "n@5", "psp@1", "psp@3", "psp@5")


def _top_labels(pred, k: int) -> list[int]:
    if k <= 0:
        raise ValueError("k must be positive")
    labels = pred.labels if hasattr(pred, "labels") else [p[0] for p in pred]
    return [int(j) for j in labels[:k]]


def _truth_set(truth) -> set[int]:
    return {int(j) for j in truth}


def precision_at_k(pred, truth, k: int) -> float:
    t = _truth_set(truth)
    return sum(1 for j in _top_labels(pred, k) if j in t) / k


def _discount(rank: int) -> float:
    return 1.0 / math.log2(rank + 1)


def ndcg_at_k(pred, truth, k: int) -> float:
    top = _top_labels(pred, k)
    t = _truth_set(truth)
    if not t:
        return 0.0
    # accumulate in rank order so results are reproducible to the last bit
    dcg = 0.0
    for r, j in enumerate(top, 1):
        if j in t:
            dcg += _discount(r)
    idcg = 0.0
    for r in range(1, min(k, len(t)) + 1):
        idcg += _discount(r)
    return dcg / idcg


@dataclass(frozen=True)
class PropensityModel:
    propensities: np.ndarray
    A: float = DEFAULT_A
    B: float = DEFAULT_B
    N: int = 0

    @classmethod
    def uniform(cls, L: int) -> "PropensityModel":
        return cls(np.ones(L), 0.0, 0.0, 0)


def compute_propensities(label_counts: Sequence[int], N: int, A: float = DEFAULT_A, B: float = DEFAULT_B) -> PropensityModel:
    """Per-label propensity ``1 / (1 + C (N_l + B)^-A)`` with ``C = (ln N - 1)(1 + B)^A``."""
    if N <= math.e:
        raise ValueError("N must exceed e for a positive propensity constant")
    counts = np.asarray(label_counts, np.float64)
    if np.any(counts < 0):
        raise ValueError("label counts must be non-negative")
    c = (math.log(N) - 1.0) * (1.0 + B) ** A
    return PropensityModel(1.0 / (1.0 + c * (counts + B) ** (-A)), A, B, int(N))


def psp_at_k(pred, truth, k: int, prop: PropensityModel) -> float:
    t = _truth_set(truth)
    p = prop.propensities
    total = 0.0
    for j in _top_labels(pred, k):
        if j in t:
            total += 1.0 / float(p[j])
    return total / k


def evaluate(
    preds: Sequence,
    truths: Sequence,
    prop: PropensityModel,
    ks: Sequence[int] = (1, 3, 5),
) -> dict[str, float]:
    """Unweighted means over samples of every metric at every ``k``."""
    if len(preds) != len(truths):
        raise ValueError("predictions and truths differ in length")
    out: dict[str, float] = {}
    n = max(len(preds), 1)
    for k in ks:
        out[f"p@{k}"] = sum(precision_at_k(p, t, k) for p, t in zip(preds, truths)) / n
        out[f"n@{k}"] = sum(ndcg_at_k(p, t, k) for p, t in zip(preds, truths)) / n
        out[f"psp@{k}"] = sum(psp_at_k(p, t, k, prop) for p, t in zip(preds, truths)) / n
    return out


def report(metrics: dict[str, float]) -> dict[str, float]:
    """The eight reported keys, rounded to four decimals."""
    return {key: round(float(metrics[key]), 4) for key in REPORT_KEYS}


def write_report(metrics: dict[str, float], path) -> None:
    body = ",\n".join(f'  "{k}": {metrics[k]:.4f}' for k in REPORT_KEYS)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("{\n" + body + "\n}\n")


def read_report(path) -> dict[str, float]:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)
