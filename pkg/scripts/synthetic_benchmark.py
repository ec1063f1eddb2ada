"""Three PLT members, their ensemble and the flat model on the synthetic corpus.

    python scripts/synthetic_benchmark.py [--epochs 15] [--lr 0.01] [--H 1] [--log]
"""

import argparse
import json
import sys

from plt_xmc.benchmark import BenchmarkConfig, run_benchmark
from plt_xmc.trainer import jsonl_logger


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--epochs", type=int, default=15)
    ap.add_argument("--lr", type=float, default=1e-2)
    ap.add_argument("--H", type=int, default=1)
    ap.add_argument("--members", type=int, default=3)
    ap.add_argument("--no-flat", action="store_true")
    ap.add_argument("--log", action="store_true", help="per-epoch JSON lines on stderr")
    a = ap.parse_args()
    cfg = BenchmarkConfig(epochs=a.epochs, lr=a.lr, H=a.H, members=a.members, flat=not a.no_flat)
    res = run_benchmark(cfg, log=jsonl_logger(sys.stderr) if a.log else None)
    for i, m in enumerate(res.members):
        print(f"member {i}: levels {m['level_sizes']} max candidates {m['max_candidates']} {m['seconds']:.0f} s")
        print("  " + json.dumps(m["metrics"]))
    print("ensemble: " + json.dumps(res.ensemble))
    if res.flat:
        print(f"flat ({res.flat['seconds']:.0f} s): " + json.dumps(res.flat["metrics"]))
    print(f"total {res.seconds:.0f} s, candidate bound held: {res.candidate_bound_ok}")


if __name__ == "__main__":
    main()
