"""Level sizes of compressed trees built from random label vectors.

    python scripts/tree_shapes.py                 # the two large shapes
    python scripts/tree_shapes.py 10000 8 3 2     # L M c H
"""

import sys
import time

from plt_xmc.cli import random_label_vectors
from plt_xmc.clustering import build_deep_tree
from plt_xmc.tree import compress_tree, validate_tree

DEFAULT = [(670_091, 8, 3, 3), (501_008, 64, 6, 1)]


def main(argv):
    runs = [tuple(int(a) for a in argv)] if argv else DEFAULT
    for L, M, c, H in runs:
        t0 = time.perf_counter()
        deep = build_deep_tree(random_label_vectors(L, 5000, seed=1), M, seed=0)
        t1 = time.perf_counter()
        tree = compress_tree(deep, c, H)
        problems = validate_tree(tree)
        print(
            f"L={L} M={M} K={2**c} H={H}: levels {tree.level_sizes()} "
            f"(cluster {t1 - t0:.1f} s, compress {time.perf_counter() - t1:.1f} s)"
            + (f" INVALID: {problems}" if problems else "")
        )


if __name__ == "__main__":
    main(sys.argv[1:])
