import numpy as np
import scipy.sparse as sp

from plt_xmc.tree import TreeParams, build_plt


def random_reps(L, dim=24, seed=0, density=0.25):
    rng = np.random.default_rng(seed)
    X = sp.random(L, dim, density=density, random_state=rng, format="csr")
    X.data += 0.05
    return X


def random_tree(L, M=4, c=2, H=2, seed=0):
    return build_plt(random_reps(L, seed=seed), TreeParams(M=M, c=c, H=H, seed=seed))
