"""Probabilistic label trees with a multi-label attention scorer for extreme multi-label text classification."""

from .core import Dataset, LabelSet, Sample, SparseVector, TokenSequence, label_representations
from .metrics import compute_propensities, evaluate, ndcg_at_k, precision_at_k, psp_at_k
from .model import ModelConfig, ScorerParams, init_params, load_model, save_model
from .predictor import beam_search, ensemble_predict, predict
from .trainer import LevelTrainConfig, train_all_levels
from .tree import LabelTree, TreeParams, build_plt, compress_tree, flat_tree, load_tree, save_tree

__version__ = "0.1.0"
