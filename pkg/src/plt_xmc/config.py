"""Run configuration: a line-oriented ``key=value`` file with section prefixes.

Example::

    # comments and blank lines are ignored
    paths.train = data/train.txt
    tree.M = 8
    tree.c = 3
    tree.H = 1
    train.epochs = 10
    predict.C = 4

Command-line ``--set key=value`` overrides are applied after the file.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path

SECTIONS = ("paths", "tree", "model", "train", "predict", "metrics", "data", "sweep")


class ConfigError(ValueError):
    """Invalid or unknown configuration value (maps to exit code 2)."""


@dataclass
class PathsConfig:
    train: str = ""
    test: str = ""
    train_labels: str = ""  # set for the plain-text format
    test_labels: str = ""
    vocab: str = ""
    tree: str = "work/tree"
    model: str = "work/model"
    output: str = "work/output"
    format: str = "text"  # text | sparse


@dataclass
class TreeConfig:
    M: int = 8
    c: int = 3  # K = 2^c
    H: int = 1
    seed: int = 0
    flat: bool = False
    random_labels: int = 0  # > 0: cluster this many random label vectors instead of data
    random_dim: int = 64

    @property
    def K(self) -> int:
        return 2**self.c


@dataclass
class ModelSection:
    embed_dim: int = 64
    hidden: int = 32
    fc_sizes: str = "64"
    encoder: str = "recurrent"
    emb_dropout: float = 0.2
    enc_dropout: float = 0.5
    max_len: int = 500
    max_vocab: int = 500_000


@dataclass
class TrainSection:
    epochs: int = 10
    batch_size: int = 64
    C: int = 4
    lr: float = 1e-3
    swa_start: int = -1  # -1: epochs // 2
    seed: int = 0


@dataclass
class PredictConfig:
    C: int = 4
    k: int = 5
    ensemble: int = 1
    batch_size: int = 256


@dataclass
class MetricsConfig:
    A: float = 0.55
    B: float = 1.5
    uniform_propensity: bool = False


@dataclass
class DataConfig:
    """Synthetic generator settings used by ``synth``."""

    num_labels: int = 64
    num_clusters: int = 8
    samples_per_cluster: int = 625
    vocab_size: int = 1000
    tail_skew: float = 0.5
    seed: int = 0
    num_test: int = 1000


@dataclass
class SweepConfig:
    axis: str = "H"
    values: str = "1,2,3"


@dataclass
class RunConfig:
    paths: PathsConfig = field(default_factory=PathsConfig)
    tree: TreeConfig = field(default_factory=TreeConfig)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    predict: PredictConfig = field(default_factory=PredictConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    data: DataConfig = field(default_factory=DataConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    base_dir: str = "."

    def set(self, key: str, raw: str) -> None:
        section, _, name = key.strip().partition(".")
        if section not in SECTIONS or not name:
            raise ConfigError(f"unknown config key {key!r}")
        obj = getattr(self, section)
        fields = {f.name: f for f in dataclasses.fields(obj)}
        if name not in fields:
            raise ConfigError(f"unknown config key {key!r}")
        setattr(obj, name, _coerce(fields[name].type, raw.strip(), key))

    def validate(self) -> "RunConfig":
        t = self.tree
        if t.c < 1:
            raise ConfigError("tree.c must be >= 1 (K = 2^c >= 2)")
        if t.H < 1 and not t.flat:
            raise ConfigError("tree.H must be >= 1 (use tree.flat = true for a flat tree)")
        if t.M < 1:
            raise ConfigError("tree.M must be >= 1")
        for name in ("epochs", "batch_size", "C"):
            if getattr(self.train, name) < 1:
                raise ConfigError(f"train.{name} must be positive")
        if self.train.lr < 0:
            raise ConfigError("train.lr must be >= 0")
        if self.predict.C < 1 or self.predict.k < 1 or self.predict.ensemble < 1:
            raise ConfigError("predict.C, predict.k and predict.ensemble must be positive")
        if self.paths.format not in ("text", "sparse"):
            raise ConfigError("paths.format must be text or sparse")
        if self.sweep.axis not in ("H", "K", "C"):
            raise ConfigError("sweep.axis must be H, K or C")
        fc_sizes(self)
        return self

    def path(self, name: str) -> Path:
        """A configured path, resolved against the config file's directory."""
        p = Path(getattr(self.paths, name))
        return p if p.is_absolute() else Path(self.base_dir) / p

    def to_lines(self) -> list[str]:
        out = []
        for section in SECTIONS:
            for f in dataclasses.fields(getattr(self, section)):
                out.append(f"{section}.{f.name} = {getattr(getattr(self, section), f.name)}")
        return out


def fc_sizes(cfg: RunConfig) -> tuple[int, ...]:
    try:
        sizes = tuple(int(s) for s in str(cfg.model.fc_sizes).split(",") if s.strip())
    except ValueError as e:
        raise ConfigError(f"model.fc_sizes must be comma-separated integers: {e}") from None
    if not 1 <= len(sizes) <= 2 or min(sizes) < 1:
        raise ConfigError("model.fc_sizes needs one or two positive widths")
    return sizes


def _coerce(typ, raw: str, key: str):
    typ = typ if isinstance(typ, str) else typ.__name__
    try:
        if typ == "bool":
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typ == "int":
            return int(raw)
        if typ == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None
    return raw


def parse_lines(lines, cfg: RunConfig | None = None, source: str = "<config>") -> RunConfig:
    cfg = cfg or RunConfig()
    for n, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{n}: expected key = value")
        key, _, value = line.partition("=")
        cfg.set(key, value)
    return cfg


def load_config(path=None, overrides=()) -> RunConfig:
    cfg = RunConfig()
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise FileNotFoundError(f"config file not found: {p}")
        cfg.base_dir = str(p.parent)
        parse_lines(p.read_text(encoding="utf-8").splitlines(), cfg, str(p))
    parse_lines(overrides, cfg, "<override>")
    return cfg.validate()


def default_workers() -> int:
    raw = os.environ.get("PLT_XMC_WORKERS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"PLT_XMC_WORKERS must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError("PLT_XMC_WORKERS must be >= 1")
    return n
