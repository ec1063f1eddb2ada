"""Attention-aware scorer for one tree level, written directly in numpy.

Pipeline per sample: embedding -> dropout -> encoder (bidirectional gated
recurrent or mean pooling) -> dropout -> per-candidate attention over time
steps -> shared fully connected layers (ReLU) -> shared output unit ->
sigmoid. ``backward`` is exact reverse-mode differentiation of
``forward_batch`` for the dropout masks stored in the trace.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .core import TokenSequence

MAGIC = b"AXM1"
ENCODERS = ("recurrent", "mean")


@dataclass
class ModelConfig:
    vocab_size: int
    embed_dim: int = 64
    hidden: int = 32  # per direction
    fc_sizes: tuple[int, ...] = (64,)
    encoder: str = "recurrent"
    emb_dropout: float = 0.2
    enc_dropout: float = 0.5

    def __post_init__(self):
        if self.encoder not in ENCODERS:
            raise ValueError(f"encoder must be one of {ENCODERS}")
        self.fc_sizes = tuple(int(s) for s in self.fc_sizes)
        if not 1 <= len(self.fc_sizes) <= 2:
            raise ValueError("one or two fully connected layers")

    @property
    def state_dim(self) -> int:
        """Width of the per-token hidden state fed to attention."""
        return 2 * self.hidden if self.encoder == "recurrent" else self.embed_dim


@dataclass
class ScorerParams:
    """Named trainable arrays of one level's model.

    ``attention`` has one row per node of the level; row ``i`` belongs to
    node ``node_offset + i`` (levels are contiguous id ranges).
    """

    config: ModelConfig
    arrays: dict[str, np.ndarray]
    level: int = 1
    node_offset: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def num_nodes(self) -> int:
        return int(self.arrays["attention"].shape[0])

    @property
    def dtype(self):
        return self.arrays["embedding"].dtype

    def copy(self) -> "ScorerParams":
        return ScorerParams(
            self.config,
            {k: v.copy() for k, v in self.arrays.items()},
            self.level,
            self.node_offset,
            dict(self.meta),
        )

    def astype(self, dtype) -> "ScorerParams":
        p = self.copy()
        p.arrays = {k: v.astype(dtype) for k, v in p.arrays.items()}
        return p

    def zeros_like(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.arrays.items()}

    def fc_layers(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return [(self.arrays[f"fc{i}.w"], self.arrays[f"fc{i}.b"]) for i in range(len(self.config.fc_sizes))]


def _uniform(rng, bound, shape, dtype):
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def init_attention(rng: np.random.Generator, num_nodes: int, config: ModelConfig, dtype=np.float32):
    d = config.state_dim
    return _uniform(rng, 1.0 / np.sqrt(d), (num_nodes, d), dtype)


def init_params(
    config: ModelConfig,
    num_nodes: int,
    seed: int = 0,
    level: int = 1,
    node_offset: int = 0,
    dtype=np.float32,
) -> ScorerParams:
    rng = np.random.default_rng(seed)
    E, N = config.embed_dim, config.hidden
    a: dict[str, np.ndarray] = {"embedding": _uniform(rng, 0.05, (config.vocab_size, E), dtype)}
    if config.encoder == "recurrent":
        for d in ("fwd", "bwd"):
            a[f"enc.{d}.wx"] = _uniform(rng, 1.0 / np.sqrt(N), (E, 3 * N), dtype)
            a[f"enc.{d}.wh"] = _uniform(rng, 1.0 / np.sqrt(N), (N, 3 * N), dtype)
            a[f"enc.{d}.b"] = np.zeros(3 * N, dtype)
    a["attention"] = init_attention(rng, num_nodes, config, dtype)
    fan_in = config.state_dim
    for i, width in enumerate(config.fc_sizes):
        a[f"fc{i}.w"] = _uniform(rng, np.sqrt(6.0 / (fan_in + width)), (fan_in, width), dtype)
        a[f"fc{i}.b"] = np.zeros(width, dtype)
        fan_in = width
    a["out.w"] = _uniform(rng, np.sqrt(6.0 / (fan_in + 1)), (fan_in,), dtype)
    a["out.b"] = np.zeros(1, dtype)
    return ScorerParams(config, a, level, node_offset)


def init_from_previous_level(
    prev: ScorerParams, level_node_count: int, seed: int = 0, node_offset: int | None = None
) -> ScorerParams:
    """Copy every array of ``prev`` except attention, which is drawn fresh for the new level."""
    p = prev.copy()
    p.arrays["attention"] = init_attention(
        np.random.default_rng(seed), level_node_count, prev.config, prev.dtype
    )
    p.level = prev.level + 1
    if node_offset is not None:
        p.node_offset = node_offset
    return p


# ---------------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------------


def pad_tokens(seqs: Sequence[TokenSequence | Sequence[int]]) -> tuple[np.ndarray, np.ndarray]:
    """Right-pad token ids to the batch maximum; returns ``(ids, mask)``.

    Padded slots hold id 0 and are masked out of the encoder and attention.
    """
    arrs = [np.asarray(s.ids if isinstance(s, TokenSequence) else s, np.int64) for s in seqs]
    if any(a.size == 0 for a in arrs):
        raise ValueError("empty token sequence")
    T = max(a.size for a in arrs)
    ids = np.zeros((len(arrs), T), np.int64)
    mask = np.zeros((len(arrs), T), bool)
    for i, a in enumerate(arrs):
        ids[i, : a.size] = a
        mask[i, : a.size] = True
    return ids, mask


def pad_candidates(cands: Sequence[Sequence[int]]) -> tuple[np.ndarray, np.ndarray]:
    C = max((len(c) for c in cands), default=0)
    out = np.zeros((len(cands), max(C, 1)), np.int64)
    mask = np.zeros(out.shape, bool)
    for i, c in enumerate(cands):
        out[i, : len(c)] = c
        mask[i, : len(c)] = True
    return out, mask


# ---------------------------------------------------------------------------
# forward
# ---------------------------------------------------------------------------


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def dropout_mask(rng, shape, rate, dtype):
    if rate <= 0:
        return None
    keep = rng.random(shape) >= rate
    return (keep / (1.0 - rate)).astype(dtype)


def _gru_forward(x, mask, wx, wh, b, reverse: bool):
    B, T, _ = x.shape
    N = wh.shape[0]
    gx = x @ wx + b
    h = np.zeros((B, N), x.dtype)
    out = np.zeros((B, T, N), x.dtype)
    steps = []
    whzr, whn = wh[:, : 2 * N], wh[:, 2 * N :]
    order = range(T - 1, -1, -1) if reverse else range(T)
    m = mask[..., None].astype(x.dtype)
    for t in order:
        zr = sigmoid(gx[:, t, : 2 * N] + h @ whzr)
        z, r = zr[:, :N], zr[:, N:]
        rh = r * h
        n = np.tanh(gx[:, t, 2 * N :] + rh @ whn)
        h_new = (1.0 - z) * n + z * h
        steps.append((h, z, r, rh, n))
        h = m[:, t] * h_new + (1.0 - m[:, t]) * h
        out[:, t] = h
    return out, steps


def _gru_backward(dout, x, mask, wx, wh, steps, reverse: bool):
    B, T, _ = x.shape
    N = wh.shape[0]
    whzr, whn = wh[:, : 2 * N], wh[:, 2 * N :]
    dgx = np.zeros((B, T, 3 * N), x.dtype)
    dwh = np.zeros_like(wh)
    dh = np.zeros((B, N), x.dtype)
    m = mask[..., None].astype(x.dtype)
    order = list(range(T - 1, -1, -1) if reverse else range(T))
    for k in range(T - 1, -1, -1):
        t = order[k]
        h, z, r, rh, n = steps[k]
        dh = dh + dout[:, t]
        dh_new = m[:, t] * dh
        dprev = (1.0 - m[:, t]) * dh + dh_new * z
        dan = dh_new * (1.0 - z) * (1.0 - n * n)
        dz = dh_new * (h - n) * z * (1.0 - z)
        drh = dan @ whn.T
        dwh[:, 2 * N :] += rh.T @ dan
        dr = drh * h * r * (1.0 - r)
        dprev += drh * r
        dzr = np.concatenate([dz, dr], axis=1)
        dwh[:, : 2 * N] += h.T @ dzr
        dprev += dzr @ whzr.T
        dgx[:, t, : 2 * N] = dzr
        dgx[:, t, 2 * N :] = dan
        dh = dprev
    flat = dgx.reshape(B * T, 3 * N)
    dwx = x.reshape(B * T, -1).T @ flat
    db = flat.sum(axis=0)
    dx = dgx @ wx.T
    return dx, dwx, dwh, db


@dataclass
class ForwardTrace:
    """Everything ``backward`` needs, plus the attention weights for inspection."""

    ids: np.ndarray
    tok_mask: np.ndarray
    cands: np.ndarray  # level-local row indices into the attention matrix
    cand_mask: np.ndarray
    emb_mask: np.ndarray | None
    enc_mask: np.ndarray | None
    x: np.ndarray
    enc_steps: dict
    hidden: np.ndarray  # after encoder dropout, (B, T, D)
    alpha: np.ndarray  # (B, C, T)
    attended: np.ndarray  # (B, C, D)
    pre: list  # fc pre-activations
    acts: list  # fc inputs: [attended, relu(pre0), ...]
    logits: np.ndarray  # (B, C)
    probs: np.ndarray  # (B, C)


def _local_cands(params: ScorerParams, cands: np.ndarray, cand_mask: np.ndarray) -> np.ndarray:
    local = np.where(cand_mask, cands - params.node_offset, 0)
    if np.any((local < 0) | (local >= params.num_nodes)):
        raise ValueError(
            f"candidate outside level {params.level} node range "
            f"[{params.node_offset}, {params.node_offset + params.num_nodes})"
        )
    return local


def encode(params: ScorerParams, ids, tok_mask, mode="eval", rng=None, masks=None):
    """Token ids -> hidden states ``(B, T, D)``; returns ``(hidden, aux)``."""
    cfg = params.config
    a = params.arrays
    dt = params.dtype
    if ids.shape[1] == 0 or not tok_mask.any(axis=1).all():
        raise ValueError("empty token sequence")
    train = mode == "train"
    if train and masks is None and rng is None:
        raise ValueError("train mode needs an rng or recorded masks")
    x = a["embedding"][ids]
    emb_mask = enc_mask = None
    if train:
        emb_mask = masks[0] if masks else dropout_mask(rng, x.shape, cfg.emb_dropout, dt)
        if emb_mask is not None:
            x = x * emb_mask
    steps = {}
    if cfg.encoder == "recurrent":
        hf, steps["fwd"] = _gru_forward(x, tok_mask, a["enc.fwd.wx"], a["enc.fwd.wh"], a["enc.fwd.b"], False)
        hb, steps["bwd"] = _gru_forward(x, tok_mask, a["enc.bwd.wx"], a["enc.bwd.wh"], a["enc.bwd.b"], True)
        h = np.concatenate([hf, hb], axis=2)
    else:
        m = tok_mask[..., None].astype(dt)
        mean = (x * m).sum(axis=1) / m.sum(axis=1)
        h = np.broadcast_to(mean[:, None, :], x.shape).copy()
    if train:
        enc_mask = masks[1] if masks else dropout_mask(rng, h.shape, cfg.enc_dropout, dt)
        if enc_mask is not None:
            h = h * enc_mask
    return h, (x, steps, emb_mask, enc_mask)


def attention(hidden: np.ndarray, w_j: np.ndarray, mask: np.ndarray | None = None):
    """Softmax-weighted sum of hidden rows for one attention vector; returns ``(m_j, alpha_j)``."""
    s = hidden @ w_j
    if mask is not None:
        s = np.where(mask, s, -np.inf)
    s = s - s.max()
    e = np.exp(s)
    alpha = e / e.sum()
    return alpha @ hidden, alpha


def forward_batch(
    params: ScorerParams,
    ids: np.ndarray,
    tok_mask: np.ndarray,
    cands: np.ndarray,
    cand_mask: np.ndarray | None = None,
    mode: str = "eval",
    rng: np.random.Generator | None = None,
    masks=None,
) -> ForwardTrace:
    """Score candidate node ids (B, C) for a padded token batch (B, T)."""
    if cand_mask is None:
        cand_mask = np.ones(cands.shape, bool)
    local = _local_cands(params, cands, cand_mask)
    a = params.arrays
    h, (x, steps, emb_mask, enc_mask) = encode(params, ids, tok_mask, mode, rng, masks)
    w = a["attention"][local]  # (B, C, D)
    s = w @ h.transpose(0, 2, 1)  # (B, C, T)
    s = np.where(tok_mask[:, None, :], s, -np.inf)
    s = s - s.max(axis=2, keepdims=True)
    e = np.exp(s)
    alpha = e / e.sum(axis=2, keepdims=True)
    att = alpha @ h  # (B, C, D)
    acts, pre = [att], []
    cur = att
    for W, bias in params.fc_layers():
        z = cur @ W + bias
        pre.append(z)
        cur = np.maximum(z, 0)
        acts.append(cur)
    logits = cur @ a["out.w"] + a["out.b"][0]
    probs = sigmoid(logits)
    return ForwardTrace(
        ids, tok_mask, local, cand_mask, emb_mask, enc_mask, x, steps, h, alpha, att, pre, acts, logits, probs
    )


def forward(tokens: TokenSequence, candidates: Sequence[int], params: ScorerParams, mode="eval", rng=None):
    """Single-document convenience wrapper; returns ``(probs, trace)``."""
    if len(candidates) == 0:
        raise ValueError("no candidates")
    ids, mask = pad_tokens([tokens])
    cands = np.asarray(candidates, np.int64)[None, :]
    tr = forward_batch(params, ids, mask, cands, None, mode, rng)
    return tr.probs[0], tr


# ---------------------------------------------------------------------------
# loss and gradients
# ---------------------------------------------------------------------------

PROB_CLAMP = 1e-12


def bce_loss(probs, targets) -> float:
    """Mean binary cross-entropy over candidates, probabilities clamped to [1e-12, 1 - 1e-12]."""
    p = np.clip(np.asarray(probs, np.float64), PROB_CLAMP, 1.0 - PROB_CLAMP)
    y = np.asarray(targets, np.float64)
    return float(np.mean(-(y * np.log(p) + (1.0 - y) * np.log1p(-p))))


def logit_bce(trace: ForwardTrace, targets: np.ndarray) -> float:
    """Same loss evaluated stably from the logits, averaged over unmasked candidates."""
    o = trace.logits.astype(np.float64)
    y = targets.astype(np.float64)
    per = np.logaddexp(0.0, o) - y * o
    m = trace.cand_mask
    return float(per[m].sum() / max(m.sum(), 1))


def backward(trace: ForwardTrace, targets: np.ndarray, params: ScorerParams) -> dict[str, np.ndarray]:
    """Exact gradients of :func:`logit_bce` with respect to every array in ``params``."""
    a = params.arrays
    cfg = params.config
    dt = params.dtype
    g = params.zeros_like()
    valid = trace.cand_mask
    n_valid = max(int(valid.sum()), 1)
    do = ((trace.probs - targets) * valid / n_valid).astype(dt)  # (B, C)

    last = trace.acts[-1]
    g["out.w"] = np.einsum("bc,bcf->f", do, last)
    g["out.b"] = np.array([do.sum()], dt)
    dcur = do[..., None] * a["out.w"]
    layers = params.fc_layers()
    for i in range(len(layers) - 1, -1, -1):
        W, _ = layers[i]
        dz = dcur * (trace.pre[i] > 0)
        inp = trace.acts[i]
        g[f"fc{i}.w"] = inp.reshape(-1, inp.shape[-1]).T @ dz.reshape(-1, dz.shape[-1])
        g[f"fc{i}.b"] = dz.sum(axis=(0, 1))
        dcur = dz @ W.T
    datt = dcur  # (B, C, D)

    h, alpha = trace.hidden, trace.alpha
    dalpha = datt @ h.transpose(0, 2, 1)  # (B, C, T)
    dh = alpha.transpose(0, 2, 1) @ datt  # (B, T, D)
    ds = alpha * (dalpha - (alpha * dalpha).sum(axis=2, keepdims=True))
    w = a["attention"][trace.cands]
    dh += ds.transpose(0, 2, 1) @ w
    dw = ds @ h  # (B, C, D)
    np.add.at(g["attention"], trace.cands[valid], dw[valid])

    if trace.enc_mask is not None:
        dh = dh * trace.enc_mask
    x = trace.x
    if cfg.encoder == "recurrent":
        N = cfg.hidden
        dx = np.zeros_like(x)
        for d, sl in (("fwd", slice(0, N)), ("bwd", slice(N, 2 * N))):
            ddx, dwx, dwh, db = _gru_backward(
                dh[:, :, sl], x, trace.tok_mask, a[f"enc.{d}.wx"], a[f"enc.{d}.wh"], trace.enc_steps[d], d == "bwd"
            )
            dx += ddx
            g[f"enc.{d}.wx"], g[f"enc.{d}.wh"], g[f"enc.{d}.b"] = dwx, dwh, db
    else:
        m = trace.tok_mask[..., None].astype(dt)
        dmean = dh.sum(axis=1) / m.sum(axis=1)
        dx = m * dmean[:, None, :]
    if trace.emb_mask is not None:
        dx = dx * trace.emb_mask
    np.add.at(g["embedding"], trace.ids[trace.tok_mask], dx[trace.tok_mask])
    return g


# ---------------------------------------------------------------------------
# optimisation
# ---------------------------------------------------------------------------


@dataclass
class OptimizerState:
    m: dict
    v: dict
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    step: int = 0

    @classmethod
    def for_params(cls, params: ScorerParams, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        return cls(params.zeros_like(), params.zeros_like(), lr, tuple(betas), eps)


def adam_step(params: ScorerParams, grads: dict, opt: OptimizerState) -> ScorerParams:
    """Bias-corrected Adam update, applied in place; returns ``params``."""
    for k, gk in grads.items():
        if not np.all(np.isfinite(gk)):
            raise FloatingPointError(f"non-finite gradient in {k}")
    opt.step += 1
    b1, b2 = opt.betas
    c1 = 1.0 - b1**opt.step
    c2 = 1.0 - b2**opt.step
    for k, gk in grads.items():
        m, v = opt.m[k], opt.v[k]
        m *= b1
        m += (1.0 - b1) * gk
        v *= b2
        v += (1.0 - b2) * gk * gk
        step = opt.lr * (m / c1) / (np.sqrt(v / c2) + opt.eps)
        params.arrays[k] -= step.astype(params.arrays[k].dtype)
    return params


@dataclass
class SWAState:
    avg: dict | None = None
    n: int = 0


def swa_update(state: SWAState, params: ScorerParams) -> SWAState:
    """Fold ``params`` into the running mean of snapshots."""
    if state.avg is None:
        state.avg = {k: v.astype(np.float64) for k, v in params.arrays.items()}
    else:
        for k, v in params.arrays.items():
            state.avg[k] = (state.avg[k] * state.n + v) / (state.n + 1)
    state.n += 1
    return state


def swa_params(state: SWAState, like: ScorerParams) -> ScorerParams:
    p = like.copy()
    p.arrays = {k: state.avg[k].astype(like.arrays[k].dtype) for k in like.arrays}
    return p


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def _manifest(params: ScorerParams) -> dict:
    cfg = asdict(params.config)
    cfg["fc_sizes"] = list(cfg["fc_sizes"])
    return {
        "format": 1,
        "encoder": params.config.encoder,
        "level": params.level,
        "node_offset": params.node_offset,
        "hyperparameters": cfg,
        "meta": params.meta,
        "sections": [{"name": k, "shape": list(v.shape)} for k, v in params.arrays.items()],
    }


def save_model(params: ScorerParams, path) -> None:
    manifest = json.dumps(_manifest(params), sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(manifest)))
        fh.write(manifest)
        for v in params.arrays.values():
            fh.write(np.ascontiguousarray(v, dtype="<f4").tobytes())


def load_model(path) -> ScorerParams:
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != MAGIC:
        raise ValueError(f"{path}: not an AXM1 model file")
    (mlen,) = struct.unpack_from("<Q", buf, 4)
    off = 12
    man = json.loads(buf[off : off + mlen].decode("utf-8"))
    off += mlen
    arrays = {}
    for sec in man["sections"]:
        count = int(np.prod(sec["shape"], dtype=np.int64))
        arrays[sec["name"]] = np.frombuffer(buf, "<f4", count, off).reshape(sec["shape"]).astype(np.float32)
        off += 4 * count
    if off != len(buf):
        raise ValueError(f"{path}: size does not match manifest")
    hp = man["hyperparameters"]
    cfg = ModelConfig(**{**hp, "fc_sizes": tuple(hp["fc_sizes"])})
    return ScorerParams(cfg, arrays, man["level"], man["node_offset"], man.get("meta", {}))
