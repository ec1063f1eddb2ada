import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gradcheck import check
from plt_xmc.model import (
    ModelConfig,
    OptimizerState,
    SWAState,
    adam_step,
    attention,
    backward,
    bce_loss,
    encode,
    forward,
    forward_batch,
    init_from_previous_level,
    init_params,
    load_model,
    pad_candidates,
    pad_tokens,
    save_model,
    swa_params,
    swa_update,
)


def make(encoder="recurrent", nodes=6, seed=0, dtype=np.float32, fc=(6,)):
    cfg = ModelConfig(vocab_size=15, embed_dim=8, hidden=4, fc_sizes=fc, encoder=encoder)
    return init_params(cfg, nodes, seed=seed, dtype=dtype)


def zeroed(p):
    q = p.copy()
    q.arrays = {k: np.zeros_like(v) for k, v in q.arrays.items()}
    return q


@pytest.mark.parametrize("encoder", ["recurrent", "mean"])
def test_encode_single_token_shape(encoder):
    p = make(encoder)
    ids, mask = pad_tokens([[3]])
    h, _ = encode(p, ids, mask)
    assert h.shape == (1, 1, p.config.state_dim)
    if encoder == "recurrent":
        assert p.config.state_dim == 8


def test_encode_eval_repeatable_and_train_stochastic():
    p = make()
    ids, mask = pad_tokens([[1, 2, 3, 4]])
    a, _ = encode(p, ids, mask)
    b, _ = encode(p, ids, mask)
    assert np.array_equal(a, b)
    c, _ = encode(p, ids, mask, "train", np.random.default_rng(0))
    assert not np.array_equal(a, c)


def test_zero_parameters_give_zero_states_and_half_probs():
    p = zeroed(make())
    ids, mask = pad_tokens([[1, 2, 3]])
    h, _ = encode(p, ids, mask)
    assert not h.any()
    probs, _ = forward([1, 2, 3], [0, 1, 2], p)
    assert np.all(probs == 0.5)


def test_empty_sequence_rejected():
    with pytest.raises(ValueError):
        pad_tokens([[]])


def test_attention_examples():
    hid = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 0.0]])
    m, a = attention(hid, np.zeros(2))
    assert np.allclose(a, 1 / 3) and np.allclose(m, hid.mean(axis=0))
    m, a = attention(hid[:1], np.array([0.3, -2.0]))
    assert a.tolist() == [1.0] and np.array_equal(m, hid[0])
    _, a = attention(np.array([[0.0], [math.log(3)]]), np.array([1.0]))
    assert np.allclose(a, [0.25, 0.75], atol=1e-12)


def test_forward_duplicates_and_permutation():
    p = make(nodes=6, seed=3)
    toks = [1, 5, 7, 2]
    probs, _ = forward(toks, [4, 4, 1], p)
    assert probs[0] == probs[1]
    base, _ = forward(toks, [0, 1, 2, 3, 4, 5], p)
    perm = [5, 2, 0, 4, 1, 3]
    got, _ = forward(toks, perm, p)
    assert np.array_equal(got, base[perm])


def test_forward_rejects_unknown_node():
    p = make(nodes=4)
    with pytest.raises(ValueError):
        forward([1], [4], p)
    p.node_offset = 10
    with pytest.raises(ValueError):
        forward([1], [3], p)
    forward([1], [13], p)


def test_padding_has_no_effect():
    p = make(seed=2)
    short, long = [3, 4, 5], [1, 2, 3, 4, 5, 6, 7]
    alone, _ = forward(short, [0, 2], p)
    ids, mask = pad_tokens([long, short])
    cands, cmask = pad_candidates([[0, 1, 2], [0, 2]])
    tr = forward_batch(p, ids, mask, cands, cmask)
    assert np.allclose(tr.probs[1, :2], alone, atol=1e-6)
    assert np.all(tr.alpha[1, :, 3:] == 0)


def test_shared_layer_contract():
    p = make(seed=4)
    toks = [1, 2, 3, 4, 5]
    base, _ = forward(toks, [0, 1, 2, 3], p)
    q = p.copy()
    q.arrays["fc0.w"] = q.arrays["fc0.w"] + 0.1
    moved, _ = forward(toks, [0, 1, 2, 3], q)
    assert np.all(moved != base)
    q = p.copy()
    q.arrays["attention"][2] += 0.5
    moved, _ = forward(toks, [0, 1, 2, 3], q)
    assert moved[2] != base[2]
    assert np.array_equal(np.delete(moved, 2), np.delete(base, 2))


@pytest.mark.parametrize("p,y,expected", [(0.5, 1, math.log(2)), (0.75, 0, -math.log(0.25))])
def test_bce_examples(p, y, expected):
    assert bce_loss([p], [y]) == pytest.approx(expected, abs=1e-6)


def test_bce_clamped_floor():
    assert bce_loss([1.0, 0.0], [1, 0]) <= 2.8e-11


def test_out_bias_gradient_closed_form():
    p = make(seed=1, dtype=np.float64)
    ids, mask = pad_tokens([[1, 2, 3]])
    tr = forward_batch(p, ids, mask, np.array([[2]]), None, "train", np.random.default_rng(0))
    y = np.array([[1.0]])
    g = backward(tr, y, p)
    assert g["out.b"][0] == pytest.approx(tr.probs[0, 0] - 1.0, abs=1e-12)


def test_zero_loss_gradient_vanishes():
    p = make(seed=1, dtype=np.float64)
    p.arrays["out.b"][:] = 60.0
    ids, mask = pad_tokens([[1, 2, 3]])
    tr = forward_batch(p, ids, mask, np.array([[0, 1]]), None, "train", np.random.default_rng(0))
    g = backward(tr, np.ones((1, 2)), p)
    assert math.sqrt(sum(float((v**2).sum()) for v in g.values())) < 1e-8


def test_untouched_attention_rows_get_zero_gradient():
    p = make(nodes=6, seed=5, dtype=np.float64)
    ids, mask = pad_tokens([[1, 2, 3], [4, 5]])
    tr = forward_batch(p, ids, mask, np.array([[0, 3], [3, 5]]), None, "train", np.random.default_rng(0))
    g = backward(tr, np.array([[1.0, 0.0], [0.0, 1.0]]), p)["attention"]
    assert not g[[1, 2, 4]].any() and g[[0, 3, 5]].any()


@pytest.mark.parametrize("encoder", ["recurrent", "mean"])
@pytest.mark.parametrize("fc", [(6,), (6, 5)])
def test_gradients_match_finite_differences(encoder, fc):
    worst, checked, skipped = check(seed=11, encoder=encoder, fc_sizes=fc)
    assert worst < 1e-3
    assert skipped <= 0.05 * (checked + skipped)


def test_adam_zero_gradient_keeps_params():
    p = make(dtype=np.float64)
    before = p.copy()
    opt = OptimizerState.for_params(p)
    adam_step(p, p.zeros_like(), opt)
    assert all(np.array_equal(p.arrays[k], before.arrays[k]) for k in p.arrays)
    assert opt.step == 1
    adam_step(p, p.zeros_like(), opt)
    assert opt.step == 2


def test_adam_first_step_size():
    p = make(dtype=np.float64)
    g = p.zeros_like()
    g["out.b"][:] = 1.0
    before = float(p.arrays["out.b"][0])
    adam_step(p, g, OptimizerState.for_params(p, lr=1e-3))
    # bias-corrected moments are both exactly one, so the step is lr / (1 + eps)
    step = float(p.arrays["out.b"][0]) - before
    assert step == pytest.approx(-1e-3 / (1 + 1e-8), rel=1e-12)
    assert step == pytest.approx(-9.99999995e-4, rel=1e-8)


def test_adam_rejects_non_finite():
    p = make()
    g = p.zeros_like()
    g["fc0.b"][0] = np.nan
    with pytest.raises(FloatingPointError):
        adam_step(p, g, OptimizerState.for_params(p))


def test_swa_examples():
    a, b = make(seed=1), make(seed=2)
    s = SWAState()
    swa_update(s, a)
    assert all(np.array_equal(swa_params(s, a).arrays[k], a.arrays[k]) for k in a.arrays)
    swa_update(s, b)
    mean = swa_params(s, a)
    for k in a.arrays:
        assert np.allclose(mean.arrays[k], (a.arrays[k].astype(np.float64) + b.arrays[k]) / 2, atol=1e-7)
    swa_update(s, mean)
    again = swa_params(s, a)
    assert all(np.allclose(again.arrays[k], mean.arrays[k], atol=1e-7) for k in a.arrays)
    assert s.n == 3


def test_init_from_previous_level():
    prev = make(nodes=4, seed=3)
    nxt = init_from_previous_level(prev, 9, seed=5, node_offset=5)
    assert nxt.arrays["attention"].shape == (9, prev.config.state_dim)
    assert nxt.level == prev.level + 1 and nxt.node_offset == 5
    for k in prev.arrays:
        if k != "attention":
            assert np.array_equal(nxt.arrays[k], prev.arrays[k])
            assert nxt.arrays[k] is not prev.arrays[k]
    again = init_from_previous_level(prev, 9, seed=5)
    assert np.array_equal(again.arrays["attention"], nxt.arrays["attention"])
    bound = 1 / math.sqrt(prev.config.state_dim)
    assert np.all(np.abs(nxt.arrays["attention"]) <= bound)


@pytest.mark.parametrize("encoder", ["recurrent", "mean"])
def test_model_file_round_trip(tmp_path, encoder):
    p = make(encoder, nodes=7, seed=8, fc=(6, 3))
    p.level, p.node_offset, p.meta = 2, 9, {"member": 1}
    save_model(p, tmp_path / "m.axm")
    raw = (tmp_path / "m.axm").read_bytes()
    assert raw[:4] == b"AXM1"
    q = load_model(tmp_path / "m.axm")
    assert q.config == p.config and (q.level, q.node_offset, q.meta) == (2, 9, {"member": 1})
    assert list(q.arrays) == list(p.arrays)
    for k in p.arrays:
        assert q.arrays[k].tobytes() == p.arrays[k].tobytes()
    save_model(q, tmp_path / "n.axm")
    assert (tmp_path / "n.axm").read_bytes() == raw


@given(st.integers(1, 6), st.integers(1, 5), st.integers(0, 10_000))
def test_attention_columns_normalized(T, C, seed):
    p = make(nodes=6, seed=seed % 7)
    rng = np.random.default_rng(seed)
    toks = rng.integers(0, 15, T).tolist()
    _, tr = forward(toks, rng.integers(0, 6, C).tolist(), p)
    assert np.allclose(tr.alpha.sum(axis=2), 1, atol=1e-6)
    assert np.all((tr.probs > 0) & (tr.probs < 1))
