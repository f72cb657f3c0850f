import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ratgan import functional as F
from ratgan.conditioning import (
    AffineParams,
    AffinePredictor,
    CATBlockWeights,
    LSTMInit,
    LSTMState,
    LSTMWeights,
    RATBlockWeights,
    ShuffleAttentionWeights,
    affine_modulate,
    cat_block_forward,
    init_cat_block,
    init_lstm,
    init_rat_block,
    init_shuffle_attention,
    lstm_init,
    lstm_step,
    mlp_forward,
    predict_affine,
    rat_block_forward,
    shuffle_attention_forward,
)
from ratgan.errors import ConfigError, ShapeError
from ratgan.nn import Conv, Linear, MLP2, init_linear, init_mlp2, parameters
from ratgan.tensor import Tensor, leaky_relu


def T(a):
    return Tensor(np.asarray(a, dtype=np.float64))


def zeros_linear(n_in, n_out, bias=0.0):
    return Linear(T(np.zeros((n_out, n_in))), T(np.full(n_out, bias)))


def identity_conv(c):
    w = np.zeros((c, c, 3, 3))
    for i in range(c):
        w[i, i, 1, 1] = 1.0
    return Conv(T(w), T(np.zeros(c)))


def sigmoid(v):
    return 1.0 / (1.0 + math.exp(-v))


# ---------------------------------------------------------------- MLPs


def test_mlp_bias_only_and_identity():
    x = T(np.random.default_rng(0).normal(size=4))
    b = np.arange(3.0)
    assert np.array_equal(mlp_forward(x, Linear(T(np.zeros((3, 4))), T(b))).data, b)
    assert np.array_equal(mlp_forward(x, Linear(T(np.eye(4)), T(np.zeros(4)))).data, x.data)


def test_mlp_matches_matmul_oracle():
    rng = np.random.default_rng(1)
    m = init_mlp2(rng, 5, 6, 3)
    for p in parameters(m):
        p.data = rng.normal(size=p.shape)
    x = rng.normal(size=(2, 5))
    h = x @ m.fc1.weight.data.T + m.fc1.bias.data
    h = np.where(h > 0, h, 0.2 * h)
    ref = h @ m.fc2.weight.data.T + m.fc2.bias.data
    assert np.allclose(mlp_forward(T(x), m).data, ref, atol=1e-13)
    with pytest.raises(ShapeError):
        mlp_forward(T(x), m, kind="1-layer")
    with pytest.raises(ShapeError):
        mlp_forward(T(np.ones(4)), m)


# ---------------------------------------------------------------- LSTM


def test_lstm_init_cases():
    z = T(np.random.default_rng(0).normal(size=5))
    zero = LSTMInit(zeros_linear(5, 3), zeros_linear(5, 3))
    s = lstm_init(z, zero)
    assert np.array_equal(s.h.data, np.zeros(3)) and np.array_equal(s.c.data, np.zeros(3))
    bias_only = LSTMInit(zeros_linear(5, 3, 0.5), zeros_linear(5, 3, -2.0))
    s = lstm_init(T(np.zeros(5)), bias_only)
    assert np.array_equal(s.h.data, np.full(3, 0.5)) and np.array_equal(s.c.data, np.full(3, -2.0))
    rng = np.random.default_rng(1)
    init = LSTMInit(init_linear(rng, 5, 3), init_linear(rng, 5, 3))
    s = lstm_init(z, init)
    assert np.allclose(s.h.data, init.h.weight.data @ z.data + init.h.bias.data, atol=1e-15)


def test_lstm_zero_weights_case():
    d, D = 3, 4
    w = LSTMWeights(T(np.zeros((4 * D, d + D))), T(np.zeros(4 * D)))
    c0 = np.random.default_rng(0).normal(size=D)
    state, gates = lstm_step(LSTMState(T(np.ones(D)), T(c0)), T(np.ones(d)), w)
    for g in (gates.i, gates.f, gates.o):
        assert np.array_equal(g.data, np.full(D, 0.5))
    assert np.array_equal(gates.u.data, np.zeros(D))
    assert np.allclose(state.c.data, 0.5 * c0, atol=0)
    assert np.allclose(state.h.data, 0.5 * np.tanh(0.5 * c0), atol=1e-16)


def test_lstm_perfect_memory_limit():
    d, D = 3, 4
    rng = np.random.default_rng(0)
    bias = np.zeros(4 * D)
    bias[:D] = -20.0  # input gate closed
    bias[D : 2 * D] = 20.0  # forget gate open
    w = LSTMWeights(T(np.zeros((4 * D, d + D))), T(bias))
    c0 = rng.normal(size=D)
    state, _ = lstm_step(LSTMState(T(rng.normal(size=D)), T(c0)), T(rng.normal(size=d)), w)
    assert np.max(np.abs(state.c.data - c0)) < 1e-8


def _scalar_lstm(h, c, s, W, b):
    D = len(h)
    x = list(s) + list(h)
    pre = [b[r] + sum(W[r][k] * x[k] for k in range(len(x))) for r in range(4 * D)]
    i = [sigmoid(pre[j]) for j in range(D)]
    f = [sigmoid(pre[D + j]) for j in range(D)]
    o = [sigmoid(pre[2 * D + j]) for j in range(D)]
    u = [math.tanh(pre[3 * D + j]) for j in range(D)]
    c_new = [f[j] * c[j] + i[j] * u[j] for j in range(D)]
    h_new = [o[j] * math.tanh(c_new[j]) for j in range(D)]
    return h_new, c_new


@pytest.mark.parametrize("seed", range(5))
def test_lstm_matches_scalar_loop(seed):
    rng = np.random.default_rng(seed)
    d, D = 3, 4
    W, b = rng.uniform(-1, 1, (4 * D, d + D)), rng.uniform(-1, 1, 4 * D)
    h, c, s = rng.uniform(-1, 1, D), rng.uniform(-1, 1, D), rng.uniform(-1, 1, d)
    state, _ = lstm_step(LSTMState(T(h), T(c)), T(s), LSTMWeights(T(W), T(b)))
    h_ref, c_ref = _scalar_lstm(h, c, s, W, b)
    assert np.max(np.abs(state.h.data - h_ref)) <= 1e-12
    assert np.max(np.abs(state.c.data - c_ref)) <= 1e-12


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.1, 50.0))
def test_gate_ranges(seed, scale):
    rng = np.random.default_rng(seed)
    d, D = 3, 5
    w = LSTMWeights(T(rng.normal(0, scale, (4 * D, d + D))), T(rng.normal(0, scale, 4 * D)))
    _, g = lstm_step(LSTMState(T(rng.normal(size=D)), T(rng.normal(size=D))), T(rng.normal(size=d)), w)
    for gate in (g.i, g.f, g.o):
        assert ((gate.data >= 0) & (gate.data <= 1)).all()
    assert ((g.u.data >= -1) & (g.u.data <= 1)).all()


def test_lstm_shape_errors():
    w = init_lstm(np.random.default_rng(0), 3, 4)
    with pytest.raises(ShapeError):
        lstm_step(LSTMState(T(np.zeros(4)), T(np.zeros(4))), T(np.zeros(2)), w)
    with pytest.raises(ShapeError):
        lstm_step(LSTMState(T(np.zeros(3)), T(np.zeros(3))), T(np.zeros(3)), w)


def test_forget_bias_initialized_to_one():
    w = init_lstm(np.random.default_rng(0), 3, 4)
    assert np.array_equal(w.bias.data, np.r_[np.zeros(4), np.ones(4), np.zeros(8)])


# ---------------------------------------------------------------- affine


def test_predict_affine_cases():
    h = T(np.random.default_rng(0).normal(size=4))
    p = predict_affine(h, AffinePredictor(zeros_linear(4, 3), zeros_linear(4, 3)))
    assert np.array_equal(p.gamma.data, np.zeros(3)) and np.array_equal(p.beta.data, np.zeros(3))
    p = predict_affine(h, AffinePredictor(zeros_linear(4, 3, 1.0), zeros_linear(4, 3)))
    x = np.random.default_rng(1).normal(size=(3, 2, 2))
    assert np.array_equal(affine_modulate(T(x), p).data, x)


def test_affine_modulate_definition():
    rng = np.random.default_rng(0)
    x, g, b = rng.normal(size=(3, 4, 5)), rng.normal(size=3), rng.normal(size=3)
    out = affine_modulate(T(x), AffineParams(T(g), T(b))).data
    for ch in range(3):
        for y in range(4):
            for xx in range(5):
                assert out[ch, y, xx] == g[ch] * x[ch, y, xx] + b[ch]
    flat = affine_modulate(T(x), AffineParams(T(np.zeros(3)), T(b))).data
    assert np.array_equal(flat, np.broadcast_to(b[:, None, None], x.shape))
    assert np.array_equal(affine_modulate(T(x), AffineParams(T(np.ones(3)), T(np.zeros(3)))).data, x)
    with pytest.raises(ShapeError):
        affine_modulate(T(x), AffineParams(T(np.ones(2)), T(np.zeros(2))))


def test_affine_modulate_batched_params():
    rng = np.random.default_rng(0)
    x, g, b = rng.normal(size=(2, 3, 2, 2)), rng.normal(size=(2, 3)), rng.normal(size=(2, 3))
    out = affine_modulate(T(x), AffineParams(T(g), T(b))).data
    assert np.allclose(out, g[:, :, None, None] * x + b[:, :, None, None], atol=0)


# ---------------------------------------------------------------- blocks


def _trivial_rat_block(D, C):
    return RATBlockWeights(AffinePredictor(zeros_linear(D, C, 1.0), zeros_linear(D, C)), identity_conv(C))


def test_rat_block_trivial_composition():
    d, D, C = 3, 4, 2
    lstm = LSTMWeights(T(np.zeros((4 * D, d + D))), T(np.zeros(4 * D)))
    c0 = np.random.default_rng(0).normal(size=D)
    x = np.random.default_rng(1).normal(size=(C, 3, 3))
    out, state = rat_block_forward(T(x), LSTMState(T(np.zeros(D)), T(c0)), T(np.ones(d)), lstm, _trivial_rat_block(D, C))
    assert np.allclose(out.data, np.where(x > 0, x, 0.2 * x), atol=1e-15)
    assert np.allclose(state.c.data, 0.5 * c0) and np.allclose(state.h.data, 0.5 * np.tanh(0.5 * c0))


def _random_rat(seed, d=3, D=4, C=4):
    rng = np.random.default_rng(seed)
    lstm = init_lstm(rng, d, D)
    blocks = [init_rat_block(rng, D, C) for _ in range(2)]
    for p in parameters(lstm) + parameters(blocks):
        p.data = rng.normal(0, 0.5, p.shape)
    x = rng.normal(size=(C, 4, 4))
    state = LSTMState(T(rng.normal(size=D)), T(rng.normal(size=D)))
    return lstm, blocks, T(x), state, T(rng.normal(size=d))


def test_rat_block_matches_hand_pipeline():
    lstm, blocks, x, state, s = _random_rat(0)
    out, new = rat_block_forward(x, state, s, lstm, blocks[0])
    ref_state, _ = lstm_step(state, s, lstm)
    p = predict_affine(ref_state.h, blocks[0].predictor)
    ref = F.conv2d(leaky_relu(affine_modulate(x, p)), blocks[0].conv.weight, 1, 1).data
    ref = ref + blocks[0].conv.bias.data[:, None, None]
    assert np.max(np.abs(out.data - ref)) < 1e-13
    assert np.array_equal(new.h.data, ref_state.h.data)


@pytest.mark.parametrize("seed", range(5))
def test_rat_stack_is_order_sensitive(seed):
    lstm, (a, b), x, state, s = _random_rat(seed)

    def run(first, second):
        y, st1 = rat_block_forward(x, state, s, lstm, first)
        y, _ = rat_block_forward(y, st1, s, lstm, second)
        return y.data

    assert not np.allclose(run(a, b), run(b, a))
    # swapping only the conditioning predictors (convs fixed) also changes the output
    swapped = (RATBlockWeights(b.predictor, a.conv), RATBlockWeights(a.predictor, b.conv))
    assert not np.allclose(run(a, b), run(*swapped))


def test_cat_blocks_are_stateless():
    rng = np.random.default_rng(0)
    a, b = init_cat_block(rng, 3, 4), init_cat_block(rng, 3, 4)
    for p in parameters([a, b]):
        p.data = rng.normal(0, 0.5, p.shape)
    x, s = T(rng.normal(size=(4, 4, 4))), T(rng.normal(size=3))
    # each block's modulation is computed from s alone, wherever it sits in the stack
    pa, pb = predict_affine(s, a.predictor), predict_affine(s, b.predictor)
    ref = b.conv(leaky_relu(affine_modulate(a.conv(leaky_relu(affine_modulate(x, pa))), pb)))
    assert np.array_equal(cat_block_forward(cat_block_forward(x, s, a), s, b).data, ref.data)
    ref_swapped = a.conv(leaky_relu(affine_modulate(b.conv(leaky_relu(affine_modulate(x, pb))), pa)))
    assert np.array_equal(cat_block_forward(cat_block_forward(x, s, b), s, a).data, ref_swapped.data)


def test_rat_modulation_depends_on_position():
    lstm, (a, b), x, state, s = _random_rat(0)
    first, _ = lstm_step(state, s, lstm)
    second, _ = lstm_step(first, s, lstm)
    assert not np.allclose(predict_affine(first.h, b.predictor).gamma.data, predict_affine(second.h, b.predictor).gamma.data)


def test_cat_block_trivial_and_oracle():
    C, d = 2, 3
    pred = AffinePredictor(
        MLP2(zeros_linear(d, C), zeros_linear(C, C, 1.0)), MLP2(zeros_linear(d, C), zeros_linear(C, C))
    )
    x = np.random.default_rng(0).normal(size=(C, 3, 3))
    out = cat_block_forward(T(x), T(np.ones(d)), CATBlockWeights(pred, identity_conv(C)))
    assert np.allclose(out.data, np.where(x > 0, x, 0.2 * x), atol=1e-15)
    rng = np.random.default_rng(1)
    blk = init_cat_block(rng, d, C)
    for p in parameters(blk):
        p.data = rng.normal(0, 0.5, p.shape)
    s = T(rng.normal(size=d))
    p = predict_affine(s, blk.predictor)
    ref = blk.conv(leaky_relu(affine_modulate(T(x), p))).data
    assert np.array_equal(cat_block_forward(T(x), s, blk).data, ref)


# ---------------------------------------------------------------- shuffle attention


@pytest.mark.parametrize("C,groups", [(4, 1), (4, 2), (8, 2), (12, 3), (16, 4)])
def test_shuffle_attention_init_is_half_shuffle(C, groups):
    x = np.random.default_rng(C).normal(size=(C, 3, 3))
    out = shuffle_attention_forward(T(x), groups, init_shuffle_attention(C, groups))
    assert out.shape == x.shape
    assert np.array_equal(out.data, 0.5 * F.channel_shuffle(T(x), groups).data)


def _sa_oracle(x, groups, cs, ch, ss, sh, eps=1e-5):
    C, H, W = x.shape
    half = C // (2 * groups)
    out = np.zeros_like(x)
    for g in range(groups):
        base = g * 2 * half
        for j in range(half):
            xc = x[base + j]
            out[base + j] = xc * (1.0 / (1.0 + np.exp(-(cs[j] * xc.mean() + ch[j]))))
            xs = x[base + half + j]
            norm = (xs - xs.mean()) / np.sqrt(xs.var() + eps)
            out[base + half + j] = xs * (1.0 / (1.0 + np.exp(-(ss[j] * norm + sh[j]))))
    perm = np.arange(C).reshape(groups, C // groups).T.ravel()
    return out[perm]


@pytest.mark.parametrize("seed", range(3))
def test_shuffle_attention_matches_per_group_oracle(seed):
    rng = np.random.default_rng(seed)
    C, groups = 8, 2
    params = [rng.normal(size=C // (2 * groups)) for _ in range(4)]
    x = rng.normal(size=(C, 4, 4))
    out = shuffle_attention_forward(T(x), groups, ShuffleAttentionWeights(*map(T, params)))
    assert np.max(np.abs(out.data - _sa_oracle(x, groups, *params))) < 1e-12


def test_shuffle_attention_errors():
    with pytest.raises(ConfigError):
        init_shuffle_attention(6, 2)
    with pytest.raises(ConfigError):
        shuffle_attention_forward(T(np.ones((6, 2, 2))), 2, init_shuffle_attention(4, 1))
