"""Text-conditioned affine modulation layers.

CAT blocks predict a per-channel scale/shift from the sentence vector with
an MLP, independently per block. RAT blocks instead thread one LSTM (shared
weights) through the whole stack and predict scale/shift from its hidden
state, so every block sees the same running summary of the condition.
Shuffle attention sits between blocks to re-weight channels and positions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .functional import channel_shuffle, group_norm
from .nn import MLP2, Conv, Linear, init_conv, init_linear, init_mlp2
from .tensor import Tensor, concat, leaky_relu, sigmoid, tanh

FORGET_BIAS = 1.0


@dataclass
class AffineParams:
    gamma: Tensor  # C (or N×C)
    beta: Tensor


@dataclass
class LSTMState:
    h: Tensor  # D (or N×D)
    c: Tensor


@dataclass
class LSTMWeights:
    weight: Tensor  # 4D × (d + D), rows ordered [i, f, o, u]
    bias: Tensor  # 4D

    @property
    def hidden_dim(self) -> int:
        return self.weight.shape[0] // 4

    @property
    def input_dim(self) -> int:
        return self.weight.shape[1] - self.hidden_dim


@dataclass
class LSTMInit:
    h: Linear  # noise -> h0
    c: Linear  # noise -> c0


@dataclass
class GateActivations:
    i: Tensor
    f: Tensor
    o: Tensor
    u: Tensor


@dataclass
class AffinePredictor:
    gamma: Linear | MLP2
    beta: Linear | MLP2


@dataclass
class RATBlockWeights:
    predictor: AffinePredictor | None  # None when the LSTM has zero hidden units
    conv: Conv


@dataclass
class CATBlockWeights:
    predictor: AffinePredictor
    conv: Conv


@dataclass
class ShuffleAttentionWeights:
    channel_scale: Tensor  # C / (2·groups), shared by all groups
    channel_shift: Tensor
    spatial_scale: Tensor
    spatial_shift: Tensor


# ----------------------------------------------------------------------
# initialization
# ----------------------------------------------------------------------


def init_lstm(rng: np.random.Generator, input_dim: int, hidden_dim: int) -> LSTMWeights:
    bias = np.zeros(4 * hidden_dim)
    bias[hidden_dim : 2 * hidden_dim] = FORGET_BIAS
    return LSTMWeights(
        Tensor(rng.normal(0.0, 0.02, (4 * hidden_dim, input_dim + hidden_dim)), requires_grad=True),
        Tensor(bias, requires_grad=True),
    )


def init_lstm_init(rng: np.random.Generator, noise_dim: int, hidden_dim: int) -> LSTMInit:
    return LSTMInit(init_linear(rng, noise_dim, hidden_dim), init_linear(rng, noise_dim, hidden_dim))


def init_rat_block(rng: np.random.Generator, hidden_dim: int, channels: int) -> RATBlockWeights:
    predictor = None
    if hidden_dim > 0:
        predictor = AffinePredictor(
            init_linear(rng, hidden_dim, channels, bias=1.0),
            init_linear(rng, hidden_dim, channels),
        )
    return RATBlockWeights(predictor, init_conv(rng, channels, channels))


def init_cat_predictor(rng: np.random.Generator, cond_dim: int, channels: int, hidden: int | None = None) -> AffinePredictor:
    hidden = channels if hidden is None else hidden
    return AffinePredictor(
        init_mlp2(rng, cond_dim, hidden, channels, out_bias=1.0),
        init_mlp2(rng, cond_dim, hidden, channels),
    )


def init_cat_block(rng: np.random.Generator, sentence_dim: int, channels: int) -> CATBlockWeights:
    return CATBlockWeights(init_cat_predictor(rng, sentence_dim, channels), init_conv(rng, channels, channels))


def init_shuffle_attention(channels: int, groups: int) -> ShuffleAttentionWeights:
    _check_sa_channels(channels, groups)
    half = channels // (2 * groups)
    return ShuffleAttentionWeights(*(Tensor(np.zeros(half), requires_grad=True) for _ in range(4)))


# ----------------------------------------------------------------------
# forward ops
# ----------------------------------------------------------------------


def mlp_forward(x: Tensor, weights: Linear | MLP2, kind: str | None = None) -> Tensor:
    """Single affine map ("1-layer") or affine-leaky_relu-affine ("2-layer")."""
    if kind is None:
        kind = "2-layer" if isinstance(weights, MLP2) else "1-layer"
    if kind == "1-layer":
        if not isinstance(weights, Linear):
            raise ShapeError("1-layer MLP needs Linear weights")
        return weights(x)
    if kind == "2-layer":
        if not isinstance(weights, MLP2):
            raise ShapeError("2-layer MLP needs MLP2 weights")
        return weights.fc2(leaky_relu(weights.fc1(x)))
    raise ConfigError(f"unknown MLP kind {kind!r}")


def lstm_init(z: Tensor, weights: LSTMInit) -> LSTMState:
    """h0 and c0 from the noise vector, each through its own affine map."""
    return LSTMState(mlp_forward(z, weights.h), mlp_forward(z, weights.c))


def lstm_step(prev: LSTMState, s: Tensor, w: LSTMWeights) -> tuple[LSTMState, GateActivations]:
    D = w.hidden_dim
    if s.shape[-1] != w.input_dim or prev.h.shape[-1] != D or prev.c.shape != prev.h.shape:
        raise ShapeError(
            f"lstm_step: sentence {s.shape}, h {prev.h.shape}, c {prev.c.shape} "
            f"inconsistent with weight {w.weight.shape}"
        )
    pre = Linear(w.weight, w.bias)(concat([s, prev.h], axis=-1))
    i = sigmoid(pre[..., 0:D])
    f = sigmoid(pre[..., D : 2 * D])
    o = sigmoid(pre[..., 2 * D : 3 * D])
    u = tanh(pre[..., 3 * D : 4 * D])
    c = f * prev.c + i * u
    h = o * tanh(c)
    return LSTMState(h, c), GateActivations(i, f, o, u)


def predict_affine(h: Tensor, weights: AffinePredictor) -> AffineParams:
    return AffineParams(mlp_forward(h, weights.gamma), mlp_forward(h, weights.beta))


def affine_modulate(c: Tensor, p: AffineParams) -> Tensor:
    """gamma[ch]·c[ch,y,x] + beta[ch], broadcast over space (and batch)."""
    C = c.shape[-3]
    if p.gamma.shape[-1] != C or p.beta.shape[-1] != C:
        raise ShapeError(f"affine_modulate: params {p.gamma.shape}/{p.beta.shape} vs features {c.shape}")
    lead = c.shape[:-3]
    if p.gamma.ndim == 1:
        pshape = (1,) * len(lead) + (C, 1, 1)
    else:
        pshape = p.gamma.shape + (1, 1)
    return p.gamma.reshape(pshape) * c + p.beta.reshape(pshape)


def _modulate_and_convolve(x: Tensor, params: AffineParams | None, conv: Conv) -> Tensor:
    if params is not None:
        x = affine_modulate(x, params)
    return conv(leaky_relu(x))


def rat_block_forward(
    x: Tensor, state: LSTMState, s: Tensor, lstm: LSTMWeights, block: RATBlockWeights
) -> tuple[Tensor, LSTMState]:
    """Advance the shared LSTM, modulate with its hidden state, then lrelu + conv."""
    if block.predictor is None:
        return _modulate_and_convolve(x, None, block.conv), state
    state, _ = lstm_step(state, s, lstm)
    return _modulate_and_convolve(x, predict_affine(state.h, block.predictor), block.conv), state


def cat_block_forward(x: Tensor, s: Tensor, block: CATBlockWeights) -> Tensor:
    """Stateless baseline: scale/shift from the sentence vector alone."""
    return _modulate_and_convolve(x, predict_affine(s, block.predictor), block.conv)


def _check_sa_channels(channels: int, groups: int) -> None:
    if groups < 1 or channels % (2 * groups):
        raise ConfigError(f"shuffle attention: {channels} channels not divisible by 2·{groups}")


def shuffle_attention_forward(x: Tensor, groups: int, w: ShuffleAttentionWeights) -> Tensor:
    """Grouped channel/spatial gating followed by a channel shuffle.

    Each group's channels split in half: the first half is gated by its
    pooled mean, the second by its per-channel normalized map.
    """
    if x.ndim == 3:
        out = shuffle_attention_forward(x.reshape((1,) + x.shape), groups, w)
        return out.reshape(x.shape)
    n, C, H, W = x.shape
    _check_sa_channels(C, groups)
    half = C // (2 * groups)
    if w.channel_scale.shape != (half,):
        raise ShapeError(f"shuffle attention: params {w.channel_scale.shape} for {half} branch channels")
    xg = x.reshape((n, groups, 2 * half, H, W))
    xc = xg[:, :, :half]
    xs = xg[:, :, half:]
    pshape = (1, 1, half, 1, 1)

    pooled = xc.mean(axis=(-2, -1), keepdims=True)
    channel = xc * sigmoid(w.channel_scale.reshape(pshape) * pooled + w.channel_shift.reshape(pshape))

    normed = group_norm(xs.reshape((n * groups, half, H, W)), half).reshape(xs.shape)
    spatial = xs * sigmoid(w.spatial_scale.reshape(pshape) * normed + w.spatial_shift.reshape(pshape))

    out = concat([channel, spatial], axis=2).reshape((n, C, H, W))
    return channel_shuffle(out, groups)
