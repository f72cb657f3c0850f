"""Structural layer ops on C×H×W (or N×C×H×W) tensors."""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, ShapeError
from .tensor import Tensor, _make, _wrap, concat, expand, leaky_relu, sigmoid, tanh

# ----------------------------------------------------------------------
# convolution kernels (numpy); all three are linear in each argument and
# form a closed set under differentiation
# ----------------------------------------------------------------------


def _im2col(xp: np.ndarray, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """Columns of shape (C*k*k, N*ho*wo) from a padded N×C×H×W array."""
    n, c = xp.shape[:2]
    xt = xp.transpose(1, 0, 2, 3)
    cols = np.empty((c, k, k, n, ho, wo))
    hspan = stride * (ho - 1) + 1
    wspan = stride * (wo - 1) + 1
    for i in range(k):
        for j in range(k):
            cols[:, i, j] = xt[:, :, i : i + hspan : stride, j : j + wspan : stride]
    return cols.reshape(c * k * k, n * ho * wo)


def _pad(x: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return x
    n, c, h, w = x.shape
    out = np.zeros((n, c, h + 2 * pad, w + 2 * pad))
    out[:, :, pad : pad + h, pad : pad + w] = x
    return out


def _out_size(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def _conv_np(x: np.ndarray, w: np.ndarray, stride: int, pad: int, keep_cols: bool = False):
    n, _, h, wd = x.shape
    co, ci, k, _ = w.shape
    ho, wo = _out_size(h, k, stride, pad), _out_size(wd, k, stride, pad)
    cols = _im2col(_pad(x, pad), k, stride, ho, wo)
    out = (w.reshape(co, ci * k * k) @ cols).reshape(co, n, ho, wo).transpose(1, 0, 2, 3)
    return (out, cols) if keep_cols else out


def _conv_input_grad_np(g: np.ndarray, w: np.ndarray, in_hw: tuple, stride: int, pad: int) -> np.ndarray:
    n, co, ho, wo = g.shape
    _, ci, k, _ = w.shape
    h, wd = in_hw
    if pad > k - 1:
        raise ConfigError(f"conv2d: padding {pad} exceeds kernel size - 1 ({k - 1})")
    # dilate by stride, pad by k-1-pad, plus the rows/cols the forward stride skipped
    rh = (h + 2 * pad - k) - stride * (ho - 1)
    rw = (wd + 2 * pad - k) - stride * (wo - 1)
    q = k - 1 - pad
    gd = np.zeros((n, co, stride * (ho - 1) + 1 + 2 * q + rh, stride * (wo - 1) + 1 + 2 * q + rw))
    gd[:, :, q : q + stride * (ho - 1) + 1 : stride, q : q + stride * (wo - 1) + 1 : stride] = g
    wf = w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
    return _conv_np(gd, np.ascontiguousarray(wf), 1, 0)


def _conv_weight_grad_np(x: np.ndarray, g: np.ndarray, k: int, stride: int, pad: int, cols=None) -> np.ndarray:
    n, ci = x.shape[:2]
    co, ho, wo = g.shape[1:]
    if cols is None:
        cols = _im2col(_pad(x, pad), k, stride, ho, wo)
    gm = g.transpose(1, 0, 2, 3).reshape(co, n * ho * wo)
    return (gm @ cols.T).reshape(co, ci, k, k)


def _conv4(x: Tensor, w: Tensor, stride: int, pad: int) -> Tensor:
    # the im2col matrix of x is reused by the weight gradient
    cache = {}

    def bw(g, needs):
        gx = _conv_input_grad(g, w, x.shape[2:], stride, pad) if needs[0] else None
        gw = _conv_weight_grad(x, g, w.shape[2], stride, pad, cache.pop("cols", None)) if needs[1] else None
        return gx, gw

    keep = w.requires_grad
    out = _conv_np(x.data, w.data, stride, pad, keep_cols=keep)
    if keep:
        out, cache["cols"] = out
    return _make(out, (x, w), bw, "conv2d")


def _conv_input_grad(g: Tensor, w: Tensor, in_hw: tuple, stride: int, pad: int) -> Tensor:
    def bw(gg, needs):
        dg = _conv4(gg, w, stride, pad) if needs[0] else None
        dw = _conv_weight_grad(gg, g, w.shape[2], stride, pad) if needs[1] else None
        return dg, dw

    return _make(_conv_input_grad_np(g.data, w.data, in_hw, stride, pad), (g, w), bw, "conv2d_input_grad")


def _conv_weight_grad(x: Tensor, g: Tensor, k: int, stride: int, pad: int, cols=None) -> Tensor:
    def bw(gw, needs):
        dx = _conv_input_grad(g, gw, x.shape[2:], stride, pad) if needs[0] else None
        dg = _conv4(x, gw, stride, pad) if needs[1] else None
        return dx, dg

    return _make(_conv_weight_grad_np(x.data, g.data, k, stride, pad, cols), (x, g), bw, "conv2d_weight_grad")


def conv2d(x, w, stride: int = 1, pad: int = 0) -> Tensor:
    """Zero-padded cross-correlation.

    ``x`` is C_in×H×W or N×C_in×H×W, ``w`` is C_out×C_in×k×k.
    """
    x, w = _wrap(x), _wrap(w)
    if w.ndim != 4 or w.shape[2] != w.shape[3]:
        raise ShapeError(f"conv2d: kernel must be C_out×C_in×k×k, got {w.shape}")
    if x.ndim not in (3, 4):
        raise ShapeError(f"conv2d: input must be C×H×W or N×C×H×W, got {x.shape}")
    if x.shape[-3] != w.shape[1]:
        raise ShapeError(f"conv2d: input channels {x.shape} do not match kernel {w.shape}")
    if stride < 1:
        raise ConfigError(f"conv2d: stride must be >= 1, got {stride}")
    k = w.shape[2]
    if k > x.shape[-2] + 2 * pad or k > x.shape[-1] + 2 * pad:
        raise ShapeError(f"conv2d: kernel {k} larger than padded input {x.shape} (pad {pad})")
    if x.ndim == 3:
        out = _conv4(x.reshape((1,) + x.shape), w, stride, pad)
        return out.reshape(out.shape[1:])
    return _conv4(x, w, stride, pad)


def bias_add(x: Tensor, b: Tensor) -> Tensor:
    """Add a per-channel bias ``b`` (length C) over spatial dims."""
    shape = (1,) * (x.ndim - 3) + (b.shape[0], 1, 1)
    return x + b.reshape(shape)


# ----------------------------------------------------------------------
# activations and structural ops
# ----------------------------------------------------------------------

_ACTIVATIONS = {"sigmoid": sigmoid, "tanh": tanh, "leaky_relu": leaky_relu}


def activation(x, kind: str) -> Tensor:
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ConfigError(f"unknown activation {kind!r}; expected one of {sorted(_ACTIVATIONS)}") from None
    return fn(x)


def _split_channels(x: Tensor) -> tuple[tuple, int, tuple]:
    if x.ndim not in (3, 4):
        raise ShapeError(f"expected C×H×W or N×C×H×W, got {x.shape}")
    lead = x.shape[:-3]
    return lead, x.shape[-3], x.shape[-2:]


def channel_shuffle(x, groups: int) -> Tensor:
    """Reindex channels via reshape(groups, C/groups) -> transpose -> flatten."""
    x = _wrap(x)
    lead, c, hw = _split_channels(x)
    if groups < 1 or c % groups:
        raise ConfigError(f"channel_shuffle: {c} channels not divisible by {groups} groups")
    nl = len(lead)
    y = x.reshape(lead + (groups, c // groups) + hw)
    axes = tuple(range(nl)) + (nl + 1, nl) + (nl + 2, nl + 3)
    return y.transpose(axes).reshape(lead + (c,) + hw)


def channel_unshuffle(x, groups: int) -> Tensor:
    """Inverse of :func:`channel_shuffle`."""
    x = _wrap(x)
    _, c, _ = _split_channels(x)
    if groups < 1 or c % groups:
        raise ConfigError(f"channel_unshuffle: {c} channels not divisible by {groups} groups")
    return channel_shuffle(x, c // groups)


def group_norm(x, groups: int, eps: float = 1e-5) -> Tensor:
    """Normalize each channel group to zero mean, unit variance (no affine)."""
    x = _wrap(x)
    lead, c, hw = _split_channels(x)
    if groups < 1 or c % groups:
        raise ConfigError(f"group_norm: {c} channels not divisible by {groups} groups")
    if eps <= 0:
        raise ConfigError(f"group_norm: eps must be positive, got {eps}")
    y = x.reshape(lead + (groups, (c // groups) * hw[0] * hw[1]))
    centered = y - y.mean(axis=-1, keepdims=True)
    var = (centered * centered).mean(axis=-1, keepdims=True)
    return (centered * (var + eps) ** -0.5).reshape(x.shape)


def global_avg_pool(x) -> Tensor:
    """Per-channel spatial mean: C×H×W -> C (or N×C×H×W -> N×C)."""
    x = _wrap(x)
    _split_channels(x)
    return x.mean(axis=(-2, -1))


def nearest_upsample(x, factor: int) -> Tensor:
    x = _wrap(x)
    if factor < 1:
        raise ConfigError(f"nearest_upsample: factor must be >= 1, got {factor}")
    lead, c, (h, w) = _split_channels(x)
    if factor == 1:
        return x
    y = x.reshape(lead + (c, h, 1, w, 1))
    y = expand(y, lead + (c, h, factor, w, factor))
    return y.reshape(lead + (c, h * factor, w * factor))


def spatial_replicate(v: Tensor, h: int, w: int) -> Tensor:
    """Tile a length-C (or N×C) vector over an h×w grid."""
    shape = v.shape + (1, 1)
    return expand(v.reshape(shape), v.shape + (h, w))


def cat_channels(tensors) -> Tensor:
    return concat(tensors, axis=-3)
