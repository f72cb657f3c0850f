"""Frozen stub image encoder and the trainable (features, sentence) critic."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .functional import cat_channels, conv2d, global_avg_pool, spatial_replicate
from .nn import Conv, init_conv, named_parameters
from .tensor import Tensor, leaky_relu

ENCODER_STD = 0.05
ENCODER_CHANNELS = (16, 32, 64)


@dataclass
class FrozenEncoder:
    """Three stride-2 convs with fixed random weights, plus a fixed projection
    of pooled features to sentence space (used by the similarity score)."""

    kernels: tuple
    projection: Tensor  # d × C_f
    seed: int

    @property
    def feature_dim(self) -> int:
        return self.kernels[-1].shape[0]

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for t in (*self.kernels, self.projection):
            h.update(t.data.tobytes())
        return h.hexdigest()


def make_frozen_encoder(seed: int, sentence_dim: int, channels: tuple = ENCODER_CHANNELS) -> FrozenEncoder:
    rng = np.random.default_rng([seed, 0x454E43])
    kernels = []
    c_in = 3
    for c_out in channels:
        kernels.append(Tensor(rng.normal(0.0, ENCODER_STD, (c_out, c_in, 3, 3))))
        c_in = c_out
    proj = Tensor(rng.normal(0.0, 1.0 / np.sqrt(c_in), (sentence_dim, c_in)))
    return FrozenEncoder(tuple(kernels), proj, seed)


def frozen_encode(img: Tensor, enc: FrozenEncoder) -> Tensor:
    """Image (3×S×S or N×3×S×S) -> features at S/8 resolution.

    Gradients flow through to ``img``; the kernels never require grad.
    """
    x = img
    for k in enc.kernels:
        x = leaky_relu(conv2d(x, k, stride=2, pad=1))
    return x


def image_embedding(feats: Tensor, enc: FrozenEncoder) -> Tensor:
    """Pooled features projected to sentence space (N×d or d)."""
    pooled = global_avg_pool(feats)
    if pooled.ndim == 1:
        return (enc.projection @ pooled.reshape((-1, 1))).reshape((-1,))
    return pooled @ enc.projection.T


@dataclass
class DiscriminatorWeights:
    fe: Conv
    referee1: Conv
    referee2: Conv


def init_discriminator(rng: np.random.Generator, feature_dim: int, sentence_dim: int, width: int = 32) -> DiscriminatorWeights:
    return DiscriminatorWeights(
        init_conv(rng, feature_dim, width),
        init_conv(rng, width + sentence_dim, width),
        init_conv(rng, width, 1),
    )


def fe_extract(feats: Tensor, weights: DiscriminatorWeights) -> Tensor:
    return leaky_relu(weights.fe(feats))


def referee_score(f: Tensor, T: Tensor, weights: DiscriminatorWeights) -> Tensor:
    """Score (features, sentence) pairs: scalar, or length-N for a batch."""
    if f.ndim == 3:
        return referee_score(f.reshape((1,) + f.shape), T.reshape((1, -1)), weights).reshape(())
    if T.ndim != 2 or T.shape[0] != f.shape[0]:
        raise ShapeError(f"referee_score: features {f.shape} vs sentences {T.shape}")
    if T.shape[1] + f.shape[1] != weights.referee1.weight.shape[1]:
        raise ShapeError(f"referee_score: {f.shape[1]}+{T.shape[1]} channels vs head {weights.referee1.weight.shape}")
    x = cat_channels([f, spatial_replicate(T, f.shape[-2], f.shape[-1])])
    x = weights.referee2(leaky_relu(weights.referee1(x)))
    return x.sum(axis=(1, 2, 3))


def critic(feats: Tensor, T: Tensor, weights: DiscriminatorWeights) -> Tensor:
    """The trainable part: encoder features and sentence -> score."""
    return referee_score(fe_extract(feats, weights), T, weights)


def discriminate(img: Tensor, T: Tensor, enc: FrozenEncoder, weights: DiscriminatorWeights) -> Tensor:
    return critic(frozen_encode(img, enc), T, weights)


def frozen_parameter_names(enc: FrozenEncoder) -> list[str]:
    return [name for name, _ in named_parameters(enc)]
