"""Generator: the RAT bridge followed by a small conditioned image decoder."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .conditioning import (
    AffinePredictor,
    CATBlockWeights,
    LSTMInit,
    LSTMWeights,
    RATBlockWeights,
    ShuffleAttentionWeights,
    cat_block_forward,
    init_cat_block,
    init_cat_predictor,
    init_lstm,
    init_lstm_init,
    init_rat_block,
    init_shuffle_attention,
    lstm_init,
    predict_affine,
    affine_modulate,
    rat_block_forward,
    shuffle_attention_forward,
)
from .errors import ConfigError, ShapeError
from .functional import nearest_upsample
from .nn import Conv, Linear, count_parameters, init_conv, init_linear
from .tensor import Tensor, concat, leaky_relu, tanh

MODES = ("CAT", "RAT", "RAT+SA")
PLACEMENTS = ("per_pair", "after_first")
SEED_SIZE = 4


@dataclass
class GeneratorConfig:
    noise_dim: int = 32
    sentence_dim: int = 32
    hidden_dim: int = 64
    num_rat_blocks: int = 4
    base_channels: int = 64
    image_size: int = 32
    sa_groups: int = 4
    conditioning_mode: str = "RAT+SA"
    sa_placement: str = "per_pair"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.noise_dim < 1 or self.sentence_dim < 1:
            raise ConfigError("noise_dim and sentence_dim must be positive")
        if self.hidden_dim < 0:
            raise ConfigError(f"hidden_dim must be >= 0, got {self.hidden_dim}")
        if self.num_rat_blocks < 0 or self.num_rat_blocks % 2:
            raise ConfigError(f"num_rat_blocks must be even and >= 0, got {self.num_rat_blocks}")
        if self.image_size not in (16, 32, 64):
            raise ConfigError(f"image_size must be one of 16, 32, 64, got {self.image_size}")
        if self.base_channels < 2 or self.base_channels % 2:
            raise ConfigError(f"base_channels must be even, got {self.base_channels}")
        if self.conditioning_mode not in MODES:
            raise ConfigError(f"conditioning_mode must be one of {MODES}, got {self.conditioning_mode!r}")
        if self.sa_placement not in PLACEMENTS:
            raise ConfigError(f"sa_placement must be one of {PLACEMENTS}, got {self.sa_placement!r}")
        if self.uses_attention and (self.sa_groups < 1 or self.base_channels % (2 * self.sa_groups)):
            raise ConfigError(
                f"base_channels {self.base_channels} must be divisible by 2·sa_groups ({2 * self.sa_groups})"
            )
        if self.bridge_size > self.image_size:
            raise ConfigError(
                f"{self.num_rat_blocks} blocks give a {self.bridge_size}px bridge, larger than image_size {self.image_size}"
            )

    @property
    def num_pairs(self) -> int:
        return self.num_rat_blocks // 2

    @property
    def uses_lstm(self) -> bool:
        return self.conditioning_mode != "CAT" and self.hidden_dim > 0 and self.num_rat_blocks > 0

    @property
    def uses_attention(self) -> bool:
        return self.conditioning_mode == "RAT+SA" and self.num_rat_blocks > 0

    @property
    def bridge_size(self) -> int:
        return SEED_SIZE * 2**self.num_pairs

    @property
    def bridge_shape(self) -> tuple[int, int, int]:
        return (self.base_channels, self.bridge_size, self.bridge_size)


@dataclass
class SAConvWeights:
    attention: ShuffleAttentionWeights
    conv: Conv


@dataclass
class BridgeWeights:
    seed: Linear
    lstm_init: LSTMInit | None
    lstm: LSTMWeights | None
    blocks: list = field(default_factory=list)
    saconvs: list = field(default_factory=list)


@dataclass
class ImageGWeights:
    predictor: AffinePredictor  # 2-layer MLPs of (z ⊕ T)
    conv: Conv
    conv_out: Conv


@dataclass
class GeneratorWeights:
    bridge: BridgeWeights
    image_g: ImageGWeights


def init_generator(cfg: GeneratorConfig, rng: np.random.Generator) -> GeneratorWeights:
    C, D, d = cfg.base_channels, cfg.hidden_dim, cfg.sentence_dim
    seed = init_linear(rng, cfg.noise_dim, C * SEED_SIZE * SEED_SIZE)
    init = lstm = None
    if cfg.uses_lstm:
        init = init_lstm_init(rng, cfg.noise_dim, D)
        lstm = init_lstm(rng, d, D)
    if cfg.conditioning_mode == "CAT":
        blocks = [init_cat_block(rng, d, C) for _ in range(cfg.num_rat_blocks)]
    else:
        blocks = [init_rat_block(rng, D, C) for _ in range(cfg.num_rat_blocks)]
    saconvs = []
    if cfg.uses_attention:
        saconvs = [
            SAConvWeights(init_shuffle_attention(C, cfg.sa_groups), init_conv(rng, C, C)) for _ in range(cfg.num_pairs)
        ]
    image_g = ImageGWeights(
        init_cat_predictor(rng, cfg.noise_dim + d, C),
        init_conv(rng, C, C // 2),
        init_conv(rng, C // 2, 3),
    )
    return GeneratorWeights(BridgeWeights(seed, init, lstm, blocks, saconvs), image_g)


def _saconv(x: Tensor, w: SAConvWeights, groups: int) -> Tensor:
    return w.conv(shuffle_attention_forward(x, groups, w.attention))


def _check_inputs(z: Tensor, T: Tensor, cfg: GeneratorConfig) -> None:
    if z.shape[-1] != cfg.noise_dim or T.shape[-1] != cfg.sentence_dim or z.shape[:-1] != T.shape[:-1]:
        raise ShapeError(f"generator: z {z.shape} / T {T.shape} vs noise_dim {cfg.noise_dim}, sentence_dim {cfg.sentence_dim}")


def rat_bridge_forward(z: Tensor, T: Tensor, weights: BridgeWeights, cfg: GeneratorConfig) -> Tensor:
    """Noise and sentence vectors -> bridge feature map of shape ``cfg.bridge_shape``.

    The seed map is an affine image of ``z``. Blocks come in pairs; each pair
    is followed by an SAConv (attention + 3×3 conv) when attention is on,
    then a 2× nearest upsample. With ``sa_placement="after_first"`` the SAConv
    moves between the two blocks of the pair.
    """
    _check_inputs(z, T, cfg)
    C = cfg.base_channels
    lead = z.shape[:-1]
    x = weights.seed(z).reshape(lead + (C, SEED_SIZE, SEED_SIZE))
    state = lstm_init(z, weights.lstm_init) if weights.lstm_init is not None else None
    for p in range(cfg.num_pairs):
        for j in range(2):
            block = weights.blocks[2 * p + j]
            if isinstance(block, CATBlockWeights):
                x = cat_block_forward(x, T, block)
            else:
                x, state = rat_block_forward(x, state, T, weights.lstm, block)
            if weights.saconvs and j == 0 and cfg.sa_placement == "after_first":
                x = _saconv(x, weights.saconvs[p], cfg.sa_groups)
        if weights.saconvs and cfg.sa_placement == "per_pair":
            x = _saconv(x, weights.saconvs[p], cfg.sa_groups)
        x = nearest_upsample(x, 2)
    return x


def image_g_forward(f: Tensor, z: Tensor, T: Tensor, weights: ImageGWeights, image_size: int) -> Tensor:
    """Bridge feature -> RGB image in [-1, 1]."""
    cond = concat([z, T], axis=-1)
    x = affine_modulate(f, predict_affine(cond, weights.predictor))
    x = weights.conv(leaky_relu(x))
    x = nearest_upsample(x, image_size // f.shape[-1])
    return tanh(weights.conv_out(leaky_relu(x)))


def generate(z: Tensor, T: Tensor, weights: GeneratorWeights, cfg: GeneratorConfig) -> Tensor:
    f = rat_bridge_forward(z, T, weights.bridge, cfg)
    return image_g_forward(f, z, T, weights.image_g, cfg.image_size)


__all__ = [
    "GeneratorConfig",
    "GeneratorWeights",
    "BridgeWeights",
    "ImageGWeights",
    "SAConvWeights",
    "init_generator",
    "rat_bridge_forward",
    "image_g_forward",
    "generate",
    "count_parameters",
    "RATBlockWeights",
]
