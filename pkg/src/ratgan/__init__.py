"""Desk-scale text-to-image GAN with recurrent affine conditioning.

Built on a small numpy reverse-mode autodiff engine (:mod:`ratgan.tensor`).
"""

from .config import TrainConfig, load_config, parse_config, format_config
from .generator import GeneratorConfig, generate, init_generator
from .losses import LossHyperparams
from .tensor import Tensor, backward, grad, no_grad

__version__ = "0.1.0"

__all__ = [
    "GeneratorConfig", "LossHyperparams", "Tensor", "TrainConfig", "backward", "format_config",
    "generate", "grad", "init_generator", "load_config", "no_grad", "parse_config",
]
