"""Hinge adversarial objective with a two-sided gradient penalty."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ConfigError, NonFiniteError
from .tensor import Tensor, _wrap, enable_grad, grad, leaky_relu

NORM_EPS = 1e-30


@dataclass(frozen=True)
class LossHyperparams:
    k: float = 2.0  # penalty coefficient
    p: float = 6.0  # penalty exponent
    lam: float = 4.0  # similarity weight

    def __post_init__(self):
        if self.k < 0 or self.p < 1 or self.lam < 0:
            raise ConfigError(f"loss hyperparams need k >= 0, p >= 1, lam >= 0; got {self}")


def relu(x: Tensor) -> Tensor:
    return leaky_relu(x, 0.0)


def hinge_d_terms(score_real, score_fake, score_mis) -> Tensor:
    """-E[min(0, s_r - 1)] - ½E[min(0, -1 - s_f)] - ½E[min(0, -1 - s_m)]."""
    sr, sf, sm = _wrap(score_real), _wrap(score_fake), _wrap(score_mis)
    return relu(1.0 - sr).mean() + 0.5 * relu(1.0 + sf).mean() + 0.5 * relu(1.0 + sm).mean()


def _per_sample_norm(g: Tensor) -> Tensor:
    axes = tuple(range(1, g.ndim))
    return ((g * g).sum(axis=axes) + NORM_EPS) ** 0.5


def gradient_penalty(features: Tensor, T: Tensor, score_fn: Callable[[Tensor, Tensor], Tensor], hp: LossHyperparams) -> Tensor:
    """k·E[(‖∂D/∂features‖ + ‖∂D/∂T‖)^p] at the given (real) pairs.

    ``features`` are the frozen-encoder outputs, N×C×H×W (or one unbatched
    sample). The result stays on the tape so it can be minimized with
    respect to the critic's weights.
    """
    if features.ndim == 3:
        features = features.reshape((1,) + features.shape)
        T = T.reshape((1, -1))
    with enable_grad():
        f = Tensor(features.data, requires_grad=True)
        t = Tensor(T.data, requires_grad=True)
        scores = score_fn(f, t)
        if not scores.requires_grad:
            return Tensor(0.0)
        g_f, g_t = grad(scores.sum(), [f, t], create_graph=True)
        if not (np.isfinite(g_f.data).all() and np.isfinite(g_t.data).all()):
            raise NonFiniteError("gradient penalty: non-finite critic gradients")
        total = _per_sample_norm(g_f) + _per_sample_norm(g_t)
        return hp.k * (total**hp.p).mean()


def generator_loss(score_fake, sim, hp: LossHyperparams) -> Tensor:
    """-E[D(fake, T)] - λ·E[S(fake, T)]."""
    return -_wrap(score_fake).mean() - hp.lam * _wrap(sim).mean()


def cosine_similarity(a, b) -> Tensor:
    """Cosine of the angle between vectors (last axis); batched inputs give N values."""
    a, b = _wrap(a), _wrap(b)
    na = (a * a).sum(axis=-1)
    nb = (b * b).sum(axis=-1)
    if np.any(na.data == 0) or np.any(nb.data == 0):
        raise ZeroDivisionError("cosine similarity is undefined for a zero vector")
    return (a * b).sum(axis=-1) / (na * nb) ** 0.5
