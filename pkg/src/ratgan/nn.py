"""Parameter containers and initializers.

Weights are plain dataclasses of :class:`Tensor`; nesting (dataclasses,
lists, ``None``) is walked by :func:`named_parameters` to give the flat
name -> tensor table used by the optimizer and checkpoints.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .functional import bias_add, conv2d
from .tensor import Tensor, matmul

INIT_STD = 0.02


@dataclass
class Linear:
    weight: Tensor  # out × in
    bias: Tensor  # out

    @property
    def in_features(self) -> int:
        return self.weight.shape[1]

    @property
    def out_features(self) -> int:
        return self.weight.shape[0]

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_features:
            raise ShapeError(f"linear: input {x.shape} does not match weight {self.weight.shape}")
        if x.ndim == 1:
            return (matmul(x.reshape((1, -1)), self.weight.T) + self.bias.reshape((1, -1))).reshape((-1,))
        return matmul(x, self.weight.T) + self.bias.reshape((1, -1))


@dataclass
class MLP2:
    """affine -> leaky_relu -> affine."""

    fc1: Linear
    fc2: Linear


@dataclass
class Conv:
    weight: Tensor  # C_out × C_in × k × k
    bias: Tensor
    stride: int = 1
    pad: int = 1

    def __call__(self, x: Tensor) -> Tensor:
        return bias_add(conv2d(x, self.weight, self.stride, self.pad), self.bias)


def init_linear(rng: np.random.Generator, n_in: int, n_out: int, bias: float = 0.0, std: float = INIT_STD) -> Linear:
    return Linear(
        Tensor(rng.normal(0.0, std, (n_out, n_in)), requires_grad=True),
        Tensor(np.full(n_out, float(bias)), requires_grad=True),
    )


def init_mlp2(rng: np.random.Generator, n_in: int, n_hidden: int, n_out: int, out_bias: float = 0.0) -> MLP2:
    return MLP2(init_linear(rng, n_in, n_hidden), init_linear(rng, n_hidden, n_out, bias=out_bias))


def init_conv(rng: np.random.Generator, c_in: int, c_out: int, k: int = 3, stride: int = 1, pad: int = 1) -> Conv:
    return Conv(
        Tensor(rng.normal(0.0, INIT_STD, (c_out, c_in, k, k)), requires_grad=True),
        Tensor(np.zeros(c_out), requires_grad=True),
        stride,
        pad,
    )


def named_parameters(obj, prefix: str = "") -> list[tuple[str, Tensor]]:
    """Flatten a weight tree into ``(dotted_name, tensor)`` pairs, in field order."""
    out: list[tuple[str, Tensor]] = []
    if obj is None:
        return out
    if isinstance(obj, Tensor):
        return [(prefix, obj)]
    if isinstance(obj, (list, tuple)):
        for i, item in enumerate(obj):
            out.extend(named_parameters(item, f"{prefix}.{i}" if prefix else str(i)))
        return out
    if dataclasses.is_dataclass(obj):
        for field in dataclasses.fields(obj):
            value = getattr(obj, field.name)
            if isinstance(value, (Tensor, list, tuple)) or dataclasses.is_dataclass(value) or value is None:
                out.extend(named_parameters(value, f"{prefix}.{field.name}" if prefix else field.name))
        return out
    return out


def parameters(obj) -> list[Tensor]:
    return [t for _, t in named_parameters(obj)]


def count_parameters(obj) -> int:
    """Total number of scalar parameters in a weight tree."""
    return int(sum(t.size for t in parameters(obj)))


def set_requires_grad(obj, flag: bool) -> None:
    for t in parameters(obj):
        t.requires_grad = flag
