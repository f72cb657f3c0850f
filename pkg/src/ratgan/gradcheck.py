"""Central-difference gradient verification."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import NonFiniteError, UsageError
from .tensor import Tensor, grad

DENOM_FLOOR = 1e-8


def _scalar(f: Callable[[], Tensor]) -> float:
    # recording stays on: f may itself take gradients (penalty terms)
    try:
        out = f()
    except NonFiniteError as exc:
        raise NonFiniteError(f"grad_check: f(x) is not finite ({exc})") from exc
    if out.size != 1:
        raise UsageError(f"grad_check: f must be scalar-valued, got shape {out.shape}")
    value = out.item()
    if not np.isfinite(value):
        raise NonFiniteError("grad_check: f(x) is not finite")
    return value


def numerical_gradient(f: Callable, x: Tensor, step: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``f(x)`` perturbing ``x.data`` in place."""
    if step <= 0:
        raise UsageError(f"grad_check: step must be positive, got {step}")
    flat = x.data.reshape(-1)
    out = np.empty(flat.size)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = _scalar(lambda: f(x))
        flat[i] = orig - step
        lo = _scalar(lambda: f(x))
        flat[i] = orig
        out[i] = (hi - lo) / (2.0 * step)
    return out.reshape(x.shape)


def grad_check(f: Callable, x: Tensor | Sequence[Tensor], step: float = 1e-5) -> float:
    """Worst elementwise relative error between analytic and numeric gradients.

    ``f`` maps ``x`` to a scalar tensor. If ``x`` is a sequence, ``f`` is
    called with the whole sequence and every member is checked.

    The relative error of each element is ``|a - n| / max(|a|, |n|, 1e-8)``.
    """
    many = not isinstance(x, Tensor)
    xs = list(x) if many else [x]
    call = (lambda _: f(xs)) if many else f
    _scalar(lambda: call(xs[0]))
    flags = [t.requires_grad for t in xs]
    for t in xs:
        t.requires_grad = True
    try:
        out = call(xs[0])
        if out.size != 1:
            raise UsageError(f"grad_check: f must be scalar-valued, got shape {out.shape}")
        analytic = [g.data for g in grad(out, xs)]
        worst = 0.0
        for t, a in zip(xs, analytic):
            n = numerical_gradient(call, t, step)
            denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), DENOM_FLOOR)
            worst = max(worst, float(np.max(np.abs(a - n) / denom)) if a.size else 0.0)
    finally:
        for t, flag in zip(xs, flags):
            t.requires_grad = flag
    return worst
