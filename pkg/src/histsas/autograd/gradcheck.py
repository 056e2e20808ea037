"""Finite-difference verification of analytic gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from ..errors import NumericalError, UsageError
from .tensor import Tensor, no_grad


def _evaluate(function: Callable[..., Tensor], inputs: Sequence[Tensor]) -> float:
    out = function(*inputs)
    if out.size != 1:
        raise UsageError(f"grad_check needs a scalar-valued function, got shape {out.shape}")
    value = float(out.data.reshape(-1)[0])
    if not np.isfinite(value):
        raise NumericalError(f"function returned a non-finite value ({value})")
    return value


def grad_check(
    function: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    eps: float = 1e-6,
    return_details: bool = False,
):
    """Largest coordinate-wise relative error between backprop and central differences.

    Relative error for a coordinate is ``|a - n| / max(|a|, |n|, 1e-8)``.
    All ``inputs`` are differentiated; their ``.grad`` is overwritten.
    With ``return_details`` a list of per-input maxima is returned as well.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    for t in inputs:
        t.requires_grad = True
        t.grad = None
    out = function(*inputs)
    if out.size != 1:
        raise UsageError(f"grad_check needs a scalar-valued function, got shape {out.shape}")
    if not np.all(np.isfinite(out.data)):
        raise NumericalError("function returned a non-finite value")
    out.backward()
    analytic = [
        t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in inputs
    ]

    per_input = []
    with no_grad():
        for t, a in zip(inputs, analytic):
            flat = t.data.reshape(-1)
            a_flat = a.reshape(-1)
            worst = 0.0
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                fp = _evaluate(function, inputs)
                flat[i] = orig - eps
                fm = _evaluate(function, inputs)
                flat[i] = orig
                num = (fp - fm) / (2.0 * eps)
                err = abs(a_flat[i] - num) / max(abs(a_flat[i]), abs(num), 1e-8)
                worst = max(worst, err)
            per_input.append(worst)
    worst = max(per_input) if per_input else 0.0
    if return_details:
        return worst, per_input
    return worst
