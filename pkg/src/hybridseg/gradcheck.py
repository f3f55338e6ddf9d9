"""Central finite-difference gradient checking."""
from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import ShapeError, Tensor, no_grad, record_kinks


class GradCheckResult(float):
    """Max relative error; ``skipped`` counts coordinates whose stencil crossed a relu kink."""

    skipped: int = 0

    def __new__(cls, value, skipped=0):
        obj = super().__new__(cls, value)
        obj.skipped = skipped
        return obj


def _same_pattern(a: list, b: list) -> bool:
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, delta: float = 1e-5,
               exclude: np.ndarray | None = None) -> GradCheckResult:
    """Max relative error between backprop and central differences of ``f`` at ``x``.

    Per coordinate the error is |a - n| / max(|a|, |n|, 1e-8).  Coordinates in
    ``exclude`` are skipped, as are coordinates where the +/-delta evaluations
    switch any relu on or off (the function is not differentiable across the
    stencil there).
    """
    probe = Tensor(np.array(x.data, copy=True), requires_grad=True)
    with record_kinks() as base_pattern:
        out = f(probe)
    if out.data.size != 1:
        raise ShapeError(f"grad_check needs a scalar-valued function, got shape {out.shape}")
    out.backward()
    analytic = probe.grad if probe.grad is not None else np.zeros_like(probe.data)

    base = np.array(x.data, copy=True)
    flat = base.reshape(-1)
    numeric = np.zeros(flat.size)
    skip = np.zeros(flat.size, dtype=bool) if exclude is None else np.asarray(exclude, bool).reshape(-1).copy()
    with no_grad():
        for i in range(flat.size):
            if skip[i]:
                continue
            old = flat[i]
            vals, smooth = {}, True
            for k in (1, -1):
                flat[i] = old + k * delta
                with record_kinks() as pattern:
                    vals[k] = f(Tensor(base.copy())).item()
                smooth = smooth and _same_pattern(pattern, base_pattern)
            flat[i] = old
            if not smooth:
                skip[i] = True
                continue
            numeric[i] = (vals[1] - vals[-1]) / (2.0 * delta)

    a = analytic.reshape(-1)
    err = np.abs(a - numeric) / np.maximum(np.maximum(np.abs(a), np.abs(numeric)), 1e-8)
    err[skip] = 0.0
    return GradCheckResult(float(err.max()) if err.size else 0.0, int(skip.sum()))
