"""Finite-difference verification of analytic gradients.

Central differences in double precision with step 1e-4; reported metric per
parameter block is  max|g_analytic - g_numeric| / (max|g_numeric| + eps).
Callers must evaluate at a point where the graph is differentiable (away
from relu kinks and max ties).
"""
from __future__ import annotations

from typing import Callable

import numpy as np

from .autodiff import Tensor


def analytic_grads(loss_fn: Callable[[], Tensor],
                   params: list[tuple[str, Tensor]]) -> dict[str, np.ndarray]:
    for _, p in params:
        p.grad = None
    loss = loss_fn()
    loss.backward()
    out = {}
    for name, p in params:
        if p.grad is None:
            raise ValueError(f"parameter {name!r} received no gradient")
        out[name] = p.grad.copy()
    return out


def numeric_grads(loss_fn: Callable[[], Tensor],
                  params: list[tuple[str, Tensor]],
                  step: float = 1e-4) -> dict[str, np.ndarray]:
    out = {}
    for name, p in params:
        g = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        gf = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = loss_fn().item()
            flat[i] = orig - step
            lo = loss_fn().item()
            flat[i] = orig
            gf[i] = (hi - lo) / (2.0 * step)
        out[name] = g
    return out


def grad_check(loss_fn: Callable[[], Tensor],
               params: list[tuple[str, Tensor]],
               step: float = 1e-4, eps: float = 1e-12) -> dict[str, float]:
    """Max relative error per parameter block; report-only, never raises."""
    ana = analytic_grads(loss_fn, params)
    num = numeric_grads(loss_fn, params, step)
    report = {}
    for name, _ in params:
        diff = np.abs(ana[name] - num[name]).max()
        scale = np.abs(num[name]).max() + eps
        report[name] = float(diff / scale)
    return report
