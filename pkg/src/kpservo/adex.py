"""Adversarial-example augmentation of training mini-batches.

Three sign-gradient attacks (single-step, iterative, and targeted toward the
least-likely segmentation class), sampled per mini-batch with random strength
and iteration count.  Attacks perturb images only; motion and reconstruction
labels pass through untouched, and every output stays inside the epsilon-ball
and [0, 1].
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .autodiff import Tensor

METHODS = ("fgsm", "iterative-fgsm", "least-likely-fgsm")


@dataclass(frozen=True)
class AdexConfig:
    enabled: bool = True
    eps_lo: float = 0.01
    eps_hi: float = 0.05
    n_lo: int = 1
    n_hi: int = 3
    methods: tuple[str, ...] = METHODS
    probability: float = 0.5

    def __post_init__(self):
        if not (0.0 <= self.eps_lo <= self.eps_hi <= 0.2):
            raise ValueError(f"epsilon range [{self.eps_lo}, {self.eps_hi}] outside [0, 0.2]")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ValueError(f"unknown adex methods {sorted(unknown)}")

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["methods"] = list(self.methods)
        return d

    @staticmethod
    def from_dict(d: dict) -> "AdexConfig":
        kw = dict(d)
        if "methods" in kw:
            kw["methods"] = tuple(kw["methods"])
        return AdexConfig(**kw)


def _input_grad(loss_fn: Callable[[Tensor], Tensor], images: np.ndarray) -> np.ndarray:
    x = Tensor(images, requires_grad=True)
    loss_fn(x).backward()
    return x.grad


def _project(x_adv: np.ndarray, x0: np.ndarray, eps: float) -> np.ndarray:
    return np.clip(np.clip(x_adv, x0 - eps, x0 + eps), 0.0, 1.0)


def fgsm(loss_fn: Callable[[Tensor], Tensor], images: np.ndarray, eps: float) -> np.ndarray:
    """x' = clamp(x + eps * sign(dL/dx)), single ascent step on the batch loss."""
    if eps == 0.0:
        return images.copy()
    g = _input_grad(loss_fn, images)
    return _project(images + eps * np.sign(g), images, eps)


def iterative_fgsm(loss_fn: Callable[[Tensor], Tensor], images: np.ndarray,
                   eps: float, n: int) -> np.ndarray:
    """n ascent steps of eps/n, re-projected into the eps-ball each step."""
    if eps == 0.0 or n < 1:
        return images.copy()
    step = eps / n
    x = images
    for _ in range(n):
        g = _input_grad(loss_fn, x)
        x = _project(x + step * np.sign(g), images, eps)
    return x


def least_likely_fgsm(seg_loss_fn: Callable[[Tensor, np.ndarray], Tensor],
                      least_likely_fn: Callable[[np.ndarray], np.ndarray],
                      images: np.ndarray, eps: float, n: int) -> np.ndarray:
    """Descend toward the least-probable segmentation class per pixel.

    Targets are the least-likely classes of the clean batch and stay fixed
    across iterations.
    """
    if eps == 0.0 or n < 1:
        return images.copy()
    targets = least_likely_fn(images)
    step = eps / n
    x = images
    for _ in range(n):
        g = _input_grad(lambda t: seg_loss_fn(t, targets), x)
        x = _project(x - step * np.sign(g), images, eps)
    return x


def adex_batch(images: np.ndarray, cfg: AdexConfig, rng: np.random.Generator,
               loss_fn: Callable[[Tensor], Tensor],
               seg_loss_fn: Callable[[Tensor, np.ndarray], Tensor],
               least_likely_fn: Callable[[np.ndarray], np.ndarray]
               ) -> tuple[np.ndarray, dict]:
    """Maybe perturb a whole mini-batch; labels are never touched.

    Draws (apply?, method, eps, n) from ``rng`` regardless of the branch so
    the decision sequence is reproducible from the seed alone.
    """
    apply = rng.uniform() < cfg.probability
    method = cfg.methods[rng.integers(0, len(cfg.methods))]
    eps = rng.uniform(cfg.eps_lo, cfg.eps_hi)
    n = int(rng.integers(cfg.n_lo, cfg.n_hi + 1))
    info = {"applied": bool(apply and cfg.enabled), "method": method,
            "eps": float(eps), "n": n}
    if not info["applied"]:
        return images, info
    if method == "fgsm":
        out = fgsm(loss_fn, images, eps)
    elif method == "iterative-fgsm":
        out = iterative_fgsm(loss_fn, images, eps, n)
    else:
        out = least_likely_fgsm(seg_loss_fn, least_likely_fn, images, eps, n)
    return out, info
