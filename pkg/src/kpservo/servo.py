"""Keypoint-conditioned motion head and its loss.

The head maps concatenated stereo keypoints to a unit direction u in R^d
plus a normalized speed beta in [0, 1].  Feature order is part of the model
contract: [row_L(K), col_L(K), alpha_L(K), row_R(K), col_R(K), alpha_R(K)]
with centroid coordinates normalized to [0, 1] (coords mode), or the two
views' rendered maps flattened and concatenated (maps mode).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, concat
from . import kernels
from .keypoint import KeypointSet
from .nn import Dense, Module


@dataclass
class MotionCommand:
    """Unit direction + normalized speed for one batch of predictions."""
    u: Tensor            # (B, d), rows unit-norm
    beta: Tensor         # (B,)
    degenerate: np.ndarray  # (B,) True where the raw direction needed the eps guard

    def numpy(self) -> tuple[np.ndarray, np.ndarray]:
        return self.u.data.copy(), self.beta.data.copy()


class NonFiniteLossError(RuntimeError):
    def __init__(self, component: str, value: float):
        super().__init__(f"loss component {component!r} is non-finite ({value})")
        self.component = component


def servo_features(left: KeypointSet, right: KeypointSet, mode: str = "coords") -> Tensor:
    if left.grid_hw != right.grid_hw or left.rho != right.rho:
        raise ValueError("stereo keypoint sets must share grid size and rho")
    if mode == "coords":
        lr, lc = left.coords_normalized()
        rr, rc = right.coords_normalized()
        return concat([lr, lc, left.alpha, rr, rc, right.alpha], axis=1)
    if mode == "maps":
        if left.maps is None or right.maps is None:
            raise ValueError("maps mode needs rendered keypoint maps")
        B = left.maps.shape[0]
        return concat([left.maps.reshape(B, -1), right.maps.reshape(B, -1)], axis=1)
    raise ValueError(f"unknown servo input mode {mode!r}")


class ServoHead(Module):
    """FC stack (128/64/32 relu) emitting d raw direction values + 1 speed logit."""

    def __init__(self, n_keypoints: int, motion_dim: int = 4, mode: str = "coords",
                 grid_hw: tuple[int, int] = (32, 32),
                 rng: np.random.Generator | None = None, dtype=np.float32):
        rng = rng or np.random.default_rng(0)
        fin = 6 * n_keypoints if mode == "coords" else 2 * n_keypoints * grid_hw[0] * grid_hw[1]
        self.mode = mode
        self.motion_dim = motion_dim
        self.h0 = Dense(fin, 128, rng=rng, dtype=dtype)
        self.h1 = Dense(128, 64, rng=rng, dtype=dtype)
        self.h2 = Dense(64, 32, rng=rng, dtype=dtype)
        self.out = Dense(32, motion_dim + 1, rng=rng, dtype=dtype)

    def __call__(self, left: KeypointSet, right: KeypointSet) -> MotionCommand:
        x = servo_features(left, right, self.mode)
        h = self.h0(x, relu=True)
        h = self.h1(h, relu=True)
        h = self.h2(h, relu=True)
        o = self.out(h)
        d = self.motion_dim
        u, degenerate = kernels.unit_rows(o[:, :d])
        beta = o[:, d].sigmoid()
        return MotionCommand(u=u, beta=beta, degenerate=degenerate)


def servo_loss_components(cmd: MotionCommand, u_star: np.ndarray,
                          beta_star: np.ndarray) -> tuple[Tensor, Tensor]:
    """(direction term, speed term) of the servo loss, batch means.

    Direction term: beta* (1 - u.u* / |u|) — the scaled inverted cosine
    similarity; speed term: BCE(beta, beta*).
    """
    u, beta = cmd.u, cmd.beta
    us = np.asarray(u_star, dtype=u.dtype)
    bs = np.asarray(beta_star, dtype=u.dtype).reshape(-1)
    if us.shape != u.shape:
        raise ValueError(f"direction target shape {us.shape} != prediction {u.shape}")
    norm = (u * u).sum(axis=1).sqrt()
    cos = (u * Tensor(us)).sum(axis=1) / norm
    l_dir = (Tensor(bs) * (1.0 - cos)).mean()
    l_beta = kernels.bce_loss(beta, bs)
    return l_dir, l_beta


def servo_loss(cmd: MotionCommand, u_star: np.ndarray, beta_star: np.ndarray) -> Tensor:
    l_dir, l_beta = servo_loss_components(cmd, u_star, beta_star)
    return l_dir + l_beta


def total_loss(recon: Tensor, servo: Tensor, proxi: Tensor, bg: Tensor) -> Tensor:
    """Unweighted sum of the four components; rejects non-finite inputs."""
    for name, t in (("recon", recon), ("servo", servo), ("proxi", proxi), ("bg", bg)):
        v = float(t.data)
        if not np.isfinite(v):
            raise NonFiniteLossError(name, v)
    return recon + servo + proxi + bg
