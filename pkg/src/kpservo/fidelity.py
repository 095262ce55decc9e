"""Gradient-fidelity suite: every kernel plus the composed keypointer,
constraint, and servo-loss subgraphs, checked against central finite
differences in double precision at randomly sampled differentiable points.

Sampling respects each op's differentiability precondition: relu inputs keep
a margin from zero, channel-max inputs keep a top-2 gap.
"""
from __future__ import annotations

import numpy as np

from .autodiff import Tensor
from . import kernels
from .gradcheck import grad_check
from .keypoint import background_penalty, keypointer, proximity_penalty
from .nn import Conv2d, ConvTranspose2d, Dense
from .servo import servo_loss


def _margin_normal(rng, shape, margin=0.05, scale=1.0):
    x = rng.normal(size=shape) * scale
    x = np.where(np.abs(x) < margin, np.sign(x) * margin + x, x)
    return x


def _gap_last_axis(x: np.ndarray, gap: float = 0.1) -> np.ndarray:
    """Ensure a top-2 gap along the last axis (channel-max precondition)."""
    flat = x.reshape(-1, x.shape[-1])
    top = flat.argmax(axis=-1)
    flat[np.arange(len(flat)), top] += gap
    return flat.reshape(x.shape)


def _proj_loss(t: Tensor, rng) -> Tensor:
    w = rng.normal(size=t.shape)
    return (t * Tensor(w)).sum()


def _check_points(build, n_points: int, seed: int) -> float:
    """Worst max-relative-error over ``n_points`` random configurations."""
    worst = 0.0
    for i in range(n_points):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(i,)))
        loss_fn, params = build(rng)
        rep = grad_check(loss_fn, params)
        worst = max(worst, max(rep.values()))
    return worst


def run_fidelity_suite(n_points: int = 10, seed: int = 0) -> dict[str, float]:
    """Max relative gradient error per checked block; all < 1e-3 passes."""
    results: dict[str, float] = {}

    def conv_case(stride, padding, dilation):
        def build(rng):
            x = Tensor(_margin_normal(rng, (2, 3, 7, 7)), requires_grad=True)
            c = Conv2d(3, 4, 3, stride=stride, padding=padding, dilation=dilation,
                       rng=rng, dtype=np.float64)
            proj = rng.normal(size=1)  # keep closure deterministic per point
            def loss_fn():
                return _proj_loss(c(x), np.random.default_rng(int(abs(proj[0]) * 1e6) + 1))
            return loss_fn, [("x", x), ("w", c.weight), ("b", c.bias)]
        return build

    results["conv2d_s1"] = _check_points(conv_case(1, 1, 1), n_points, seed + 1)
    results["conv2d_s2"] = _check_points(conv_case(2, 1, 1), n_points, seed + 2)
    results["conv2d_dil2"] = _check_points(conv_case(1, 2, 2), n_points, seed + 3)

    def convt_build(rng):
        x = Tensor(rng.normal(size=(2, 3, 5, 5)), requires_grad=True)
        c = ConvTranspose2d(3, 2, 4, stride=2, padding=1, rng=rng, dtype=np.float64)
        w_ref = rng.normal(size=(2, 2, 10, 10))
        def loss_fn():
            return (c(x) * Tensor(w_ref)).sum()
        return loss_fn, [("x", x), ("w", c.weight), ("b", c.bias)]
    results["conv_transpose2d"] = _check_points(convt_build, n_points, seed + 4)

    def dense_build(rng):
        x = Tensor(rng.normal(size=(4, 6)), requires_grad=True)
        d = Dense(6, 3, rng=rng, dtype=np.float64)
        w_ref = rng.normal(size=(4, 3))
        def loss_fn():
            return (d(x) * Tensor(w_ref)).sum()
        return loss_fn, [("x", x), ("w", d.weight), ("b", d.bias)]
    results["dense"] = _check_points(dense_build, n_points, seed + 5)

    def relu_build(rng):
        x = Tensor(_margin_normal(rng, (3, 8)), requires_grad=True)
        w_ref = rng.normal(size=(3, 8))
        def loss_fn():
            return (x.relu() * Tensor(w_ref)).sum()
        return loss_fn, [("x", x)]
    results["relu"] = _check_points(relu_build, n_points, seed + 6)

    def sigmoid_build(rng):
        x = Tensor(rng.normal(size=(3, 8)), requires_grad=True)
        w_ref = rng.normal(size=(3, 8))
        def loss_fn():
            return (x.sigmoid() * Tensor(w_ref)).sum()
        return loss_fn, [("x", x)]
    results["sigmoid"] = _check_points(sigmoid_build, n_points, seed + 7)

    def softmax_build(rng):
        x = Tensor(rng.normal(size=(2, 3, 12)), requires_grad=True)
        w_ref = rng.normal(size=(2, 3, 12))
        def loss_fn():
            return (kernels.spatial_softmax(x) * Tensor(w_ref)).sum()
        return loss_fn, [("x", x)]
    results["spatial_softmax"] = _check_points(softmax_build, n_points, seed + 8)

    def chmax_build(rng):
        x = Tensor(_gap_last_axis(rng.normal(size=(2, 3, 10))), requires_grad=True)
        w_ref = rng.normal(size=(2, 3))
        def loss_fn():
            return (kernels.channel_max(x) * Tensor(w_ref)).sum()
        return loss_fn, [("x", x)]
    results["channel_max"] = _check_points(chmax_build, n_points, seed + 9)

    def mse_build(rng):
        x = Tensor(rng.normal(size=(3, 7)), requires_grad=True)
        t = rng.normal(size=(3, 7))
        def loss_fn():
            return kernels.mse_loss(x, t)
        return loss_fn, [("x", x)]
    results["mse"] = _check_points(mse_build, n_points, seed + 10)

    def bce_build(rng):
        x = Tensor(rng.uniform(0.05, 0.95, size=(3, 7)), requires_grad=True)
        t = rng.uniform(0, 1, size=(3, 7))
        def loss_fn():
            return kernels.bce_loss(x, t)
        return loss_fn, [("x", x)]
    results["bce"] = _check_points(bce_build, n_points, seed + 11)

    def ce_build(rng):
        x = Tensor(rng.normal(size=(2, 3, 4, 4)), requires_grad=True)
        t = rng.integers(0, 3, size=(2, 4, 4))
        def loss_fn():
            return kernels.cross_entropy_logits(x, t)
        return loss_fn, [("x", x)]
    results["cross_entropy"] = _check_points(ce_build, n_points, seed + 12)

    # composed keypointer: centroid + confidence + rendered Gaussian maps
    def keypointer_build(rng):
        z = Tensor(_gap_last_axis(rng.normal(size=(1, 2, 5, 5)).reshape(1, 2, 25))
                   .reshape(1, 2, 5, 5), requires_grad=True)
        w_maps = rng.normal(size=(1, 2, 5, 5))
        w_j = rng.normal(size=(1, 2))
        def loss_fn():
            kps = keypointer(z, rho=2.5)
            return ((kps.maps * Tensor(w_maps)).sum()
                    + (kps.row * Tensor(w_j)).sum() + (kps.col * Tensor(w_j)).sum()
                    + (kps.alpha * Tensor(w_j)).sum())
        return loss_fn, [("z", z)]
    results["keypointer"] = _check_points(keypointer_build, n_points, seed + 13)

    # constraints on top of the keypointer (proximity + background mass)
    def constraint_build(rng):
        z = Tensor(_gap_last_axis(rng.normal(size=(1, 3, 5, 5)).reshape(1, 3, 25))
                   .reshape(1, 3, 5, 5), requires_grad=True)
        bg = rng.uniform(0, 1, (1, 5, 5)) > 0.5
        def loss_fn():
            kps = keypointer(z, rho=2.5)
            return proximity_penalty(kps, 20.0) + background_penalty(kps, bg)
        return loss_fn, [("z", z)]
    results["constraints"] = _check_points(constraint_build, n_points, seed + 14)

    # servo loss at beta* = 1 through the full head
    def servo_build(rng):
        k = 3
        cfg_rng = np.random.default_rng(rng.integers(1 << 31))
        head = _tiny_servo_head(k, cfg_rng)
        z = Tensor(_gap_last_axis(rng.normal(size=(2, k, 4, 4)).reshape(2, k, 16))
                   .reshape(2, k, 4, 4), requires_grad=True)
        u_star = rng.normal(size=(2, 4))
        u_star /= np.linalg.norm(u_star, axis=1, keepdims=True)
        beta_star = np.ones(2)
        def loss_fn():
            kps = keypointer(z, rho=2.5)
            cmd = head(kps, kps)
            return servo_loss(cmd, u_star, beta_star)
        params = [("z", z)] + [(n, p) for n, p in head.named_parameters()]
        return loss_fn, params
    results["servo_loss"] = _check_points(servo_build, n_points, seed + 15)

    return results


def _tiny_servo_head(n_keypoints: int, rng):
    from .servo import ServoHead
    head = ServoHead.__new__(ServoHead)
    head.mode = "coords"
    head.motion_dim = 4
    head.h0 = Dense(6 * n_keypoints, 8, rng=rng, dtype=np.float64)
    head.h1 = Dense(8, 8, rng=rng, dtype=np.float64)
    head.h2 = Dense(8, 6, rng=rng, dtype=np.float64)
    head.out = Dense(6, 5, rng=rng, dtype=np.float64)
    return head
