"""Keypoint representation learner: encoder, differentiable keypointer
bottleneck, dual-head decoder, and the two soft constraints.

Conventions fixed here and relied on everywhere else:
- keypoint grids index rows then columns, coordinates in grid cells,
  [0, H'-1] x [0, W'-1];
- centroid coordinates are normalized by (H'-1, W'-1) before any distance
  is taken (proximity constraint, servo features);
- rendered maps use a separable per-axis Gaussian with precision rho on
  squared offsets in grid-cell units, scaled by the channel confidence.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, concat
from . import kernels
from .nn import Conv2d, ConvTranspose2d, Module

SEG_CLASSES = 3  # background, hole, peg


@dataclass
class KeypointSet:
    """Per-channel centroids, confidences and rendered maps for one batch."""
    row: Tensor            # (B, K) centroid row coordinate in grid cells
    col: Tensor            # (B, K)
    alpha: Tensor          # (B, K) in (0, 1)
    maps: Tensor | None    # (B, K, H', W') rendered Gaussians, or None if skipped
    grid_hw: tuple[int, int]
    rho: float

    def coords_normalized(self) -> tuple[Tensor, Tensor]:
        h, w = self.grid_hw
        return self.row * (1.0 / (h - 1)), self.col * (1.0 / (w - 1))

    def numpy(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.row.data.copy(), self.col.data.copy(), self.alpha.data.copy()


class Encoder(Module):
    """4-stage strided-conv U-Net, concatenation skips, 1x1 head to K channels.

    64x64x1 in, 32x32xK out for the default widths (16, 32, 48, 64).
    """

    def __init__(self, n_keypoints: int, widths=(16, 32, 48, 64),
                 rng: np.random.Generator | None = None, dtype=np.float32):
        rng = rng or np.random.default_rng(0)
        w0, w1, w2, w3 = widths
        self.c0 = Conv2d(1, w0, 3, stride=1, padding=1, rng=rng, dtype=dtype)
        self.c1 = Conv2d(w0, w1, 3, stride=2, padding=1, rng=rng, dtype=dtype)
        self.c2 = Conv2d(w1, w2, 3, stride=2, padding=1, rng=rng, dtype=dtype)
        self.c3 = Conv2d(w2, w3, 3, stride=2, padding=1, rng=rng, dtype=dtype)
        self.u2 = ConvTranspose2d(w3, w2, 4, stride=2, padding=1, rng=rng, dtype=dtype)
        self.m2 = Conv2d(2 * w2, w2, 3, stride=1, padding=1, rng=rng, dtype=dtype)
        self.u1 = ConvTranspose2d(w2, w1, 4, stride=2, padding=1, rng=rng, dtype=dtype)
        # skip merge: cheap 1x1 projection of the concat, then one 3x3 mix
        # (keeps the big half-resolution buffers inside cache on one-core boxes)
        self.p1 = Conv2d(2 * w1, w1, 1, rng=rng, dtype=dtype)
        self.m1 = Conv2d(w1, w1, 3, stride=1, padding=1, rng=rng, dtype=dtype)
        self.head = Conv2d(w1, n_keypoints, 1, rng=rng, dtype=dtype)
        self.n_keypoints = n_keypoints

    def __call__(self, x: Tensor) -> Tensor:
        d0 = self.c0(x, relu=True)                  # H
        d1 = self.c1(d0, relu=True)                 # H/2
        d2 = self.c2(d1, relu=True)                 # H/4
        d3 = self.c3(d2, relu=True)                 # H/8
        y2 = self.m2(concat([self.u2(d3, relu=True), d2], axis=1), relu=True)   # H/4
        y1 = self.p1(concat([self.u1(y2, relu=True), d1], axis=1), relu=True)   # H/2
        y1 = self.m1(y1, relu=True)
        return self.head(y1)


def keypointer(z: Tensor, rho: float, render: bool = True) -> KeypointSet:
    """Feature map -> (centroids, confidences, rendered Gaussian maps).

    Centroid = expected grid index under the per-channel spatial softmax;
    confidence = sigmoid of the channel max; maps = confidence-scaled
    separable Gaussian around the centroid.  No learnable parameters;
    fully differentiable.
    """
    B, K, H, W = z.shape
    zf = z.reshape(B, K, H * W)
    p = kernels.spatial_softmax(zf)
    rows = Tensor(np.repeat(np.arange(H), W).astype(z.dtype))
    cols = Tensor(np.tile(np.arange(W), H).astype(z.dtype))
    jr = (p * rows).sum(axis=-1)
    jc = (p * cols).sum(axis=-1)
    alpha = kernels.channel_max(zf).sigmoid()
    maps = None
    if render:
        rr = Tensor(np.arange(H, dtype=z.dtype).reshape(1, 1, H, 1))
        cc = Tensor(np.arange(W, dtype=z.dtype).reshape(1, 1, 1, W))
        dr = rr - jr.reshape(B, K, 1, 1)
        dc = cc - jc.reshape(B, K, 1, 1)
        gauss = ((dr * dr) * (-rho)).exp() * ((dc * dc) * (-rho)).exp()
        maps = alpha.reshape(B, K, 1, 1) * gauss
    return KeypointSet(row=jr, col=jc, alpha=alpha, maps=maps, grid_hw=(H, W), rho=rho)


class Decoder(Module):
    """Rendered keypoint maps -> (depth, segmentation logits) at image size.

    Shared trunk, then a 1x1 depth head and a 1x1 segmentation head.  Sees
    only the rendered maps, never the raw feature map.
    """

    def __init__(self, n_keypoints: int, trunk_width: int = 16, up_width: int = 8,
                 rng: np.random.Generator | None = None, dtype=np.float32):
        rng = rng or np.random.default_rng(0)
        # increasing dilation grows the receptive field cheaply: the near-delta
        # keypoint maps must be spread back into object-sized silhouettes
        self.p0 = Conv2d(n_keypoints, trunk_width, 1, rng=rng, dtype=dtype)
        self.t1 = Conv2d(trunk_width, trunk_width, 3, padding=1, dilation=1, rng=rng, dtype=dtype)
        self.t2 = Conv2d(trunk_width, trunk_width, 3, padding=3, dilation=3, rng=rng, dtype=dtype)
        self.up = ConvTranspose2d(trunk_width, up_width, 4, stride=2, padding=1, rng=rng, dtype=dtype)
        self.depth_head = Conv2d(up_width, 1, 1, rng=rng, dtype=dtype)
        self.seg_head = Conv2d(up_width, SEG_CLASSES, 1, rng=rng, dtype=dtype)

    def __call__(self, k: Tensor) -> tuple[Tensor, Tensor]:
        t = self.p0(k, relu=True)
        t = self.t1(t, relu=True)
        t = self.t2(t, relu=True)
        t = self.up(t, relu=True)
        return self.depth_head(t), self.seg_head(t)


def recon_loss(depth_hat: Tensor, seg_logits: Tensor,
               depth_target: np.ndarray, seg_target: np.ndarray) -> Tensor:
    """Per-view reconstruction loss: pixel-mean MSE + pixel-mean CE."""
    B = depth_hat.shape[0]
    d = kernels.mse_loss(depth_hat.reshape(B, -1), depth_target.reshape(B, -1))
    s = kernels.cross_entropy_logits(seg_logits, seg_target.astype(np.int64))
    return d + s


def proximity_penalty(kps: KeypointSet, gamma: float) -> Tensor:
    """Confidence-weighted exponential crowding penalty over keypoint pairs.

    Centroids are normalized to [0,1] per axis before the euclidean
    distance; sum over unordered pairs, mean over the batch.
    """
    r, c = kps.coords_normalized()
    B, K = r.shape
    if K < 2:
        return Tensor(np.zeros((), dtype=r.dtype))
    dr = r.reshape(B, K, 1) - r.reshape(B, 1, K)
    dc = c.reshape(B, K, 1) - c.reshape(B, 1, K)
    dist = (dr * dr + dc * dc).sqrt()
    w = kps.alpha.reshape(B, K, 1) * kps.alpha.reshape(B, 1, K)
    pair_mask = Tensor(np.triu(np.ones((K, K), dtype=r.dtype), k=1).reshape(1, K, K))
    return (w * ((dist * (-gamma)).exp()) * pair_mask).sum() * (1.0 / B)


def background_penalty(kps: KeypointSet, bg_mask: np.ndarray) -> Tensor:
    """Total rendered keypoint mass on background cells, batch mean.

    ``bg_mask`` is boolean (B, H', W'), true on background.
    """
    if kps.maps is None:
        raise ValueError("background_penalty needs rendered maps")
    B = kps.maps.shape[0]
    m = Tensor(bg_mask.astype(kps.maps.dtype).reshape(B, 1, *bg_mask.shape[1:]))
    return (kps.maps * m).sum() * (1.0 / B)


def downsample_background_mask(seg: np.ndarray, grid_hw: tuple[int, int]) -> np.ndarray:
    """Nearest-neighbor downsample of (B, H, W) segmentation; true = background."""
    B, H, W = seg.shape
    gh, gw = grid_hw
    ri = (np.arange(gh) * H // gh) + H // (2 * gh)
    ci = (np.arange(gw) * W // gw) + W // (2 * gw)
    return seg[:, ri[:, None], ci[None, :]] == 0
