"""Stereo rasterizer with grayscale, depth and exact segmentation output.

Camera model: eye-in-hand.  The rig tracks the peg in x, y, z and yaw, with
per-frame pose jitter; the two rectified views verge on the peg's top plane,
so a surface's horizontal disparity grows with its distance below the
camera.  Projection of a constant-height convex polygon is affine, so parts
stay convex polygons on screen and get painted back-to-front with half-plane
tests: pixel centers for depth/segmentation (exact by construction), a 2x
supersampled grid for shaded grayscale edges.

Randomization channels (background texture, per-object shading, lighting
gain/bias, camera jitter) draw from independent seeds so any subset can be
resampled while the rest stays frozen.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .geometry import TaskPreset, in_workspace, rot2d

SEG_BACKGROUND, SEG_HOLE, SEG_PEG = 0, 1, 2

DEPTH_NEAR = 0.10   # camera distances mapped to [0, 1]
DEPTH_FAR = 0.60

_CHANNELS = ("jitter", "background", "texture", "lighting")


class WorkspaceError(ValueError):
    pass


@dataclass(frozen=True)
class RandomizationConfig:
    jitter_trans: float = 0.02                  # +-, scene units (+-1 cm)
    jitter_rot: float = math.radians(5.0)
    background_intensity: tuple = (0.05, 0.95)
    object_gain: tuple = (0.35, 0.95)
    lighting_gain: tuple = (0.75, 1.25)
    lighting_bias: tuple = (-0.15, 0.15)
    baseline_half: float = 0.10                 # stereo half-baseline
    view_extent: float = 0.40                   # world width covered by the image
    cam_height: float = 0.30                    # rig height above the peg top
    supersample: int = 2

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v
                for k, v in self.__dict__.items()}

    @staticmethod
    def from_dict(d: dict) -> "RandomizationConfig":
        kw = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
        return RandomizationConfig(**kw)

    def without_jitter(self) -> "RandomizationConfig":
        return replace(self, jitter_trans=0.0, jitter_rot=0.0)


def frame_seeds(master_seed: int, rollout_id: int, step: int) -> dict[str, int]:
    """Independent per-channel seed streams, order-independent and splittable."""
    out = {}
    for i, ch in enumerate(_CHANNELS):
        ss = np.random.SeedSequence(entropy=master_seed, spawn_key=(rollout_id, step, i))
        out[ch] = int(ss.generate_state(1)[0])
    return out


def _pixel_grid(H: int, W: int, extent: float, ss: int = 1):
    """Image-plane coordinates of (super)pixel centers; x right, y down rows."""
    xs = ((np.arange(W * ss) + 0.5) / (W * ss) - 0.5) * extent
    ys = ((np.arange(H * ss) + 0.5) / (H * ss) - 0.5) * extent
    return np.meshgrid(xs, ys)


def _inside(poly: np.ndarray, gx: np.ndarray, gy: np.ndarray) -> np.ndarray:
    """Half-plane test of grid points against a CCW convex polygon."""
    inside = np.ones(gx.shape, dtype=bool)
    n = len(poly)
    for i in range(n):
        ax, ay = poly[i]
        ex, ey = poly[(i + 1) % n] - poly[i]
        inside &= ex * (gy - ay) - ey * (gx - ax) >= 0.0
    return inside


def _background_texture(rng: np.random.Generator, wx: np.ndarray, wy: np.ndarray,
                        lo: float, hi: float) -> np.ndarray:
    """Procedural world-anchored texture evaluated at world coords."""
    family = rng.integers(0, 5)
    base = rng.uniform(lo + 0.1 * (hi - lo), hi - 0.1 * (hi - lo))
    if family == 0:      # flat
        tex = np.full(wx.shape, base)
    elif family == 1:    # linear gradient
        gx, gy = rng.uniform(-0.8, 0.8, 2)
        tex = base + gx * (wx - 0.5) + gy * (wy - 0.5)
    elif family == 2:    # sinusoid
        fx, fy = rng.uniform(1.0, 8.0, 2)
        amp, phase = rng.uniform(0.1, 0.4), rng.uniform(0, 2 * math.pi)
        tex = base + amp * np.sin(2 * math.pi * (fx * wx + fy * wy) + phase)
    elif family == 3:    # checker
        cell = rng.uniform(0.04, 0.15)
        other = rng.uniform(lo, hi)
        par = (np.floor(wx / cell) + np.floor(wy / cell)) % 2
        tex = np.where(par > 0.5, base, other)
    else:                # value noise, bilinear between lattice values
        m = int(rng.integers(4, 11))
        lattice = rng.uniform(lo, hi, (m + 2, m + 2))
        fx, fy = np.clip(wx, 0, 1) * m, np.clip(wy, 0, 1) * m
        x0, y0 = np.floor(fx).astype(int), np.floor(fy).astype(int)
        tx, ty = fx - x0, fy - y0
        tex = (lattice[y0, x0] * (1 - tx) * (1 - ty) + lattice[y0, x0 + 1] * tx * (1 - ty)
               + lattice[y0 + 1, x0] * (1 - tx) * ty + lattice[y0 + 1, x0 + 1] * tx * ty)
    return np.clip(tex, lo, hi)


def render_stereo(task: TaskPreset, pose: np.ndarray, hole_pose: np.ndarray,
                  rand: RandomizationConfig, seeds: dict[str, int],
                  hw: tuple[int, int] = (64, 64)):
    """One stereo capture -> (gray (2,H,W), depth (2,H,W), seg (2,H,W) uint8)."""
    if not in_workspace(pose):
        raise WorkspaceError(f"peg pose {np.round(pose, 4).tolist()} outside the workspace")
    H, W = hw
    ss = rand.supersample

    jr = np.random.default_rng(seeds["jitter"])
    jx, jy, jz = jr.uniform(-rand.jitter_trans, rand.jitter_trans, 3)
    jth = jr.uniform(-rand.jitter_rot, rand.jitter_rot)

    tr = np.random.default_rng(seeds["texture"])
    g_lo, g_hi = rand.object_gain
    wall_shade = tr.uniform(g_lo, g_hi)
    bore_shade = tr.uniform(g_lo, 0.5 * (g_lo + g_hi))   # bore reads darker
    peg_shade = tr.uniform(g_lo, g_hi)

    lr = np.random.default_rng(seeds["lighting"])
    light_gain = lr.uniform(*rand.lighting_gain)
    light_bias = lr.uniform(*rand.lighting_bias)

    br = np.random.default_rng(seeds["background"])
    bg_state = br.bit_generator.state

    peg_top = pose[2] + task.peg_height
    cam_xy = pose[:2] + np.array([jx, jy])
    cam_th = pose[3] + jth
    cam_z = peg_top + rand.cam_height + jz
    Rw2c = rot2d(-cam_th)

    # back-to-front paint order (bore floor, walls, peg top)
    parts = [(task.bore_rect(hole_pose), task.floor_z, SEG_HOLE, bore_shade)]
    parts += [(wr, task.rim_z, SEG_HOLE, wall_shade) for wr in task.wall_rects(hole_pose)]
    parts.append((task.peg_rect(pose), peg_top, SEG_PEG, peg_shade))

    gx_c, gy_c = _pixel_grid(H, W, rand.view_extent)          # pixel centers
    gx_s, gy_s = _pixel_grid(H, W, rand.view_extent, ss)      # supersampled

    def depth_of(z_surf: float) -> float:
        return float(np.clip((cam_z - z_surf - DEPTH_NEAR) / (DEPTH_FAR - DEPTH_NEAR), 0.0, 1.0))

    gray = np.empty((2, H, W), dtype=np.float32)
    depth = np.empty((2, H, W), dtype=np.float32)
    seg = np.empty((2, H, W), dtype=np.uint8)

    for v, v_sign in enumerate((-1.0, 1.0)):
        def disparity(z_surf: float) -> float:
            return v_sign * rand.baseline_half * (
                rand.cam_height / (cam_z - z_surf) - 1.0)

        # background texture anchored to the world table plane (z = 0)
        d0 = disparity(0.0)
        wxy = np.stack([gx_s - d0, gy_s], axis=-1) @ rot2d(cam_th).T + cam_xy
        br.bit_generator.state = bg_state   # same background draw in both views
        lo, hi = rand.background_intensity
        gray_ss = _background_texture(br, wxy[..., 0], wxy[..., 1], lo, hi)

        depth[v].fill(depth_of(0.0))
        seg[v].fill(SEG_BACKGROUND)

        for poly, z_surf, cls, shade in parts:
            q = (poly - cam_xy) @ Rw2c.T
            q[:, 0] += disparity(z_surf)
            m_c = _inside(q, gx_c, gy_c)
            depth[v][m_c] = depth_of(z_surf)
            seg[v][m_c] = cls
            gray_ss[_inside(q, gx_s, gy_s)] = shade

        if ss > 1:
            g = gray_ss.reshape(H, ss, W, ss).mean(axis=(1, 3))
        else:
            g = gray_ss
        gray[v] = np.clip(g * light_gain + light_bias, 0.0, 1.0)

    return gray, depth, seg
