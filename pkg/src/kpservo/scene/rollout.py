"""Roll-out generation and the closed-loop environment interface.

Each roll-out starts exactly at the task's target pose and walks outward
along one random unit direction in the scaled pose metric with one random
speed factor, capturing a stereo frame and the ground-truth motion label at
every step.  Labels depend on the pose alone, never on the camera jitter:
that is what anchors the motion to the peg-and-hole relationship instead of
the camera calibration.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import (TaskPreset, apply_motion, collided, converged,
                       in_workspace, motion_label, ROTATION_SCALE)
from .render import RandomizationConfig, frame_seeds, render_stereo


@dataclass(frozen=True)
class RolloutConfig:
    max_steps: int = 6            # samples per roll-out including step 0
    step_size: float = 0.02      # nominal outward displacement per step
    speed_lo: float = 0.5
    speed_hi: float = 1.5

    @property
    def max_displacement(self) -> float:
        return self.step_size * (self.max_steps - 1) * self.speed_hi

    @property
    def d_sat(self) -> float:
        # beta* saturates at half the maximum roll-out displacement
        return 0.5 * self.max_displacement

    def to_dict(self) -> dict:
        return dict(max_steps=self.max_steps, step_size=self.step_size,
                    speed_lo=self.speed_lo, speed_hi=self.speed_hi)

    @staticmethod
    def from_dict(d: dict) -> "RolloutConfig":
        return RolloutConfig(**d)


@dataclass
class SceneSample:
    """One stereo observation with its ground-truth motion label."""
    gray: np.ndarray        # (2, H, W) float32 in [0, 1]
    depth: np.ndarray       # (2, H, W) float32 in [0, 1]
    seg: np.ndarray         # (2, H, W) uint8 in {0 bg, 1 hole, 2 peg}
    u_star: np.ndarray      # (4,) float32, unit
    beta_star: float
    rollout_id: int
    step_index: int
    pose: np.ndarray        # (4,)
    hole_pose: np.ndarray   # (3,)


def _episode_rng(master_seed: int, rollout_id: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=master_seed, spawn_key=(rollout_id,))
    return np.random.default_rng(ss)


def _unit4(rng: np.random.Generator) -> np.ndarray:
    v = rng.normal(size=4)
    return v / np.linalg.norm(v)


def displaced_pose(target: np.ndarray, v: np.ndarray, dist: float) -> np.ndarray:
    """Target pose displaced by dist * v in the (world-aligned) scaled metric."""
    return np.array([target[0] + dist * v[0], target[1] + dist * v[1],
                     target[2] + dist * v[2],
                     target[3] + dist * v[3] / ROTATION_SCALE])


def sample_hole_pose(task: TaskPreset, rng: np.random.Generator) -> np.ndarray:
    lo, hi = task.hole_xy_range
    return np.array([rng.uniform(lo, hi), rng.uniform(lo, hi),
                     rng.uniform(-task.hole_rot_range, task.hole_rot_range)])


def rollout(task: TaskPreset, rand: RandomizationConfig, roll_cfg: RolloutConfig,
            master_seed: int, rollout_id: int, hw=(64, 64)) -> list[SceneSample]:
    """Generate one roll-out; terminates early on collision or workspace exit."""
    rng = _episode_rng(master_seed, rollout_id)
    hole = sample_hole_pose(task, rng)
    target = task.target_pose(hole)
    v_out = _unit4(rng)
    speed = rng.uniform(roll_cfg.speed_lo, roll_cfg.speed_hi)

    samples: list[SceneSample] = []
    for t in range(roll_cfg.max_steps):
        pose = displaced_pose(target, v_out, t * roll_cfg.step_size * speed)
        if not in_workspace(pose) or collided(task, pose, hole):
            break
        seeds = frame_seeds(master_seed, rollout_id, t)
        gray, depth, seg = render_stereo(task, pose, hole, rand, seeds, hw)
        u_star, beta_star, _ = motion_label(pose, target, roll_cfg.d_sat)
        samples.append(SceneSample(
            gray=gray, depth=depth, seg=seg,
            u_star=u_star.astype(np.float32), beta_star=float(beta_star),
            rollout_id=rollout_id, step_index=t, pose=pose, hole_pose=hole))
    return samples


def rollout_endpoint(task: TaskPreset, roll_cfg: RolloutConfig,
                     rng: np.random.Generator, hole: np.ndarray) -> np.ndarray:
    """Last collision-free pose of a simulated roll-out walk (no rendering).

    This is the start-pose distribution for closed-loop episodes.
    """
    target = task.target_pose(hole)
    while True:
        v_out = _unit4(rng)
        speed = rng.uniform(roll_cfg.speed_lo, roll_cfg.speed_hi)
        last = None
        for t in range(roll_cfg.max_steps):
            pose = displaced_pose(target, v_out, t * roll_cfg.step_size * speed)
            if not in_workspace(pose) or collided(task, pose, hole):
                break
            last = pose
        if last is not None and not np.allclose(last, target):
            return last


def step_env(task: TaskPreset, pose: np.ndarray, hole: np.ndarray,
             u: np.ndarray, beta: float, gain: float
             ) -> tuple[np.ndarray, bool, bool]:
    """Advance the peg by gain * beta along u; returns (pose, converged, collided)."""
    new_pose = apply_motion(pose, np.asarray(u, dtype=float), gain * float(beta))
    target = task.target_pose(hole)
    return new_pose, converged(task, new_pose, target), collided(task, new_pose, hole)


def perturb_frame(task: TaskPreset, pose: np.ndarray, hole: np.ndarray,
                  rand: RandomizationConfig, seeds: dict[str, int],
                  which: tuple[str, ...], reseed: int, hw=(64, 64)):
    """Re-render the identical pose with the selected channels resampled.

    ``which`` is a subset of {"background", "texture", "lighting"}; all other
    channels keep their original seeds, so an empty selection reproduces the
    frame bit for bit.
    """
    channel_ids = {"background": 1, "texture": 2, "lighting": 3}
    new_seeds = dict(seeds)
    for ch in which:
        if ch not in channel_ids:
            raise ValueError(f"unknown perturbation channel {ch!r}")
        ss = np.random.SeedSequence(entropy=reseed, spawn_key=(channel_ids[ch],))
        new_seeds[ch] = int(ss.generate_state(1)[0])
    return render_stereo(task, pose, hole, rand, new_seeds, hw)
