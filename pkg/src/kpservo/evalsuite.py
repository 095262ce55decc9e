"""Evaluation suites: keypoint stability under input perturbations, servo
consistency under camera-pose perturbations, and closed-loop servoing
episodes with trajectory logs.  Every report is reproducible bit for bit
from (checkpoint, config, seed)."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import ServoModel
from .scene.geometry import TASKS, TaskPreset, apply_motion, collided, converged, \
    hole_frame_error, in_workspace, motion_label
from .scene.render import RandomizationConfig, frame_seeds, render_stereo
from .scene.rollout import RolloutConfig, displaced_pose, rollout_endpoint, \
    sample_hole_pose, perturb_frame

PERTURB_CONDITIONS = (("background",), ("texture",), ("lighting",),
                      ("background", "texture", "lighting"))
JITTER_TIERS = ((0.01, math.radians(2.5)), (0.02, math.radians(5.0)),
                (0.03, math.radians(7.5)))   # (+-0.5cm, +-2.5deg) etc. at 50 cm/unit


@dataclass
class EvalReport:
    suite: str
    seed: int
    fingerprint: str
    rows: list[dict] = field(default_factory=list)
    aggregate: dict = field(default_factory=dict)

    def write(self, out_dir: str | Path, stem: str | None = None) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        stem = stem or self.suite
        if self.rows:
            cols = list(self.rows[0].keys())
            with open(out / f"{stem}.csv", "w", newline="") as f:
                w = csv.DictWriter(f, fieldnames=cols)
                w.writeheader()
                w.writerows(self.rows)
        with open(out / f"{stem}_summary.json", "w") as f:
            json.dump({"suite": self.suite, "seed": self.seed,
                       "fingerprint": self.fingerprint, "aggregate": self.aggregate,
                       "rows": self.rows}, f, indent=1, sort_keys=True)
            f.write("\n")


def sample_eval_poses(task: TaskPreset, roll_cfg: RolloutConfig,
                      rng: np.random.Generator, n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Fresh collision-free poses from the roll-out displacement distribution."""
    out = []
    while len(out) < n:
        hole = sample_hole_pose(task, rng)
        target = task.target_pose(hole)
        v = rng.normal(size=4)
        v /= np.linalg.norm(v)
        dist = rng.uniform(0.0, roll_cfg.max_displacement)
        pose = displaced_pose(target, v, dist)
        if in_workspace(pose) and not collided(task, pose, hole):
            out.append((pose, hole))
    return out


def _batched_keypoints(model: ServoModel, frames: np.ndarray, chunk: int = 64) -> np.ndarray:
    parts = [model.keypoints(frames[lo:lo + chunk])
             for lo in range(0, len(frames), chunk)]
    return np.concatenate(parts, axis=0)


def eval_keypoint_stability(model: ServoModel, rand: RandomizationConfig,
                            roll_cfg: RolloutConfig, n_samples: int = 400,
                            seed: int = 0, hw=(64, 64)) -> EvalReport:
    """Mean |delta j*| (grid coords normalized to [0,1]) and |delta alpha|, in
    percent, between unperturbed renders and per-channel re-randomized
    renders of the same poses.  Camera jitter is disabled throughout.
    """
    task = TASKS[model.cfg.task]
    rand0 = rand.without_jitter()
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(301,)))
    poses = sample_eval_poses(task, roll_cfg, rng, n_samples)

    base_seeds = [frame_seeds(seed, 10_000 + i, 0) for i in range(n_samples)]
    base_frames = np.stack([
        render_stereo(task, p, h, rand0, s, hw)[0]
        for (p, h), s in zip(poses, base_seeds)])
    base_kps = _batched_keypoints(model, base_frames)
    gh, gw = model.cfg.grid_hw
    norm = np.array([gh - 1.0, gw - 1.0])

    def delta(frames: np.ndarray) -> tuple[float, float]:
        kps = _batched_keypoints(model, frames)
        dj = np.abs(kps[..., :2] - base_kps[..., :2]) / norm
        da = np.abs(kps[..., 2] - base_kps[..., 2])
        return float(dj.mean() * 100.0), float(da.mean() * 100.0)

    report = EvalReport("eval-keypoints", seed, model.cfg.fingerprint())
    identity = np.stack([
        render_stereo(task, p, h, rand0, s, hw)[0]
        for (p, h), s in zip(poses, base_seeds)])
    dj0, da0 = delta(identity)
    report.rows.append({"condition": "identity", "mean_dj_pct": dj0, "mean_dalpha_pct": da0})

    cond_means = []
    for ci, cond in enumerate(PERTURB_CONDITIONS):
        frames = np.stack([
            perturb_frame(task, p, h, rand0, s, cond, reseed=seed * 1000 + ci * 101 + i,
                          hw=hw)[0]
            for i, ((p, h), s) in enumerate(zip(poses, base_seeds))])
        dj, da = delta(frames)
        name = "all" if len(cond) == 3 else cond[0]
        report.rows.append({"condition": name, "mean_dj_pct": dj, "mean_dalpha_pct": da})
        cond_means.append((dj, da))
    report.rows.append({"condition": "average",
                        "mean_dj_pct": float(np.mean([m[0] for m in cond_means])),
                        "mean_dalpha_pct": float(np.mean([m[1] for m in cond_means]))})
    report.aggregate = {"identity": report.rows[0], "average": report.rows[-1],
                        "all": report.rows[-2], "n_samples": n_samples}
    return report


def _servo_errors(model: ServoModel, frames: np.ndarray, u_star: np.ndarray,
                  beta_star: np.ndarray) -> tuple[float, float]:
    """(L_u, L_beta): scaled inverted cosine similarity and BCE vs labels."""
    u, beta = model.predict(frames)
    cos = (u * u_star).sum(axis=1) / np.linalg.norm(u, axis=1)
    l_u = float(np.mean(beta_star * (1.0 - cos)))
    p = np.clip(beta, 1e-7, 1.0 - 1e-7)
    l_b = float(np.mean(-(beta_star * np.log(p) + (1.0 - beta_star) * np.log(1.0 - p))))
    return l_u, l_b


def eval_servo_consistency(model: ServoModel, rand: RandomizationConfig,
                           roll_cfg: RolloutConfig, tiers=JITTER_TIERS,
                           n_poses: int = 200, n_seeds: int = 5, seed: int = 0,
                           hw=(64, 64)) -> EvalReport:
    """(L_u, L_beta) of predictions vs ground truth over a fixed pose set,
    rendered under increasing camera-jitter magnitudes.

    Non-jitter randomization seeds are fixed per pose so the tiers differ in
    camera perturbation only; each eval seed redraws the jitter.
    """
    task = TASKS[model.cfg.task]
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(302,)))
    poses = sample_eval_poses(task, roll_cfg, rng, n_poses)
    labels = [motion_label(p, task.target_pose(h), roll_cfg.d_sat) for p, h in poses]
    u_star = np.stack([l[0] for l in labels]).astype(np.float32)
    beta_star = np.array([l[1] for l in labels], dtype=np.float32)
    pose_seeds = [frame_seeds(seed, 20_000 + i, 0) for i in range(n_poses)]

    report = EvalReport("eval-servo", seed, model.cfg.fingerprint())
    per_tier = []
    for ti, (trans, rot) in enumerate(tiers):
        rand_t = RandomizationConfig(**{**rand.to_dict(), "jitter_trans": trans,
                                        "jitter_rot": rot})
        tier_vals = []
        for s in range(n_seeds):
            frames = []
            for i, (p, h) in enumerate(poses):
                seeds_i = dict(pose_seeds[i])
                seeds_i["jitter"] = int(np.random.SeedSequence(
                    entropy=seed, spawn_key=(303, ti, s, i)).generate_state(1)[0])
                frames.append(render_stereo(task, p, h, rand_t, seeds_i, hw)[0])
            l_u, l_b = _servo_errors(model, np.stack(frames), u_star, beta_star)
            report.rows.append({"tier": ti + 1, "trans_bound": trans,
                                "rot_bound_deg": math.degrees(rot), "eval_seed": s,
                                "L_u": l_u, "L_beta": l_b})
            tier_vals.append((l_u, l_b))
        per_tier.append((float(np.mean([v[0] for v in tier_vals])),
                         float(np.mean([v[1] for v in tier_vals]))))
    for ti, (lu, lb) in enumerate(per_tier):
        report.rows.append({"tier": ti + 1, "trans_bound": tiers[ti][0],
                            "rot_bound_deg": math.degrees(tiers[ti][1]),
                            "eval_seed": "mean", "L_u": lu, "L_beta": lb})
    report.aggregate = {"tier_means": [{"L_u": lu, "L_beta": lb} for lu, lb in per_tier],
                        "monotone_L_u": all(per_tier[i][0] <= per_tier[i + 1][0] + 1e-12
                                            for i in range(len(per_tier) - 1)),
                        "monotone_L_beta": all(per_tier[i][1] <= per_tier[i + 1][1] + 1e-12
                                               for i in range(len(per_tier) - 1))}
    return report


@dataclass
class EpisodeLog:
    episode: int
    outcome: str                  # "converged" | "collided" | "timeout"
    steps: int
    errors: np.ndarray            # (steps+1, 4) hole-frame pose errors
    poses: np.ndarray             # (steps+1, 4)
    degenerate_direction: bool = False


def run_episode(task: TaskPreset, rand: RandomizationConfig, hole: np.ndarray,
                start_pose: np.ndarray, policy, gain: float, max_steps: int,
                seed: int, episode_id: int, hw=(64, 64)) -> EpisodeLog:
    """Close the loop: render, predict, step, until converged/collided/timeout.

    ``policy(gray, pose) -> (u, beta)``; the oracle policy ignores the frame.
    """
    target = task.target_pose(hole)
    pose = start_pose.copy()
    errors = [hole_frame_error(pose, target, hole[2])]
    poses = [pose.copy()]
    outcome = "timeout"
    steps = 0
    degenerate = False
    for t in range(max_steps):
        gray, _, _ = render_stereo(task, pose, hole, rand,
                                   frame_seeds(seed, 30_000 + episode_id, t), hw)
        u, beta, flag = policy(gray, pose)
        degenerate = degenerate or flag
        pose = apply_motion(pose, u, gain * float(beta))
        steps = t + 1
        errors.append(hole_frame_error(pose, target, hole[2]))
        poses.append(pose.copy())
        # workspace boundary counts as a collision (the rig's travel limit)
        if collided(task, pose, hole) or not in_workspace(pose):
            outcome = "collided"
            break
        if converged(task, pose, target):
            outcome = "converged"
            break
    return EpisodeLog(episode_id, outcome, steps, np.stack(errors), np.stack(poses),
                      degenerate)


def model_policy(model: ServoModel):
    def policy(gray, pose):
        u, beta = model.predict(gray[None])
        return u[0], float(beta[0]), False
    return policy


def oracle_policy(task: TaskPreset, hole: np.ndarray, d_sat: float):
    target = task.target_pose(hole)
    def policy(gray, pose):
        u, beta, _ = motion_label(pose, target, d_sat)
        return u, beta, False
    return policy


def resample_trajectory(errors: np.ndarray, n_points: int = 100) -> np.ndarray:
    """Linear resampling of per-step errors onto normalized time [0, 1]."""
    t = np.linspace(0.0, 1.0, len(errors))
    tq = np.linspace(0.0, 1.0, n_points)
    return np.stack([np.interp(tq, t, errors[:, d]) for d in range(errors.shape[1])],
                    axis=1)


def eval_closed_loop(model_or_none: ServoModel | None, task_name: str,
                     rand: RandomizationConfig, roll_cfg: RolloutConfig,
                     n_trials: int = 50, gain: float = 0.02, max_steps: int = 200,
                     seed: int = 0, oracle: bool = False, hw=(64, 64)
                     ) -> tuple[EvalReport, list[dict]]:
    """Randomized-start servo episodes; success = converged before the step
    cap without collision.  Returns the report plus Fig-7-style trajectory
    rows (100 normalized-time points per episode)."""
    task = TASKS[task_name]
    fingerprint = model_or_none.cfg.fingerprint() if model_or_none else "oracle"
    report = EvalReport("eval-loop", seed, fingerprint)
    traj_rows: list[dict] = []
    n_success = 0
    for ep in range(n_trials):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(304, ep)))
        hole = sample_hole_pose(task, rng)
        start = rollout_endpoint(task, roll_cfg, rng, hole)
        if oracle:
            policy = oracle_policy(task, hole, roll_cfg.d_sat)
        else:
            policy = model_policy(model_or_none)
        log = run_episode(task, rand, hole, start, policy, gain, max_steps, seed, ep, hw)
        n_success += int(log.outcome == "converged")
        final = log.errors[-1]
        report.rows.append({"episode": ep, "outcome": log.outcome, "steps": log.steps,
                            "final_err_x": float(final[0]), "final_err_y": float(final[1]),
                            "final_err_z": float(final[2]),
                            "final_err_theta": float(final[3]),
                            "degenerate_direction": log.degenerate_direction})
        tr = resample_trajectory(log.errors)
        for i in range(len(tr)):
            traj_rows.append({"episode": ep, "t_norm": i / (len(tr) - 1.0),
                              "err_x": float(tr[i, 0]), "err_y": float(tr[i, 1]),
                              "err_z": float(tr[i, 2]), "err_theta": float(tr[i, 3])})
    report.aggregate = {"success_rate": n_success / n_trials, "n_trials": n_trials,
                        "gain": gain, "max_steps": max_steps, "oracle": oracle,
                        "outcomes": {o: sum(r["outcome"] == o for r in report.rows)
                                     for o in ("converged", "collided", "timeout")}}
    return report, traj_rows


def write_trajectories(traj_rows: list[dict], out_dir: str | Path,
                       stem: str = "trajectories") -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / f"{stem}.csv", "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(traj_rows[0].keys()))
        w.writeheader()
        w.writerows(traj_rows)


def comparison_report(suite: str, report_a: EvalReport, report_b: EvalReport,
                      label_a: str = "a", label_b: str = "b") -> EvalReport:
    """Side-by-side table of two runs of the same suite (adex on/off style)."""
    merged = EvalReport(f"{suite}-compare", report_a.seed,
                        f"{report_a.fingerprint}|{report_b.fingerprint}")
    key = "condition" if suite == "eval-keypoints" else "episode"
    rows_b = {json.dumps({k: r[k] for k in r if k == key}): r for r in report_b.rows}
    for ra in report_a.rows:
        k = json.dumps({key: ra.get(key)} if key in ra else {})
        rb = rows_b.get(k, {})
        row = {key: ra.get(key)}
        row.update({f"{label_a}_{kk}": vv for kk, vv in ra.items() if kk != key})
        row.update({f"{label_b}_{kk}": vv for kk, vv in rb.items() if kk != key})
        merged.rows.append(row)
    merged.aggregate = {label_a: report_a.aggregate, label_b: report_b.aggregate}
    return merged
