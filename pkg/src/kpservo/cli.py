"""Command-line interface.

Subcommands: generate, train, eval-keypoints, eval-servo, eval-loop, replay,
gradcheck.  Config files are JSON with the TrainConfig schema (see README);
command-line flags override config values.  Reports land in --out-dir as CSV
plus a JSON summary; --assert makes threshold violations exit nonzero.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from .evalsuite import (JITTER_TIERS, comparison_report, eval_closed_loop,
                        eval_keypoint_stability, eval_servo_consistency,
                        model_policy, run_episode, write_trajectories)
from .fidelity import run_fidelity_suite
from .model import ServoModel
from .scene import (RandomizationConfig, RolloutConfig, TASKS, generate_dataset,
                    load_dataset, rollout_endpoint, sample_hole_pose, save_dataset,
                    write_pgm, frame_seeds, render_stereo)
from .train import TrainConfig, train
from .validation import check_task


def _load_config(path: str | None) -> TrainConfig:
    if path is None:
        return TrainConfig()
    with open(path) as f:
        return TrainConfig.from_dict(json.load(f))


def _apply_overrides(cfg: TrainConfig, args) -> TrainConfig:
    d = cfg.to_dict()
    if getattr(args, "task", None):
        d["task"] = check_task(args.task)
    if getattr(args, "k", None):
        d["n_keypoints"] = args.k
    if getattr(args, "seed", None) is not None:
        d["seed"] = args.seed
    if getattr(args, "epochs", None):
        d["epochs"] = args.epochs
    if getattr(args, "adex", None):
        d["adex"]["enabled"] = args.adex == "on"
    if getattr(args, "deterministic", False):
        d["deterministic"] = True
    return TrainConfig.from_dict(d)


def _common_flags(p: argparse.ArgumentParser, out_required: bool = True) -> None:
    p.add_argument("--config", help="JSON config file (TrainConfig schema)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out-dir", required=out_required)
    p.add_argument("--deterministic", action="store_true",
                   help="force single-threaded, ordered execution")
    p.add_argument("--task", choices=sorted(TASKS))
    p.add_argument("--k", type=int, help="number of keypoints")
    p.add_argument("--adex", choices=["on", "off"])


def cmd_generate(args) -> int:
    cfg = _apply_overrides(_load_config(args.config), args)
    ds = generate_dataset(cfg.task, args.rollouts, cfg.seed,
                          hw=tuple(cfg.image_hw), progress=True)
    save_dataset(ds, args.out_dir)
    print(f"wrote {len(ds)} samples / {ds.n_rollouts} rollouts to {args.out_dir}")
    if args.export_pgm:
        pgm_dir = Path(args.out_dir) / "pgm"
        pgm_dir.mkdir(exist_ok=True)
        for i in range(min(8, len(ds))):
            write_pgm(pgm_dir / f"sample{i}_gray_left.pgm", ds.gray[i, 0])
            write_pgm(pgm_dir / f"sample{i}_depth_left.pgm", ds.depth[i, 0])
            write_pgm(pgm_dir / f"sample{i}_seg_left.pgm", (ds.seg[i, 0] * 120))
    return 0


def cmd_train(args) -> int:
    cfg = _apply_overrides(_load_config(args.config), args)
    ds = load_dataset(args.dataset)
    summary = train(cfg, ds, args.out_dir, progress=True)
    print(json.dumps({k: summary[k] for k in ("first_epoch_total", "last_epoch_total",
                                              "last_val_servo_dir", "wall_seconds")},
                     indent=1))
    return 0


def _load_model(args) -> ServoModel:
    return ServoModel.load(args.checkpoint)


def cmd_eval_keypoints(args) -> int:
    model = _load_model(args)
    rand, roll_cfg = RandomizationConfig(), RolloutConfig()
    seed = args.seed if args.seed is not None else 0
    report = eval_keypoint_stability(model, rand, roll_cfg, args.samples, seed)
    if args.compare_checkpoint:
        other = ServoModel.load(args.compare_checkpoint)
        other_rep = eval_keypoint_stability(other, rand, roll_cfg, args.samples, seed)
        comparison_report("eval-keypoints", report, other_rep,
                          "a", "b").write(args.out_dir, "keypoints_compare")
    report.write(args.out_dir, "keypoints")
    avg = report.aggregate["all"]
    print(f"all-perturbation: dj {avg['mean_dj_pct']:.3f}%  dalpha {avg['mean_dalpha_pct']:.3f}%")
    if args.assert_threshold is not None:
        ok = (avg["mean_dj_pct"] <= args.assert_threshold
              and avg["mean_dalpha_pct"] <= args.assert_threshold)
        print(f"assert <= {args.assert_threshold}: {'PASS' if ok else 'FAIL'}")
        return 0 if ok else 1
    return 0


def cmd_eval_servo(args) -> int:
    model = _load_model(args)
    seed = args.seed if args.seed is not None else 0
    report = eval_servo_consistency(model, RandomizationConfig(), RolloutConfig(),
                                    JITTER_TIERS, args.poses, args.eval_seeds, seed)
    report.write(args.out_dir, "servo_consistency")
    for i, tier in enumerate(report.aggregate["tier_means"]):
        print(f"tier {i + 1}: L_u {tier['L_u']:.4f}  L_beta {tier['L_beta']:.4f}")
    if args.assert_monotone:
        ok = report.aggregate["monotone_L_u"] and report.aggregate["monotone_L_beta"]
        print(f"assert nondecreasing: {'PASS' if ok else 'FAIL'}")
        return 0 if ok else 1
    return 0


def cmd_eval_loop(args) -> int:
    seed = args.seed if args.seed is not None else 0
    task = args.task or (ServoModel.load(args.checkpoint).cfg.task
                         if args.checkpoint else "insert-shaft")
    rand, roll_cfg = RandomizationConfig(), RolloutConfig()
    if args.oracle:
        report, traj = eval_closed_loop(None, task, rand, roll_cfg, args.trials,
                                        args.gain, args.max_steps, seed, oracle=True)
    else:
        model = _load_model(args)
        task = model.cfg.task
        report, traj = eval_closed_loop(model, task, rand, roll_cfg, args.trials,
                                        args.gain, args.max_steps, seed)
        if args.compare_checkpoint:
            other = ServoModel.load(args.compare_checkpoint)
            rep_b, _ = eval_closed_loop(other, other.cfg.task, rand, roll_cfg,
                                        args.trials, args.gain, args.max_steps, seed)
            comparison_report("eval-loop", report, rep_b,
                              "a", "b").write(args.out_dir, "loop_compare")
    report.write(args.out_dir, "closed_loop")
    write_trajectories(traj, args.out_dir)
    rate = report.aggregate["success_rate"]
    print(f"success rate: {rate:.2f} over {args.trials} trials "
          f"({report.aggregate['outcomes']})")
    if args.assert_threshold is not None:
        ok = rate >= args.assert_threshold
        print(f"assert >= {args.assert_threshold}: {'PASS' if ok else 'FAIL'}")
        return 0 if ok else 1
    return 0


def cmd_replay(args) -> int:
    model = _load_model(args)
    seed = args.seed if args.seed is not None else 0
    task = TASKS[model.cfg.task]
    rand, roll_cfg = RandomizationConfig(), RolloutConfig()
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(305,)))
    hole = sample_hole_pose(task, rng)
    start = rollout_endpoint(task, roll_cfg, rng, hole)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    log = run_episode(task, rand, hole, start, model_policy(model), args.gain,
                      args.max_steps, seed, 0)
    gh, gw = model.cfg.grid_hw
    h, w = model.cfg.image_hw
    with open(out / "keypoints.csv", "w") as f:
        f.write("step,view,channel,row,col,alpha\n")
        for t, pose in enumerate(log.poses[:-1]):
            gray, _, _ = render_stereo(task, pose, hole, rand,
                                       frame_seeds(seed, 30_000, t), (h, w))
            kps = model.keypoints(gray[None])[0]
            for v in range(2):
                frame = (gray[v] * 255).astype(np.uint8)
                overlay = np.stack([frame] * 1)[0].copy()
                for k in range(kps.shape[1]):
                    r = int(round(kps[v, k, 0] / (gh - 1) * (h - 1)))
                    c = int(round(kps[v, k, 1] / (gw - 1) * (w - 1)))
                    shade = int(255 * kps[v, k, 2])
                    overlay[max(0, r - 1):r + 2, max(0, c - 1):c + 2] = shade
                    f.write(f"{t},{v},{k},{kps[v, k, 0]:.3f},{kps[v, k, 1]:.3f},"
                            f"{kps[v, k, 2]:.4f}\n")
                write_pgm(out / f"step{t:03d}_view{v}.pgm", frame)
                write_pgm(out / f"step{t:03d}_view{v}_overlay.pgm", overlay)
    print(f"replayed {log.steps} steps ({log.outcome}); frames in {out}")
    return 0


def cmd_gradcheck(args) -> int:
    res = run_fidelity_suite(n_points=args.points,
                             seed=args.seed if args.seed is not None else 0)
    worst = 0.0
    for name, err in res.items():
        status = "ok" if err < args.tolerance else "FAIL"
        print(f"  {name:18s} max rel err {err:.3e}  {status}")
        worst = max(worst, err)
    print(f"worst: {worst:.3e} (tolerance {args.tolerance})")
    if args.assert_threshold or args.do_assert:
        return 0 if worst < args.tolerance else 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="kpservo",
        description="keypoint-based stereo visual servoing on a built-in "
                    "2D peg-and-hole simulator")
    sub = ap.add_subparsers(dest="cmd", required=True)

    g = sub.add_parser("generate", help="generate a roll-out dataset")
    _common_flags(g)
    g.add_argument("--rollouts", type=int, default=500)
    g.add_argument("--export-pgm", action="store_true")
    g.set_defaults(fn=cmd_generate)

    t = sub.add_parser("train", help="train on a generated dataset")
    _common_flags(t)
    t.add_argument("--dataset", required=True)
    t.add_argument("--epochs", type=int)
    t.set_defaults(fn=cmd_train)

    ek = sub.add_parser("eval-keypoints", help="keypoint stability under input perturbations")
    _common_flags(ek)
    ek.add_argument("--checkpoint", required=True)
    ek.add_argument("--samples", type=int, default=400)
    ek.add_argument("--compare-checkpoint", help="second checkpoint for a side-by-side report")
    ek.add_argument("--assert", dest="assert_threshold", type=float, default=None,
                    help="fail (exit 1) if the all-perturbation row exceeds this percent")
    ek.set_defaults(fn=cmd_eval_keypoints)

    es = sub.add_parser("eval-servo", help="servo consistency under camera perturbations")
    _common_flags(es)
    es.add_argument("--checkpoint", required=True)
    es.add_argument("--poses", type=int, default=200)
    es.add_argument("--eval-seeds", type=int, default=5)
    es.add_argument("--assert-monotone", action="store_true",
                    help="fail (exit 1) unless (L_u, L_beta) are nondecreasing across tiers")
    es.set_defaults(fn=cmd_eval_servo)

    el = sub.add_parser("eval-loop", help="closed-loop servo episodes")
    _common_flags(el)
    el.add_argument("--checkpoint")
    el.add_argument("--trials", type=int, default=50)
    el.add_argument("--gain", type=float, default=0.02)
    el.add_argument("--max-steps", type=int, default=200)
    el.add_argument("--oracle", action="store_true",
                    help="drive with ground-truth labels instead of the model")
    el.add_argument("--compare-checkpoint")
    el.add_argument("--assert", dest="assert_threshold", type=float, default=None,
                    help="fail (exit 1) if success rate is below this")
    el.set_defaults(fn=cmd_eval_loop)

    rp = sub.add_parser("replay", help="dump one episode's frames and keypoint overlays")
    _common_flags(rp)
    rp.add_argument("--checkpoint", required=True)
    rp.add_argument("--gain", type=float, default=0.02)
    rp.add_argument("--max-steps", type=int, default=60)
    rp.set_defaults(fn=cmd_replay)

    gc = sub.add_parser("gradcheck", help="gradient fidelity suite (finite differences)")
    gc.add_argument("--seed", type=int, default=None)
    gc.add_argument("--points", type=int, default=10)
    gc.add_argument("--tolerance", type=float, default=1e-3)
    gc.add_argument("--assert", dest="do_assert", action="store_true",
                    help="fail (exit 1) on any block above tolerance")
    gc.add_argument("--assert-threshold", type=float, default=None, help=argparse.SUPPRESS)
    gc.set_defaults(fn=cmd_gradcheck)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
