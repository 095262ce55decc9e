import json
from pathlib import Path

import numpy as np
import pytest

from kpservo.cli import main


@pytest.fixture(scope="module")
def cli_run(tmp_path_factory):
    """Generate a tiny dataset and train one epoch through the CLI."""
    root = tmp_path_factory.mktemp("cli")
    ds_dir = root / "ds"
    run_dir = root / "run"
    assert main(["generate", "--task", "insert-shaft", "--rollouts", "6",
                 "--seed", "2", "--out-dir", str(ds_dir), "--export-pgm"]) == 0
    assert main(["train", "--dataset", str(ds_dir), "--out-dir", str(run_dir),
                 "--epochs", "1", "--seed", "0", "--k", "4", "--adex", "off"]) == 0
    return root, ds_dir, run_dir


def test_generate_writes_manifest_and_pgm(cli_run):
    _, ds_dir, _ = cli_run
    manifest = json.loads((ds_dir / "manifest.json").read_text())
    assert manifest["task"] == "insert-shaft"
    assert (ds_dir / "labels.f32").exists()
    assert list((ds_dir / "pgm").glob("*.pgm"))


def test_train_writes_checkpoints_and_csv(cli_run):
    _, _, run_dir = cli_run
    assert (run_dir / "losses.csv").exists()
    assert (run_dir / "checkpoint_final.json").exists()
    cfg = json.loads((run_dir / "config.json").read_text())
    assert cfg["n_keypoints"] == 4 and cfg["adex"]["enabled"] is False


def test_eval_keypoints_subcommand(cli_run, tmp_path):
    _, _, run_dir = cli_run
    rc = main(["eval-keypoints", "--checkpoint", str(run_dir / "checkpoint_final"),
               "--samples", "12", "--seed", "1", "--out-dir", str(tmp_path)])
    assert rc == 0
    rows = (tmp_path / "keypoints.csv").read_text().splitlines()
    assert rows[0].startswith("condition")
    summary = json.loads((tmp_path / "keypoints_summary.json").read_text())
    ident = summary["aggregate"]["identity"]
    assert ident["mean_dj_pct"] == 0.0 and ident["mean_dalpha_pct"] == 0.0


def test_eval_servo_subcommand(cli_run, tmp_path):
    _, _, run_dir = cli_run
    rc = main(["eval-servo", "--checkpoint", str(run_dir / "checkpoint_final"),
               "--poses", "6", "--eval-seeds", "1", "--seed", "1",
               "--out-dir", str(tmp_path)])
    assert rc == 0
    assert (tmp_path / "servo_consistency.csv").exists()


def test_eval_loop_oracle_and_assert(cli_run, tmp_path):
    rc = main(["eval-loop", "--oracle", "--task", "insert-shaft", "--trials", "3",
               "--seed", "5", "--out-dir", str(tmp_path), "--assert", "1.0"])
    assert rc == 0
    traj = (tmp_path / "trajectories.csv").read_text().splitlines()
    assert traj[0] == "episode,t_norm,err_x,err_y,err_z,err_theta"
    assert len(traj) == 1 + 3 * 100   # 100 normalized-time points per episode


def test_eval_loop_assert_fails_nonzero_exit(cli_run, tmp_path):
    _, _, run_dir = cli_run
    # a one-epoch model cannot reach 100%: --assert must flip the exit code
    rc = main(["eval-loop", "--checkpoint", str(run_dir / "checkpoint_final"),
               "--trials", "2", "--seed", "5", "--out-dir", str(tmp_path),
               "--assert", "1.01"])
    assert rc == 1


def test_replay_dumps_frames(cli_run, tmp_path):
    _, _, run_dir = cli_run
    rc = main(["replay", "--checkpoint", str(run_dir / "checkpoint_final"),
               "--seed", "3", "--max-steps", "4", "--out-dir", str(tmp_path)])
    assert rc == 0
    assert list(tmp_path.glob("step*_view0.pgm"))
    assert (tmp_path / "keypoints.csv").exists()


def test_gradcheck_subcommand():
    assert main(["gradcheck", "--points", "1", "--assert"]) == 0


def test_eval_reports_reproducible(cli_run, tmp_path):
    _, _, run_dir = cli_run
    for d in ("r1", "r2"):
        main(["eval-keypoints", "--checkpoint", str(run_dir / "checkpoint_final"),
              "--samples", "6", "--seed", "9", "--out-dir", str(tmp_path / d)])
    assert ((tmp_path / "r1" / "keypoints.csv").read_bytes()
            == (tmp_path / "r2" / "keypoints.csv").read_bytes())


def test_config_file_schema(cli_run, tmp_path):
    _, ds_dir, _ = cli_run
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps({"task": "insert-shaft", "n_keypoints": 4,
                                    "epochs": 1, "batch_size": 8,
                                    "adex": {"enabled": False}}))
    rc = main(["train", "--config", str(cfg_path), "--dataset", str(ds_dir),
               "--out-dir", str(tmp_path / "run")])
    assert rc == 0
    written = json.loads((tmp_path / "run" / "config.json").read_text())
    assert written["n_keypoints"] == 4
