"""Dataset container and on-disk format.

Layout on disk: ``manifest.json`` plus one raw little-endian float32 blob per
field (row-major, samples ordered by (rollout_id, step_index)) and a
``labels.f32`` blob of (u*, beta*) rows.  Round-trips are byte-identical;
loads validate blob sizes against the manifest before anything is used.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..checkpoint import config_fingerprint
from .geometry import TASKS, TaskPreset
from .render import RandomizationConfig
from .rollout import RolloutConfig, SceneSample, rollout

FORMAT_VERSION = 1
IMAGE_FIELDS = ("gray_left", "gray_right", "depth_left", "depth_right",
                "seg_left", "seg_right")


class DatasetError(RuntimeError):
    pass


@dataclass
class Dataset:
    """All samples of one generated corpus, in memory."""
    task_name: str
    rand: RandomizationConfig
    roll_cfg: RolloutConfig
    seed: int
    hw: tuple[int, int]
    gray: np.ndarray          # (N, 2, H, W) float32
    depth: np.ndarray         # (N, 2, H, W) float32
    seg: np.ndarray           # (N, 2, H, W) uint8
    u_star: np.ndarray        # (N, 4) float32
    beta_star: np.ndarray     # (N,) float32
    rollout_ids: np.ndarray   # (N,) int32
    step_indices: np.ndarray  # (N,) int32
    poses: np.ndarray = field(default=None)       # (N, 4) float64, not persisted
    hole_poses: np.ndarray = field(default=None)  # (N, 3) float64, not persisted

    def __len__(self) -> int:
        return self.gray.shape[0]

    @property
    def task(self) -> TaskPreset:
        return TASKS[self.task_name]

    @property
    def n_rollouts(self) -> int:
        return int(len(np.unique(self.rollout_ids)))

    def select(self, idx: np.ndarray) -> "Dataset":
        return Dataset(self.task_name, self.rand, self.roll_cfg, self.seed, self.hw,
                       self.gray[idx], self.depth[idx], self.seg[idx],
                       self.u_star[idx], self.beta_star[idx],
                       self.rollout_ids[idx], self.step_indices[idx],
                       None if self.poses is None else self.poses[idx],
                       None if self.hole_poses is None else self.hole_poses[idx])

    def config_dict(self) -> dict:
        h, w = self.hw
        return {"task": self.task_name, "randomization": self.rand.to_dict(),
                "rollout": self.roll_cfg.to_dict(), "seed": self.seed,
                "image_hw": [h, w], "motion_dim": 4}

    def fingerprint(self) -> str:
        return config_fingerprint(self.config_dict())


def generate_dataset(task_name: str, n_rollouts: int, seed: int,
                     rand: RandomizationConfig | None = None,
                     roll_cfg: RolloutConfig | None = None,
                     hw: tuple[int, int] = (64, 64),
                     progress: bool = False) -> Dataset:
    """Generate ``n_rollouts`` roll-outs, samples ordered by (rollout, step)."""
    if task_name not in TASKS:
        raise DatasetError(f"unknown task {task_name!r}; choose from {sorted(TASKS)}")
    task = TASKS[task_name]
    rand = rand or RandomizationConfig()
    roll_cfg = roll_cfg or RolloutConfig()
    samples: list[SceneSample] = []
    for rid in range(n_rollouts):
        samples.extend(rollout(task, rand, roll_cfg, seed, rid, hw))
        if progress and (rid + 1) % 100 == 0:
            print(f"  rollout {rid + 1}/{n_rollouts} ({len(samples)} samples)")
    if not samples:
        raise DatasetError("generation produced no samples")
    return Dataset(
        task_name=task_name, rand=rand, roll_cfg=roll_cfg, seed=seed, hw=hw,
        gray=np.stack([s.gray for s in samples]).astype(np.float32),
        depth=np.stack([s.depth for s in samples]).astype(np.float32),
        seg=np.stack([s.seg for s in samples]).astype(np.uint8),
        u_star=np.stack([s.u_star for s in samples]).astype(np.float32),
        beta_star=np.array([s.beta_star for s in samples], dtype=np.float32),
        rollout_ids=np.array([s.rollout_id for s in samples], dtype=np.int32),
        step_indices=np.array([s.step_index for s in samples], dtype=np.int32),
        poses=np.stack([s.pose for s in samples]),
        hole_poses=np.stack([s.hole_pose for s in samples]))


def save_dataset(ds: Dataset, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n = len(ds)
    h, w = ds.hw
    views = {"gray_left": ds.gray[:, 0], "gray_right": ds.gray[:, 1],
             "depth_left": ds.depth[:, 0], "depth_right": ds.depth[:, 1],
             "seg_left": ds.seg[:, 0].astype(np.float32),
             "seg_right": ds.seg[:, 1].astype(np.float32)}
    fields = {}
    for name, arr in views.items():
        fn = f"{name}.f32"
        np.ascontiguousarray(arr, dtype="<f4").tofile(out / fn)
        fields[name] = {"file": fn, "shape": [n, h, w], "dtype": "float32"}
    labels = np.concatenate([ds.u_star, ds.beta_star[:, None]], axis=1)
    np.ascontiguousarray(labels, dtype="<f4").tofile(out / "labels.f32")
    fields["labels"] = {"file": "labels.f32", "shape": [n, 5], "dtype": "float32"}
    ids = np.stack([ds.rollout_ids, ds.step_indices], axis=1)
    np.ascontiguousarray(ids.astype(np.float32), dtype="<f4").tofile(out / "ids.f32")
    fields["ids"] = {"file": "ids.f32", "shape": [n, 2], "dtype": "float32"}
    manifest = {"format_version": FORMAT_VERSION, "num_samples": n,
                "num_rollouts": ds.n_rollouts, "fields": fields,
                "fingerprint": ds.fingerprint()}
    manifest.update(ds.config_dict())
    with open(out / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
        f.write("\n")


def _read_blob(path: Path, shape: list[int], field_name: str) -> np.ndarray:
    expected = int(np.prod(shape)) * 4
    blob = path.read_bytes()
    if len(blob) != expected:
        raise DatasetError(
            f"field {field_name!r}: blob {path.name} is {len(blob)} bytes, "
            f"manifest expects {expected} ({shape} float32)")
    return np.frombuffer(blob, dtype="<f4").reshape(shape).copy()


def load_dataset(in_dir: str | Path) -> Dataset:
    src = Path(in_dir)
    mf_path = src / "manifest.json"
    if not mf_path.exists():
        raise DatasetError(f"no manifest.json under {src}")
    manifest = json.loads(mf_path.read_text())
    fields = manifest["fields"]
    arr = {name: _read_blob(src / spec["file"], spec["shape"], name)
           for name, spec in fields.items()}
    labels = arr["labels"]
    ids = arr["ids"].astype(np.int32)
    ds = Dataset(
        task_name=manifest["task"],
        rand=RandomizationConfig.from_dict(manifest["randomization"]),
        roll_cfg=RolloutConfig.from_dict(manifest["rollout"]),
        seed=manifest["seed"], hw=tuple(manifest["image_hw"]),
        gray=np.stack([arr["gray_left"], arr["gray_right"]], axis=1),
        depth=np.stack([arr["depth_left"], arr["depth_right"]], axis=1),
        seg=np.stack([arr["seg_left"], arr["seg_right"]], axis=1).astype(np.uint8),
        u_star=labels[:, :4], beta_star=labels[:, 4],
        rollout_ids=ids[:, 0], step_indices=ids[:, 1])
    if ds.fingerprint() != manifest["fingerprint"]:
        raise DatasetError(
            f"dataset fingerprint mismatch: manifest {manifest['fingerprint']}, "
            f"recomputed {ds.fingerprint()}")
    return ds


def write_pgm(path: str | Path, image: np.ndarray) -> None:
    """8-bit binary PGM from a float image in [0, 1] (or a class map)."""
    img = np.asarray(image)
    if img.dtype != np.uint8:
        img = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
    h, w = img.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode())
        f.write(img.tobytes())
