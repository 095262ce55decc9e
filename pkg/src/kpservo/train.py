"""End-to-end training: joint optimization of encoder, decoder and servo on
the four-part objective, with optional adversarial batch augmentation,
roll-out-level train/validation split, CSV loss curves and checkpointing."""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .adex import AdexConfig, adex_batch
from .autodiff import Tensor, no_grad
from .keypoint import (background_penalty, downsample_background_mask,
                       proximity_penalty, recon_loss)
from .kernels import cross_entropy_logits
from .model import ModelConfig, ServoModel
from .optim import Adam
from .scene.dataset import Dataset, DatasetError
from .servo import servo_loss_components, total_loss

LOSS_COLUMNS = ("epoch", "recon", "servo", "proxi", "bg", "total",
                "val_recon", "val_servo_dir", "val_servo_beta", "val_proxi",
                "val_bg", "val_total", "adex_batches", "wall_seconds")


@dataclass
class TrainConfig:
    task: str = "insert-shaft"
    n_keypoints: int = 10
    rho: float = 2.5
    gamma: float = 20.0
    image_hw: tuple[int, int] = (64, 64)
    grid_hw: tuple[int, int] = (32, 32)
    motion_dim: int = 4
    servo_input: str = "coords"
    encoder_widths: tuple[int, ...] = (16, 32, 48, 64)
    batch_size: int = 16
    epochs: int = 20
    learning_rate: float = 1e-3
    val_fraction: float = 0.1
    seed: int = 0
    deterministic: bool = True
    adex: AdexConfig = field(default_factory=AdexConfig)

    def model_config(self) -> ModelConfig:
        return ModelConfig(task=self.task, n_keypoints=self.n_keypoints, rho=self.rho,
                           gamma=self.gamma, image_hw=tuple(self.image_hw),
                           grid_hw=tuple(self.grid_hw), motion_dim=self.motion_dim,
                           servo_input=self.servo_input,
                           encoder_widths=tuple(self.encoder_widths))

    def to_dict(self) -> dict:
        d = {}
        for k, v in self.__dict__.items():
            if isinstance(v, tuple):
                d[k] = list(v)
            elif isinstance(v, AdexConfig):
                d[k] = v.to_dict()
            else:
                d[k] = v
        return d

    @staticmethod
    def from_dict(d: dict) -> "TrainConfig":
        kw = dict(d)
        for k in ("image_hw", "grid_hw", "encoder_widths"):
            if k in kw:
                kw[k] = tuple(kw[k])
        if "adex" in kw and isinstance(kw["adex"], dict):
            kw["adex"] = AdexConfig.from_dict(kw["adex"])
        return TrainConfig(**kw)


def split_rollouts(ds: Dataset, val_fraction: float, seed: int
                   ) -> tuple[np.ndarray, np.ndarray]:
    """90/10 split by roll-out id, never by sample."""
    ids = np.unique(ds.rollout_ids)
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(201,)))
    perm = rng.permutation(ids)
    n_val = max(1, int(round(val_fraction * len(ids)))) if len(ids) > 1 else 0
    val_ids = set(perm[:n_val].tolist())
    mask = np.array([rid in val_ids for rid in ds.rollout_ids])
    return np.nonzero(~mask)[0], np.nonzero(mask)[0]


def check_dataset(cfg: TrainConfig, ds: Dataset) -> None:
    """Shape/config compatibility, checked before any training starts."""
    if tuple(ds.hw) != tuple(cfg.image_hw):
        raise DatasetError(f"dataset images {ds.hw} but config expects {cfg.image_hw}")
    if ds.task_name != cfg.task:
        raise DatasetError(f"dataset task {ds.task_name!r} but config task {cfg.task!r}")
    if ds.u_star.shape[1] != cfg.motion_dim:
        raise DatasetError(f"dataset motion dim {ds.u_star.shape[1]} != config {cfg.motion_dim}")


def stereo_loss(model: ServoModel, views: list[Tensor], depth: np.ndarray,
                seg: np.ndarray, u_star: np.ndarray, beta_star: np.ndarray,
                gamma: float) -> dict:
    """Four-part objective for one stereo batch.

    views are two (B,1,H,W) tensors; depth/seg are (B,2,H,W) targets; the
    background masks come from the segmentation targets downsampled to the
    keypoint grid.  Penalties and reconstruction sum over the two views.
    """
    l_recon = l_proxi = l_bg = None
    kp_sets = []
    for v in range(2):
        kps, depth_hat, seg_logits = model.view_outputs(views[v])
        lr = recon_loss(depth_hat, seg_logits, depth[:, v:v + 1], seg[:, v])
        lp = proximity_penalty(kps, gamma)
        bg_mask = downsample_background_mask(seg[:, v], kps.grid_hw)
        lb = background_penalty(kps, bg_mask)
        l_recon = lr if l_recon is None else l_recon + lr
        l_proxi = lp if l_proxi is None else l_proxi + lp
        l_bg = lb if l_bg is None else l_bg + lb
        kp_sets.append(kps)
    cmd = model.command(kp_sets[0], kp_sets[1])
    l_dir, l_beta = servo_loss_components(cmd, u_star, beta_star)
    l_servo = l_dir + l_beta
    return {"total": total_loss(l_recon, l_servo, l_proxi, l_bg),
            "recon": l_recon, "servo": l_servo, "proxi": l_proxi, "bg": l_bg,
            "servo_dir": l_dir, "servo_beta": l_beta, "cmd": cmd}


def make_attack_fns(model: ServoModel, depth, seg, u_star, beta_star, gamma):
    """Closures the adversarial attacks differentiate through.

    The full-loss attack uses the current labels of the batch; the targeted
    attack drives the segmentation head only.  Parameters are frozen inside
    so only input gradients are computed.
    """
    def loss_fn(x: Tensor) -> Tensor:
        with model.frozen():
            views = [x[:, 0:1], x[:, 1:2]]
            return stereo_loss(model, views, depth, seg, u_star, beta_star, gamma)["total"]

    def seg_loss_fn(x: Tensor, targets: np.ndarray) -> Tensor:
        with model.frozen():
            out = None
            for v in range(2):
                kps, _, seg_logits = model.view_outputs(x[:, v:v + 1])
                ce = cross_entropy_logits(seg_logits, targets[:, v])
                out = ce if out is None else out + ce
            return out

    def least_likely_fn(images: np.ndarray) -> np.ndarray:
        with no_grad():
            per_view = []
            for v in range(2):
                xv = Tensor(np.ascontiguousarray(images[:, v:v + 1]))
                _, _, seg_logits = model.view_outputs(xv)
                per_view.append(np.argmin(seg_logits.data, axis=1))
        return np.stack(per_view, axis=1)

    return loss_fn, seg_loss_fn, least_likely_fn


def evaluate_on(model: ServoModel, ds: Dataset, idx: np.ndarray, gamma: float,
                batch_size: int = 32) -> dict[str, float]:
    """Validation losses under no_grad, deterministic batch order."""
    sums = {k: 0.0 for k in ("recon", "servo_dir", "servo_beta", "proxi", "bg")}
    n = 0
    with no_grad():
        for lo in range(0, len(idx), batch_size):
            b = idx[lo:lo + batch_size]
            views = [Tensor(np.ascontiguousarray(ds.gray[b][:, v:v + 1])) for v in range(2)]
            parts = stereo_loss(model, views, ds.depth[b], ds.seg[b],
                                ds.u_star[b], ds.beta_star[b], gamma)
            w = len(b)
            n += w
            sums["recon"] += float(parts["recon"].data) * w
            sums["servo_dir"] += float(parts["servo_dir"].data) * w
            sums["servo_beta"] += float(parts["servo_beta"].data) * w
            sums["proxi"] += float(parts["proxi"].data) * w
            sums["bg"] += float(parts["bg"].data) * w
    out = {k: v / max(n, 1) for k, v in sums.items()}
    out["servo"] = out["servo_dir"] + out["servo_beta"]
    out["total"] = out["recon"] + out["servo"] + out["proxi"] + out["bg"]
    return out


def train(cfg: TrainConfig, ds: Dataset, out_dir: str | Path,
          progress: bool = True) -> dict:
    """Train on a generated corpus; returns the run summary dict.

    Writes losses.csv, checkpoint_best.{json,f32}, checkpoint_final.{json,f32}
    and summary.json under out_dir.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    check_dataset(cfg, ds)
    model = ServoModel(cfg.model_config(), seed=cfg.seed)
    opt = Adam(model.named_parameters(), lr=cfg.learning_rate)
    train_idx, val_idx = split_rollouts(ds, cfg.val_fraction, cfg.seed)
    shuffle_rng = np.random.default_rng(np.random.SeedSequence(entropy=cfg.seed, spawn_key=(202,)))
    adex_rng = np.random.default_rng(np.random.SeedSequence(entropy=cfg.seed, spawn_key=(203,)))

    rows = []
    best_val = float("inf")
    t_start = time.time()
    meta_common = {"train_config": cfg.to_dict(), "dataset_fingerprint": ds.fingerprint()}
    for epoch in range(1, cfg.epochs + 1):
        perm = shuffle_rng.permutation(train_idx)
        acc = {k: 0.0 for k in ("recon", "servo", "proxi", "bg")}
        n_batches = 0
        n_adex = 0
        for lo in range(0, len(perm), cfg.batch_size):
            b = perm[lo:lo + cfg.batch_size]
            gray = ds.gray[b]
            depth, seg = ds.depth[b], ds.seg[b]
            us, bs = ds.u_star[b], ds.beta_star[b]
            if cfg.adex.enabled:
                fns = make_attack_fns(model, depth, seg, us, bs, cfg.gamma)
                gray, info = adex_batch(gray, cfg.adex, adex_rng, *fns)
                n_adex += int(info["applied"])
            views = [Tensor(np.ascontiguousarray(gray[:, v:v + 1])) for v in range(2)]
            parts = stereo_loss(model, views, depth, seg, us, bs, cfg.gamma)
            opt.zero_grad()
            parts["total"].backward()
            opt.step()
            for k in acc:
                acc[k] += float(parts[k].data)
            n_batches += 1
        means = {k: acc[k] / n_batches for k in acc}
        val = evaluate_on(model, ds, val_idx, cfg.gamma) if len(val_idx) else \
            {k: float("nan") for k in ("recon", "servo_dir", "servo_beta",
                                       "proxi", "bg", "servo", "total")}
        row = {"epoch": epoch, **means,
               "total": means["recon"] + means["servo"] + means["proxi"] + means["bg"],
               "val_recon": val["recon"], "val_servo_dir": val["servo_dir"],
               "val_servo_beta": val["servo_beta"], "val_proxi": val["proxi"],
               "val_bg": val["bg"], "val_total": val["total"],
               "adex_batches": n_adex, "wall_seconds": time.time() - t_start}
        rows.append(row)
        if progress:
            print(f"epoch {epoch:3d}  total {row['total']:.4f}  recon {row['recon']:.4f}  "
                  f"servo {row['servo']:.4f}  val_total {row['val_total']:.4f}  "
                  f"val_L_u {row['val_servo_dir']:.4f}")
        if len(val_idx) and val["total"] < best_val:
            best_val = val["total"]
            model.save(out / "checkpoint_best",
                       {**meta_common, "epoch": epoch, "val": val})
    model.save(out / "checkpoint_final",
               {**meta_common, "epoch": cfg.epochs,
                "val": val if len(val_idx) else {}})

    with open(out / "losses.csv", "w") as f:
        f.write(",".join(LOSS_COLUMNS) + "\n")
        for row in rows:
            f.write(",".join(repr(row[c]) if not isinstance(row[c], int) else str(row[c])
                             for c in LOSS_COLUMNS) + "\n")
    summary = {"epochs": cfg.epochs, "n_train": int(len(train_idx)),
               "n_val": int(len(val_idx)), "best_val_total": best_val,
               "first_epoch_total": rows[0]["total"], "last_epoch_total": rows[-1]["total"],
               "last_val_servo_dir": rows[-1]["val_servo_dir"],
               "wall_seconds": rows[-1]["wall_seconds"],
               "fingerprint": cfg.model_config().fingerprint(),
               "config": cfg.to_dict()}
    with open(out / "summary.json", "w") as f:
        json.dump(summary, f, indent=1, sort_keys=True)
        f.write("\n")
    with open(out / "config.json", "w") as f:
        json.dump(cfg.to_dict(), f, indent=1, sort_keys=True)
        f.write("\n")
    return summary
