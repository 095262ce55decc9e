"""Bundle of the three networks plus checkpoint IO and inference helpers."""
from __future__ import annotations

import contextlib
from dataclasses import dataclass, field

import numpy as np

from . import checkpoint as ckpt
from .autodiff import Tensor, no_grad
from .keypoint import Decoder, Encoder, KeypointSet, keypointer
from .servo import MotionCommand, ServoHead


@dataclass(frozen=True)
class ModelConfig:
    """Architecture-defining fields; hashed into the config fingerprint."""
    task: str = "insert-shaft"
    n_keypoints: int = 10
    rho: float = 2.5
    gamma: float = 20.0
    image_hw: tuple[int, int] = (64, 64)
    grid_hw: tuple[int, int] = (32, 32)
    motion_dim: int = 4
    servo_input: str = "coords"          # "coords" | "maps"
    encoder_widths: tuple[int, ...] = (16, 32, 48, 64)

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v
                for k, v in self.__dict__.items()}

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        kw = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
        return ModelConfig(**kw)

    def fingerprint(self) -> str:
        return ckpt.config_fingerprint(self.to_dict())


class ServoModel:
    """Encoder + keypointer + decoder + servo head, as one trainable unit."""

    def __init__(self, cfg: ModelConfig, seed: int = 0, dtype=np.float32):
        self.cfg = cfg
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(100,)))
        self.encoder = Encoder(cfg.n_keypoints, cfg.encoder_widths, rng=rng, dtype=dtype)
        self.decoder = Decoder(cfg.n_keypoints, rng=rng, dtype=dtype)
        self.servo = ServoHead(cfg.n_keypoints, cfg.motion_dim, cfg.servo_input,
                               cfg.grid_hw, rng=rng, dtype=dtype)

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out = []
        for prefix, mod in (("encoder.", self.encoder), ("decoder.", self.decoder),
                            ("servo.", self.servo)):
            out.extend(mod.named_parameters(prefix))
        return out

    def num_params(self) -> int:
        return sum(p.size for _, p in self.named_parameters())

    @contextlib.contextmanager
    def frozen(self):
        """Temporarily stop tracking parameter gradients (adversarial passes)."""
        params = self.named_parameters()
        for _, p in params:
            p.requires_grad = False
        try:
            yield
        finally:
            for _, p in params:
                p.requires_grad = True

    # -- forward passes ---------------------------------------------------------

    def encode_view(self, x: Tensor, render_maps: bool = True) -> KeypointSet:
        return keypointer(self.encoder(x), self.cfg.rho, render=render_maps)

    def view_outputs(self, x: Tensor) -> tuple[KeypointSet, Tensor, Tensor]:
        kps = self.encode_view(x, render_maps=True)
        depth_hat, seg_logits = self.decoder(kps.maps)
        return kps, depth_hat, seg_logits

    def command(self, left: KeypointSet, right: KeypointSet) -> MotionCommand:
        return self.servo(left, right)

    # -- numpy inference --------------------------------------------------------

    def predict(self, gray: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(N, 2, H, W) grayscale stereo -> (u (N, d), beta (N,))."""
        gray = np.asarray(gray, dtype=np.float32)
        need_maps = self.cfg.servo_input == "maps"
        with no_grad():
            left = self.encode_view(Tensor(np.ascontiguousarray(gray[:, 0:1])), need_maps)
            right = self.encode_view(Tensor(np.ascontiguousarray(gray[:, 1:2])), need_maps)
            cmd = self.command(left, right)
        return cmd.numpy()

    def keypoints(self, gray: np.ndarray) -> np.ndarray:
        """(N, 2, H, W) -> (N, 2, K, 3) rows of (row, col, alpha) per channel."""
        gray = np.asarray(gray, dtype=np.float32)
        out = []
        with no_grad():
            for v in range(2):
                kps = self.encode_view(Tensor(np.ascontiguousarray(gray[:, v:v + 1])),
                                       render_maps=False)
                r, c, a = kps.numpy()
                out.append(np.stack([r, c, a], axis=-1))
        return np.stack(out, axis=1)

    # -- persistence -------------------------------------------------------------

    def save(self, stem, meta: dict | None = None) -> None:
        named = [(n, p.data) for n, p in self.named_parameters()]
        info = {"fingerprint": self.cfg.fingerprint(), "model_config": self.cfg.to_dict()}
        info.update(meta or {})
        ckpt.save_params(stem, named, info)

    @classmethod
    def load(cls, stem, cfg: ModelConfig | None = None, seed: int = 0) -> "ServoModel":
        """Load a checkpoint; with an explicit cfg the fingerprints must match."""
        if cfg is None:
            manifest = ckpt.load_manifest(stem)
            cfg = ModelConfig.from_dict(manifest["model_config"])
        params, _ = ckpt.load_params(stem, expect_fingerprint=cfg.fingerprint())
        model = cls(cfg, seed=seed)
        own = dict(model.named_parameters())
        if set(own) != set(params):
            missing = sorted(set(own) ^ set(params))
            raise ckpt.CheckpointError(f"parameter name mismatch: {missing}")
        for name, arr in params.items():
            if own[name].data.shape != arr.shape:
                raise ckpt.CheckpointError(
                    f"parameter {name!r}: checkpoint shape {arr.shape}, "
                    f"model expects {own[name].data.shape}")
            own[name].data = arr.astype(own[name].data.dtype)
        return model
