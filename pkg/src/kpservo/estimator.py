"""scikit-learn-style estimator wrapping the full pipeline.

``VisualServo`` is fit/predict-shaped so it composes with the wider
ecosystem: ``get_params``/``set_params`` follow the sklearn contract
(constructor args stored verbatim as attributes), ``fit`` consumes a
generated roll-out corpus (a Dataset or a saved dataset directory),
``predict`` maps stereo grayscale pairs to motion commands, ``transform``
to keypoints.
"""
from __future__ import annotations

import inspect
import tempfile
from pathlib import Path

import numpy as np

from .adex import AdexConfig
from .model import ServoModel
from .train import TrainConfig, evaluate_on, train
from .validation import as_dataset, check_seed, check_stereo_images, check_task


class NotFittedError(RuntimeError):
    pass


class VisualServo:
    """Keypoint-bottleneck stereo visual-servo policy.

    Parameters mirror the training configuration; all are plain values so
    the estimator clones cleanly.  After ``fit`` the trained model lives in
    ``model_`` and the training summary in ``summary_``.
    """

    def __init__(self, task: str = "insert-shaft", n_keypoints: int = 10,
                 rho: float = 2.5, gamma: float = 20.0, motion_dim: int = 4,
                 servo_input: str = "coords", batch_size: int = 16,
                 epochs: int = 20, learning_rate: float = 1e-3,
                 val_fraction: float = 0.1, adex: bool = True,
                 adex_probability: float = 0.5, seed: int = 0):
        self.task = task
        self.n_keypoints = n_keypoints
        self.rho = rho
        self.gamma = gamma
        self.motion_dim = motion_dim
        self.servo_input = servo_input
        self.batch_size = batch_size
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.val_fraction = val_fraction
        self.adex = adex
        self.adex_probability = adex_probability
        self.seed = seed

    # -- sklearn plumbing --------------------------------------------------------

    @classmethod
    def _param_names(cls) -> list[str]:
        sig = inspect.signature(cls.__init__)
        return [p for p in sig.parameters if p != "self"]

    def get_params(self, deep: bool = True) -> dict:
        return {name: getattr(self, name) for name in self._param_names()}

    def set_params(self, **params) -> "VisualServo":
        valid = set(self._param_names())
        for key, val in params.items():
            if key not in valid:
                raise ValueError(f"invalid parameter {key!r} for VisualServo; "
                                 f"valid parameters are {sorted(valid)}")
            setattr(self, key, val)
        return self

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            task=check_task(self.task), n_keypoints=self.n_keypoints, rho=self.rho,
            gamma=self.gamma, motion_dim=self.motion_dim, servo_input=self.servo_input,
            batch_size=self.batch_size, epochs=self.epochs,
            learning_rate=self.learning_rate, val_fraction=self.val_fraction,
            seed=check_seed(self.seed),
            adex=AdexConfig(enabled=bool(self.adex), probability=self.adex_probability))

    def _require_fitted(self) -> ServoModel:
        mdl = getattr(self, "model_", None)
        if mdl is None:
            raise NotFittedError("this VisualServo instance is not fitted yet; call fit first")
        return mdl

    # -- estimator API -------------------------------------------------------------

    def fit(self, X, y=None, out_dir: str | Path | None = None) -> "VisualServo":
        """Train on a roll-out corpus (Dataset or saved dataset directory).

        Supervision is self-contained in the corpus (reconstruction targets
        and motion labels), so ``y`` is ignored.
        """
        ds = as_dataset(X)
        cfg = self._train_config()
        if out_dir is None:
            with tempfile.TemporaryDirectory() as td:
                self.summary_ = train(cfg, ds, td, progress=False)
                self.model_ = ServoModel.load(Path(td) / "checkpoint_final")
        else:
            self.summary_ = train(cfg, ds, out_dir, progress=False)
            self.model_ = ServoModel.load(Path(out_dir) / "checkpoint_final")
        return self

    def load_checkpoint(self, stem: str | Path) -> "VisualServo":
        """Adopt a trained checkpoint instead of fitting."""
        self.model_ = ServoModel.load(stem)
        self.summary_ = None
        return self

    def predict(self, X) -> np.ndarray:
        """(N, 2, H, W) stereo grayscale -> (N, d+1) rows of (u, beta)."""
        mdl = self._require_fitted()
        arr = check_stereo_images(X, mdl.cfg.image_hw)
        u, beta = mdl.predict(arr)
        return np.concatenate([u, beta[:, None]], axis=1)

    def transform(self, X) -> np.ndarray:
        """(N, 2, H, W) -> (N, 2, K, 3) keypoints as (row, col, alpha)."""
        mdl = self._require_fitted()
        arr = check_stereo_images(X, mdl.cfg.image_hw)
        return mdl.keypoints(arr)

    def score(self, X, y=None) -> float:
        """Negative servo loss on a held-out corpus (higher is better)."""
        mdl = self._require_fitted()
        ds = as_dataset(X)
        val = evaluate_on(mdl, ds, np.arange(len(ds)), mdl.cfg.gamma)
        return -float(val["servo"])
