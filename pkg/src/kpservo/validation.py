"""Input validation helpers shared by the estimator and the harness."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .scene.dataset import Dataset, load_dataset
from .scene.geometry import TASKS


def check_task(name: str) -> str:
    if name not in TASKS:
        raise ValueError(f"unknown task {name!r}; choose from {sorted(TASKS)}")
    return name


def check_seed(seed) -> int:
    if not isinstance(seed, (int, np.integer)) or isinstance(seed, bool) or seed < 0:
        raise ValueError(f"seed must be a non-negative integer, got {seed!r}")
    return int(seed)


def check_stereo_images(X, image_hw: tuple[int, int]) -> np.ndarray:
    """Coerce to (N, 2, H, W) float32 in [0, 1]; accepts a single (2, H, W) pair."""
    arr = np.asarray(X, dtype=np.float32)
    if arr.ndim == 3:
        arr = arr[None]
    h, w = image_hw
    if arr.ndim != 4 or arr.shape[1] != 2 or arr.shape[2:] != (h, w):
        raise ValueError(
            f"expected stereo grayscale of shape (N, 2, {h}, {w}), got {np.asarray(X).shape}")
    if not np.isfinite(arr).all():
        raise ValueError("stereo images contain non-finite values")
    if arr.min() < -1e-6 or arr.max() > 1.0 + 1e-6:
        raise ValueError(f"image intensities must lie in [0, 1], got "
                         f"[{arr.min():.4f}, {arr.max():.4f}]")
    return np.clip(arr, 0.0, 1.0)


def as_dataset(X) -> Dataset:
    """Accept a Dataset or a path to one saved on disk."""
    if isinstance(X, Dataset):
        return X
    if isinstance(X, (str, Path)):
        return load_dataset(X)
    raise TypeError(f"expected a Dataset or a dataset directory path, got {type(X).__name__}")
