"""Checkpoint persistence: JSON manifest + one raw float32 blob.

The manifest lists parameter names, shapes and byte offsets into the blob
(little-endian float32, row-major).  Round-trips are bit-exact; loads
validate blob length and config fingerprint before touching the model.
"""
from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

MANIFEST_SUFFIX = ".json"
BLOB_SUFFIX = ".f32"


class CheckpointError(RuntimeError):
    pass


class FingerprintMismatch(CheckpointError):
    def __init__(self, expected: str, found: str):
        super().__init__(
            f"config fingerprint mismatch: current config {expected}, checkpoint {found}")
        self.expected, self.found = expected, found


def config_fingerprint(config: dict) -> str:
    """sha256 of the canonical-JSON config; order-insensitive."""
    canon = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def save_params(stem: str | Path, named: list[tuple[str, np.ndarray]],
                meta: dict | None = None) -> None:
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    entries = []
    offset = 0
    chunks = []
    for name, arr in named:
        a = np.ascontiguousarray(arr, dtype="<f4")
        entries.append({"name": name, "shape": list(a.shape),
                        "offset": offset, "size": int(a.size)})
        offset += a.size * 4
        chunks.append(a.tobytes())
    manifest = {"format_version": 1, "params": entries, "total_bytes": offset}
    manifest.update(meta or {})
    with open(stem.with_suffix(MANIFEST_SUFFIX), "w") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
        f.write("\n")
    with open(stem.with_suffix(BLOB_SUFFIX), "wb") as f:
        f.write(b"".join(chunks))


def load_manifest(stem: str | Path) -> dict:
    path = Path(stem).with_suffix(MANIFEST_SUFFIX)
    if not path.exists():
        raise CheckpointError(f"no checkpoint manifest at {path}")
    with open(path) as f:
        return json.load(f)


def load_params(stem: str | Path, expect_fingerprint: str | None = None
                ) -> tuple[dict[str, np.ndarray], dict]:
    stem = Path(stem)
    manifest = load_manifest(stem)
    if expect_fingerprint is not None:
        found = manifest.get("fingerprint", "")
        if found != expect_fingerprint:
            raise FingerprintMismatch(expect_fingerprint, found)
    blob_path = stem.with_suffix(BLOB_SUFFIX)
    blob = blob_path.read_bytes()
    if len(blob) != manifest["total_bytes"]:
        raise CheckpointError(
            f"blob {blob_path} is {len(blob)} bytes, manifest expects "
            f"{manifest['total_bytes']} (last entry ends at offset "
            f"{manifest['params'][-1]['offset'] + manifest['params'][-1]['size'] * 4})"
            if manifest["params"] else f"blob {blob_path} length mismatch")
    out = {}
    for e in manifest["params"]:
        lo, hi = e["offset"], e["offset"] + e["size"] * 4
        if hi > len(blob):
            raise CheckpointError(
                f"parameter {e['name']!r} spans bytes [{lo}, {hi}) beyond blob end {len(blob)}")
        arr = np.frombuffer(blob[lo:hi], dtype="<f4").reshape(e["shape"]).copy()
        out[e["name"]] = arr
    return out, manifest
