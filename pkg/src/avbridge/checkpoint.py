"""Checkpoints: a JSON manifest (format version, config snapshot, tensor
directory) plus a single little-endian blob of parameter and optimizer data.
Round-trips reproduce forward outputs bit-exactly."""

from __future__ import annotations

import os

import numpy as np

from .blobio import read_blob, read_json, write_blob, write_json

CHECKPOINT_FORMAT_VERSION = 1


def save_checkpoint(out_dir: str, model, optimizer=None, step: int = 0,
                    config_snapshot: dict | None = None) -> str:
    os.makedirs(out_dir, exist_ok=True)
    arrays: dict[str, np.ndarray] = {}
    for name, p in model.named_parameters():
        arrays[f"model.{name}"] = p.data
    if optimizer is not None:
        arrays.update(optimizer.state_arrays())
    entries = write_blob(os.path.join(out_dir, "weights.bin"), arrays)
    manifest = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "step": int(step),
        "optimizer_step_count": int(optimizer.step_count) if optimizer is not None else 0,
        "config": config_snapshot or {},
        "tensors": entries,
    }
    path = os.path.join(out_dir, "manifest.json")
    write_json(path, manifest)
    return path


def load_checkpoint(in_dir: str) -> tuple[dict, dict[str, np.ndarray]]:
    manifest = read_json(os.path.join(in_dir, "manifest.json"))
    if manifest.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format {manifest.get('format_version')}")
    arrays = read_blob(os.path.join(in_dir, "weights.bin"), manifest["tensors"])
    return manifest, arrays


def restore_model(model, arrays: dict[str, np.ndarray]) -> None:
    for name, p in model.named_parameters():
        key = f"model.{name}"
        if key not in arrays:
            raise KeyError(f"checkpoint missing tensor {key}")
        src = arrays[key]
        if tuple(src.shape) != p.shape:
            raise ValueError(f"shape mismatch for {key}: {src.shape} vs {p.shape}")
        p.data[...] = src.astype(p.data.dtype)


def restore_optimizer(optimizer, arrays: dict[str, np.ndarray], manifest: dict) -> None:
    optimizer.load_state_arrays(arrays, manifest.get("optimizer_step_count", 0))
