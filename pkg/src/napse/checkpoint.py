"""Versioned checkpoint container.

A checkpoint is a zip of little-endian numpy arrays (one per named parameter,
keys prefixed ``param:``) plus a ``__meta__`` JSON blob holding the format
version, the model kind, its config record, the training step count, and any
extra metadata. Writes are atomic (temp file + rename) and round-trip
bit-exactly.
"""

from __future__ import annotations

import io
import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

FORMAT_VERSION = 1
_PARAM_PREFIX = "param:"


class CheckpointError(Exception):
    pass


@dataclass
class Checkpoint:
    kind: str
    config: dict
    state: dict  # name -> np.ndarray
    step: int
    meta: dict

    def state_tensors(self) -> dict:
        return {name: torch.from_numpy(arr.copy()) for name, arr in self.state.items()}


def _little_endian(arr: np.ndarray) -> np.ndarray:
    dtype = arr.dtype
    if dtype.byteorder == ">":
        return arr.astype(dtype.newbyteorder("<"))
    return arr


def save_checkpoint(path, kind: str, config: dict, state_dict: dict, step: int, meta: dict | None = None) -> Path:
    """Serialize a torch state dict (or name->ndarray map) atomically."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {}
    for name, value in state_dict.items():
        if isinstance(value, torch.Tensor):
            value = value.detach().cpu().numpy()
        arrays[_PARAM_PREFIX + name] = _little_endian(np.asarray(value))
    header = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "config": config,
        "step": int(step),
        "meta": meta or {},
    }
    buffer = io.BytesIO()
    np.savez(buffer, __meta__=np.frombuffer(json.dumps(header).encode(), dtype=np.uint8), **arrays)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(buffer.getvalue())
    os.replace(tmp, path)
    return path


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"no such checkpoint: {path}")
    try:
        with np.load(path, allow_pickle=False) as data:
            header = json.loads(bytes(data["__meta__"]).decode())
            state = {
                key[len(_PARAM_PREFIX):]: np.array(data[key])
                for key in data.files
                if key.startswith(_PARAM_PREFIX)
            }
    except (ValueError, KeyError, json.JSONDecodeError, OSError) as exc:
        raise CheckpointError(f"{path}: unreadable checkpoint ({exc})") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: unsupported format version {header.get('format_version')}"
        )
    return Checkpoint(
        kind=header["kind"],
        config=header["config"],
        state=state,
        step=header["step"],
        meta=header.get("meta", {}),
    )


def state_digest(state_dict: dict) -> str:
    """Stable hash of parameter bytes, for freeze checks and compat checks."""
    import hashlib

    h = hashlib.sha256()
    for name in sorted(state_dict):
        value = state_dict[name]
        if isinstance(value, torch.Tensor):
            value = value.detach().cpu().numpy()
        arr = _little_endian(np.ascontiguousarray(value))
        h.update(name.encode())
        h.update(str(arr.dtype).encode())
        h.update(str(arr.shape).encode())
        h.update(arr.tobytes())
    return h.hexdigest()
