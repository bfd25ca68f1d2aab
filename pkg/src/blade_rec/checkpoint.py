"""Versioned binary checkpoint container.

Layout: magic bytes ``BLD1``, a little-endian uint32 manifest length, a JSON
manifest listing (name, shape, offset) per tensor plus the model/config
metadata needed to rebuild it, then the concatenated raw little-endian
float32 payloads. Save -> load round-trips bit-exactly.
"""

from __future__ import annotations

import dataclasses
import json
import struct

import numpy as np
import torch

from .model import BladeModel, EncoderConfig

MAGIC = b"BLD1"


class CheckpointError(ValueError):
    """Raised for unreadable or corrupt checkpoint files."""


def save_checkpoint(path, model: BladeModel, extra: dict | None = None) -> None:
    entries = []
    payloads = []
    offset = 0
    for name, tensor in model.state_dict().items():
        array = np.ascontiguousarray(
            tensor.detach().cpu().numpy().astype("<f4", copy=False)
        )
        entries.append({"name": name, "shape": list(array.shape), "offset": offset})
        payloads.append(array.tobytes())
        offset += len(payloads[-1])
    manifest = {
        "format_version": 1,
        "model": {
            "n_items": model.n_items,
            "n_users": model.n_users,
            "n_behaviors": model.n_behaviors,
            "encoder": dataclasses.asdict(model.cfg),
        },
        "extra": extra or {},
        "tensors": entries,
    }
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for chunk in payloads:
            fh.write(chunk)


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Return (manifest, name -> float32 array)."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {data[:4]!r}, expected {MAGIC!r}")
    if len(data) < 8:
        raise CheckpointError(f"{path}: truncated header")
    (manifest_len,) = struct.unpack("<I", data[4:8])
    blob = data[8 : 8 + manifest_len]
    if len(blob) != manifest_len:
        raise CheckpointError(f"{path}: truncated manifest")
    manifest = json.loads(blob.decode("utf-8"))
    payload = data[8 + manifest_len :]
    tensors: dict[str, np.ndarray] = {}
    for entry in manifest["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        end = start + 4 * count
        if end > len(payload):
            raise CheckpointError(f"{path}: truncated payload for {entry['name']}")
        tensors[entry["name"]] = np.frombuffer(
            payload, dtype="<f4", count=count, offset=start
        ).reshape(shape)
    return manifest, tensors


def load_checkpoint(path) -> tuple[BladeModel, dict]:
    """Rebuild the model from a checkpoint; returns (model, manifest)."""
    manifest, tensors = read_checkpoint(path)
    spec = manifest["model"]
    cfg = EncoderConfig(**spec["encoder"])
    model = BladeModel(spec["n_items"], spec["n_users"], spec["n_behaviors"], cfg)
    state = {name: torch.from_numpy(arr.copy()) for name, arr in tensors.items()}
    model.load_state_dict(state)
    model.eval()
    return model, manifest
