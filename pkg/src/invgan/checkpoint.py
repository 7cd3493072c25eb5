"""Versioned binary checkpoints with integrity checking.

File layout, all integers little-endian:

    magic   b"INVGAN"                     6 bytes
    version uint32                        4 bytes
    hlen    uint64                        8 bytes
    header  JSON, utf-8, hlen bytes
    blobs   raw tensor bytes, concatenated in header order
    digest  sha256 over everything above  32 bytes

The header carries the config snapshot, step/epoch counters, optimizer
scalars, and a directory of named blobs with shape/dtype so the payload is
self-describing. Saving is deterministic: identical states produce identical
bytes, and the file digest doubles as the checkpoint id.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .errors import ConfigError, IntegrityError
from .models import BackboneSpec
from .training import TrainConfig, TrainState

MAGIC = b"INVGAN"
FORMAT_VERSION = 1

_TORCH_DTYPES = {
    "float32": torch.float32,
    "float64": torch.float64,
    "float16": torch.float16,
    "int64": torch.int64,
    "int32": torch.int32,
    "int16": torch.int16,
    "int8": torch.int8,
    "uint8": torch.uint8,
    "bool": torch.bool,
}
_NUMPY_DTYPES = {name: np.dtype(name) for name in _TORCH_DTYPES}


def _dtype_name(t: torch.Tensor) -> str:
    name = str(t.dtype).removeprefix("torch.")
    if name not in _TORCH_DTYPES:
        raise ConfigError(f"cannot serialize tensor dtype {t.dtype}")
    return name


def _tensor_bytes(t: torch.Tensor) -> bytes:
    return t.detach().contiguous().cpu().numpy().tobytes()


def _tensor_from_bytes(buf: bytes, shape, dtype_name: str) -> torch.Tensor:
    arr = np.frombuffer(buf, dtype=_NUMPY_DTYPES[dtype_name]).copy()
    return torch.from_numpy(arr).reshape(tuple(shape))


def _optimizer_blobs(prefix: str, opt: torch.optim.Optimizer, blobs: list, scalars: dict):
    """Split an optimizer state dict into tensor blobs and JSON-safe scalars."""
    sd = opt.state_dict()
    scalars[prefix] = {"param_groups": sd["param_groups"], "state": {}}
    for idx in sorted(sd["state"]):
        entry_scalars = {}
        for key in sorted(sd["state"][idx]):
            value = sd["state"][idx][key]
            if isinstance(value, torch.Tensor):
                blobs.append((f"{prefix}.{idx}.{key}", value))
            else:
                entry_scalars[key] = value
        scalars[prefix]["state"][str(idx)] = entry_scalars


def _optimizer_state_dict(prefix: str, scalars: dict, tensors: dict) -> dict:
    saved = scalars[prefix]
    state = {}
    for idx_str, entry_scalars in saved["state"].items():
        idx = int(idx_str)
        entry = dict(entry_scalars)
        marker = f"{prefix}.{idx}."
        for name, tensor in tensors.items():
            if name.startswith(marker):
                entry[name.removeprefix(marker)] = tensor
        state[idx] = entry
    groups = []
    for group in saved["param_groups"]:
        group = dict(group)
        if "betas" in group:
            group["betas"] = tuple(group["betas"])  # JSON turned the tuple into a list
        groups.append(group)
    return {"state": state, "param_groups": groups}


def save_checkpoint(state: TrainState, path) -> str:
    """Write state to path and return the checkpoint id (file sha256)."""
    path = Path(path)
    blobs = []
    for name, tensor in state.model.state_dict().items():
        blobs.append((f"model.{name}", tensor))
    scalars: dict = {}
    _optimizer_blobs("opt_d", state.opt_d, blobs, scalars)
    _optimizer_blobs("opt_g", state.opt_g, blobs, scalars)
    blobs.append(("rng.torch", torch.get_rng_state()))
    blobs.append(("rng.noise", state.noise_rng.get_state()))
    blobs.append(("rng.data", state.data_rng.get_state()))

    directory = []
    payload = bytearray()
    for name, tensor in blobs:
        raw = _tensor_bytes(tensor)
        directory.append(
            {
                "name": name,
                "shape": list(tensor.shape),
                "dtype": _dtype_name(tensor),
                "nbytes": len(raw),
            }
        )
        payload.extend(raw)

    header = {
        "config": state.config.to_dict(),
        "step": state.step,
        "epoch": state.epoch,
        "blobs": directory,
        "scalars": scalars,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    body = MAGIC + struct.pack("<IQ", FORMAT_VERSION, len(header_bytes)) + header_bytes + payload
    digest = hashlib.sha256(body).digest()

    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(body + digest)
    os.replace(tmp, path)
    checkpoint_id = digest.hex()
    state.checkpoint_id = checkpoint_id
    return checkpoint_id


def load_checkpoint(path, expected_backbone: Optional[BackboneSpec] = None) -> TrainState:
    """Read a checkpoint back into a fresh TrainState.

    Raises IntegrityError for anything that is not a well-formed, unmodified
    checkpoint, and ConfigError when expected_backbone disagrees with the
    stored one. The returned state resumes exactly: parameters, buffers,
    optimizer moments, and all three RNG streams are restored bit for bit.
    """
    path = Path(path)
    data = path.read_bytes()
    if len(data) < len(MAGIC) + 12 + 32:
        raise IntegrityError(f"{path}: truncated checkpoint file")
    if data[: len(MAGIC)] != MAGIC:
        raise IntegrityError(f"{path}: not a checkpoint file (bad magic)")
    body, digest = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise IntegrityError(f"{path}: checksum mismatch, file is corrupt")
    version, hlen = struct.unpack_from("<IQ", body, len(MAGIC))
    if version != FORMAT_VERSION:
        raise IntegrityError(f"{path}: unsupported checkpoint format version {version}")
    offset = len(MAGIC) + 12
    try:
        header = json.loads(body[offset : offset + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise IntegrityError(f"{path}: unreadable checkpoint header") from exc
    offset += hlen

    tensors = {}
    for entry in header["blobs"]:
        raw = body[offset : offset + entry["nbytes"]]
        if len(raw) != entry["nbytes"]:
            raise IntegrityError(f"{path}: blob {entry['name']} is truncated")
        tensors[entry["name"]] = _tensor_from_bytes(raw, entry["shape"], entry["dtype"])
        offset += entry["nbytes"]

    config = TrainConfig.from_dict(header["config"])
    if expected_backbone is not None and config.backbone != expected_backbone:
        raise ConfigError(
            f"checkpoint backbone {config.backbone.to_dict()} does not match "
            f"expected {expected_backbone.to_dict()}"
        )

    state = TrainState(config)
    model_sd = {
        name.removeprefix("model."): t for name, t in tensors.items() if name.startswith("model.")
    }
    state.model.load_state_dict(model_sd, strict=True)
    state.opt_d.load_state_dict(_optimizer_state_dict("opt_d", header["scalars"], tensors))
    state.opt_g.load_state_dict(_optimizer_state_dict("opt_g", header["scalars"], tensors))
    torch.set_rng_state(tensors["rng.torch"])
    state.noise_rng.set_state(tensors["rng.noise"])
    state.data_rng.set_state(tensors["rng.data"])
    state.step = header["step"]
    state.epoch = header["epoch"]
    state.checkpoint_id = digest.hex()
    state.model.eval()
    return state
