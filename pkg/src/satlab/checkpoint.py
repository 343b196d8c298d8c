"""Checkpoint files: length-prefixed JSON header followed by raw little-endian tensor bytes.

Layout::

    uint64 little-endian  header length N
    N bytes               UTF-8 JSON header
    payload               concatenated tensors, offsets relative to payload start

The header carries ``tensors`` (name, shape, dtype, offset, nbytes), the model
config and any caller metadata. Nothing time-dependent is stored, so equal
parameters and metadata give equal bytes.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any

import numpy as np
import torch

from .config import ConfigError, ModelConfig, SemanticsFlags, from_dict, to_dict

_DTYPES = {"float32": "<f4", "float64": "<f8", "int64": "<i8", "bool": "|b1"}


class CheckpointError(ValueError):
    pass


def _to_numpy(t: torch.Tensor) -> np.ndarray:
    a = t.detach().cpu().contiguous().numpy()
    name = str(a.dtype)
    if name not in _DTYPES:
        raise CheckpointError(f"unsupported tensor dtype {name}")
    return a.astype(_DTYPES[name], copy=False)


def encode(state: dict[str, torch.Tensor], model_cfg: ModelConfig, meta: dict[str, Any] | None = None) -> bytes:
    entries, chunks, offset = [], [], 0
    for name in sorted(state):
        a = _to_numpy(state[name])
        raw = a.tobytes()
        entries.append({"name": name, "shape": list(a.shape), "dtype": str(state[name].dtype).replace("torch.", ""),
                        "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    header = {"format": "satlab-ckpt-1", "model": to_dict(model_cfg), "meta": meta or {}, "tensors": entries}
    hb = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return struct.pack("<Q", len(hb)) + hb + b"".join(chunks)


def save_checkpoint(path: str | Path, model: torch.nn.Module, meta: dict[str, Any] | None = None) -> bytes:
    data = encode(model.state_dict(), model.cfg, meta)
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(data)
    except OSError as exc:
        raise OSError(f"cannot write checkpoint {path}: {exc}") from exc
    return data


def decode(data: bytes) -> tuple[dict[str, Any], dict[str, torch.Tensor]]:
    if len(data) < 8:
        raise CheckpointError("checkpoint truncated before header length")
    (n,) = struct.unpack("<Q", data[:8])
    if 8 + n > len(data):
        raise CheckpointError("checkpoint header length exceeds file size")
    header = json.loads(data[8 : 8 + n].decode("utf-8"))
    payload = memoryview(data)[8 + n :]
    tensors = {}
    for e in header["tensors"]:
        end = e["offset"] + e["nbytes"]
        if end > len(payload):
            raise CheckpointError(f"tensor {e['name']} runs past end of payload")
        a = np.frombuffer(payload[e["offset"] : end], dtype=_DTYPES[e["dtype"]]).reshape(e["shape"])
        tensors[e["name"]] = torch.from_numpy(a.copy())
    return header, tensors


def read_checkpoint(path: str | Path) -> tuple[dict[str, Any], dict[str, torch.Tensor]]:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise OSError(f"cannot read checkpoint {path}: {exc}") from exc
    return decode(data)


def load_model(path: str | Path, expected: ModelConfig | None = None):
    """Rebuild a GroundingModel from a checkpoint, verifying every shape against the config."""
    from .model import GroundingModel

    header, tensors = read_checkpoint(path)
    cfg = from_dict(ModelConfig, header["model"])
    if expected is not None and to_dict(expected) != to_dict(cfg):
        raise ConfigError(f"checkpoint {path} was written with a different model config")
    flags = header["meta"].get("semantics")
    model = GroundingModel(cfg, from_dict(SemanticsFlags, flags) if flags else None).to(cfg.dtype)
    own = model.state_dict()
    if set(own) != set(tensors):
        missing = sorted(set(own) ^ set(tensors))
        raise CheckpointError(f"checkpoint {path} parameter names differ from the model: {missing[:5]}")
    for name, t in tensors.items():
        if tuple(own[name].shape) != tuple(t.shape):
            raise CheckpointError(f"{name}: shape {tuple(t.shape)} does not match config ({tuple(own[name].shape)})")
    model.load_state_dict(tensors)
    return model, header
