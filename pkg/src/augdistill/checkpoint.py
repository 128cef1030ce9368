"""Single-file checkpoints with deterministic bytes.

Tensors are converted to numpy arrays before pickling so that a loaded
checkpoint, saved again, produces a byte-identical file. Every checkpoint
carries the hash of the configuration that created it; resuming under a
different configuration is refused.
"""

from __future__ import annotations

import pickle
from pathlib import Path

import torch

from .exceptions import ConfigError

FORMAT_VERSION = 1

KIND_TEACHER = "teacher"
KIND_ENCODERS = "encoders"
KIND_TRAIN = "train"
KIND_STUDENT = "student"


def _pack(obj):
    if isinstance(obj, torch.Tensor):
        t = obj.detach().cpu().contiguous()
        return {"__tensor__": str(t.dtype).removeprefix("torch."),
                "data": t.numpy().copy()}
    if isinstance(obj, dict):
        return {k: _pack(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        packed = [_pack(v) for v in obj]
        return packed if isinstance(obj, list) else {"__tuple__": packed}
    return obj


def _unpack(obj):
    if isinstance(obj, dict):
        if "__tensor__" in obj:
            dtype = getattr(torch, obj["__tensor__"])
            return torch.from_numpy(obj["data"].copy()).to(dtype)
        if "__tuple__" in obj:
            return tuple(_unpack(v) for v in obj["__tuple__"])
        return {k: _unpack(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_unpack(v) for v in obj]
    return obj


def save_checkpoint(path: str | Path, kind: str, config_hash: str, payload: dict) -> None:
    """Write a checkpoint atomically (via a temp file rename)."""
    record = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "config_hash": config_hash,
        "payload": _pack(payload),
    }
    blob = pickle.dumps(record, protocol=4)
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    tmp = p.with_name(p.name + ".tmp")
    tmp.write_bytes(blob)
    tmp.replace(p)


def load_checkpoint(
    path: str | Path,
    kind: str | None = None,
    expect_hash: str | None = None,
) -> dict:
    """Load a checkpoint, optionally enforcing its kind and config hash."""
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"checkpoint not found: {p}")
    record = pickle.loads(p.read_bytes())
    if record.get("format_version") != FORMAT_VERSION:
        raise ConfigError(f"{p}: unsupported checkpoint format")
    if kind is not None and record["kind"] != kind:
        raise ConfigError(f"{p}: expected a {kind!r} checkpoint, found {record['kind']!r}")
    if expect_hash is not None and record["config_hash"] != expect_hash:
        raise ConfigError(
            f"{p}: checkpoint was produced under a different configuration "
            f"(hash {record['config_hash'][:12]}… != {expect_hash[:12]}…)"
        )
    record["payload"] = _unpack(record["payload"])
    return record
