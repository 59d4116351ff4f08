"""Binary checkpoint format.

Layout, all integers little-endian::

    b"ODTC"  u32 version
    u32 metadata length, UTF-8 JSON metadata
    u32 tensor count
    per tensor: u32 name length, UTF-8 name, u32 rank, rank x u64 dims, float64 values

Metadata JSON is written with sorted keys, so save -> load -> save reproduces
the same bytes.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .errors import CorruptCheckpoint, ShapeMismatch
from .net import NetConfig, ToyAcousticModel, init_model

MAGIC = b"ODTC"
FORMAT_VERSION = 1
ADAM_M = "adam.m."
ADAM_V = "adam.v."


def config_hash(cfg: NetConfig) -> str:
    """Hash of the architecture; the init seed does not affect tensor shapes and is left out."""
    arch = {k: v for k, v in cfg.to_dict().items() if k != "seed"}
    blob = json.dumps(arch, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def encode(tensors: dict[str, np.ndarray], metadata: dict) -> bytes:
    meta = json.dumps(metadata, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", FORMAT_VERSION), struct.pack("<I", len(meta)), meta,
             struct.pack("<I", len(tensors))]
    for name, value in tensors.items():
        value = np.asarray(value, dtype="<f8")
        raw_name = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw_name)))
        parts.append(raw_name)
        parts.append(struct.pack("<I", value.ndim))
        parts.append(struct.pack(f"<{value.ndim}Q", *value.shape))
        parts.append(np.ascontiguousarray(value).tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CorruptCheckpoint("checkpoint is truncated")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def decode(data: bytes) -> tuple[dict[str, np.ndarray], dict]:
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise CorruptCheckpoint("bad magic bytes")
    version = r.u32()
    if version != FORMAT_VERSION:
        raise CorruptCheckpoint(f"unsupported format version {version}")
    try:
        metadata = json.loads(r.take(r.u32()).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptCheckpoint(f"unreadable metadata: {exc}") from exc
    tensors = {}
    for _ in range(r.u32()):
        try:
            name = r.take(r.u32()).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CorruptCheckpoint(f"unreadable tensor name: {exc}") from exc
        rank = r.u32()
        dims = struct.unpack(f"<{rank}Q", r.take(8 * rank))
        count = int(np.prod(dims, dtype=np.int64))
        values = np.frombuffer(r.take(8 * count), dtype="<f8").reshape(dims).astype(np.float64)
        tensors[name] = values
    if r.pos != len(data):
        raise CorruptCheckpoint(f"{len(data) - r.pos} trailing bytes after last tensor")
    return tensors, metadata


def _atomic_write(path: Path, blob: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def save_checkpoint(model: ToyAcousticModel, metadata: dict, path: str | Path,
                    include_adam: bool = True) -> str:
    """Write ``model`` and ``metadata`` to ``path``; returns the checkpoint id (file stem)."""
    path = Path(path)
    meta = dict(metadata)
    meta["format_version"] = FORMAT_VERSION
    meta["net_config"] = model.cfg.to_dict()
    meta["config_hash"] = config_hash(model.cfg)
    tensors = dict(model.named_parameters())
    if include_adam:
        meta["adam_step"] = model.adam.step
        tensors.update({ADAM_M + k: v for k, v in model.adam.m.items()})
        tensors.update({ADAM_V + k: v for k, v in model.adam.v.items()})
    _atomic_write(path, encode(tensors, meta))
    return path.stem


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    """Parameter (and Adam moment) tensors plus metadata from ``path``."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except FileNotFoundError:
        raise
    return decode(data)


def restore(model: ToyAcousticModel, tensors: dict[str, np.ndarray], metadata: dict) -> ToyAcousticModel:
    """Copy checkpoint tensors into ``model``. The trainable mask is left untouched."""
    if metadata.get("config_hash") not in (None, config_hash(model.cfg)):
        raise ShapeMismatch("checkpoint was written for a different network configuration")
    params = {k: v for k, v in tensors.items() if not k.startswith(("adam.m.", "adam.v."))}
    model.load_parameters(params)
    if "adam_step" in metadata:
        for name in model.adam.m:
            model.adam.m[name][...] = tensors.get(ADAM_M + name, 0.0)
            model.adam.v[name][...] = tensors.get(ADAM_V + name, 0.0)
        model.adam.step = int(metadata["adam_step"])
    return model


def model_from_checkpoint(path: str | Path) -> tuple[ToyAcousticModel, dict]:
    tensors, metadata = load_checkpoint(path)
    if "net_config" not in metadata:
        raise CorruptCheckpoint("metadata carries no network configuration")
    model = init_model(NetConfig.from_dict(metadata["net_config"]))
    return restore(model, tensors, metadata), metadata
