"""Checkpoint files.

Layout (little-endian)::

    b"RATC" | u8 version
    u32 n | n bytes config text (key = value lines)
    u64 step
    u32 n | n bytes rng state (JSON, sorted keys)
    u32 count, then per tensor:
        u16 n | n bytes name | u8 ndim | ndim × u32 dims | float64 data
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import TrainConfig, format_config, parse_config
from .errors import ConfigError, FormatError

MAGIC = b"RATC"
VERSION = 1


@dataclass
class Checkpoint:
    config: TrainConfig
    tensors: dict = field(default_factory=dict)  # name -> float64 array, insertion ordered
    step: int = 0
    rng_state: dict = field(default_factory=dict)
    version: int = VERSION


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    cfg = format_config(ckpt.config).encode("utf-8")
    rng = json.dumps(ckpt.rng_state, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, struct.pack("<B", ckpt.version)]
    parts += [struct.pack("<I", len(cfg)), cfg, struct.pack("<Q", ckpt.step)]
    parts += [struct.pack("<I", len(rng)), rng, struct.pack("<I", len(ckpt.tensors))]
    for name, arr in ckpt.tensors.items():
        arr = np.asarray(arr, dtype=np.float64)
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, raw: bytes, path):
        self.raw, self.off, self.path = raw, 0, path

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.raw):
            raise FormatError(f"{self.path}: truncated checkpoint at byte {self.off}")
        out = self.raw[self.off : self.off + n]
        self.off += n
        return out

    def unpack(self, fmt: str):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size))


def decode_checkpoint(raw: bytes, path="<bytes>") -> Checkpoint:
    r = _Reader(raw, path)
    if r.take(4) != MAGIC:
        raise FormatError(f"{path}: not a checkpoint (bad magic)")
    (version,) = r.unpack("<B")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    try:
        (n,) = r.unpack("<I")
        config = parse_config(r.take(n).decode("utf-8"))
        (step,) = r.unpack("<Q")
        (n,) = r.unpack("<I")
        rng_state = json.loads(r.take(n).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError, ConfigError) as exc:
        raise FormatError(f"{path}: corrupt checkpoint header ({exc})") from exc
    (count,) = r.unpack("<I")
    tensors = {}
    for _ in range(count):
        (n,) = r.unpack("<H")
        name = r.take(n).decode("utf-8", errors="strict")
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I")
        size = int(np.prod(shape)) if ndim else 1
        data = np.frombuffer(r.take(8 * size), dtype="<f8").astype(np.float64).reshape(shape)
        if not np.isfinite(data).all():
            raise FormatError(f"{path}: tensor {name!r} holds non-finite values")
        tensors[name] = data
    if r.off != len(raw):
        raise FormatError(f"{path}: {len(raw) - r.off} trailing bytes after tensor table")
    return Checkpoint(config, tensors, step, rng_state, version)


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(encode_checkpoint(ckpt))
    tmp.replace(path)


def load_checkpoint(path, expected_shapes: dict | None = None) -> Checkpoint:
    """Read a checkpoint; with ``expected_shapes`` (name -> shape) also verify the table."""
    ckpt = decode_checkpoint(Path(path).read_bytes(), path)
    if expected_shapes is not None:
        check_shapes(ckpt, expected_shapes)
    return ckpt


def check_shapes(ckpt: Checkpoint, expected: dict) -> None:
    missing = [k for k in expected if k not in ckpt.tensors]
    extra = [k for k in ckpt.tensors if k not in expected]
    if missing or extra:
        raise ConfigError(f"checkpoint does not match config: missing {missing[:5]}, unexpected {extra[:5]}")
    for name, shape in expected.items():
        if tuple(ckpt.tensors[name].shape) != tuple(shape):
            raise ConfigError(f"checkpoint tensor {name!r} has shape {ckpt.tensors[name].shape}, config expects {tuple(shape)}")
