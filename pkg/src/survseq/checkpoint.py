"""Self-describing checkpoint container.

Layout::

    b"SURVSEQ\\0"                 magic
    uint32 little-endian          format version
    uint64 little-endian          header length in bytes
    header                        UTF-8 JSON, sorted keys, no whitespace
    tensor data                   little-endian float32, in table order

The header holds the run config, dataset stats, history summary and the
tensor table (name, shape, byte offset).  Serialization is deterministic,
so loading and saving again reproduces the file byte for byte.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"SURVSEQ\0"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<IQ")
_FLOAT = np.dtype("<f4")


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    config: dict
    stats: dict
    model: dict  # ModelConfig fields plus discretization
    tensors: dict[str, np.ndarray]
    optimizer: dict[str, np.ndarray] = field(default_factory=dict)  # adam.m.* / adam.v.*
    optimizer_step: int = 0
    history: dict = field(default_factory=dict)
    version: int = FORMAT_VERSION

    def to_bytes(self) -> bytes:
        table = []
        chunks = []
        offset = 0
        for group, arrays in (("param", self.tensors), ("optim", self.optimizer)):
            for name, arr in arrays.items():
                data = np.ascontiguousarray(arr, dtype=_FLOAT).tobytes()
                table.append({"group": group, "name": name, "shape": list(np.shape(arr)), "offset": offset})
                chunks.append(data)
                offset += len(data)
        header = {
            "config": self.config,
            "stats": self.stats,
            "model": self.model,
            "history": self.history,
            "optimizer_step": self.optimizer_step,
            "tensors": table,
            "data_bytes": offset,
        }
        raw = json.dumps(header, sort_keys=True, separators=(",", ":"), allow_nan=True).encode("utf-8")
        return MAGIC + _PREFIX.pack(self.version, len(raw)) + raw + b"".join(chunks)

    @classmethod
    def from_bytes(cls, blob: bytes, source: str = "<bytes>") -> "Checkpoint":
        if blob[: len(MAGIC)] != MAGIC:
            raise CheckpointError(f"{source}: not a checkpoint (bad magic)")
        pos = len(MAGIC)
        if len(blob) < pos + _PREFIX.size:
            raise CheckpointError(f"{source}: truncated header")
        version, hlen = _PREFIX.unpack_from(blob, pos)
        if version != FORMAT_VERSION:
            raise CheckpointError(f"{source}: unsupported format version {version}")
        pos += _PREFIX.size
        try:
            header = json.loads(blob[pos : pos + hlen].decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"{source}: corrupt header ({exc})") from None
        base = pos + hlen
        if len(blob) != base + header["data_bytes"]:
            raise CheckpointError(f"{source}: expected {header['data_bytes']} data bytes, found {len(blob) - base}")
        tensors, optim = {}, {}
        for entry in header["tensors"]:
            shape = tuple(entry["shape"])
            n = int(np.prod(shape, dtype=np.int64)) * _FLOAT.itemsize
            start = base + entry["offset"]
            arr = np.frombuffer(blob, dtype=_FLOAT, count=n // _FLOAT.itemsize, offset=start).reshape(shape)
            (tensors if entry["group"] == "param" else optim)[entry["name"]] = arr.astype(np.float32)
        return cls(
            config=header["config"],
            stats=header["stats"],
            model=header["model"],
            tensors=tensors,
            optimizer=optim,
            optimizer_step=int(header["optimizer_step"]),
            history=header["history"],
            version=version,
        )

    def save(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_bytes(self.to_bytes())
        tmp.replace(path)

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        path = Path(path)
        try:
            blob = path.read_bytes()
        except OSError as exc:
            raise CheckpointError(f"cannot read checkpoint {path}: {exc.strerror}") from None
        return cls.from_bytes(blob, source=str(path))

    def validate_shapes(self, expected: dict[str, tuple[int, ...]]) -> None:
        """Raise unless the tensor table matches ``expected`` exactly."""
        missing = sorted(set(expected) - set(self.tensors))
        extra = sorted(set(self.tensors) - set(expected))
        if missing or extra:
            raise CheckpointError(f"tensor table mismatch: missing={missing} extra={extra}")
        bad = [f"{k}{self.tensors[k].shape}!={v}" for k, v in expected.items() if self.tensors[k].shape != tuple(v)]
        if bad:
            raise CheckpointError("shape mismatch: " + ", ".join(bad))
