"""Binary checkpoint format.

Layout (all integers little-endian uint32)::

    b"DSQA" | version | header_len | header (UTF-8 JSON, sorted keys)
    | record_count | records...

Each record is ``name_len | name (UTF-8) | ndim | dims... | float32 LE data``.
Records are sorted by name: parameter values under their own names, Adam
moments under ``adam.m/<name>`` and ``adam.v/<name>``. The header carries
the flat run config text, the global step, RNG states and the vocabulary.
"""

from __future__ import annotations

import io
import json
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .ndgrad import ConfigError

MAGIC = b"DSQA"
VERSION = 1


class CheckpointError(ValueError):
    """Malformed checkpoint or one that does not fit the model."""


@dataclass
class Checkpoint:
    header: dict
    tensors: dict[str, np.ndarray]

    @property
    def step(self) -> int:
        return int(self.header["step"])


def encode(header: dict, tensors: dict[str, np.ndarray]) -> bytes:
    buf = io.BytesIO()
    hdr = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(hdr)))
    buf.write(hdr)
    buf.write(struct.pack("<I", len(tensors)))
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f4")
        nb = name.encode("utf-8")
        buf.write(struct.pack("<I", len(nb)))
        buf.write(nb)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(arr.tobytes())
    return buf.getvalue()


def decode(data: bytes) -> Checkpoint:
    view = memoryview(data)
    if bytes(view[:4]) != MAGIC:
        raise CheckpointError("not a DSQA checkpoint (bad magic)")
    pos = 4

    def u32(n=1):
        nonlocal pos
        vals = struct.unpack_from(f"<{n}I", view, pos)
        pos += 4 * n
        return vals

    try:
        version, hlen = u32(2)
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        header = json.loads(bytes(view[pos : pos + hlen]).decode("utf-8"))
        pos += hlen
        (count,) = u32()
        tensors = {}
        for _ in range(count):
            (nlen,) = u32()
            name = bytes(view[pos : pos + nlen]).decode("utf-8")
            pos += nlen
            (ndim,) = u32()
            shape = u32(ndim) if ndim else ()
            n = int(np.prod(shape)) if ndim else 1
            arr = np.frombuffer(view, dtype="<f4", count=n, offset=pos).reshape(shape)
            pos += 4 * n
            tensors[name] = arr.astype(np.float32)
    except (struct.error, ValueError) as e:
        if isinstance(e, CheckpointError):
            raise
        raise CheckpointError(f"truncated or corrupt checkpoint: {e}") from e
    return Checkpoint(header, tensors)


def model_tensors(model) -> dict[str, np.ndarray]:
    out = {}
    for p in model.params:
        out[p.name] = p.value
        out[f"adam.m/{p.name}"] = p.m
        out[f"adam.v/{p.name}"] = p.v
    return out


def restore_model(model, ckpt: Checkpoint) -> None:
    """Copy tensors into ``model``; validates everything before mutating."""
    params = {p.name: p for p in model.params}
    for name, p in params.items():
        for key in (name, f"adam.m/{name}", f"adam.v/{name}"):
            if key not in ckpt.tensors:
                raise CheckpointError(f"checkpoint lacks tensor {key!r}")
            if ckpt.tensors[key].shape != p.shape:
                raise CheckpointError(f"shape mismatch for {key!r}: checkpoint {ckpt.tensors[key].shape}, "
                                      f"model {p.shape}")
    extra = {k.split("/", 1)[1] if k.startswith("adam.") else k for k in ckpt.tensors} - set(params)
    if extra:
        raise CheckpointError(f"checkpoint has tensors unknown to the model: {sorted(extra)[:5]}")
    for name, p in params.items():
        p.value[...] = ckpt.tensors[name]
        p.m[...] = ckpt.tensors[f"adam.m/{name}"]
        p.v[...] = ckpt.tensors[f"adam.v/{name}"]
    model.step = ckpt.step


def write(path, header: dict, tensors: dict[str, np.ndarray]) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode(header, tensors))
    os.replace(tmp, path)


def read(path) -> Checkpoint:
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise ConfigError(f"cannot read checkpoint {path}: {e}") from e
    return decode(data)


class DirectoryLock:
    """Exclusive ownership of a run directory by one training process."""

    def __init__(self, directory):
        self.path = Path(directory) / ".lock"

    def __enter__(self):
        self.path.parent.mkdir(parents=True, exist_ok=True)
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise ConfigError(f"run directory {self.path.parent} is locked by another training process "
                              f"(remove {self.path} if stale)") from None
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        return self

    def __exit__(self, *exc):
        self.path.unlink(missing_ok=True)
