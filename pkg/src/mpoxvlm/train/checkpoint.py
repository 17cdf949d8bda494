"""Versioned binary container for named arrays, with a JSON sidecar.

File layout (little endian)::

    b"MPXCKPT" + u8 version
    u32 array count
    per array: u16 name length, name (utf-8), u8 dtype length, dtype str,
               u8 ndim, ndim * u64 shape, raw C-order bytes
"""
from __future__ import annotations

import io
import json
import struct
from pathlib import Path

import numpy as np
import torch

MAGIC = b"MPXCKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


def dumps(arrays: dict) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC + struct.pack("<B", VERSION))
    buf.write(struct.pack("<I", len(arrays)))
    for name in sorted(arrays):
        a = arrays[name]
        if isinstance(a, torch.Tensor):
            a = a.detach().cpu().numpy()
        a = np.asarray(a)
        if not a.flags.c_contiguous:  # ascontiguousarray would promote 0-d to 1-d
            a = a.copy(order="C")
        nb = name.encode()
        dt = a.dtype.str.encode()
        buf.write(struct.pack("<H", len(nb)) + nb)
        buf.write(struct.pack("<B", len(dt)) + dt)
        buf.write(struct.pack("<B", a.ndim) + struct.pack(f"<{a.ndim}Q", *a.shape))
        buf.write(a.tobytes())
    return buf.getvalue()


def loads(blob: bytes) -> dict:
    if blob[: len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint file")
    version = blob[len(MAGIC)]
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos = len(MAGIC) + 1
    (count,) = struct.unpack_from("<I", blob, pos)
    pos += 4
    out = {}
    for _ in range(count):
        (n,) = struct.unpack_from("<H", blob, pos)
        name = blob[pos + 2 : pos + 2 + n].decode()
        pos += 2 + n
        (n,) = struct.unpack_from("<B", blob, pos)
        dtype = np.dtype(blob[pos + 1 : pos + 1 + n].decode())
        pos += 1 + n
        (ndim,) = struct.unpack_from("<B", blob, pos)
        shape = struct.unpack_from(f"<{ndim}Q", blob, pos + 1)
        pos += 1 + 8 * ndim
        size = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        out[name] = np.frombuffer(blob[pos : pos + size], dtype=dtype).reshape(shape).copy()
        pos += size
    if pos != len(blob):
        raise CheckpointError("trailing bytes in checkpoint")
    return out


def save(path, arrays: dict, config: dict = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(dumps(arrays))
    if config is not None:
        path.with_suffix(".json").write_text(json.dumps(config, indent=2, sort_keys=True) + "\n")


def load(path) -> tuple:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"missing checkpoint {path}")
    sidecar = path.with_suffix(".json")
    config = json.loads(sidecar.read_text()) if sidecar.is_file() else None
    return loads(path.read_bytes()), config


def module_arrays(module: torch.nn.Module, prefix: str = "") -> dict:
    return {prefix + k: v for k, v in module.state_dict().items()}


def load_module(module: torch.nn.Module, arrays: dict, prefix: str = "", strict: bool = True) -> None:
    state = {k[len(prefix) :]: torch.from_numpy(v) for k, v in arrays.items() if k.startswith(prefix)}
    module.load_state_dict(state, strict=strict)


def param_bytes(named_tensors) -> bytes:
    """Canonical bytes of a set of named tensors, used for freezing checks."""
    return dumps({n: t for n, t in named_tensors})
