"""Binary checkpoint container.

Layout (little-endian)::

    b"MAPC" | u32 version=1 | u32 count |
    count x ( u16 name_len | name (UTF-8) | u8 rank | u32 dims[rank] | f32 payload )

Adam moments are stored as ``<param>/m`` and ``<param>/v``; the step counter
as the scalar ``__step``.
"""

from __future__ import annotations

import os
import struct

import numpy as np

from .tensor_core import AdamState, Tensor

MAGIC = b"MAPC"
VERSION = 1
STEP_KEY = "__step"


class CheckpointError(ValueError):
    def __init__(self, code: str, message: str):
        super().__init__(f"[{code}] {message}")
        self.code = code


def write_tensors(path, tensors: dict) -> None:
    chunks = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype="<f4")
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(raw)) + raw)
        chunks.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes(order="C"))
    tmp = os.fspath(path) + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(b"".join(chunks))
    os.replace(tmp, path)


def read_tensors(path) -> dict:
    with open(path, "rb") as fh:
        data = fh.read()
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise CheckpointError("truncated", f"{path}: file ends at byte {len(data)}")
        out = data[pos:pos + n]
        pos += n
        return out

    if take(4) != MAGIC:
        raise CheckpointError("bad_magic", f"{path}: not a checkpoint file")
    version, count = struct.unpack("<II", take(8))
    if version != VERSION:
        raise CheckpointError("bad_version", f"{path}: version {version}, expected {VERSION}")
    out = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        name = take(nlen).decode("utf-8")
        (rank,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{rank}I", take(4 * rank))
        size = int(np.prod(shape)) if rank else 1
        arr = np.frombuffer(take(4 * size), dtype="<f4").reshape(shape).astype(np.float32)
        out[name] = arr
    if pos != len(data):
        raise CheckpointError("trailing_data", f"{path}: {len(data) - pos} unexpected trailing bytes")
    return out


def save_checkpoint(path, params: dict, state: AdamState | None = None, extra: dict | None = None) -> None:
    tensors = {name: t.values for name, t in params.items()}
    if state is not None:
        for name in params:
            if name in state.m:
                tensors[name + "/m"] = state.m[name]
                tensors[name + "/v"] = state.v[name]
        tensors[STEP_KEY] = np.asarray(state.step, dtype=np.float32)
    for name, arr in (extra or {}).items():
        tensors[name] = arr
    write_tensors(path, tensors)


def load_checkpoint(path):
    """Returns (params, AdamState, extras)."""
    raw = read_tensors(path)
    params, m, v, extra = {}, {}, {}, {}
    step = 0
    for name, arr in raw.items():
        if name == STEP_KEY:
            step = int(arr)
        elif name.endswith("/m"):
            m[name[:-2]] = arr
        elif name.endswith("/v"):
            v[name[:-2]] = arr
        elif name.startswith("__"):
            extra[name] = arr
        else:
            params[name] = Tensor(arr, requires_grad=True)
    return params, AdamState(m, v, step), extra
