"""Binary checkpoint format for regressor parameters and optimizer state.

Layout (all little-endian)::

    b"SBMK"                 magic
    u32                     format version
    u8                      objective code
    u32 + bytes             JSON metadata (architecture, tensor names, extras)
    u32                     tensor count
    per tensor: u32 rank, rank * u32 dims, float64 payload
    u32                     CRC32 of every preceding byte
"""

from __future__ import annotations

import json
import os
import struct
import zlib
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .bridge import ObjectiveKind
from .exceptions import CheckpointError
from .net import AdamState, Architecture, RegressorParams

MAGIC = b"SBMK"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    params: RegressorParams
    objective: ObjectiveKind
    opt_state: Optional[AdamState] = None
    extra: Optional[dict] = None


def dumps(params: RegressorParams, objective, opt_state: AdamState = None, extra: dict = None) -> bytes:
    objective = ObjectiveKind.parse(objective)
    names = list(params.tensors)
    tensors = [params.tensors[k] for k in names]
    meta = {"arch": params.arch.to_dict(), "names": names, "extra": extra or {}}
    if opt_state is not None:
        meta["adam_step"] = opt_state.step
        tensors += [opt_state.m[k] for k in names] + [opt_state.v[k] for k in names]
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<IB", FORMAT_VERSION, objective.code),
             struct.pack("<I", len(meta_bytes)), meta_bytes, struct.pack("<I", len(tensors))]
    for arr in tensors:
        arr = np.ascontiguousarray(arr, dtype="<f8")
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(arr.tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def loads(blob: bytes) -> Checkpoint:
    if len(blob) < 17 or blob[:4] != MAGIC:
        raise CheckpointError("not a bridgekit checkpoint (bad magic)")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise CheckpointError("checkpoint CRC mismatch; file is corrupted")
    try:
        version, code = struct.unpack_from("<IB", body, 4)
        if version != FORMAT_VERSION:
            raise CheckpointError(f"unsupported checkpoint format version {version}")
        pos = 9
        (meta_len,) = struct.unpack_from("<I", body, pos)
        pos += 4
        meta = json.loads(body[pos:pos + meta_len].decode("utf-8"))
        pos += meta_len
        (count,) = struct.unpack_from("<I", body, pos)
        pos += 4
        arrays = []
        for _ in range(count):
            (rank,) = struct.unpack_from("<I", body, pos)
            pos += 4
            dims = struct.unpack_from(f"<{rank}I", body, pos)
            pos += 4 * rank
            size = int(np.prod(dims)) if rank else 1
            arr = np.frombuffer(body, dtype="<f8", count=size, offset=pos).reshape(dims)
            arrays.append(arr.astype(np.float64))
            pos += 8 * size
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"truncated or malformed checkpoint: {exc}") from None
    if pos != len(body):
        raise CheckpointError("trailing bytes after tensor payload")
    names = meta["names"]
    n = len(names)
    if count not in (n, 3 * n):
        raise CheckpointError(f"tensor count {count} inconsistent with {n} parameter tensors")
    params = RegressorParams(Architecture(**meta["arch"]), dict(zip(names, arrays[:n])))
    opt_state = None
    if count == 3 * n:
        opt_state = AdamState(dict(zip(names, arrays[n:2 * n])), dict(zip(names, arrays[2 * n:])),
                              int(meta.get("adam_step", 0)))
    return Checkpoint(params, ObjectiveKind.from_code(code), opt_state, meta.get("extra") or {})


def save_checkpoint(path, params, objective, opt_state=None, extra=None):
    blob = dumps(params, objective, opt_state, extra)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)


def load_checkpoint(path) -> Checkpoint:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except FileNotFoundError:
        raise CheckpointError(f"checkpoint not found: {path}") from None
    return loads(blob)
