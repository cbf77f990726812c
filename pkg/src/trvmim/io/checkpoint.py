"""Binary checkpoint container.

Layout (all integers little-endian)::

    b"TRVC" | version u32 | entry_count u32
    entry*: name_len u32 | name utf-8 | dtype u8 | rank u32 | dims u64*rank | payload
    crc32 u32 over the concatenated payload bytes

dtype codes: 1 = float64, 2 = int64, 3 = uint8.
"""
from __future__ import annotations

import json
import os
import struct
import zlib
from typing import Mapping, Optional

import numpy as np

from ..arch import TrVConfig, param_shapes
from ..mim.optim import OptimizerState
from ..numerics import ShapeError

MAGIC = b"TRVC"
VERSION = 1
_DTYPES = {1: np.dtype("<f8"), 2: np.dtype("<i8"), 3: np.dtype("u1")}
_CODES = {np.dtype("float64"): 1, np.dtype("int64"): 2, np.dtype("uint8"): 3}


class CheckpointError(RuntimeError):
    pass


def encode_entries(entries: Mapping[str, np.ndarray]) -> bytes:
    head = [MAGIC, struct.pack("<II", VERSION, len(entries))]
    crc = 0
    for name, arr in entries.items():
        arr = np.asarray(arr)
        code = _CODES.get(arr.dtype.newbyteorder("=") if arr.dtype.byteorder == ">" else arr.dtype)
        if code is None:
            raise CheckpointError(f"entry {name!r}: unsupported dtype {arr.dtype}")
        raw = name.encode("utf-8")
        payload = np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()
        head.append(struct.pack("<I", len(raw)) + raw)
        head.append(struct.pack("<BI", code, arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape))
        head.append(payload)
        crc = zlib.crc32(payload, crc)
    head.append(struct.pack("<I", crc & 0xFFFFFFFF))
    return b"".join(head)


def decode_entries(buf: bytes) -> dict[str, np.ndarray]:
    view = memoryview(buf)
    pos = 0

    def take(n: int, what: str):
        nonlocal pos
        if pos + n > len(view):
            raise CheckpointError(f"truncated checkpoint while reading {what}")
        out = view[pos:pos + n]
        pos += n
        return out

    if bytes(take(4, "magic")) != MAGIC:
        raise CheckpointError("not a TRVC checkpoint (bad magic)")
    version, count = struct.unpack("<II", take(8, "header"))
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {VERSION})")
    entries: dict[str, np.ndarray] = {}
    crc = 0
    for i in range(count):
        (n,) = struct.unpack("<I", take(4, f"entry {i} name length"))
        name = bytes(take(n, f"entry {i} name")).decode("utf-8")
        code, rank = struct.unpack("<BI", take(5, f"entry {name!r} header"))
        if code not in _DTYPES:
            raise CheckpointError(f"entry {name!r}: unknown dtype code {code}")
        dims = struct.unpack(f"<{rank}Q", take(8 * rank, f"entry {name!r} dims"))
        dt = _DTYPES[code]
        nbytes = int(np.prod(dims, dtype=np.int64)) * dt.itemsize
        payload = bytes(take(nbytes, f"entry {name!r} payload"))
        crc = zlib.crc32(payload, crc)
        if name in entries:
            raise CheckpointError(f"duplicate entry {name!r}")
        entries[name] = np.frombuffer(payload, dtype=dt).reshape(dims).astype(dt.newbyteorder("="))
    (stored,) = struct.unpack("<I", take(4, "checksum"))
    if pos != len(view):
        raise CheckpointError(f"{len(view) - pos} trailing bytes after checksum")
    if stored != crc & 0xFFFFFFFF:
        raise CheckpointError(f"checksum mismatch: stored {stored:#010x}, computed {crc & 0xFFFFFFFF:#010x}")
    return entries


def write_entries(path, entries: Mapping[str, np.ndarray]) -> None:
    data = encode_entries(entries)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def read_entries(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        return decode_entries(fh.read())


def save_checkpoint(params: Mapping[str, np.ndarray], opt_state: OptimizerState, step: int, path,
                    config: Optional[TrVConfig] = None) -> None:
    entries: dict[str, np.ndarray] = {"meta/step": np.array(step, dtype=np.int64)}
    if config is not None:
        blob = json.dumps(config.to_dict(), sort_keys=True).encode("utf-8")
        entries["meta/config"] = np.frombuffer(blob, dtype=np.uint8)
    entries["opt/hparams"] = np.array([opt_state.beta1, opt_state.beta2, opt_state.eps, opt_state.weight_decay])
    entries["opt/step"] = np.array(opt_state.step, dtype=np.int64)
    for name, p in params.items():
        entries[f"param/{name}"] = np.asarray(p, dtype=np.float64)
    for name in params:
        entries[f"opt/m/{name}"] = opt_state.m[name]
        entries[f"opt/v/{name}"] = opt_state.v[name]
    write_entries(path, entries)


def load_checkpoint(path, config: Optional[TrVConfig] = None):
    """Returns ``(params, opt_state, step)``; with ``config``, every tensor shape is checked."""
    entries = read_entries(path)
    try:
        step = int(entries["meta/step"])
        b1, b2, eps, wd = (float(x) for x in entries["opt/hparams"])
        opt_step = int(entries["opt/step"])
    except KeyError as exc:
        raise CheckpointError(f"checkpoint lacks entry {exc.args[0]!r}") from None
    params = {k[len("param/"):]: v for k, v in entries.items() if k.startswith("param/")}
    m = {k: entries[f"opt/m/{k}"] for k in params}
    v = {k: entries[f"opt/v/{k}"] for k in params}
    if config is not None:
        expected = param_shapes(config)
        for name, shape in expected.items():
            if name not in params:
                raise ShapeError(f"checkpoint entry 'param/{name}' missing for this config")
            if tuple(params[name].shape) != tuple(shape):
                raise ShapeError(f"checkpoint entry 'param/{name}' has shape {tuple(params[name].shape)}, "
                                 f"config expects {tuple(shape)}")
        extra = sorted(set(params) - set(expected))
        if extra:
            raise ShapeError(f"checkpoint entry 'param/{extra[0]}' not used by this config")
    return params, OptimizerState(m, v, opt_step, b1, b2, eps, wd), step


def checkpoint_config(path) -> Optional[dict]:
    entries = read_entries(path)
    blob = entries.get("meta/config")
    return None if blob is None else json.loads(blob.tobytes().decode("utf-8"))
