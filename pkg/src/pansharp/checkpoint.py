"""Checkpoint container: a named-parameter list with magic and version.

Layout, little-endian throughout: magic "UCGK", u32 format version,
then one record per parameter until end of file — u16 name length,
UTF-8 name bytes, u8 rank, u32 dims, float32 payload.
"""

from __future__ import annotations

import struct

import numpy as np

from .autodiff import Parameter
from .errors import FormatError

MAGIC = b"UCGK"
VERSION = 1


def save_checkpoint(path, named: dict[str, Parameter]) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        for name, param in named.items():
            raw = name.encode("utf-8")
            arr = np.ascontiguousarray(param.data, dtype="<f4")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 8:
        raise FormatError(f"{path}: truncated header")
    if raw[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    out: dict[str, np.ndarray] = {}
    pos = 8
    total = len(raw)
    while pos < total:
        try:
            (name_len,) = struct.unpack_from("<H", raw, pos)
            pos += 2
            name = raw[pos:pos + name_len].decode("utf-8")
            if len(raw[pos:pos + name_len]) != name_len:
                raise struct.error("short name")
            pos += name_len
            (rank,) = struct.unpack_from("<B", raw, pos)
            pos += 1
            dims = struct.unpack_from(f"<{rank}I", raw, pos)
            pos += 4 * rank
            count = int(np.prod(dims)) if rank else 1
            payload = raw[pos:pos + 4 * count]
            if len(payload) != 4 * count:
                raise struct.error("short payload")
            pos += 4 * count
        except struct.error as exc:
            raise FormatError(f"{path}: truncated record ({exc})") from exc
        if name in out:
            raise FormatError(f"{path}: duplicate parameter {name!r}")
        out[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).astype(np.float32)
    return out


def load_into(named: dict[str, Parameter], state: dict[str, np.ndarray],
              prefix: str = "") -> None:
    """Copy checkpoint arrays into live parameters, matching by name."""
    wanted = {k: v for k, v in state.items() if k.startswith(prefix)}
    for name, param in named.items():
        if not name.startswith(prefix):
            continue
        if name not in wanted:
            raise ValueError(f"checkpoint is missing parameter {name!r}")
        arr = wanted.pop(name)
        if arr.shape != param.data.shape:
            raise ValueError(
                f"checkpoint shape {arr.shape} does not match parameter "
                f"{name!r} of shape {param.data.shape}"
            )
        param.data = arr.astype(param.data.dtype)
    if wanted:
        extra = sorted(wanted)[:3]
        raise ValueError(f"checkpoint has unknown parameters, e.g. {extra}")
