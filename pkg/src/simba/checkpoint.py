"""Binary checkpoint container for named parameters, buffers and optimizer state.

Layout (all little-endian):

    magic  b"SBCP"
    u16    format version (1)
    u32    meta length, then that many bytes of UTF-8 JSON
    u32    entry count
    per entry:
        u16  name length, then UTF-8 name
        u8   dtype code (4 = float32, 8 = float64)
        u8   ndim
        u32  dims[ndim]
        raw  little-endian float payload

Entry names are namespaced: ``param/...`` for trainable parameters,
``buffer/...`` for running statistics, ``opt/velocity/...`` for optimizer
momentum.  Loading validates the stored parameter and buffer names and
shapes against the constructed model and fails closed on any mismatch.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import FormatError, ValidationError

MAGIC = b"SBCP"
VERSION = 1
_DTYPE_CODES = {4: np.dtype("<f4"), 8: np.dtype("<f8")}


def _code_for(dtype) -> int:
    itemsize = np.dtype(dtype).itemsize
    if itemsize not in _DTYPE_CODES:
        raise ValidationError(f"cannot serialize dtype {dtype}")
    return itemsize


def _write_entry(f, name: str, arr: np.ndarray) -> None:
    data = np.ascontiguousarray(arr)
    code = _code_for(data.dtype)
    enc = name.encode("utf-8")
    f.write(struct.pack("<H", len(enc)))
    f.write(enc)
    f.write(struct.pack("<BB", code, data.ndim))
    f.write(struct.pack(f"<{data.ndim}I", *data.shape))
    f.write(data.astype(_DTYPE_CODES[code], copy=False).tobytes())


def _read_exact(f, n: int) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise FormatError("checkpoint truncated")
    return buf


def _read_entry(f):
    (name_len,) = struct.unpack("<H", _read_exact(f, 2))
    name = _read_exact(f, name_len).decode("utf-8")
    code, ndim = struct.unpack("<BB", _read_exact(f, 2))
    if code not in _DTYPE_CODES:
        raise FormatError(f"unknown dtype code {code} for entry {name!r}")
    shape = struct.unpack(f"<{ndim}I", _read_exact(f, 4 * ndim))
    dtype = _DTYPE_CODES[code]
    count = int(np.prod(shape)) if shape else 1
    arr = np.frombuffer(_read_exact(f, count * dtype.itemsize), dtype=dtype).reshape(shape)
    return name, arr.copy()


def save_checkpoint(path, model, optimizer=None, meta: dict | None = None) -> None:
    entries = [("param/" + n, p.data) for n, p in model.named_parameters()]
    entries += [("buffer/" + n, b) for n, b in model.named_buffers()]
    if optimizer is not None:
        entries += [("opt/velocity/" + n, v) for n, v in optimizer.named_velocities()]
    blob = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<H", VERSION))
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        f.write(struct.pack("<I", len(entries)))
        for name, arr in entries:
            _write_entry(f, name, arr)


def read_checkpoint(path):
    """Return (meta, {name: array}) without validating against a model."""
    with open(path, "rb") as f:
        if _read_exact(f, 4) != MAGIC:
            raise FormatError(f"{path}: not a checkpoint file (bad magic)")
        (version,) = struct.unpack("<H", _read_exact(f, 2))
        if version != VERSION:
            raise FormatError(f"{path}: unsupported checkpoint version {version}")
        (meta_len,) = struct.unpack("<I", _read_exact(f, 4))
        meta = json.loads(_read_exact(f, meta_len).decode("utf-8"))
        (count,) = struct.unpack("<I", _read_exact(f, 4))
        entries = dict(_read_entry(f) for _ in range(count))
    return meta, entries


def load_checkpoint(path, model, optimizer=None) -> dict:
    """Restore model (and optionally optimizer) state; returns the meta dict.

    Every model parameter and buffer must be present with a matching shape,
    and the checkpoint must not contain unknown parameter entries.
    """
    meta, entries = read_checkpoint(path)
    params = dict(model.named_parameters())
    buffers = dict(model.named_buffers())

    stored_params = {n[len("param/"):] for n in entries if n.startswith("param/")}
    missing = sorted(set(params) - stored_params)
    unknown = sorted(stored_params - set(params))
    if missing or unknown:
        raise ValidationError(
            f"checkpoint does not match model: missing={missing[:5]} unknown={unknown[:5]}")

    for name, p in params.items():
        arr = entries["param/" + name]
        if arr.shape != p.data.shape:
            raise ValidationError(
                f"parameter {name!r}: checkpoint shape {arr.shape} != model shape {p.data.shape}")
        p.data = arr.astype(p.data.dtype, copy=True)
    for name, b in buffers.items():
        key = "buffer/" + name
        if key not in entries:
            raise ValidationError(f"checkpoint is missing buffer {name!r}")
        arr = entries[key]
        if arr.shape != b.shape:
            raise ValidationError(
                f"buffer {name!r}: checkpoint shape {arr.shape} != model shape {b.shape}")
        b[...] = arr.astype(b.dtype, copy=False)
    if optimizer is not None:
        for name, v in optimizer.named_velocities():
            key = "opt/velocity/" + name
            if key in entries:
                v[...] = entries[key].astype(v.dtype, copy=False)
    return meta
