"""Binary checkpoint format.

Little-endian layout: magic "FPNT", u32 version=1, u32 entry count; per entry
u16 name length, UTF-8 name, u8 rank, rank x u32 extents, then raw float32
values. Entries cover parameters, batch-norm buffers, and (under the "opt."
prefix) Adam moments plus the step counter, so resumed training continues the
loss trace.
"""

from __future__ import annotations

import struct
import warnings

import numpy as np

from .errors import FormatError
from .params import ParamStore

MAGIC = b"FPNT"
VERSION = 1


def _write_entry(fh, name: str, arr: np.ndarray) -> None:
    encoded = name.encode("utf-8")
    if len(encoded) > 0xFFFF:
        raise FormatError(f"checkpoint entry name too long: {name!r}")
    arr = np.ascontiguousarray(arr, dtype="<f4")
    fh.write(struct.pack("<H", len(encoded)))
    fh.write(encoded)
    fh.write(struct.pack("<B", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    fh.write(arr.tobytes())


def gather_state(store: ParamStore) -> dict[str, np.ndarray]:
    entries: dict[str, np.ndarray] = {}
    for name, p in store.params.items():
        entries[name] = p.data
    for name, arr in store.buffers.items():
        entries[name] = arr
    for name, arr in store.m.items():
        entries[f"opt.m.{name}"] = arr
    for name, arr in store.v.items():
        entries[f"opt.v.{name}"] = arr
    entries["opt.t"] = np.array([store.step_count], dtype=np.float32)
    return entries


def save_checkpoint(store: ParamStore, path) -> None:
    entries = gather_state(store)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(entries)))
        for name, arr in entries.items():
            _write_entry(fh, name, arr)


def _read_exact(fh, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise FormatError(f"checkpoint truncated while reading {what}")
    return buf


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        if _read_exact(fh, 4, "magic") != MAGIC:
            raise FormatError(f"{path}: bad checkpoint magic (expected FPNT)")
        version, count = struct.unpack("<II", _read_exact(fh, 8, "header"))
        if version != VERSION:
            raise FormatError(f"{path}: unsupported checkpoint version {version}")
        entries: dict[str, np.ndarray] = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<H", _read_exact(fh, 2, "name length"))
            name = _read_exact(fh, nlen, "name").decode("utf-8")
            (rank,) = struct.unpack("<B", _read_exact(fh, 1, f"rank of {name!r}"))
            shape = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank, f"extents of {name!r}"))
            size = int(np.prod(shape)) if rank else 1
            data = _read_exact(fh, 4 * size, f"data of {name!r}")
            entries[name] = np.frombuffer(data, dtype="<f4").reshape(shape).copy()
        trailing = fh.read(1)
        if trailing:
            raise FormatError(f"{path}: trailing bytes after last entry")
    return entries


def restore_state(store: ParamStore, entries: dict[str, np.ndarray], *,
                  restore_optimizer: bool = True) -> None:
    """Copy matching entries into the store; extra names warn, missing raise."""
    consumed = set()
    for name, p in store.params.items():
        if name not in entries:
            raise FormatError(f"checkpoint is missing parameter {name!r}")
        _copy_into(name, entries[name], p.data)
        consumed.add(name)
    for name, arr in store.buffers.items():
        if name not in entries:
            raise FormatError(f"checkpoint is missing buffer {name!r}")
        _copy_into(name, entries[name], arr)
        consumed.add(name)
    if restore_optimizer and "opt.t" in entries:
        store.step_count = int(entries["opt.t"].reshape(-1)[0])
        for name in store.params:
            for kind, slot in (("m", store.m), ("v", store.v)):
                key = f"opt.{kind}.{name}"
                if key in entries:
                    slot[name] = entries[key].astype(np.float32).copy()
                    consumed.add(key)
        consumed.add("opt.t")
    else:
        consumed.update(k for k in entries if k.startswith("opt."))
    extra = sorted(set(entries) - consumed)
    if extra:
        warnings.warn(f"checkpoint entries ignored (not in this configuration): {extra}",
                      stacklevel=2)


def _copy_into(name: str, src: np.ndarray, dst: np.ndarray) -> None:
    if tuple(src.shape) != tuple(dst.shape):
        raise FormatError(f"checkpoint entry {name!r} has shape {tuple(src.shape)}; "
                          f"expected {tuple(dst.shape)}")
    dst[...] = src
