"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"PRNCKPT1"
    u32 entry_count
    per entry: u32 name_len, name (UTF-8), u8 dtype tag, u32 ndim, ndim x u64 dims, raw data

dtype tags: 0 = f32, 1 = f64, 2 = u8 mask. Masks are stored as separate
entries named ``"<param>.mask"``; momentum buffers as ``"<param>.momentum"``.
The architecture travels in a JSON sidecar (``<path>.json``) because the
tensor format has no place for it.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from prunelab.errors import ParseError
from prunelab.nn.arch import Architecture
from prunelab.nn.store import ParamStore

MAGIC = b"PRNCKPT1"
_TAGS = {np.dtype("<f4"): 0, np.dtype("<f8"): 1, np.dtype("u1"): 2}
_DTYPES = {v: k for k, v in _TAGS.items()}


def write_tensors(path, tensors: dict[str, np.ndarray]):
    """Write an ordered name->array mapping. Arrays must be f32, f64 or u8."""
    parts = [MAGIC, struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        dt = arr.dtype.newbyteorder("<") if arr.dtype.kind == "f" else arr.dtype
        if dt not in _TAGS:
            raise TypeError(f"unsupported dtype {arr.dtype} for {name!r}")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack("<BI", _TAGS[dt], arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=dt).tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_tensors(path) -> dict[str, np.ndarray]:
    buf = Path(path).read_bytes()
    if buf[:8] != MAGIC:
        raise ParseError(f"{path}: bad magic at byte 0")
    pos = 8

    def take(n):
        nonlocal pos
        if pos + n > len(buf):
            raise ParseError(f"{path}: truncated at byte {pos} (needed {n} more bytes)")
        chunk = buf[pos : pos + n]
        pos += n
        return chunk

    (count,) = struct.unpack("<I", take(4))
    out = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<I", take(4))
        name = take(nlen).decode("utf-8")
        tag, ndim = struct.unpack("<BI", take(5))
        if tag not in _DTYPES:
            raise ParseError(f"{path}: unknown dtype tag {tag} at byte {pos - 5}")
        dims = struct.unpack(f"<{ndim}Q", take(8 * ndim))
        dt = _DTYPES[tag]
        n = int(np.prod(dims)) if ndim else 1
        out[name] = np.frombuffer(take(n * dt.itemsize), dtype=dt).reshape(dims).copy()
    if pos != len(buf):
        raise ParseError(f"{path}: {len(buf) - pos} trailing bytes at byte {pos}")
    return out


def save_checkpoint(path, store: ParamStore, arch: Architecture | None = None, momentum: bool = True):
    tensors = {}
    for name, p in store.items():
        tensors[name] = p.weight
        tensors[f"{name}.mask"] = p.mask.astype(np.uint8)
        if momentum:
            tensors[f"{name}.momentum"] = p.momentum
    tensors.update(store.buffers)
    write_tensors(path, tensors)
    if arch is not None:
        meta = {"architecture": arch.to_dict(), "seed": store.seed, "dtype": store.dtype.name}
        Path(f"{path}.json").write_text(json.dumps(meta, indent=1))


def load_checkpoint(path, arch: Architecture | None = None) -> tuple[ParamStore, Architecture]:
    """Load a store; the architecture comes from ``arch`` or the JSON sidecar."""
    tensors = read_tensors(path)
    meta = {}
    sidecar = Path(f"{path}.json")
    if sidecar.exists():
        meta = json.loads(sidecar.read_text())
    if arch is None:
        if "architecture" not in meta:
            raise ParseError(f"{path}: no architecture given and no sidecar {sidecar}")
        arch = Architecture.from_dict(meta["architecture"])
    specs = arch.param_specs()
    if not specs:
        dtype = np.float32
    else:
        dtype = tensors[specs[0].name].dtype
    store = ParamStore(dtype, arch.name, meta.get("seed"))
    for spec in specs:
        if spec.name not in tensors:
            raise ParseError(f"{path}: missing entry {spec.name!r}")
        w = tensors[spec.name]
        if w.shape != spec.shape:
            raise ParseError(f"{path}: entry {spec.name!r} has shape {w.shape}, expected {spec.shape}")
        store.add(spec.name, w, spec.kind, tensors.get(f"{spec.name}.mask"))
        if f"{spec.name}.momentum" in tensors:
            store.params[spec.name].momentum[...] = tensors[f"{spec.name}.momentum"]
    for name in arch.buffer_specs():
        store.buffers[name] = tensors[name].astype(dtype)
    return store, arch
