"""Binary model container (.oodm).

Layout, all integers little-endian:

    magic  b"OODM"
    u32    format version (1)
    u32    tensor count
    per tensor:
        u16   name length, then UTF-8 name bytes
        u8    dtype: 0 = float32, 1 = int8
        u8    rank, then rank * u32 dims
        raw   element data (row-major)
        int8 only: f32 scale, i32 zero_point

The file carries only named tensors. Graph structure rides along as a
text description stored in an int8 tensor named ``<prefix>__layers__``
(scale 1, zero point 0), so a reader that only cares about raw tensors
can still parse every file. Scalar metadata uses ``meta.<key>`` float
tensors of shape [1].
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError
from .nn import (LayerSpec, ModelGraph, conv2d, crop2d, dense, flatten, relu, reshape,
                 sigmoid, upsample2x)

MAGIC = b"OODM"
VERSION = 1
DTYPE_F32 = 0
DTYPE_I8 = 1


@dataclass(frozen=True)
class QTensor:
    """int8 payload with its affine params, as stored on disk."""
    data: np.ndarray      # int8
    scale: float
    zero_point: int


# ---------------------------------------------------------------------------
# raw tensor I/O

def write_oodm(path: str, tensors: dict[str, np.ndarray | QTensor]) -> None:
    """Write tensors in dict order. float32 arrays and QTensor entries only."""
    chunks = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, entry in tensors.items():
        nb = name.encode("utf-8")
        if len(nb) > 0xFFFF:
            raise ArgumentError(f"tensor name too long: {name[:32]}...")
        chunks.append(struct.pack("<H", len(nb)))
        chunks.append(nb)
        if isinstance(entry, QTensor):
            arr = np.ascontiguousarray(entry.data, dtype=np.int8)
            chunks.append(struct.pack("<BB", DTYPE_I8, arr.ndim))
            chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
            chunks.append(arr.tobytes())
            chunks.append(struct.pack("<fi", float(entry.scale), int(entry.zero_point)))
        else:
            arr = np.ascontiguousarray(entry, dtype="<f4")
            chunks.append(struct.pack("<BB", DTYPE_F32, arr.ndim))
            chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
            chunks.append(arr.tobytes())
    with open(path, "wb") as f:
        f.write(b"".join(chunks))


def read_oodm(path: str) -> dict[str, np.ndarray | QTensor]:
    with open(path, "rb") as f:
        buf = f.read()
    if buf[:4] != MAGIC:
        raise ArgumentError(f"{path}: not a model file (bad magic)")
    if len(buf) < 12:
        raise ArgumentError(f"{path}: truncated header")
    version, count = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise ArgumentError(f"{path}: unsupported format version {version}")
    off = 12
    out: dict[str, np.ndarray | QTensor] = {}

    def need(n: int):
        if off + n > len(buf):
            raise ArgumentError(f"{path}: truncated tensor data")

    for _ in range(count):
        need(2)
        (nlen,) = struct.unpack_from("<H", buf, off)
        off += 2
        need(nlen)
        name = buf[off:off + nlen].decode("utf-8")
        off += nlen
        need(2)
        dtype, rank = struct.unpack_from("<BB", buf, off)
        off += 2
        need(4 * rank)
        dims = struct.unpack_from(f"<{rank}I", buf, off)
        off += 4 * rank
        n = int(np.prod(dims, dtype=np.int64)) if rank else 1
        if dtype == DTYPE_F32:
            need(4 * n)
            arr = np.frombuffer(buf, dtype="<f4", count=n, offset=off).reshape(dims)
            off += 4 * n
            out[name] = arr.astype(np.float32)
        elif dtype == DTYPE_I8:
            need(n)
            arr = np.frombuffer(buf, dtype=np.int8, count=n, offset=off).reshape(dims)
            off += n
            need(8)
            scale, zp = struct.unpack_from("<fi", buf, off)
            off += 8
            out[name] = QTensor(arr.copy(), float(scale), int(zp))
        else:
            raise ArgumentError(f"{path}: tensor {name!r} has unknown dtype {dtype}")
    if off != len(buf):
        raise ArgumentError(f"{path}: {len(buf) - off} trailing bytes")
    return out


# ---------------------------------------------------------------------------
# graph structure <-> text

def graph_text(in_dims, specs) -> str:
    parts = ["in:" + ",".join(str(int(d)) for d in in_dims)]
    for s in specs:
        if s.kind == "dense":
            parts.append(f"dense:{s.in_features},{s.out_features}")
        elif s.kind == "conv2d":
            parts.append(f"conv2d:{s.in_ch},{s.out_ch},{s.ksize},{s.stride},{s.pad}")
        elif s.kind in ("reshape", "crop2d"):
            parts.append(s.kind + ":" + ",".join(str(int(d)) for d in s.dims))
        else:
            parts.append(s.kind)
    return ";".join(parts)


def parse_graph_text(text: str) -> tuple[tuple[int, ...], tuple[LayerSpec, ...]]:
    parts = text.split(";")
    if not parts or not parts[0].startswith("in:"):
        raise ArgumentError(f"bad graph description: {text[:64]!r}")
    in_dims = tuple(int(d) for d in parts[0][3:].split(","))
    makers = {"relu": relu, "sigmoid": sigmoid, "flatten": flatten, "upsample2x": upsample2x}
    specs: list[LayerSpec] = []
    for p in parts[1:]:
        if p in makers:
            specs.append(makers[p]())
            continue
        kind, _, args = p.partition(":")
        vals = [int(v) for v in args.split(",")] if args else []
        if kind == "dense" and len(vals) == 2:
            specs.append(dense(*vals))
        elif kind == "conv2d" and len(vals) == 5:
            specs.append(conv2d(*vals))
        elif kind == "reshape" and vals:
            specs.append(reshape(*vals))
        elif kind == "crop2d" and len(vals) == 2:
            specs.append(crop2d(*vals))
        else:
            raise ArgumentError(f"bad layer description: {p!r}")
    return in_dims, tuple(specs)


def _text_tensor(text: str) -> QTensor:
    data = np.frombuffer(text.encode("utf-8"), dtype=np.int8).copy()
    return QTensor(data, 1.0, 0)


def _tensor_text(entry) -> str:
    if not isinstance(entry, QTensor):
        raise ArgumentError("graph description tensor has wrong dtype")
    return entry.data.tobytes().decode("utf-8")


# ---------------------------------------------------------------------------
# float model bundles

def pack_model(model: ModelGraph, prefix: str = "") -> dict[str, np.ndarray | QTensor]:
    out: dict[str, np.ndarray | QTensor] = {
        prefix + "__layers__": _text_tensor(graph_text(model.in_dims, model.specs))}
    for name in model.param_names():
        out[prefix + name] = model.params[name]
    return out


def unpack_model(tensors: dict, prefix: str = "") -> ModelGraph:
    key = prefix + "__layers__"
    if key not in tensors:
        raise ArgumentError(f"model bundle is missing {key!r}")
    in_dims, specs = parse_graph_text(_tensor_text(tensors[key]))
    params = {}
    for name, entry in tensors.items():
        if name.startswith(prefix) and not name.endswith("__layers__"):
            short = name[len(prefix):]
            if short.startswith("p") and isinstance(entry, np.ndarray):
                params[short] = entry
    return ModelGraph(in_dims, specs, params)


def save_models(path: str, models: dict[str, ModelGraph],
                extras: dict[str, float] | None = None) -> None:
    """Save one or more float models. Keys become name prefixes; use the
    empty string for a single unnamed model. extras land in meta.* scalars."""
    tensors: dict[str, np.ndarray | QTensor] = {}
    for key, model in models.items():
        prefix = key + "." if key else ""
        tensors.update(pack_model(model, prefix))
    for k, v in (extras or {}).items():
        tensors[f"meta.{k}"] = np.asarray([v], dtype=np.float32)
    write_oodm(path, tensors)


def load_models(path: str) -> tuple[dict[str, ModelGraph], dict[str, float]]:
    tensors = read_oodm(path)
    prefixes = set()
    for name in tensors:
        if name.endswith("__layers__"):
            prefixes.add(name[:-len("__layers__")])
    models = {}
    for prefix in sorted(prefixes):
        key = prefix[:-1] if prefix.endswith(".") else prefix
        models[key] = unpack_model(tensors, prefix)
    extras = {name[5:]: float(entry[0]) for name, entry in tensors.items()
              if name.startswith("meta.") and isinstance(entry, np.ndarray)}
    return models, extras
