"""Binary model checkpoints.

Layout (all integers little-endian)::

    b"MFNN1"
    u32 layer_count
    per layer:
        u8  kind tag
        u32 dim_count, then dim_count x u32 dims
        u32 tensor_count
        per tensor:
            u8 name_length, name (ASCII)
            u32 ndim, then ndim x u32 shape
            float32 data, row-major
    u32 metadata_length, then metadata as UTF-8 JSON (may be 0 bytes)

Values are stored as float32, so a checkpoint written from a loaded
checkpoint is byte-identical to its source.
"""

from __future__ import annotations

import io
import json
import struct
from pathlib import Path

import numpy as np

from ..exceptions import FormatError
from .layers import BatchNorm, Conv2d, Dense, Flatten, GlobalAvgPool, Layer, MaxPool2x2, ReLU
from .network import Sequential

MAGIC = b"MFNN1"

KIND_TAGS = {
    "dense": 1,
    "conv3x3": 2,
    "conv_kxk": 3,
    "maxpool2x2": 4,
    "batchnorm": 5,
    "relu": 6,
    "global_avg_pool": 7,
    "flatten": 8,
}
_TAG_KINDS = {v: k for k, v in KIND_TAGS.items()}


def _build_layer(kind, dims) -> Layer:
    if kind == "dense":
        return Dense(*dims)
    if kind in ("conv3x3", "conv_kxk"):
        cin, cout, kh, kw, stride, pad = dims
        return Conv2d(cin, cout, (kh, kw), stride=stride, padding=pad)
    if kind == "batchnorm":
        return BatchNorm(*dims)
    simple = {"maxpool2x2": MaxPool2x2, "relu": ReLU, "global_avg_pool": GlobalAvgPool, "flatten": Flatten}
    return simple[kind]()


def _write_tensor(buf, name, arr):
    raw = name.encode("ascii")
    buf.write(struct.pack("<B", len(raw)))
    buf.write(raw)
    buf.write(struct.pack("<I", arr.ndim))
    buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def dumps(net: Sequential, metadata: dict | None = None) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", len(net.layers)))
    for layer in net.layers:
        dims = layer.dims()
        buf.write(struct.pack("<B", KIND_TAGS[layer.kind]))
        buf.write(struct.pack("<I", len(dims)))
        buf.write(struct.pack(f"<{len(dims)}I", *dims))
        tensors = list(layer.params.items()) + list(layer.buffers.items())
        buf.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors:
            _write_tensor(buf, name, arr)
    meta = json.dumps(metadata or {}, sort_keys=True).encode("utf-8") if metadata else b""
    buf.write(struct.pack("<I", len(meta)))
    buf.write(meta)
    return buf.getvalue()


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise FormatError("checkpoint truncated")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def loads(data: bytes) -> tuple[Sequential, dict]:
    r = _Reader(data)
    if r.take(len(MAGIC)) != MAGIC:
        raise FormatError("not an MFNN1 checkpoint")
    (n_layers,) = r.unpack("<I")
    layers = []
    for i in range(n_layers):
        (tag,) = r.unpack("<B")
        if tag not in _TAG_KINDS:
            raise FormatError(f"layer {i}: unknown kind tag {tag}")
        (n_dims,) = r.unpack("<I")
        dims = r.unpack(f"<{n_dims}I")
        layer = _build_layer(_TAG_KINDS[tag], dims)
        (n_tensors,) = r.unpack("<I")
        for _ in range(n_tensors):
            (name_len,) = r.unpack("<B")
            name = r.take(name_len).decode("ascii")
            (ndim,) = r.unpack("<I")
            shape = r.unpack(f"<{ndim}I")
            count = int(np.prod(shape)) if ndim else 1
            arr = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(shape).astype(np.float64)
            target = layer.params if name in layer.params else layer.buffers
            if name not in target or target[name].shape != arr.shape:
                raise FormatError(f"layer {i}: unexpected tensor {name!r} with shape {shape}")
            target[name] = arr
        layer.zero_grad()
        layers.append(layer)
    (meta_len,) = r.unpack("<I")
    meta = json.loads(r.take(meta_len).decode("utf-8")) if meta_len else {}
    if r.pos != len(data):
        raise FormatError("trailing bytes after checkpoint")
    return Sequential(layers), meta


def save_checkpoint(path, net: Sequential, metadata: dict | None = None) -> None:
    Path(path).write_bytes(dumps(net, metadata))


def load_checkpoint(path) -> tuple[Sequential, dict]:
    return loads(Path(path).read_bytes())
