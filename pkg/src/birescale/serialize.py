"""Binary model file.

Layout (little-endian)::

    b"BAIR"  u16 version  u32 tensor_count
    tensor_count x ( u32 name_len, name utf-8, u32 rank, rank x u32 dim, f32 data )
    u32 crc32 of every byte after the version field

The architecture is recovered from tensor names and shapes; the merge flag
travels as the one-element tensor ``meta.use_swf``.
"""

from __future__ import annotations

import re
import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import FormatError
from .model import ModelConfig, RescaleModel
from .autodiff import Tensor

MAGIC = b"BAIR"
VERSION = 1


def serialize(model: RescaleModel) -> bytes:
    tensors = dict((k, t.data) for k, t in model.params.items())
    tensors["meta.use_swf"] = np.array([1.0 if model.use_swf else 0.0])
    body = bytearray(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        body += struct.pack("<I", len(raw)) + raw
        body += struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
        body += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    return MAGIC + struct.pack("<H", VERSION) + bytes(body) + struct.pack("<I", zlib.crc32(body))


class _Reader:
    def __init__(self, data: bytes, pos: int):
        self.data, self.pos = data, pos

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"truncated while reading {what}", self.pos)
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]


def _infer_config(arrays: dict[str, np.ndarray]) -> ModelConfig:
    blocks = len({m.group(1) for k in arrays if (m := re.match(r"encoder\.block(\d+)\.", k))})
    layers = len({m.group(1) for k in arrays if (m := re.match(r"svf_down\.(\d+)\.weight", k))})
    head = arrays["encoder.head.weight"]
    return ModelConfig(
        channels=head.shape[1],
        width=head.shape[0],
        blocks=blocks,
        features=arrays["encoder.tail.weight"].shape[0],
        svf_hidden=arrays["svf_down.0.weight"].shape[1],
        swf_hidden=arrays["swf.0.weight"].shape[1],
        mlp_layers=layers,
    )


def deserialize(data: bytes) -> RescaleModel:
    if data[:4] != MAGIC:
        raise FormatError(f"bad magic {data[:4]!r}, expected {MAGIC!r}", 0)
    if len(data) < 6:
        raise FormatError("truncated header", len(data))
    (version,) = struct.unpack("<H", data[4:6])
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    if len(data) < 14:
        raise FormatError("truncated file", len(data))
    body, (crc,) = data[6:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise FormatError("checksum mismatch", len(data) - 4)
    r = _Reader(data[:-4], 6)
    arrays: dict[str, np.ndarray] = {}
    for _ in range(r.u32("tensor count")):
        start = r.pos
        name = r.take(r.u32("name length"), "name").decode("utf-8", errors="strict")
        rank = r.u32("rank")
        if rank > 4:
            raise FormatError(f"tensor {name!r} has rank {rank}", start)
        dims = struct.unpack(f"<{rank}I", r.take(4 * rank, "dims"))
        count = int(np.prod(dims)) if rank else 1
        arrays[name] = np.frombuffer(r.take(4 * count, f"data of {name!r}"), dtype="<f4") \
            .reshape(dims).astype(np.float32)
    if r.pos != len(data) - 4:
        raise FormatError("trailing bytes before checksum", r.pos)
    try:
        use_swf = bool(arrays.pop("meta.use_swf")[0])
        config = _infer_config(arrays)
        template = RescaleModel.init(config, seed=0, dtype=np.float32)
    except (KeyError, IndexError) as exc:
        raise FormatError(f"missing or malformed tensor: {exc}") from exc
    if set(template.params) != set(arrays):
        raise FormatError(f"tensor set mismatch: {sorted(set(template.params) ^ set(arrays))}")
    for k, t in template.params.items():
        if t.shape != arrays[k].shape:
            raise FormatError(f"tensor {k!r} has shape {arrays[k].shape}, expected {t.shape}")
    params = {k: Tensor(arrays[k], requires_grad=True, name=k) for k in template.params}
    return RescaleModel(config, params, use_swf)


def save(model: RescaleModel, path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(serialize(model))
    tmp.replace(path)


def load(path) -> RescaleModel:
    return deserialize(Path(path).read_bytes())
