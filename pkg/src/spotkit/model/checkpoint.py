"""Checkpoint container.

Byte layout (all integers little-endian)::

    7 bytes   magic b"E2ESPOT"
    uint32    format version
    uint64    header length H
    H bytes   UTF-8 JSON header: {"backbone": {...}, "head": {...},
              "metadata": {...}, "arrays": [{"name", "dtype", "shape",
              "offset", "nbytes"}, ...]}
    ...       array payload; each array is C-ordered little-endian raw data
              at ``offset`` bytes from the end of the header
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np
import torch

from ..core import SpotError
from .backbone import BackboneConfig
from .heads import HeadConfig
from .network import SpotModel

MAGIC = b"E2ESPOT"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<7sIQ")


class CheckpointError(SpotError):
    pass


@dataclass
class Checkpoint:
    backbone: BackboneConfig
    head: HeadConfig
    arrays: dict[str, np.ndarray]
    metadata: dict = field(default_factory=dict)
    format_version: int = FORMAT_VERSION

    @classmethod
    def from_model(cls, model: SpotModel, metadata: dict | None = None) -> "Checkpoint":
        arrays = {k: v.detach().cpu().numpy().copy() for k, v in model.state_dict().items()}
        return cls(model.backbone_config, model.head_config, arrays, dict(metadata or {}))

    def build_model(self) -> SpotModel:
        model = SpotModel(self.backbone, self.head)
        expected = model.state_dict()
        names = set(expected)
        if names != set(self.arrays) or any(
                tuple(expected[k].shape) != self.arrays[k].shape for k in names):
            missing = sorted(names - set(self.arrays))[:3]
            extra = sorted(set(self.arrays) - names)[:3]
            raise CheckpointError(f"config/parameter mismatch (missing {missing}, unexpected {extra})")
        dtype = next(iter(self.arrays.values())).dtype if self.arrays else np.float32
        if dtype == np.float64:
            model = model.double()
        model.load_state_dict({k: torch.from_numpy(v.copy()) for k, v in self.arrays.items()})
        model.eval()
        return model


def _encode_header(ckpt: Checkpoint, index: list) -> bytes:
    header = {"backbone": ckpt.backbone.to_dict(), "head": ckpt.head.to_dict(),
              "metadata": ckpt.metadata, "arrays": index}
    return json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")


def save_checkpoint(model_or_ckpt, path: str, metadata: dict | None = None) -> None:
    ckpt = model_or_ckpt if isinstance(model_or_ckpt, Checkpoint) else Checkpoint.from_model(model_or_ckpt, metadata)
    index, blobs, offset = [], [], 0
    for name in sorted(ckpt.arrays):
        arr = np.asarray(ckpt.arrays[name])
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        data = le.tobytes()
        index.append({"name": name, "dtype": le.dtype.str, "shape": list(arr.shape),
                      "offset": offset, "nbytes": len(data)})
        blobs.append(data)
        offset += len(data)
    header = _encode_header(ckpt, index)
    with open(path, "wb") as f:
        f.write(_PREFIX.pack(MAGIC, ckpt.format_version, len(header)))
        f.write(header)
        for b in blobs:
            f.write(b)


def read_checkpoint(path: str) -> Checkpoint:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < _PREFIX.size:
        raise CheckpointError(f"{path}: corrupt checkpoint (file too short)")
    magic, version, hlen = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: corrupt checkpoint (bad magic {magic!r})")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: checkpoint format version {version} is not supported "
                              f"(this build reads version {FORMAT_VERSION})")
    start = _PREFIX.size
    try:
        header = json.loads(raw[start:start + hlen].decode("utf-8"))
        backbone = BackboneConfig.from_dict(header["backbone"])
        head = HeadConfig.from_dict(header["head"])
    except (ValueError, KeyError, TypeError) as e:
        raise CheckpointError(f"{path}: corrupt checkpoint header ({e})") from None
    data = memoryview(raw)[start + hlen:]
    arrays = {}
    for rec in header.get("arrays", []):
        lo, n = rec["offset"], rec["nbytes"]
        if lo + n > len(data):
            raise CheckpointError(f"{path}: corrupt checkpoint (array {rec['name']!r} truncated)")
        arr = np.frombuffer(data[lo:lo + n], dtype=np.dtype(rec["dtype"]))
        arrays[rec["name"]] = arr.reshape(tuple(rec["shape"])).astype(np.dtype(rec["dtype"]).newbyteorder("="))
    return Checkpoint(backbone, head, arrays, header.get("metadata", {}), version)


def load_checkpoint(path: str) -> SpotModel:
    return read_checkpoint(path).build_model()
