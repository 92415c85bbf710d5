"""Frame and optical-flow storage on disk.

Frames: ``<dir>/<%06d>.png`` (or ``.jpg``), 8-bit RGB, frame 0 first.
Flow: ``<dir>/<%06d>.flo2``, a 16-byte little-endian header
``b"FLO2", uint32 height, uint32 width, uint32 reserved (0)`` followed by
``height * width`` row-major float32 ``(dx, dy)`` pairs.
"""
from __future__ import annotations

import os
import struct
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from PIL import Image

FLOW_MAGIC = b"FLO2"
_FLOW_HEADER = struct.Struct("<4sIII")


def num_workers() -> int:
    try:
        return max(1, int(os.environ.get("SPOTKIT_NUM_WORKERS", "1")))
    except ValueError:
        return 1


def frame_path(frame_dir: str, index: int, ext: str = "png") -> str:
    return os.path.join(frame_dir, f"{index:06d}.{ext}")


def write_frame(frame_dir: str, index: int, image: np.ndarray) -> None:
    """``image`` is H x W x 3 uint8."""
    # fixed compression settings keep the files byte-reproducible
    Image.fromarray(image, mode="RGB").save(frame_path(frame_dir, index), optimize=False, compress_level=6)


def _frame_ext(frame_dir: str) -> str:
    if not os.path.isdir(frame_dir):
        raise FileNotFoundError(f"frame directory not found: {frame_dir}")
    for ext in ("png", "jpg"):
        if os.path.exists(frame_path(frame_dir, 0, ext)):
            return ext
    raise FileNotFoundError(f"no frame 000000.png/.jpg in {frame_dir}")


def _read_one(path: str) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"))


def read_frames(frame_dir: str, start: int = 0, count: int | None = None) -> np.ndarray:
    """Read consecutive frames as a uint8 array of shape (count, H, W, 3)."""
    ext = _frame_ext(frame_dir)
    if count is None:
        count = 0
        while os.path.exists(frame_path(frame_dir, start + count, ext)):
            count += 1
    paths = [frame_path(frame_dir, start + i, ext) for i in range(count)]
    missing = [p for p in paths if not os.path.exists(p)]
    if missing:
        raise FileNotFoundError(f"missing frame file {missing[0]}")
    workers = num_workers()
    if workers > 1 and count > 1:
        with ThreadPoolExecutor(workers) as pool:
            frames = list(pool.map(_read_one, paths))
    else:
        frames = [_read_one(p) for p in paths]
    return np.stack(frames)


def write_flow(path: str, flow: np.ndarray) -> None:
    """``flow`` is H x W x 2 (dx, dy)."""
    flow = np.asarray(flow, dtype="<f4")
    if flow.ndim != 3 or flow.shape[2] != 2:
        raise ValueError(f"flow must be H x W x 2, got {flow.shape}")
    h, w, _ = flow.shape
    with open(path, "wb") as f:
        f.write(_FLOW_HEADER.pack(FLOW_MAGIC, h, w, 0))
        f.write(np.ascontiguousarray(flow).tobytes())


def read_flow(path: str) -> np.ndarray:
    with open(path, "rb") as f:
        header = f.read(_FLOW_HEADER.size)
        if len(header) != _FLOW_HEADER.size:
            raise ValueError(f"{path}: truncated flow header")
        magic, h, w, _ = _FLOW_HEADER.unpack(header)
        if magic != FLOW_MAGIC:
            raise ValueError(f"{path}: bad flow magic {magic!r}")
        data = np.frombuffer(f.read(), dtype="<f4")
    if data.size != h * w * 2:
        raise ValueError(f"{path}: expected {h * w * 2} values, found {data.size}")
    return data.reshape(h, w, 2).astype(np.float32)


def read_flows(flow_dir: str, start: int = 0, count: int | None = None) -> np.ndarray:
    if not os.path.isdir(flow_dir):
        raise FileNotFoundError(f"flow directory not found: {flow_dir}")
    if count is None:
        count = 0
        while os.path.exists(frame_path(flow_dir, start + count, "flo2")):
            count += 1
    return np.stack([read_flow(frame_path(flow_dir, start + i, "flo2")) for i in range(count)])
