"""Domain types and label utilities shared across the pipeline.

Class id 0 is background; foreground classes are 1..K.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

BACKGROUND = 0


class SpotError(ValueError):
    """Invalid input to one of the pipeline operations."""


@dataclass(frozen=True)
class EventClassTable:
    names: tuple[str, ...]

    def __post_init__(self):
        names = tuple(self.names)
        object.__setattr__(self, "names", names)
        if not names:
            raise SpotError("class table needs at least one class")
        if any(not isinstance(n, str) or not n for n in names):
            raise SpotError("class names must be non-empty strings")
        if len(set(names)) != len(names):
            raise SpotError(f"duplicate class names in {list(names)}")

    @property
    def num_classes(self) -> int:
        return len(self.names)

    def name_of(self, class_id: int) -> str:
        if not 1 <= class_id <= len(self.names):
            raise SpotError(f"unknown class id {class_id}")
        return self.names[class_id - 1]

    def __len__(self):
        return len(self.names)


@dataclass(frozen=True)
class VideoMeta:
    id: str
    fps: float
    num_frames: int
    frame_source: str = ""
    flow_source: str | None = None

    def __post_init__(self):
        if not self.id:
            raise SpotError("video id must be non-empty")
        if not self.fps > 0:
            raise SpotError(f"video {self.id!r}: fps must be > 0, got {self.fps}")
        if int(self.num_frames) != self.num_frames or self.num_frames < 1:
            raise SpotError(f"video {self.id!r}: num_frames must be an integer >= 1")


@dataclass(frozen=True, order=True)
class EventLabel:
    video_id: str
    frame: int
    class_id: int


@dataclass(frozen=True)
class SpotPrediction:
    video_id: str
    frame: int
    class_id: int
    score: float

    def sort_key(self):
        # global tie ordering: score desc, frame asc, class asc (video last for determinism)
        return (-self.score, self.frame, self.class_id, self.video_id)


@dataclass
class DenseLabelSeq:
    labels: np.ndarray
    mask: np.ndarray = field(default=None)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.mask is None:
            self.mask = np.ones(len(self.labels), dtype=np.uint8)
        self.mask = np.asarray(self.mask, dtype=np.uint8)
        if self.labels.ndim != 1 or self.mask.shape != self.labels.shape:
            raise SpotError("labels and mask must be 1-D arrays of equal length")
        if np.any(self.labels[self.mask == 0] != BACKGROUND):
            raise SpotError("masked-out frames must be labeled background")

    def __len__(self):
        return len(self.labels)

    def events(self) -> list[tuple[int, int]]:
        """(frame, class) pairs of the non-background frames."""
        idx = np.flatnonzero(self.labels)
        return [(int(t), int(self.labels[t])) for t in idx]

    def to_soft(self, num_classes: int) -> "SoftLabelSeq":
        dist = np.zeros((len(self.labels), num_classes + 1))
        dist[np.arange(len(self.labels)), self.labels] = 1.0
        return SoftLabelSeq(dist, self.mask.copy())


@dataclass
class SoftLabelSeq:
    dist: np.ndarray
    mask: np.ndarray = field(default=None)

    def __post_init__(self):
        self.dist = np.asarray(self.dist, dtype=np.float64)
        if self.dist.ndim != 2:
            raise SpotError("label distribution must be an N x (K+1) matrix")
        if self.mask is None:
            self.mask = np.ones(len(self.dist), dtype=np.uint8)
        self.mask = np.asarray(self.mask, dtype=np.uint8)
        if self.mask.shape != (len(self.dist),):
            raise SpotError("mask length does not match label length")

    def __len__(self):
        return len(self.dist)

    def check(self, atol: float = 1e-6) -> None:
        if np.any(self.dist < 0) or np.any(self.dist > 1):
            raise SpotError("label probabilities must lie in [0, 1]")
        sums = self.dist[self.mask == 1].sum(axis=1)
        if not np.allclose(sums, 1.0, atol=atol, rtol=0):
            raise SpotError("masked-in label rows must sum to 1")


@dataclass
class ScoreSeq:
    scores: np.ndarray

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.scores.ndim != 2 or self.scores.shape[1] < 2:
            raise SpotError("scores must be an N x (K+1) matrix with K >= 1")

    def __len__(self):
        return len(self.scores)

    @property
    def num_classes(self) -> int:
        return self.scores.shape[1] - 1

    def check(self, atol: float = 1e-5) -> None:
        if np.any(self.scores < -atol) or np.any(self.scores > 1 + atol):
            raise SpotError("scores must lie in [0, 1]")
        if not np.allclose(self.scores.sum(axis=1), 1.0, atol=atol, rtol=0):
            raise SpotError("score rows must sum to 1")


def densify(events: Sequence, num_frames: int, num_classes: int) -> DenseLabelSeq:
    """Place sparse events on a per-frame label array.

    ``events`` holds :class:`EventLabel` objects or ``(frame, class_id)`` pairs.
    """
    labels = np.zeros(num_frames, dtype=np.int64)
    seen = set()
    for ev in events:
        frame, cls = (ev.frame, ev.class_id) if isinstance(ev, EventLabel) else ev
        if not 0 <= frame < num_frames:
            raise SpotError(f"event out of range: frame {frame} not in [0, {num_frames})")
        if not 1 <= cls <= num_classes:
            raise SpotError(f"unknown class id {cls} at frame {frame}")
        if frame in seen:
            raise SpotError(f"duplicate event frame {frame}")
        seen.add(frame)
        labels[frame] = cls
    return DenseLabelSeq(labels)


def dilate(dense: DenseLabelSeq, radius: int) -> DenseLabelSeq:
    """Spread each event label onto background frames within ``radius``.

    Original event frames keep their label. A background frame reachable from
    several events takes the nearest one; equidistant ties go to the earlier event.
    """
    if radius < 0:
        raise SpotError(f"dilation radius must be >= 0, got {radius}")
    labels = dense.labels
    out = labels.copy()
    if radius == 0:
        return DenseLabelSeq(out, dense.mask.copy())
    n = len(labels)
    best_dist = np.full(n, radius + 1)
    # events are visited in increasing frame order, so strict '<' keeps the earlier one on ties
    for t in np.flatnonzero(labels):
        lo, hi = max(0, t - radius), min(n, t + radius + 1)
        for s in range(lo, hi):
            if labels[s] != BACKGROUND or dense.mask[s] == 0:
                continue
            d = abs(s - t)
            if d < best_dist[s]:
                best_dist[s] = d
                out[s] = labels[t]
    return DenseLabelSeq(out, dense.mask.copy())


def class_weights(num_classes: int, fg_weight: float) -> np.ndarray:
    if num_classes < 1:
        raise SpotError("need at least one foreground class")
    if not fg_weight > 0:
        raise SpotError(f"foreground weight must be > 0, got {fg_weight}")
    w = np.full(num_classes + 1, float(fg_weight))
    w[BACKGROUND] = 1.0
    return w
