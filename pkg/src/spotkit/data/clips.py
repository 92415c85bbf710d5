"""Training clips: random sampling with padding, augmentation, mixup."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.ndimage import gaussian_filter

from ..core import DenseLabelSeq, SoftLabelSeq, SpotError


@dataclass
class Clip:
    frames: np.ndarray          # L x H x W x C, float32 in [0, 1] for RGB
    labels: SoftLabelSeq
    source: tuple[str, int]     # (video_id, start_frame)

    @property
    def mask(self) -> np.ndarray:
        return self.labels.mask

    def __len__(self):
        return len(self.frames)


@dataclass(frozen=True)
class AugmentConfig:
    crop_width: int | None = None   # None keeps the full width
    jitter_strength: float = 0.2
    blur_probability: float = 0.25
    mixup_alpha: float = 0.2

    def __post_init__(self):
        if not 0 <= self.blur_probability <= 1:
            raise SpotError("blur_probability must be in [0, 1]")
        if not 0 <= self.jitter_strength <= 1:
            raise SpotError("jitter_strength must be in [0, 1]")
        if self.mixup_alpha < 0:
            raise SpotError("mixup_alpha must be >= 0")


NO_AUGMENT = AugmentConfig(jitter_strength=0.0, blur_probability=0.0, mixup_alpha=0.0)


def as_float_frames(frames: np.ndarray) -> np.ndarray:
    if frames.dtype == np.uint8:
        return frames.astype(np.float32) / 255.0
    return frames.astype(np.float32, copy=False)


def sample_clip(video: np.ndarray, dense_labels: DenseLabelSeq, length: int,
                rng: np.random.Generator, video_id: str = "", num_classes: int | None = None) -> Clip:
    """Draw one clip of ``length`` frames uniformly from a video.

    Videos shorter than the clip are padded at the tail with black frames that
    are labeled background and masked out.
    """
    if length < 1:
        raise SpotError(f"clip length must be >= 1, got {length}")
    n = len(video)
    if len(dense_labels) != n:
        raise SpotError(f"{len(dense_labels)} labels for a {n}-frame video")
    if num_classes is None:
        num_classes = int(dense_labels.labels.max(initial=0))
    start = int(rng.integers(0, max(0, n - length) + 1))
    stop = min(n, start + length)
    frames = np.zeros((length,) + video.shape[1:], dtype=np.float32)
    frames[: stop - start] = as_float_frames(video[start:stop])
    labels = np.zeros(length, dtype=np.int64)
    labels[: stop - start] = dense_labels.labels[start:stop]
    mask = np.zeros(length, dtype=np.uint8)
    mask[: stop - start] = dense_labels.mask[start:stop]
    labels[mask == 0] = 0
    soft = DenseLabelSeq(labels, mask).to_soft(num_classes)
    return Clip(frames, soft, (video_id, start))


def _color_jitter(frames: np.ndarray, strength: float, rng: np.random.Generator) -> np.ndarray:
    brightness, contrast, saturation = rng.uniform(1 - strength, 1 + strength, size=3)
    out = frames * brightness
    mean = out.mean()
    out = (out - mean) * contrast + mean
    gray = out.mean(axis=-1, keepdims=True)
    out = (out - gray) * saturation + gray
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def augment(clip: Clip, config: AugmentConfig, rng: np.random.Generator) -> Clip:
    """Spatial and photometric augmentation, identical for every frame of the clip.

    Labels are untouched. Mixup is not applied here (see :func:`mixup`).
    """
    frames = clip.frames
    width = frames.shape[2]
    crop = width if config.crop_width is None else config.crop_width
    if crop > width:
        raise SpotError(f"crop width {crop} exceeds frame width {width}")
    if crop < width:
        x0 = int(rng.integers(0, width - crop + 1))
        frames = frames[:, :, x0:x0 + crop]
    if config.jitter_strength > 0 and frames.shape[-1] == 3:
        frames = _color_jitter(frames, config.jitter_strength, rng)
    if config.blur_probability > 0 and rng.random() < config.blur_probability:
        sigma = rng.uniform(0.1, 1.0)
        frames = gaussian_filter(frames, sigma=(0, sigma, sigma, 0), mode="nearest").astype(np.float32)
    return replace(clip, frames=np.ascontiguousarray(frames))


def mixup(clip_a: Clip, clip_b: Clip, lam: float) -> Clip:
    """Convex combination of two clips and their label distributions."""
    if clip_a.frames.shape != clip_b.frames.shape or clip_a.labels.dist.shape != clip_b.labels.dist.shape:
        raise SpotError("mixup needs clips of identical shape")
    if not 0 <= lam <= 1:
        raise SpotError(f"mixup weight must be in [0, 1], got {lam}")
    if lam == 1:
        return clip_a
    if lam == 0:
        return clip_b
    frames = (lam * clip_a.frames + (1 - lam) * clip_b.frames).astype(clip_a.frames.dtype)
    mask = clip_a.mask & clip_b.mask
    dist = lam * clip_a.labels.dist + (1 - lam) * clip_b.labels.dist
    # rows masked out of either clip carry no supervision
    dist[mask == 0] = 0.0
    dist[mask == 0, 0] = 1.0
    return Clip(frames, SoftLabelSeq(dist, mask), clip_a.source)
