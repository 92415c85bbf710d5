"""Per-frame weighted cross-entropy training with cycle-level model selection."""
from __future__ import annotations

import copy
import json
import logging
import math
import os
from collections import Counter
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import torch

from .core import SpotError, class_weights, dilate
from .data.clips import AugmentConfig, Clip, augment, mixup, sample_clip
from .data.frames import read_flows, read_frames
from .data.manifest import DatasetManifest
from .evaluation import map_at_deltas
from .inference import predict_video, preprocess_flow, scores_to_predictions
from .model.checkpoint import Checkpoint
from .model.network import SpotModel

log = logging.getLogger(__name__)

# incremented whenever a clip without any valid frame reaches the loss
loss_warnings: Counter = Counter()


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, value: float):
        super().__init__(f"non-finite loss {value} at step {step}")
        self.step = step


@dataclass(frozen=True)
class TrainConfig:
    clip_len: int = 100
    batch_clips: int = 8
    steps_per_cycle: int = 625
    num_cycles: int = 50
    base_lr: float = 1e-3
    warmup_cycles: int = 3
    weight_decay: float = 1e-4
    fg_weight: float = 5.0
    mixup_alpha: float = 0.2
    jitter_strength: float = 0.2
    blur_probability: float = 0.25
    crop_width: int | None = None
    dilate_radius: int = 0
    val_clip_len: int | None = None     # defaults to clip_len (rounded up to even)
    seed: int = 0
    deterministic: bool = False

    def __post_init__(self):
        for name in ("clip_len", "batch_clips", "steps_per_cycle", "num_cycles"):
            if getattr(self, name) < 1:
                raise SpotError(f"{name} must be >= 1")
        if not self.base_lr > 0:
            raise SpotError("base_lr must be > 0")
        if not 0 <= self.warmup_cycles < self.num_cycles:
            raise SpotError("warmup_cycles must be in [0, num_cycles)")
        if self.dilate_radius < 0:
            raise SpotError("dilate_radius must be >= 0")
        if not self.fg_weight > 0:
            raise SpotError("fg_weight must be > 0")

    @property
    def total_steps(self) -> int:
        return self.num_cycles * self.steps_per_cycle

    def augment_config(self) -> AugmentConfig:
        return AugmentConfig(self.crop_width, self.jitter_strength, self.blur_probability, self.mixup_alpha)

    def to_dict(self) -> dict:
        return asdict(self)


def per_frame_loss(logits: torch.Tensor, dist: torch.Tensor, mask: torch.Tensor,
                   weights: torch.Tensor) -> torch.Tensor:
    """Weighted cross-entropy summed over valid frames.

    ``logits`` and ``dist`` are (L, K+1) or (B, L, K+1); batched input gives the
    mean over clips of the per-clip sums. A frame's weight is the class weight
    averaged under its target distribution.
    """
    batched = logits.ndim == 3
    if not batched:
        logits, dist, mask = logits[None], dist[None], mask[None]
    if logits.shape != dist.shape or mask.shape != logits.shape[:2]:
        raise SpotError(f"shape mismatch: logits {tuple(logits.shape)}, targets {tuple(dist.shape)}, "
                        f"mask {tuple(mask.shape)}")
    dist = dist.to(logits.dtype)
    mask = mask.to(logits.dtype)
    weights = torch.as_tensor(weights, dtype=logits.dtype)
    ce = -(dist * torch.log_softmax(logits, dim=-1)).sum(-1)
    frame_w = (dist * weights).sum(-1)
    per_clip = (ce * frame_w * mask).sum(-1)
    empty = int((mask.sum(-1) == 0).sum())
    if empty:
        loss_warnings["all_masked_clip"] += empty
    return per_clip.mean() if batched else per_clip[0]


def lr_at_step(step: int, config: TrainConfig) -> float:
    """Linear warmup over ``warmup_cycles`` then cosine decay to zero."""
    total = config.total_steps
    if not 0 <= step < total:
        raise SpotError(f"step {step} outside [0, {total})")
    warm = config.warmup_cycles * config.steps_per_cycle
    if step < warm:
        return config.base_lr * (step + 1) / warm
    return config.base_lr * 0.5 * (1 + math.cos(math.pi * (step - warm) / (total - warm)))


def _param_groups(model: SpotModel, weight_decay: float):
    decay, no_decay = [], []
    for module in model.modules():
        for name, p in module.named_parameters(recurse=False):
            skip = (isinstance(module, (torch.nn.GRU, torch.nn.BatchNorm2d))
                    or name.endswith("bias"))
            (no_decay if skip else decay).append(p)
    return [{"params": decay, "weight_decay": weight_decay},
            {"params": no_decay, "weight_decay": 0.0}]


def load_video(manifest: DatasetManifest, video, modality: str = "rgb") -> np.ndarray:
    """Whole video as uint8 RGB frames, or preprocessed float32 flow."""
    if modality == "flow":
        flow_dir = manifest.flow_dir(video)
        if flow_dir is None:
            raise SpotError(f"video {video.id!r} has no flow directory")
        return preprocess_flow(read_flows(flow_dir, 0, video.num_frames))
    return read_frames(manifest.frame_dir(video), 0, video.num_frames)


class ClipSampler:
    """Random training batches drawn from in-memory videos."""

    def __init__(self, videos: list[np.ndarray], labels: list, num_classes: int,
                 config: TrainConfig, rng: np.random.Generator, ids=None):
        if not videos:
            raise SpotError("empty training split")
        self.videos = videos
        self.labels = labels
        self.ids = ids or [str(i) for i in range(len(videos))]
        self.num_classes = num_classes
        self.config = config
        self.aug = config.augment_config()
        self.rng = rng

    def _one(self) -> Clip:
        i = int(self.rng.integers(len(self.videos)))
        clip = sample_clip(self.videos[i], self.labels[i], self.config.clip_len, self.rng,
                           self.ids[i], self.num_classes)
        return augment(clip, self.aug, self.rng)

    def batch(self):
        clips = [self._one() for _ in range(self.config.batch_clips)]
        if self.aug.mixup_alpha > 0 and len(clips) > 1:
            # partners come from the same batch, shuffled
            partners = self.rng.permutation(len(clips))
            lams = self.rng.beta(self.aug.mixup_alpha, self.aug.mixup_alpha, size=len(clips))
            clips = [mixup(c, clips[j], float(lam)) for c, j, lam in zip(clips, partners, lams)]
        frames = torch.from_numpy(np.stack([c.frames for c in clips])).permute(0, 1, 4, 2, 3)
        dist = torch.from_numpy(np.stack([c.labels.dist for c in clips]))
        mask = torch.from_numpy(np.stack([c.mask for c in clips]))
        return frames.contiguous(), dist, mask


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    log: list[dict]
    final_model: SpotModel = field(repr=False, default=None)

    @property
    def best_val_map(self) -> float:
        return self.checkpoint.metadata.get("best_val_mAP")


def evaluate_map(model: SpotModel, manifest: DatasetManifest, videos, frames_by_id: dict,
                 clip_len: int, delta: int = 1) -> float:
    """mAP@delta of the model on the given videos, without NMS."""
    preds = []
    for v in videos:
        scores = predict_video(model, frames_by_id[v.id], clip_len)
        preds.extend(scores_to_predictions(scores, v.id))
    report = map_at_deltas(preds, manifest, (delta,), videos=[v.id for v in videos])
    return report.mAP[delta] or 0.0


def _even(n: int) -> int:
    return max(2, n + (n % 2))


def seed_everything(seed: int, deterministic: bool) -> None:
    torch.manual_seed(seed)
    if deterministic:
        torch.use_deterministic_algorithms(True)


def train(manifest: DatasetManifest, model: SpotModel, config: TrainConfig,
          log_path: str | None = None, progress=None, frames: dict | None = None) -> TrainResult:
    """Train ``model`` in place; returns the checkpoint with the best val mAP@1.

    One cycle is ``steps_per_cycle`` AdamW steps; validation runs after each
    cycle. ``log_path`` receives one JSON record per cycle. ``frames`` maps
    video ids to in-memory frame arrays; videos missing from it are read from disk.
    """
    seed_everything(config.seed, config.deterministic)
    rng = np.random.default_rng(config.seed)
    modality = model.backbone_config.modality
    train_videos = manifest.videos_in("train")
    val_videos = manifest.videos_in("val")
    if not train_videos:
        raise SpotError("empty train split")
    if not val_videos:
        raise SpotError("manifest has no val split for model selection")
    frames = dict(frames or {})
    for v in train_videos + val_videos:
        if v.id not in frames:
            frames[v.id] = load_video(manifest, v, modality)
    labels = [dilate(manifest.dense_labels(v.id), config.dilate_radius) for v in train_videos]
    sampler = ClipSampler([frames[v.id] for v in train_videos], labels, manifest.num_classes,
                          config, rng, [v.id for v in train_videos])
    if model.num_classes != manifest.num_classes:
        raise SpotError(f"model predicts {model.num_classes} classes, manifest has {manifest.num_classes}")
    dtype = next(model.parameters()).dtype
    weights = torch.as_tensor(class_weights(manifest.num_classes, config.fg_weight), dtype=dtype)
    optimizer = torch.optim.AdamW(_param_groups(model, config.weight_decay), lr=config.base_lr)
    val_len = _even(config.val_clip_len or config.clip_len)

    rows, best_map, best_state, best_cycle = [], -1.0, None, -1
    step = 0
    if log_path:
        open(log_path, "w").close()
    for cycle in range(config.num_cycles):
        model.train()
        losses = []
        for _ in range(config.steps_per_cycle):
            lr = lr_at_step(step, config)
            for group in optimizer.param_groups:
                group["lr"] = lr
            x, dist, mask = sampler.batch()
            loss = per_frame_loss(model(x.to(dtype)), dist, mask, weights)
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingDiverged(step, value)
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            optimizer.step()
            losses.append(value)
            step += 1
        val_map = evaluate_map(model, manifest, val_videos, frames, val_len)
        row = {"cycle": cycle, "mean_loss": float(np.mean(losses)), "lr": lr, "val_mAP@1": val_map}
        rows.append(row)
        if log_path:
            with open(log_path, "a") as f:
                f.write(json.dumps(row, sort_keys=True) + "\n")
        if progress is not None:
            progress(row)
        log.info("cycle %d loss %.4f lr %.2e val mAP@1 %.4f", cycle, row["mean_loss"], lr, val_map)
        if val_map > best_map:
            best_map, best_cycle = val_map, cycle
            best_state = copy.deepcopy(model.state_dict())
    final_model = model
    best_model = copy.deepcopy(model)
    best_model.load_state_dict(best_state)
    meta = {"cycle": best_cycle, "best_val_mAP": best_map, "train_config": config.to_dict()}
    return TrainResult(Checkpoint.from_model(best_model, meta), rows, final_model)


class _KinkWatch:
    """Records the on/off pattern of every ReLU module during a forward pass."""

    def __init__(self, model: torch.nn.Module):
        self.patterns: list[torch.Tensor] = []
        self.handles = [m.register_forward_hook(self._hook) for m in model.modules()
                        if isinstance(m, torch.nn.ReLU)]

    def _hook(self, module, inputs, output):
        self.patterns.append(output > 0)

    def take(self) -> list[torch.Tensor]:
        out, self.patterns = self.patterns, []
        return out

    def close(self):
        for h in self.handles:
            h.remove()


def finite_difference_check(model: SpotModel, frames: torch.Tensor, dist: torch.Tensor,
                            mask: torch.Tensor | None = None, weights=None, epsilon: float = 1e-5,
                            num_samples: int = 200, seed: int = 0, stats: dict | None = None) -> float:
    """Largest relative error between autograd and central differences of the loss.

    ``num_samples`` parameters are drawn at random across all tensors. The
    model is evaluated in inference mode so normalization layers are fixed.
    Relative error is ``|a - n| / max(|a|, |n|, 1e-8 + 1e-3 * g)`` where ``g``
    is the largest sampled gradient magnitude, so near-zero entries are compared
    on the scale of the gradient rather than against themselves.

    A central difference is only meaningful where the loss is smooth on the
    stencil. When any ReLU changes state between the two evaluations the sample
    is discarded and another is drawn; ``stats["kinks"]`` counts the discards.
    """
    if not epsilon > 0:
        raise SpotError("epsilon must be > 0")
    if frames.ndim == 4:
        frames, dist = frames[None], dist[None]
        mask = None if mask is None else mask[None]
    if mask is None:
        mask = torch.ones(dist.shape[:2])
    if weights is None:
        weights = torch.ones(dist.shape[-1])
    model.eval()
    params = [p for p in model.parameters() if p.requires_grad]

    def loss_fn():
        return per_frame_loss(model(frames), dist, mask, weights)

    model.zero_grad()
    loss_fn().backward()
    sizes = np.array([p.numel() for p in params])
    bounds = np.cumsum(sizes)
    order = np.random.default_rng(seed).permutation(int(sizes.sum()))
    analytic, numeric, kinks = [], [], 0
    watch = _KinkWatch(model)
    try:
        with torch.no_grad():
            for f in order:
                if len(analytic) == num_samples:
                    break
                k = int(np.searchsorted(bounds, f, side="right"))
                p = params[k]
                pos = tuple(int(i) for i in np.unravel_index(int(f - (bounds[k] - sizes[k])), p.shape))
                orig = p[pos].item()
                p[pos] = orig + epsilon
                up = loss_fn().item()
                up_pattern = watch.take()
                p[pos] = orig - epsilon
                down = loss_fn().item()
                down_pattern = watch.take()
                p[pos] = orig
                if any(not torch.equal(a, b) for a, b in zip(up_pattern, down_pattern)):
                    kinks += 1
                    continue
                analytic.append(p.grad[pos].item())
                numeric.append((up - down) / (2 * epsilon))
    finally:
        watch.close()
    if stats is not None:
        stats.update(kinks=kinks, samples=len(analytic))
    a, n = np.array(analytic), np.array(numeric)
    floor = 1e-8 + 1e-3 * np.abs(a).max()
    return float(np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)))
