"""scikit-learn style wrapper: videos in, per-frame labels and event spots out."""
from __future__ import annotations

import numpy as np
import torch
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .core import DenseLabelSeq, EventClassTable, EventLabel, ScoreSeq, SpotError, SpotPrediction, VideoMeta
from .data.manifest import DatasetManifest
from .evaluation import map_at_deltas
from .inference import nms, predict_video, scores_to_predictions
from .model import BackboneConfig, HeadConfig, SpotModel
from .model.backbone import DEFAULT_STAGES
from .training import TrainConfig, train


def check_video(video, modality: str = "rgb") -> np.ndarray:
    """Validate one video: N x H x W x C, uint8 or float RGB (C=3) or float flow (C=2)."""
    arr = np.asarray(video)
    channels = 3 if modality == "rgb" else 2
    if arr.ndim != 4 or arr.shape[-1] != channels:
        raise SpotError(f"expected a video of shape (frames, height, width, {channels}), got {arr.shape}")
    if arr.shape[0] < 1:
        raise SpotError("video has no frames")
    if arr.dtype != np.uint8 and not np.issubdtype(arr.dtype, np.floating):
        raise SpotError(f"video dtype must be uint8 or float, got {arr.dtype}")
    if np.issubdtype(arr.dtype, np.floating) and not np.isfinite(arr).all():
        raise SpotError("video contains non-finite values")
    return arr


def check_labels(labels, num_frames: int, num_classes: int | None = None) -> np.ndarray:
    """Validate a dense per-frame label vector (0 = background)."""
    arr = np.asarray(labels)
    if arr.ndim != 1 or len(arr) != num_frames:
        raise SpotError(f"labels must be a vector of length {num_frames}, got shape {arr.shape}")
    if not np.issubdtype(arr.dtype, np.integer):
        if not np.all(np.mod(arr, 1) == 0):
            raise SpotError("labels must be integers")
        arr = arr.astype(np.int64)
    if arr.min(initial=0) < 0 or (num_classes is not None and arr.max(initial=0) > num_classes):
        raise SpotError(f"labels must lie in [0, {num_classes}]")
    return arr


def check_videos(X, y=None, modality: str = "rgb", num_classes: int | None = None):
    if isinstance(X, np.ndarray) and X.ndim == 4:
        X = [X]
        y = None if y is None else [y]
    videos = [check_video(v, modality) for v in X]
    if not videos:
        raise SpotError("no videos given")
    if len({v.shape[1:] for v in videos}) > 1:
        raise SpotError("all videos must share one frame size")
    if y is None:
        return videos
    if len(y) != len(videos):
        raise SpotError(f"{len(videos)} videos but {len(y)} label vectors")
    return videos, [check_labels(l, len(v), num_classes) for v, l in zip(videos, y)]


class E2ESpotter(BaseEstimator):
    """End-to-end frame-level event spotter.

    ``X`` is a list of videos (frames x H x W x 3); ``y`` a list of per-frame
    integer labels with 0 for background and 1..K for events.
    """

    def __init__(self, num_classes=None, shift="gsm", head="bigru", stages=DEFAULT_STAGES, clip_len=100,
                 batch_clips=8, steps_per_cycle=625, num_cycles=50, lr=1e-3, warmup_cycles=3,
                 fg_weight=5.0, dilate_radius=0, mixup_alpha=0.2, validation_fraction=0.2,
                 nms_window=1, delta=1, seed=0, deterministic=False):
        self.num_classes = num_classes
        self.shift = shift
        self.head = head
        self.stages = stages
        self.clip_len = clip_len
        self.batch_clips = batch_clips
        self.steps_per_cycle = steps_per_cycle
        self.num_cycles = num_cycles
        self.lr = lr
        self.warmup_cycles = warmup_cycles
        self.fg_weight = fg_weight
        self.dilate_radius = dilate_radius
        self.mixup_alpha = mixup_alpha
        self.validation_fraction = validation_fraction
        self.nms_window = nms_window
        self.delta = delta
        self.seed = seed
        self.deterministic = deterministic

    def _train_config(self) -> TrainConfig:
        return TrainConfig(clip_len=self.clip_len, batch_clips=self.batch_clips,
                           steps_per_cycle=self.steps_per_cycle, num_cycles=self.num_cycles, base_lr=self.lr,
                           warmup_cycles=self.warmup_cycles, fg_weight=self.fg_weight,
                           dilate_radius=self.dilate_radius, mixup_alpha=self.mixup_alpha, seed=self.seed,
                           deterministic=self.deterministic)

    def fit(self, X, y):
        videos, labels = check_videos(X, y, num_classes=self.num_classes)
        k = self.num_classes or int(max(l.max(initial=0) for l in labels))
        if k < 1:
            raise SpotError("labels contain no events and num_classes is not set")
        config = self._train_config()
        n_val = int(round(len(videos) * self.validation_fraction))
        n_val = min(max(n_val, 0), len(videos) - 1)
        order = np.random.default_rng(self.seed).permutation(len(videos))
        val_idx = set(order[:n_val].tolist())
        metas, events, split, frames = [], [], {}, {}

        def add(vid, i, part):
            metas.append(VideoMeta(vid, 25.0, len(videos[i])))
            events.extend(EventLabel(vid, f, c) for f, c in DenseLabelSeq(labels[i]).events())
            split[vid] = part
            frames[vid] = videos[i]

        for i in range(len(videos)):
            add(f"v{i}", i, "val" if i in val_idx else "train")
        if not val_idx:
            # nothing held out: select on the training videos themselves
            for i in range(len(videos)):
                add(f"v{i}:val", i, "val")
        manifest = DatasetManifest(EventClassTable(tuple(f"class{c}" for c in range(1, k + 1))),
                                   metas, events, split)
        torch.manual_seed(self.seed)
        model = SpotModel(BackboneConfig(stages=self.stages, shift_mode=self.shift), HeadConfig(k, kind=self.head))
        result = train(manifest, model, config, frames=frames)
        self.model_ = result.checkpoint.build_model()
        self.history_ = result.log
        self.num_classes_ = k
        self.frame_shape_ = videos[0].shape[1:]
        return self

    def _eval_len(self) -> int:
        return self.clip_len + self.clip_len % 2

    def predict_proba(self, X) -> list[np.ndarray]:
        """Per-frame class probabilities, one (frames, K+1) array per video."""
        check_is_fitted(self, "model_")
        videos = check_videos(X)
        if videos[0].shape[1:] != self.frame_shape_:
            raise SpotError(f"frame size {videos[0].shape[1:]} differs from training {self.frame_shape_}")
        return [predict_video(self.model_, v, self._eval_len()).scores for v in videos]

    def predict(self, X) -> list[np.ndarray]:
        """Per-frame argmax labels."""
        return [p.argmax(axis=1) for p in self.predict_proba(X)]

    def spot(self, X, min_score: float = 0.0) -> list[list[SpotPrediction]]:
        """Ranked event candidates per video, after NMS when ``nms_window`` is set."""
        out = []
        for i, probs in enumerate(self.predict_proba(X)):
            preds = scores_to_predictions(ScoreSeq(probs), f"v{i}", min_score)
            out.append(preds if self.nms_window is None else nms(preds, self.nms_window))
        return out

    def score(self, X, y) -> float:
        """mAP at tolerance ``delta`` frames, without NMS."""
        check_is_fitted(self, "model_")
        videos, labels = check_videos(X, y, num_classes=self.num_classes_)
        metas = [VideoMeta(f"v{i}", 25.0, len(v)) for i, v in enumerate(videos)]
        events = [EventLabel(f"v{i}", f, c) for i, l in enumerate(labels) for f, c in DenseLabelSeq(l).events()]
        manifest = DatasetManifest(EventClassTable(tuple(f"class{c}" for c in range(1, self.num_classes_ + 1))),
                                   metas, events, {m.id: "test" for m in metas})
        preds = []
        for m, probs in zip(metas, self.predict_proba(videos)):
            preds.extend(scores_to_predictions(ScoreSeq(probs), m.id))
        return map_at_deltas(preds, manifest, (self.delta,), videos=[m.id for m in metas]).mAP[self.delta] or 0.0
