"""Whole-video prediction: overlapping windows, score averaging, candidates, NMS."""
from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
import torch

from .core import ScoreSeq, SpotError, SpotPrediction
from .data.clips import as_float_frames


@dataclass(frozen=True)
class WindowPlan:
    starts: tuple[int, ...]
    length: int


def plan_windows(num_frames: int, length: int) -> WindowPlan:
    """Clip starts at a stride of half the clip, plus a final start clamped to ``N - L``."""
    if length < 2 or length % 2:
        raise SpotError(f"clip length must be even and >= 2, got {length}")
    stride = length // 2
    starts = []
    s = 0
    while s + length <= num_frames:
        starts.append(s)
        s += stride
    if not starts:
        return WindowPlan((0,), length)
    if starts[-1] + length < num_frames:
        starts.append(max(0, num_frames - length))
    return WindowPlan(tuple(starts), length)


def average_scores(window_scores: Sequence[tuple[int, ScoreSeq]], num_frames: int) -> ScoreSeq:
    """Mean of the rows each frame receives from the windows covering it.

    Rows past the end of the video (padding) are ignored.
    """
    if not window_scores:
        raise SpotError("no windows to average")
    width = window_scores[0][1].scores.shape[1]
    total = np.zeros((num_frames, width))
    count = np.zeros(num_frames)
    for start, seq in window_scores:
        rows = seq.scores
        stop = min(num_frames, start + len(rows))
        if stop <= start:
            continue
        total[start:stop] += rows[: stop - start]
        count[start:stop] += 1
    if np.any(count == 0):
        raise SpotError(f"frame {int(np.flatnonzero(count == 0)[0])} is not covered by any window")
    return ScoreSeq(total / count[:, None])


def _window_frames(frames: np.ndarray, start: int, length: int) -> np.ndarray:
    clip = frames[start:start + length]
    if len(clip) < length:
        pad = np.zeros((length - len(clip),) + frames.shape[1:], dtype=clip.dtype)
        clip = np.concatenate([clip, pad])
    return clip


@torch.no_grad()
def predict_video(model, frames: np.ndarray, clip_len: int, batch_windows: int = 4) -> ScoreSeq:
    """Dense per-frame probabilities for a whole video (N x H x W x C)."""
    plan = plan_windows(len(frames), clip_len)
    if frames.dtype == np.uint8:
        frames = as_float_frames(frames)
    was_training = model.training
    model.eval()
    dtype = next(model.parameters()).dtype
    results = []
    try:
        for i in range(0, len(plan.starts), batch_windows):
            starts = plan.starts[i:i + batch_windows]
            batch = np.stack([_window_frames(frames, s, clip_len) for s in starts])
            x = torch.from_numpy(batch).permute(0, 1, 4, 2, 3).to(dtype)
            probs = torch.softmax(model(x).double(), dim=-1).numpy()
            results.extend((s, ScoreSeq(p)) for s, p in zip(starts, probs))
    finally:
        model.train(was_training)
    return average_scores(results, len(frames))


def strided_window_features(backbone, frames: np.ndarray, window: int = 7) -> torch.Tensor:
    """Baseline extractor: one ``window``-frame clip per output frame, keeping the
    centre row. Costs ``window`` backbone frame evaluations per frame."""
    if frames.dtype == np.uint8:
        frames = as_float_frames(frames)
    n = len(frames)
    half = window // 2
    padded = np.concatenate([np.zeros((half,) + frames.shape[1:], np.float32), frames,
                             np.zeros((window - 1 - half,) + frames.shape[1:], np.float32)])
    rows = []
    with torch.no_grad():
        for t in range(n):
            x = torch.from_numpy(padded[t:t + window]).permute(0, 3, 1, 2).unsqueeze(0)
            rows.append(backbone(x)[0, half])
    return torch.stack(rows)


def scores_to_predictions(scores: ScoreSeq, video_id: str, min_score: float = 0.0) -> list[SpotPrediction]:
    """One candidate per (frame, foreground class), in the global tie ordering."""
    s = scores.scores
    frames, classes = np.nonzero(s[:, 1:] >= min_score)
    preds = [SpotPrediction(video_id, int(t), int(c) + 1, float(s[t, c + 1]))
             for t, c in zip(frames, classes)]
    preds.sort(key=SpotPrediction.sort_key)
    return preds


def nms(preds: Iterable[SpotPrediction], window: int) -> list[SpotPrediction]:
    """Greedy per-class suppression of candidates within ``window`` frames of a kept one."""
    if window < 0:
        raise SpotError(f"NMS window must be >= 0, got {window}")
    kept = []
    taken = defaultdict(set)   # (video, class) -> kept frames
    for p in sorted(preds, key=SpotPrediction.sort_key):
        frames = taken[(p.video_id, p.class_id)]
        if any(f in frames for f in range(p.frame - window, p.frame + window + 1)):
            continue
        frames.add(p.frame)
        kept.append(p)
    return kept


def ensemble(scores_a: ScoreSeq, scores_b: ScoreSeq) -> ScoreSeq:
    if scores_a.scores.shape != scores_b.scores.shape:
        raise SpotError(f"cannot ensemble scores of shapes {scores_a.scores.shape} and {scores_b.scores.shape}")
    return ScoreSeq((scores_a.scores + scores_b.scores) / 2)


def preprocess_flow(flow: np.ndarray, limit: float = 20.0) -> np.ndarray:
    """Subtract each frame's per-channel median, then clamp to [-limit, limit]."""
    flow = np.asarray(flow, dtype=np.float32)
    if flow.ndim != 4 or flow.shape[-1] != 2:
        raise SpotError(f"flow must be L x H x W x 2, got {flow.shape}")
    median = np.median(flow, axis=(1, 2), keepdims=True)
    return np.clip(flow - median, -limit, limit)


def format_prediction(p: SpotPrediction) -> str:
    return (f'{{"video": {json.dumps(p.video_id)}, "frame": {p.frame}, '
            f'"class": {p.class_id}, "score": {p.score:.6f}}}')


def write_predictions(preds: Iterable[SpotPrediction], path: str) -> None:
    """One JSON record per line, sorted by the global tie ordering."""
    with open(path, "w") as f:
        for p in sorted(preds, key=SpotPrediction.sort_key):
            f.write(format_prediction(p) + "\n")


def read_predictions(path: str) -> list[SpotPrediction]:
    preds = []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                preds.append(SpotPrediction(str(rec["video"]), int(rec["frame"]),
                                            int(rec["class"]), float(rec["score"])))
            except (ValueError, KeyError, TypeError) as e:
                raise SpotError(f"{path}:{lineno}: bad prediction record ({e})") from None
    return preds


def coverage(num_frames: int, clip_len: int) -> float:
    """Backbone frame evaluations per video frame under the window plan."""
    plan = plan_windows(num_frames, clip_len)
    return len(plan.starts) * clip_len / num_frames

