"""Precise-spotting metrics: AP within a frame tolerance, mAP, tolerance sweeps."""
from __future__ import annotations

import csv
import json
import math
import os
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .core import EventLabel, SpotError, SpotPrediction


def match_predictions(preds: Sequence[SpotPrediction], gts: Sequence, delta: int) -> list[bool]:
    """Greedy one-to-one matching for a single (video, class).

    Predictions are visited in order; each one claims the nearest unmatched
    ground-truth frame within ``delta`` (ties: the lower frame).
    """
    frames = sorted(g.frame if isinstance(g, EventLabel) else int(g) for g in gts)
    free = list(frames)
    flags = []
    for p in preds:
        best = None
        for i, f in enumerate(free):
            d = abs(f - p.frame)
            if d <= delta and (best is None or d < abs(free[best] - p.frame)):
                best = i
        if best is None:
            flags.append(False)
        else:
            free.pop(best)
            flags.append(True)
    return flags


def _ranked_flags(preds: Iterable[SpotPrediction], gts: Iterable[EventLabel], delta: int):
    """TP flags of all predictions of one class, in the global ordering."""
    preds = sorted(preds, key=SpotPrediction.sort_key)
    gt_by_video = defaultdict(list)
    for g in gts:
        gt_by_video[g.video_id].append(g.frame)
    by_video = defaultdict(list)
    for i, p in enumerate(preds):
        by_video[p.video_id].append(i)
    flags = np.zeros(len(preds), dtype=bool)
    for vid, idx in by_video.items():
        flags[idx] = match_predictions([preds[i] for i in idx], gt_by_video.get(vid, []), delta)
    return flags


def _precision_recall(flags: np.ndarray, num_gt: int):
    tp = np.cumsum(flags)
    ranks = np.arange(1, len(flags) + 1)
    precision = tp / ranks
    recall = tp / num_gt if num_gt else np.zeros(len(flags))
    return recall, precision


def _envelope(precision: np.ndarray) -> np.ndarray:
    """Precision at each rank replaced by the best precision at any later rank."""
    return np.maximum.accumulate(precision[::-1])[::-1] if len(precision) else precision


def average_precision(preds: Iterable[SpotPrediction], gts: Iterable[EventLabel], delta: int) -> float | None:
    """All-point interpolated AP of one class over all videos.

    Returns ``None`` when there are neither events nor predictions.
    """
    gts = list(gts)
    preds = list(preds)
    if not gts:
        return None if not preds else 0.0
    flags = _ranked_flags(preds, gts, delta)
    if not flags.any():
        return 0.0
    recall, precision = _precision_recall(flags, len(gts))
    interp = _envelope(precision)
    # each true positive raises recall by 1/num_gt
    return float(interp[flags].sum() / len(gts))


def pr_points(preds: Iterable[SpotPrediction], gts: Iterable[EventLabel], class_id: int | None = None,
              delta: int = 1) -> list[tuple[float, float, float]]:
    """(recall, precision, interpolated precision) at every rank."""
    preds = [p for p in preds if class_id is None or p.class_id == class_id]
    gts = [g for g in gts if class_id is None or g.class_id == class_id]
    if not preds:
        return []
    flags = _ranked_flags(preds, gts, delta)
    recall, precision = _precision_recall(flags, len(gts))
    suffix = _envelope(precision)
    # ranks sharing a recall value share the envelope of the first of them
    first = np.searchsorted(recall, recall, side="left")
    interp = suffix[first]
    return [(float(r), float(p), float(i)) for r, p, i in zip(recall, precision, interp)]


def write_pr_csv(points, path: str) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["recall", "precision", "interp_precision"])
        for r, p, i in points:
            w.writerow([f"{r:.6f}", f"{p:.6f}", f"{i:.6f}"])


@dataclass
class EvalReport:
    class_names: list[str]
    deltas: list[int]
    ap: dict            # delta -> {class name: AP or None}
    mAP: dict           # delta -> mean over classes with a defined AP
    num_events: dict    # class name -> count
    num_predictions: dict
    nms_window: int | None = None
    nms_applied: bool | None = None
    tolerances_sec: list = field(default_factory=list)
    average_map: float | None = None
    caveats: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "classes": self.class_names,
            "deltas": self.deltas,
            "mAP": {str(d): v for d, v in self.mAP.items()},
            "AP": {str(d): v for d, v in self.ap.items()},
            "num_events": self.num_events,
            "num_predictions": self.num_predictions,
            "matching": {"rule": "greedy by score, nearest unmatched event, one-to-one",
                         "interpolation": "all-point precision envelope"},
            "nms_applied": self.nms_applied,
            "nms_window": self.nms_window,
            "tolerances_sec": self.tolerances_sec,
            "average_mAP": self.average_map,
            "caveats": self.caveats,
        }

    def save(self, path: str) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")

    def table(self) -> str:
        head = "class".ljust(16) + "".join(f"AP@{d}".rjust(10) for d in self.deltas)
        lines = [head]
        for name in self.class_names:
            cells = []
            for d in self.deltas:
                v = self.ap[d][name]
                cells.append(("-" if v is None else f"{100 * v:.2f}").rjust(10))
            lines.append(name.ljust(16) + "".join(cells))
        lines.append("mAP".ljust(16) + "".join(
            ("-" if self.mAP[d] is None else f"{100 * self.mAP[d]:.2f}").rjust(10) for d in self.deltas))
        return "\n".join(lines)


def _check_predictions(preds, manifest):
    for p in preds:
        if not manifest.has_video(p.video_id):
            raise SpotError(f"prediction references unknown video {p.video_id!r} (frame {p.frame})")
        if not 1 <= p.class_id <= manifest.num_classes:
            raise SpotError(f"prediction for {p.video_id!r} frame {p.frame} has unknown class {p.class_id}")


def _default_videos(preds, manifest):
    splits = {manifest.split[p.video_id] for p in preds}
    return [v.id for v in manifest.videos if manifest.split[v.id] in splits]


def _mean(values):
    defined = [v for v in values if v is not None]
    return float(np.mean(defined)) if defined else None


def map_at_deltas(preds: Sequence[SpotPrediction], manifest, deltas=(1, 2), videos=None) -> EvalReport:
    """Per-class AP and mAP at each frame tolerance.

    ``videos`` restricts evaluation to those video ids; by default every video
    of each split the predictions touch is evaluated, so a video without any
    prediction still contributes its events.
    """
    preds = list(preds)
    _check_predictions(preds, manifest)
    videos = set(_default_videos(preds, manifest) if videos is None else videos)
    preds = [p for p in preds if p.video_id in videos]
    gts = [e for v in sorted(videos) for e in manifest.events_for(v)]
    names = list(manifest.class_table.names)
    by_class_p = defaultdict(list)
    for p in preds:
        by_class_p[p.class_id].append(p)
    by_class_g = defaultdict(list)
    for g in gts:
        by_class_g[g.class_id].append(g)
    ap, mean = {}, {}
    for d in deltas:
        ap[d] = {names[c - 1]: average_precision(by_class_p[c], by_class_g[c], d)
                 for c in range(1, len(names) + 1)}
        mean[d] = _mean(ap[d].values())
    caveats = []
    if 0 in deltas:
        caveats.append("delta=0 requires exact-frame agreement and is sensitive to annotation ambiguity")
    return EvalReport(names, list(deltas), ap, mean,
                      {names[c - 1]: len(by_class_g[c]) for c in range(1, len(names) + 1)},
                      {names[c - 1]: len(by_class_p[c]) for c in range(1, len(names) + 1)},
                      caveats=caveats)


def seconds_to_radius(fps: float, tolerance_sec: float) -> int:
    """Frame radius of a +-tolerance/2 second window, rounding half up."""
    return int(math.floor(fps * tolerance_sec / 2 + 0.5))


def average_map_seconds(preds: Sequence[SpotPrediction], manifest, tolerances_sec: Sequence[float],
                        videos=None) -> float:
    preds = list(preds)
    _check_predictions(preds, manifest)
    if videos is None:
        videos = _default_videos(preds, manifest)
    rates = {manifest.video(v).fps for v in videos}
    if len(rates) > 1:
        raise SpotError(f"videos have mixed frame rates {sorted(rates)}; evaluate them separately")
    if not tolerances_sec:
        raise SpotError("need at least one tolerance")
    fps = rates.pop() if rates else manifest.videos[0].fps
    radii = [seconds_to_radius(fps, t) for t in tolerances_sec]
    report = map_at_deltas(preds, manifest, sorted(set(radii)), videos=videos)
    values = [report.mAP[r] for r in radii]
    return float(np.mean([0.0 if v is None else v for v in values]))


def write_pr_curves(preds, manifest, deltas, out_dir: str, videos=None) -> list[str]:
    """One CSV per class per delta: ``<class>_delta<d>.csv``."""
    os.makedirs(out_dir, exist_ok=True)
    preds = list(preds)
    if videos is None:
        videos = _default_videos(preds, manifest)
    videos = set(videos)
    gts = [e for v in sorted(videos) for e in manifest.events_for(v)]
    paths = []
    for d in deltas:
        for c, name in enumerate(manifest.class_table.names, 1):
            path = os.path.join(out_dir, f"{name}_delta{d}.csv")
            write_pr_csv(pr_points([p for p in preds if p.video_id in videos], gts, c, d), path)
            paths.append(path)
    return paths
