"""Dataset manifest: classes, videos with splits, and sparse event labels."""
from __future__ import annotations

import json
import os
from collections import Counter, defaultdict
from dataclasses import dataclass, field

from ..core import DenseLabelSeq, EventClassTable, EventLabel, SpotError, VideoMeta, densify

SPLITS = ("train", "val", "test")


class ManifestError(SpotError):
    pass


@dataclass
class DatasetManifest:
    class_table: EventClassTable
    videos: list[VideoMeta]
    events: list[EventLabel]
    split: dict[str, str]
    root: str = "."
    _by_id: dict = field(default=None, repr=False)
    _events_by_video: dict = field(default=None, repr=False)

    def __post_init__(self):
        self._by_id = {}
        for v in self.videos:
            if v.id in self._by_id:
                raise ManifestError(f"duplicate video id {v.id!r}")
            self._by_id[v.id] = v
        grouped = defaultdict(list)
        for i, ev in enumerate(self.events):
            video = self._by_id.get(ev.video_id)
            if video is None:
                raise ManifestError(f"event #{i}: unknown video {ev.video_id!r}")
            if not 1 <= ev.class_id <= self.num_classes:
                raise ManifestError(f"event #{i} ({ev.video_id!r}, frame {ev.frame}): unknown class id {ev.class_id}")
            if not 0 <= ev.frame < video.num_frames:
                raise ManifestError(
                    f"event #{i} ({ev.video_id!r}): event out of range, frame {ev.frame} "
                    f"not in [0, {video.num_frames})")
            grouped[ev.video_id].append(ev)
        for vid, evs in grouped.items():
            dup = [f for f, n in Counter(e.frame for e in evs).items() if n > 1]
            if dup:
                raise ManifestError(f"video {vid!r}: duplicate event frame {min(dup)}")
            evs.sort(key=lambda e: e.frame)
        self._events_by_video = dict(grouped)
        for v in self.videos:
            if self.split.get(v.id) not in SPLITS:
                raise ManifestError(f"video {v.id!r}: split must be one of {SPLITS}")

    @property
    def num_classes(self) -> int:
        return self.class_table.num_classes

    def video(self, video_id: str) -> VideoMeta:
        try:
            return self._by_id[video_id]
        except KeyError:
            raise ManifestError(f"unknown video {video_id!r}") from None

    def has_video(self, video_id: str) -> bool:
        return video_id in self._by_id

    def videos_in(self, split: str) -> list[VideoMeta]:
        return [v for v in self.videos if self.split[v.id] == split]

    def events_for(self, video_id: str) -> list[EventLabel]:
        return list(self._events_by_video.get(video_id, ()))

    def dense_labels(self, video_id: str) -> DenseLabelSeq:
        v = self.video(video_id)
        return densify(self.events_for(video_id), v.num_frames, self.num_classes)

    def frame_dir(self, video: VideoMeta) -> str:
        return os.path.join(self.root, video.frame_source)

    def flow_dir(self, video: VideoMeta) -> str | None:
        if video.flow_source is None:
            return None
        return os.path.join(self.root, video.flow_source)

    def subset(self, split: str) -> "DatasetManifest":
        keep = {v.id for v in self.videos_in(split)}
        return DatasetManifest(
            self.class_table,
            [v for v in self.videos if v.id in keep],
            [e for e in self.events if e.video_id in keep],
            {k: s for k, s in self.split.items() if k in keep},
            self.root,
        )

    def to_dict(self) -> dict:
        videos = []
        for v in self.videos:
            rec = {"id": v.id, "fps": v.fps, "num_frames": v.num_frames,
                   "frame_dir": v.frame_source, "split": self.split[v.id]}
            if v.flow_source is not None:
                rec["flow_dir"] = v.flow_source
            videos.append(rec)
        return {
            "classes": list(self.class_table.names),
            "videos": videos,
            "events": [{"video": e.video_id, "frame": e.frame, "class": e.class_id} for e in self.events],
        }


def _require(rec, key, kind, where):
    if not isinstance(rec, dict) or key not in rec:
        raise ManifestError(f"{where}: missing field {key!r}")
    value = rec[key]
    if kind is int and (isinstance(value, bool) or not isinstance(value, int)):
        raise ManifestError(f"{where}: field {key!r} must be an integer")
    if kind is float and (isinstance(value, bool) or not isinstance(value, (int, float))):
        raise ManifestError(f"{where}: field {key!r} must be a number")
    if kind is str and not isinstance(value, str):
        raise ManifestError(f"{where}: field {key!r} must be a string")
    return value


def manifest_from_dict(doc: dict, root: str = ".") -> DatasetManifest:
    if not isinstance(doc, dict):
        raise ManifestError("manifest must be a JSON object")
    classes = doc.get("classes")
    if not isinstance(classes, list):
        raise ManifestError("manifest: field 'classes' must be a list of names")
    try:
        table = EventClassTable(tuple(classes))
    except SpotError as e:
        raise ManifestError(f"manifest classes: {e}") from None
    if not isinstance(doc.get("videos"), list) or not isinstance(doc.get("events", []), list):
        raise ManifestError("manifest: 'videos' and 'events' must be lists")
    videos, split = [], {}
    for i, rec in enumerate(doc["videos"]):
        where = f"video #{i}"
        vid = _require(rec, "id", str, where)
        where = f"video #{i} ({vid!r})"
        try:
            v = VideoMeta(vid, float(_require(rec, "fps", float, where)),
                          _require(rec, "num_frames", int, where),
                          _require(rec, "frame_dir", str, where),
                          rec.get("flow_dir"))
        except ManifestError:
            raise
        except SpotError as e:
            raise ManifestError(f"{where}: {e}") from None
        if vid in split:
            raise ManifestError(f"duplicate video id {vid!r}")
        split[vid] = _require(rec, "split", str, where)
        videos.append(v)
    events = []
    for i, rec in enumerate(doc.get("events", [])):
        where = f"event #{i}"
        events.append(EventLabel(_require(rec, "video", str, where),
                                 _require(rec, "frame", int, where),
                                 _require(rec, "class", int, where)))
    return DatasetManifest(table, videos, events, split, root)


def load_manifest(path: str) -> DatasetManifest:
    try:
        with open(path) as f:
            doc = json.load(f)
    except FileNotFoundError:
        raise ManifestError(f"manifest not found: {path}") from None
    except json.JSONDecodeError as e:
        raise ManifestError(f"{path}: not valid JSON ({e})") from None
    return manifest_from_dict(doc, root=os.path.dirname(os.path.abspath(path)))


def save_manifest(manifest: DatasetManifest, path: str) -> None:
    with open(path, "w") as f:
        json.dump(manifest.to_dict(), f, indent=1)
        f.write("\n")
