"""Deterministic bouncing-ball benchmark with frame-accurate events.

A single ball moves under gravity inside the image and bounces elastically off
the borders. Motion is integrated in closed form between frames, so every
event has an exact time; it is labeled at the nearest frame (ties go to the
earlier frame).

Classes:
  1 ``bounce-h``  horizontal velocity flips at a side wall
  2 ``bounce-v``  vertical velocity flips at the floor or ceiling
  3 ``apex``      vertical velocity crosses zero under gravity (top of an arc)

Rendering depends only on the ball position, so ``apex`` cannot be decided
from a single frame.
"""
from __future__ import annotations

import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from ..core import EventClassTable, EventLabel, SpotError, VideoMeta
from .frames import write_flow, write_frame, frame_path
from .manifest import DatasetManifest, save_manifest

CLASSES = ("bounce-h", "bounce-v", "apex")
BOUNCE_H, BOUNCE_V, APEX = 1, 2, 3

_EPS = 1e-9


@dataclass(frozen=True)
class SyntheticConfig:
    num_videos: int = 10
    frames_per_video: int = 300
    frame_height: int = 64
    frame_width: int = 64
    fps: float = 25.0
    ball_radius: float = 4.0
    gravity: float = 0.4
    speed_min: float = 1.5
    speed_max: float = 3.5
    seed: int = 0
    with_flow: bool = False

    def validate(self) -> None:
        if self.num_videos < 1:
            raise SpotError("num_videos must be >= 1")
        if self.frames_per_video < 1:
            raise SpotError("frames_per_video must be >= 1")
        if self.fps <= 0:
            raise SpotError("fps must be > 0")
        if self.ball_radius <= 0:
            raise SpotError("ball_radius must be > 0")
        if 2 * self.ball_radius >= min(self.frame_height, self.frame_width):
            raise SpotError(
                f"impossible geometry: ball diameter {2 * self.ball_radius} does not fit "
                f"in a {self.frame_height}x{self.frame_width} frame")
        if self.gravity < 0:
            raise SpotError("gravity must be >= 0")
        if not 0 <= self.speed_min <= self.speed_max:
            raise SpotError("need 0 <= speed_min <= speed_max")
        if self.speed_max >= self.frame_width - 2 * self.ball_radius:
            raise SpotError("impossible geometry: horizontal speed spans the whole free width in one frame")


@dataclass
class Trajectory:
    positions: np.ndarray       # N x 2, (x, y) with y pointing down
    velocities: np.ndarray      # N x 2, instantaneous velocity at each frame
    event_times: list = field(default_factory=list)   # (time, class_id), time in frames

    def events(self) -> list[tuple[int, int]]:
        """(frame, class_id) at the frame nearest each event time."""
        return [(nearest_frame(t), c) for t, c in self.event_times]


def nearest_frame(time: float) -> int:
    # ties (x.5) go to the earlier frame
    return int(math.ceil(time - 0.5))


def _first_root(c2: float, c1: float, c0: float, limit: float) -> float:
    """Smallest s in (_EPS, limit] with c2*s^2 + c1*s + c0 = 0, else inf."""
    if abs(c2) < 1e-15:
        if c1 == 0:
            return math.inf
        roots = [-c0 / c1]
    else:
        disc = c1 * c1 - 4 * c2 * c0
        if disc < 0:
            return math.inf
        sq = math.sqrt(disc)
        q = -0.5 * (c1 + math.copysign(sq, c1))
        roots = [q / c2]
        if q != 0:
            roots.append(c0 / q)
    valid = [s for s in roots if _EPS < s <= limit + _EPS]
    return min(valid) if valid else math.inf


def simulate(position, velocity, num_frames: int, height: float, width: float,
             radius: float, gravity: float) -> Trajectory:
    """Integrate the ball exactly, frame by frame, recording every event time."""
    x, y = map(float, position)
    vx, vy = map(float, velocity)
    lo_x, hi_x = radius, width - radius
    lo_y, hi_y = radius, height - radius
    if not (lo_x - 1e-9 <= x <= hi_x + 1e-9 and lo_y - 1e-9 <= y <= hi_y + 1e-9):
        raise SpotError(f"start position ({x}, {y}) is outside the free area")
    g = gravity
    pos = np.zeros((num_frames, 2))
    vel = np.zeros((num_frames, 2))
    pos[0], vel[0] = (x, y), (vx, vy)
    events = []
    for t in range(num_frames - 1):
        elapsed = 0.0
        while True:
            left = 1.0 - elapsed
            hit_x = math.inf
            if vx > 0:
                hit_x = (hi_x - x) / vx
            elif vx < 0:
                hit_x = (lo_x - x) / vx
            if not _EPS < hit_x <= left + _EPS:
                hit_x = math.inf
            hit_floor = _first_root(0.5 * g, vy, y - hi_y, left) if (vy > 0 or g > 0) else math.inf
            hit_ceil = _first_root(0.5 * g, vy, y - lo_y, left) if vy < 0 else math.inf
            apex = -vy / g if (g > 0 and vy < 0) else math.inf
            if not 0 < apex <= left + _EPS:
                apex = math.inf
            step = min(hit_x, hit_floor, hit_ceil, apex)
            if step == math.inf:
                step = left
            x += vx * step
            y += vy * step + 0.5 * g * step * step
            vy += g * step
            elapsed += step
            when = t + elapsed
            if step == hit_x:
                x = hi_x if vx > 0 else lo_x
                vx = -vx
                events.append((when, BOUNCE_H))
            if step == hit_floor or step == hit_ceil:
                y = hi_y if step == hit_floor else lo_y
                vy = -vy
                events.append((when, BOUNCE_V))
            elif step == apex:
                vy = 0.0
                events.append((when, APEX))
            if elapsed >= 1.0 - _EPS:
                break
        x = min(max(x, lo_x), hi_x)
        y = min(max(y, lo_y), hi_y)
        pos[t + 1], vel[t + 1] = (x, y), (vx, vy)
    return Trajectory(pos, vel, events)


def render(positions: np.ndarray, height: int, width: int, radius: float,
           ball_color=(1.0, 1.0, 1.0), background=0.0) -> np.ndarray:
    """Anti-aliased discs at the given centers; returns N x H x W x 3 uint8."""
    positions = np.atleast_2d(np.asarray(positions, dtype=np.float64))
    ys = np.arange(height) + 0.5
    xs = np.arange(width) + 0.5
    dx = xs[None, None, :] - positions[:, 0, None, None]
    dy = ys[None, :, None] - positions[:, 1, None, None]
    cover = np.clip(radius + 0.5 - np.sqrt(dx * dx + dy * dy), 0.0, 1.0)
    bg = np.broadcast_to(np.asarray(background, dtype=np.float64), (3,))
    fg = np.asarray(ball_color, dtype=np.float64)
    img = bg + cover[..., None] * (fg - bg)
    return np.round(img * 255).astype(np.uint8)


def ball_flow(trajectory: Trajectory, height: int, width: int, radius: float) -> np.ndarray:
    """Forward flow (frame t to t+1): ball displacement on ball pixels, zero elsewhere."""
    pos = trajectory.positions
    n = len(pos)
    flow = np.zeros((n, height, width, 2), dtype=np.float32)
    ys = np.arange(height) + 0.5
    xs = np.arange(width) + 0.5
    for t in range(n - 1):
        inside = (xs[None, :] - pos[t, 0]) ** 2 + (ys[:, None] - pos[t, 1]) ** 2 <= radius ** 2
        flow[t][inside] = pos[t + 1] - pos[t]
    return flow


@dataclass
class SyntheticVideo:
    video_id: str
    trajectory: Trajectory
    ball_color: tuple
    background: float

    def frames(self, config: SyntheticConfig) -> np.ndarray:
        return render(self.trajectory.positions, config.frame_height, config.frame_width,
                      config.ball_radius, self.ball_color, self.background)


def _valid_events(traj: Trajectory) -> bool:
    frames = [f for f, _ in traj.events()]
    if len(set(frames)) != len(frames):
        return False
    # one flip per axis per frame interval keeps flips and labels in one-to-one correspondence
    per_interval = {}
    for time, cls in traj.event_times:
        key = (math.ceil(time - 1e-12) - 1, cls == BOUNCE_H)
        per_interval[key] = per_interval.get(key, 0) + 1
    return all(n == 1 for n in per_interval.values())


def _draw_video(config: SyntheticConfig, rng: np.random.Generator, video_id: str,
                max_attempts: int = 1000) -> SyntheticVideo:
    r = config.ball_radius
    h, w = config.frame_height, config.frame_width
    span = h - 2 * r
    for _ in range(max_attempts):
        vx = rng.uniform(config.speed_min, config.speed_max) * rng.choice([-1.0, 1.0])
        x = rng.uniform(r, w - r)
        if config.gravity > 0:
            # arc height above the floor; some arcs exceed the ceiling and bounce off it
            peak = rng.uniform(0.3, 1.3) * span
            drop = rng.uniform(0.0, min(peak, span))
            y = h - r - drop
            vy = math.sqrt(2 * config.gravity * (peak - drop)) * rng.choice([-1.0, 1.0])
        else:
            y = rng.uniform(r, h - r)
            vy = rng.uniform(config.speed_min, config.speed_max) * rng.choice([-1.0, 1.0])
        traj = simulate((x, y), (vx, vy), config.frames_per_video, h, w, r, config.gravity)
        if _valid_events(traj):
            color = tuple(float(c) for c in rng.uniform(0.6, 1.0, size=3))
            background = float(rng.uniform(0.0, 0.25))
            return SyntheticVideo(video_id, traj, color, background)
    raise SpotError(f"could not draw a video with distinct event frames in {max_attempts} attempts")


def split_counts(n: int) -> tuple[int, int, int]:
    """3:1:1 train/val/test; any dataset of >= 2 videos gets a validation video."""
    n_val = max(1, round(0.2 * n)) if n >= 2 else 0
    n_train = max(1, round(0.6 * n))
    n_train = min(n_train, n - n_val)
    return n_train, n_val, n - n_train - n_val


def synthesize_videos(config: SyntheticConfig) -> list[SyntheticVideo]:
    config.validate()
    seeds = np.random.SeedSequence(config.seed).spawn(config.num_videos)
    return [_draw_video(config, np.random.default_rng(s), f"synth_{i:04d}")
            for i, s in enumerate(seeds)]


def build_manifest(config: SyntheticConfig, videos: list[SyntheticVideo], root: str = ".") -> DatasetManifest:
    n_train, n_val, _ = split_counts(len(videos))
    metas, events, split = [], [], {}
    for i, v in enumerate(videos):
        flow_dir = f"flow/{v.video_id}" if config.with_flow else None
        metas.append(VideoMeta(v.video_id, config.fps, config.frames_per_video, f"frames/{v.video_id}", flow_dir))
        split[v.video_id] = "train" if i < n_train else "val" if i < n_train + n_val else "test"
        events.extend(EventLabel(v.video_id, f, c) for f, c in sorted(v.trajectory.events()))
    return DatasetManifest(EventClassTable(CLASSES), metas, events, split, root)


def generate_synthetic(config: SyntheticConfig, out_dir: str) -> DatasetManifest:
    """Render the benchmark to ``out_dir`` (frames, optional flow, manifest.json)."""
    videos = synthesize_videos(config)
    manifest = build_manifest(config, videos, root=os.path.abspath(out_dir))
    for v in videos:
        frame_dir = os.path.join(out_dir, "frames", v.video_id)
        os.makedirs(frame_dir, exist_ok=True)
        for t, img in enumerate(v.frames(config)):
            write_frame(frame_dir, t, img)
        if config.with_flow:
            flow_dir = os.path.join(out_dir, "flow", v.video_id)
            os.makedirs(flow_dir, exist_ok=True)
            for t, f in enumerate(ball_flow(v.trajectory, config.frame_height, config.frame_width,
                                            config.ball_radius)):
                write_flow(frame_path(flow_dir, t, "flo2"), f)
    save_manifest(manifest, os.path.join(out_dir, "manifest.json"))
    return manifest


def config_dict(config: SyntheticConfig) -> dict:
    return asdict(config)
