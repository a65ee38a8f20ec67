"""Seeded synthetic panoptic videos for tests and demos.

Stuff objects are static horizontal bands with wavy borders in the lower
part of the frame; thing objects are rectangles or disks that move with a
constant velocity, bounce off the borders and may enter after frame 0.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .dataset import ClassSplit, VideoRecord, extract_reference_masks
from .errors import DataError

BACKGROUND_RGB = (110, 110, 110)


@dataclass(frozen=True)
class SynthConfig:
    height: int = 64
    width: int = 64
    n_frames: int = 5
    n_thing: int = 3
    n_stuff: int = 2
    motion: float = 2.0
    late_entry: float = 0.3
    max_attempts: int = 50


# Default class table: 10 thing and 10 stuff classes, the last two of each unseen.
DEFAULT_SPLIT = ClassSplit(
    seen_thing=frozenset(range(1, 9)), unseen_thing=frozenset({9, 10}),
    seen_stuff=frozenset(range(11, 19)), unseen_stuff=frozenset({19, 20}),
)


def _palette(class_id: int) -> np.ndarray:
    rng = np.random.default_rng(10_000 + class_id)
    return rng.integers(20, 236, size=3)


def _stuff_layout(cfg: SynthConfig, rng) -> np.ndarray:
    h, w = cfg.height, cfg.width
    layout = np.zeros((h, w), dtype=np.uint16)
    if cfg.n_stuff == 0:
        return layout
    top = int(round(h * 0.35))
    span = h - top
    if span < 2 * cfg.n_stuff:
        raise DataError(f"cannot fit {cfg.n_stuff} stuff regions into a {h}x{w} frame")
    cuts = np.sort(rng.choice(np.arange(1, span), size=cfg.n_stuff - 1, replace=False)) if cfg.n_stuff > 1 else []
    edges = [top] + [top + int(c) for c in cuts] + [h]
    xs = np.arange(w)
    rows = np.arange(h)[:, None]
    for k in range(cfg.n_stuff):
        amp = min(2.0, (edges[k + 1] - edges[k]) / 4)
        phase = rng.uniform(0, 2 * np.pi)
        period = rng.uniform(w / 3, w)
        wave = amp * np.sin(2 * np.pi * xs / period + phase) if k > 0 else np.zeros(w)
        upper = edges[k] + wave
        layout[rows >= np.round(upper)[None, :]] = k + 1
    return layout


def _thing_tracks(cfg: SynthConfig, rng) -> list[dict]:
    h, w = cfg.height, cfg.width
    lo = max(2, min(h, w) // 16)
    hi = max(lo + 1, min(h, w) // 5)
    tracks = []
    for j in range(cfg.n_thing):
        size = int(rng.integers(lo, hi + 1))
        start = 0 if j == 0 or rng.random() >= cfg.late_entry or cfg.n_frames == 1 \
            else int(rng.integers(1, cfg.n_frames))
        tracks.append({
            "shape": "disk" if rng.random() < 0.5 else "rect",
            "size": size,
            "aspect": float(rng.uniform(0.6, 1.6)),
            "pos": np.array([rng.uniform(0, h - size), rng.uniform(0, w - size)]),
            "vel": rng.uniform(-cfg.motion, cfg.motion, size=2) if cfg.motion > 0 else np.zeros(2),
            "start": start,
        })
    return tracks


def _draw(track, t, h, w) -> np.ndarray:
    size = track["size"]
    sh = max(1, int(round(size * track["aspect"])))
    sw = size
    pos = track["pos"].copy()
    vel = track["vel"]
    limit = np.array([max(h - sh, 0), max(w - sw, 0)], dtype=float)
    for _ in range(t):
        pos = pos + vel
        for a in range(2):
            # reflect off the borders
            if limit[a] == 0:
                pos[a] = 0
                continue
            period = 2 * limit[a]
            p = np.mod(pos[a], period)
            pos[a] = period - p if p > limit[a] else p
    y0, x0 = int(round(pos[0])), int(round(pos[1]))
    rows, cols = np.ogrid[:h, :w]
    if track["shape"] == "rect":
        return (rows >= y0) & (rows < y0 + sh) & (cols >= x0) & (cols < x0 + sw)
    cy, cx = y0 + (sh - 1) / 2, x0 + (sw - 1) / 2
    return ((rows - cy) / (sh / 2)) ** 2 + ((cols - cx) / (sw / 2)) ** 2 <= 1.0


def synth_video(config: SynthConfig = SynthConfig(), seed: int = 0, name: str | None = None,
                split: ClassSplit = DEFAULT_SPLIT) -> VideoRecord:
    """Render one deterministic synthetic video."""
    cfg = config
    if cfg.height < 8 or cfg.width < 8:
        raise DataError("synthetic frames must be at least 8x8")
    if cfg.n_thing < 0 or cfg.n_stuff < 0 or cfg.n_frames < 1:
        raise DataError("object and frame counts must be non-negative")
    rng = np.random.default_rng(seed)
    thing_classes = sorted(split.seen_thing | split.unseen_thing)
    stuff_classes = sorted(split.seen_stuff | split.unseen_stuff)
    if (cfg.n_thing and not thing_classes) or (cfg.n_stuff and not stuff_classes):
        raise DataError("class split has no classes of a requested kind")
    h, w = cfg.height, cfg.width

    for _ in range(cfg.max_attempts):
        layout = _stuff_layout(cfg, rng)
        tracks = _thing_tracks(cfg, rng)
        frames = []
        for t in range(cfg.n_frames):
            f = layout.copy()
            for j, tr in enumerate(tracks):
                if t >= tr["start"]:
                    f[_draw(tr, t, h, w)] = cfg.n_stuff + j + 1
            frames.append(f)
        present = set(np.unique(np.stack(frames))) - {0}
        if len(present) == cfg.n_stuff + cfg.n_thing:
            break
    else:
        raise DataError(
            f"could not place {cfg.n_thing} things and {cfg.n_stuff} stuff regions "
            f"on a {h}x{w} canvas in {cfg.max_attempts} attempts"
        )

    class_map = {}
    for k in range(cfg.n_stuff):
        class_map[k + 1] = split.entry(stuff_classes[int(rng.integers(len(stuff_classes)))])
    for j in range(cfg.n_thing):
        class_map[cfg.n_stuff + j + 1] = split.entry(thing_classes[int(rng.integers(len(thing_classes)))])

    # static per-video texture so that static scenes give identical frames
    colors = np.zeros((cfg.n_stuff + cfg.n_thing + 1, 3), dtype=np.int64)
    colors[0] = BACKGROUND_RGB
    for obj, entry in class_map.items():
        colors[obj] = np.clip(_palette(entry.class_id) + rng.integers(-25, 26, size=3), 0, 255)
    texture = rng.integers(-6, 7, size=(h, w, 3))
    images = [np.clip(colors[f] + texture, 0, 255).astype(np.uint8) for f in frames]

    return VideoRecord(
        name=name or f"synth_{seed:05d}",
        frames=tuple(frames),
        reference_masks=extract_reference_masks(frames),
        class_map=class_map,
        images=tuple(images),
        extra={"synth": {**asdict(cfg), "seed": seed}},
    )


def synth_corpus(n_videos: int, seed: int = 0, height: int = 64, width: int = 64,
                 n_frames: int = 5, max_thing: int = 6, max_stuff: int = 3,
                 motion: float = 2.0, split: ClassSplit = DEFAULT_SPLIT) -> list[VideoRecord]:
    """Several videos with varying object counts, all derived from ``seed``."""
    rng = np.random.default_rng(seed)
    videos = []
    for i in range(n_videos):
        cfg = SynthConfig(height=height, width=width, n_frames=n_frames,
                          n_thing=int(rng.integers(1, max_thing + 1)),
                          n_stuff=int(rng.integers(0, max_stuff + 1)), motion=motion)
        videos.append(synth_video(cfg, seed=int(rng.integers(2**31)), name=f"video_{i:04d}", split=split))
    return videos
