"""VOS records and the panoptic-to-VOS production steps.

A video is converted into per-frame index masks, one reference mask per
object (its first appearance) and a class map carrying thing/stuff and
seen/unseen flags for every object.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DataError, ShapeError
from .masks import as_index_mask, binary_mask, object_ids

THING = "thing"
STUFF = "stuff"
SEEN = "seen"
UNSEEN = "unseen"
KINDS = (THING, STUFF)


@dataclass(frozen=True)
class ClassEntry:
    class_id: int
    kind: str
    visibility: str

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DataError(f"kind must be thing or stuff, got {self.kind!r}")
        if self.visibility not in (SEEN, UNSEEN):
            raise DataError(f"visibility must be seen or unseen, got {self.visibility!r}")

    def to_json(self) -> dict:
        return {"class_id": self.class_id, "kind": self.kind, "visibility": self.visibility}

    @classmethod
    def from_json(cls, obj: Mapping) -> "ClassEntry":
        try:
            return cls(int(obj["class_id"]), str(obj["kind"]), str(obj["visibility"]))
        except KeyError as exc:
            raise DataError(f"class map entry missing {exc}") from exc


@dataclass(frozen=True)
class ClassSplit:
    seen_thing: frozenset
    unseen_thing: frozenset
    seen_stuff: frozenset
    unseen_stuff: frozenset

    def __post_init__(self):
        groups = [self.seen_thing, self.unseen_thing, self.seen_stuff, self.unseen_stuff]
        for name, g in zip(("seen_thing", "unseen_thing", "seen_stuff", "unseen_stuff"), groups):
            object.__setattr__(self, name, frozenset(int(c) for c in g))
        total = sum(len(g) for g in (self.seen_thing, self.unseen_thing,
                                      self.seen_stuff, self.unseen_stuff))
        if len(self.all_classes) != total:
            raise DataError("class split subsets overlap")

    @property
    def all_classes(self) -> frozenset:
        return self.seen_thing | self.unseen_thing | self.seen_stuff | self.unseen_stuff

    @property
    def unseen(self) -> frozenset:
        return self.unseen_thing | self.unseen_stuff

    def entry(self, class_id: int) -> ClassEntry:
        c = int(class_id)
        if c in self.seen_thing:
            return ClassEntry(c, THING, SEEN)
        if c in self.unseen_thing:
            return ClassEntry(c, THING, UNSEEN)
        if c in self.seen_stuff:
            return ClassEntry(c, STUFF, SEEN)
        if c in self.unseen_stuff:
            return ClassEntry(c, STUFF, UNSEEN)
        raise DataError(f"class {c} is not covered by the class split")

    def to_json(self) -> dict:
        return {k: sorted(getattr(self, k))
                for k in ("seen_thing", "unseen_thing", "seen_stuff", "unseen_stuff")}

    @classmethod
    def from_json(cls, obj: Mapping) -> "ClassSplit":
        return cls(*(frozenset(obj.get(k, ())) for k in
                     ("seen_thing", "unseen_thing", "seen_stuff", "unseen_stuff")))


@dataclass(frozen=True)
class VideoRecord:
    """One video in object-index format.

    ``reference_masks`` maps object index to ``(frame_number, bool mask)``;
    ``images`` optionally holds the RGB frames (H, W, 3) uint8.
    """

    name: str
    frames: tuple
    reference_masks: Mapping[int, tuple]
    class_map: Mapping[int, ClassEntry]
    images: tuple | None = None
    extra: Mapping = field(default_factory=dict)

    def __post_init__(self):
        frames = tuple(as_index_mask(f) for f in self.frames)
        if frames:
            shape = frames[0].shape
            for t, f in enumerate(frames):
                if f.shape != shape:
                    raise ShapeError(f"frame {t} has shape {f.shape}, expected {shape}")
        object.__setattr__(self, "frames", frames)
        if self.images is not None:
            imgs = tuple(np.asarray(im, dtype=np.uint8) for im in self.images)
            if len(imgs) != len(frames):
                raise DataError("image count does not match mask count")
            for im in imgs:
                if im.shape[:2] != frames[0].shape:
                    raise ShapeError("image and mask sizes differ")
                im.setflags(write=False)
            object.__setattr__(self, "images", imgs)
        refs = {}
        for obj, (t, m) in self.reference_masks.items():
            m = np.asarray(m, dtype=bool)
            m.setflags(write=False)
            refs[int(obj)] = (int(t), m)
        object.__setattr__(self, "reference_masks", dict(sorted(refs.items())))
        object.__setattr__(self, "class_map",
                           dict(sorted((int(k), v) for k, v in self.class_map.items())))

    @property
    def shape(self) -> tuple[int, int]:
        return self.frames[0].shape if self.frames else (0, 0)

    @property
    def objects(self) -> list[int]:
        present = set()
        for f in self.frames:
            present.update(object_ids(f))
        return sorted(present)

    def validate(self) -> None:
        """Check that frames, reference masks and the class map agree."""
        in_frames = set(self.objects)
        if in_frames != set(self.reference_masks) or in_frames != set(self.class_map):
            raise DataError(
                f"{self.name}: objects in frames {sorted(in_frames)}, reference masks "
                f"{sorted(self.reference_masks)}, class map {sorted(self.class_map)} disagree"
            )
        expected = extract_reference_masks(self.frames)
        for obj, (t, m) in self.reference_masks.items():
            t_exp, m_exp = expected[obj]
            if t != t_exp or not np.array_equal(m, m_exp):
                raise DataError(f"{self.name}: reference mask of object {obj} is not its first appearance")


def split_unseen_classes(freq: Mapping[int, int], kind: Mapping[int, str],
                         n_thing_unseen: int, n_stuff_unseen: int) -> ClassSplit:
    """Mark the least frequent classes of each kind as unseen.

    Ties in frequency go to the lower class id.
    """
    unknown = set(freq) - set(kind)
    if unknown:
        raise DataError(f"classes without a thing/stuff kind: {sorted(unknown)}")

    def tail(k, n):
        classes = sorted((c for c in kind if kind[c] == k), key=lambda c: (freq.get(c, 0), c))
        if n < 0 or n > len(classes):
            raise DataError(f"requested {n} unseen {k} classes but only {len(classes)} exist")
        return frozenset(classes[:n]), frozenset(classes[n:])

    unseen_thing, seen_thing = tail(THING, n_thing_unseen)
    unseen_stuff, seen_stuff = tail(STUFF, n_stuff_unseen)
    return ClassSplit(seen_thing, unseen_thing, seen_stuff, unseen_stuff)


def extract_reference_masks(frames: Sequence[np.ndarray]) -> dict[int, tuple[int, np.ndarray]]:
    """First-appearance mask of every object: ``{obj: (frame_number, mask)}``."""
    if len(frames) == 0:
        raise DataError("cannot extract reference masks from an empty video")
    shape = np.shape(frames[0])
    refs: dict[int, tuple[int, np.ndarray]] = {}
    for t, f in enumerate(frames):
        if np.shape(f) != shape:
            raise ShapeError(f"frame {t} has shape {np.shape(f)}, expected {shape}")
        for obj in object_ids(f):
            if obj not in refs:
                refs[obj] = (t, binary_mask(f, obj))
    return dict(sorted(refs.items()))


def strip_unseen(video: VideoRecord, split: ClassSplit) -> VideoRecord:
    """Erase unseen-class objects (pixels, class map and reference entries)."""
    drop = [obj for obj, entry in video.class_map.items() if entry.class_id in split.unseen]
    if not drop:
        return video
    frames = []
    for f in video.frames:
        g = np.array(f)
        g[np.isin(g, drop)] = 0
        frames.append(g)
    keep = lambda d: {k: v for k, v in d.items() if k not in drop}  # noqa: E731
    return VideoRecord(video.name, tuple(frames), keep(video.reference_masks),
                       keep(video.class_map), video.images, video.extra)


def build_class_mapping(raw: Mapping[int, int], split: ClassSplit) -> dict[int, ClassEntry]:
    """Attach kind and visibility from ``split`` to each object's class id."""
    return {int(obj): split.entry(cls) for obj, cls in sorted(raw.items())}


def select_validation_videos(video_classes: Mapping[str, Iterable[int]], split: ClassSplit,
                             min_instances: int = 1, n_val: int | None = None) -> list[str]:
    """Greedily choose validation videos until every unseen class is covered.

    ``video_classes`` lists the class id of each object in each video (one
    entry per instance). Videos richest in still-needed unseen instances are
    taken first (ties by name); after coverage is met, further videos are
    added in the same order until ``n_val`` is reached.
    """
    need = {c: min_instances for c in split.unseen}
    counts = {v: list(cs) for v, cs in video_classes.items()}
    available = {c for cs in counts.values() for c in cs}
    chosen: list[str] = []
    remaining = sorted(counts)
    while any(n > 0 for c, n in need.items() if c in available) and remaining:
        def gain(v):
            have = Counter(counts[v])
            return sum(min(k, need[c]) for c, k in have.items() if need.get(c, 0) > 0)
        best = max(remaining, key=lambda v: (gain(v), -remaining.index(v)))
        if gain(best) == 0:
            break
        chosen.append(best)
        remaining.remove(best)
        for c in counts[best]:
            if c in need:
                need[c] -= 1
    if n_val is not None:
        by_unseen = sorted(remaining, key=lambda v: (-sum(c in split.unseen for c in counts[v]), v))
        for v in by_unseen:
            if len(chosen) >= n_val:
                break
            chosen.append(v)
    return sorted(chosen)
