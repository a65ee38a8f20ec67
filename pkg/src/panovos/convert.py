"""Convert a panoptic video corpus into a VOS corpus with a seen/unseen split.

Input layout::

    <panoptic-dir>/
      categories.json             # [{"id": 3, "name": "car", "isthing": 1}, ...]
      <video>/
        panomasks/00000.png ...   # 16-bit segment ids, 0 = unlabelled
        segments.json             # {"segments": {"<segment id>": <category id>}}
        images/00000.png ...      # optional RGB frames

Output: ``<vos-dir>/train`` and ``<vos-dir>/valid``, each a corpus in the
format of :mod:`panovos.corpus`. Unseen-class objects are erased from the
training videos only.
"""
from __future__ import annotations

from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np
from PIL import Image

from .corpus import dump_json, load_json, read_index_png, write_classes, write_index_png, write_video
from .dataset import (STUFF, THING, ClassSplit, VideoRecord, build_class_mapping, extract_reference_masks,
                      select_validation_videos, split_unseen_classes, strip_unseen)
from .errors import DataError
from .masks import MAX_OBJECT_INDEX

CATEGORIES = "categories.json"
SEGMENTS = "segments.json"


@dataclass(frozen=True)
class PanopticVideo:
    name: str
    frames: tuple  # segment-id maps
    segments: dict  # segment id -> category id
    images: tuple | None = None


def read_categories(root: Path) -> dict[int, str]:
    """Category id -> thing/stuff kind."""
    cats = load_json(Path(root) / CATEGORIES)
    try:
        return {int(c["id"]): THING if c["isthing"] else STUFF for c in cats}
    except (KeyError, TypeError) as exc:
        raise DataError(f"malformed {CATEGORIES}: {exc}") from exc


def list_panoptic_videos(root: Path) -> list[str]:
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"not a directory: {root}")
    return sorted(p.name for p in root.iterdir() if (p / SEGMENTS).is_file())


def read_panoptic_video(vdir: Path, load_images: bool = True) -> PanopticVideo:
    vdir = Path(vdir)
    meta = load_json(vdir / SEGMENTS)
    try:
        segments = {int(k): int(v) for k, v in meta["segments"].items()}
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise DataError(f"{vdir / SEGMENTS}: malformed segment table ({exc})") from exc
    names = sorted(p.name for p in (vdir / "panomasks").glob("*.png"))
    if not names:
        raise DataError(f"{vdir}: no panoptic masks")
    frames = tuple(read_index_png(vdir / "panomasks" / n) for n in names)
    images = None
    if load_images and (vdir / "images").is_dir():
        images = []
        for n in names:
            try:
                with Image.open(vdir / "images" / n) as img:
                    images.append(np.array(img.convert("RGB")))
            except FileNotFoundError as exc:
                raise DataError(f"{vdir}: missing image {n}") from exc
        images = tuple(images)
    return PanopticVideo(vdir.name, frames, segments, images)


def write_panoptic_video(video: PanopticVideo, root: Path) -> Path:
    vdir = Path(root) / video.name
    (vdir / "panomasks").mkdir(parents=True, exist_ok=True)
    for t, f in enumerate(video.frames):
        write_index_png(f, vdir / "panomasks" / f"{t:05d}.png")
    if video.images is not None:
        (vdir / "images").mkdir(exist_ok=True)
        for t, im in enumerate(video.images):
            Image.fromarray(np.ascontiguousarray(im, dtype=np.uint8)).save(vdir / "images" / f"{t:05d}.png")
    dump_json({"segments": {str(k): v for k, v in sorted(video.segments.items())}}, vdir / SEGMENTS)
    return vdir


def write_categories(kinds: Mapping[int, str], root: Path) -> None:
    Path(root).mkdir(parents=True, exist_ok=True)
    cats = [{"id": c, "name": f"class_{c}", "isthing": int(k == THING)} for c, k in sorted(kinds.items())]
    dump_json(cats, Path(root) / CATEGORIES)


def segment_order(frames) -> list[int]:
    """Segment ids by first appearance (frame, then ascending id)."""
    seen: dict[int, None] = {}
    for f in frames:
        for s in np.unique(f):
            if s != 0 and int(s) not in seen:
                seen[int(s)] = None
    return list(seen)


def video_instances(video: PanopticVideo) -> list[int]:
    """Category id of every segment that appears in the video."""
    missing = [s for s in segment_order(video.frames) if s not in video.segments]
    if missing:
        raise DataError(f"{video.name}: segments {missing} have no category")
    return [video.segments[s] for s in segment_order(video.frames)]


def to_vos(video: PanopticVideo, split: ClassSplit) -> VideoRecord:
    """Relabel segments densely (1..K by first appearance) and attach the class map."""
    order = segment_order(video.frames)
    if len(order) > MAX_OBJECT_INDEX:
        raise DataError(f"{video.name}: {len(order)} segments exceed the index range")
    video_instances(video)
    keys = np.array(order, dtype=np.int64)
    by_value = np.argsort(keys)  # sorted position -> first-appearance rank
    sorted_keys = keys[by_value]
    frames = []
    for f in video.frames:
        f = np.asarray(f, dtype=np.int64)
        out = np.zeros(f.shape, dtype=np.uint16)
        if order:
            pos = np.clip(np.searchsorted(sorted_keys, f), 0, len(order) - 1)
            hit = sorted_keys[pos] == f
            out[hit] = by_value[pos[hit]] + 1
        frames.append(out)
    raw = {i + 1: video.segments[s] for i, s in enumerate(order)}
    return VideoRecord(video.name, tuple(frames), extract_reference_masks(frames),
                       build_class_mapping(raw, split), video.images)


def from_vos(video: VideoRecord) -> PanopticVideo:
    """Panoptic form of a VOS record; object ``k`` of class ``c`` becomes segment ``256 c + k``."""
    if any(k > 255 for k in video.class_map) or any(e.class_id > 255 for e in video.class_map.values()):
        raise DataError(f"{video.name}: object indices and class ids must stay below 256")
    lut = np.zeros(max(video.class_map, default=0) + 1, dtype=np.uint16)
    for k, e in video.class_map.items():
        lut[k] = 256 * e.class_id + k
    frames = tuple(lut[np.asarray(f)] for f in video.frames)
    segments = {int(lut[k]): e.class_id for k, e in video.class_map.items()}
    return PanopticVideo(video.name, frames, segments, video.images)


def _convert_one(task) -> str:
    vdir, out_root, split, strip, provenance = task
    video = to_vos(read_panoptic_video(vdir), split)
    if strip:
        video = strip_unseen(video, split)
    write_video(video, out_root, provenance)
    return video.name


def convert_corpus(input_dir: Path, output_dir: Path, n_thing_unseen: int, n_stuff_unseen: int,
                   min_instances: int = 1, n_val: int | None = None, workers: int = 1,
                   provenance: Mapping | None = None) -> dict:
    """Run the full pipeline; returns a summary of the split and video assignment.

    Class frequency counts object instances over the whole corpus. Only
    classes that occur in some video take part in the split.
    """
    input_dir, output_dir = Path(input_dir), Path(output_dir)
    kinds = read_categories(input_dir)
    names = list_panoptic_videos(input_dir)
    if not names:
        raise DataError(f"no videos found in {input_dir}")
    instances = {}
    for n in names:
        inst = video_instances(read_panoptic_video(input_dir / n, load_images=False))
        unknown = sorted(set(inst) - set(kinds))
        if unknown:
            raise DataError(f"{n}: categories {unknown} are not in {CATEGORIES}")
        instances[n] = inst
    freq = Counter(c for inst in instances.values() for c in inst)
    split = split_unseen_classes(dict(freq), {c: kinds[c] for c in freq}, n_thing_unseen, n_stuff_unseen)
    valid = select_validation_videos(instances, split, min_instances, n_val)
    train = [n for n in names if n not in set(valid)]

    provenance = dict(provenance or {})
    for sub in ("train", "valid"):
        write_classes(split, output_dir / sub, provenance)
    tasks = [(input_dir / n, output_dir / "train", split, True, provenance) for n in train]
    tasks += [(input_dir / n, output_dir / "valid", split, False, provenance) for n in valid]
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            list(pool.map(_convert_one, tasks))
    else:
        for t in tasks:
            _convert_one(t)
    return {
        "split": split.to_json(),
        "frequency": {str(c): n for c, n in sorted(freq.items())},
        "train": train,
        "valid": valid,
    }
