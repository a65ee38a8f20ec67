"""On-disk VOS corpus format.

::

    <vos-dir>/
      classes.json              # class split of the corpus (optional)
      <video>/
        video.json              # manifest
        masks/00000.png ...     # 8- or 16-bit single-channel index masks
        images/00000.png ...    # RGB frames (optional)

Prediction directories use the same layout; their manifests carry only the
frame list and provenance.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Mapping

import numpy as np
from PIL import Image

from .dataset import ClassEntry, ClassSplit, VideoRecord
from .errors import DataError
from .masks import RleMask, as_index_mask, rle_decode, rle_encode

SCHEMA_VERSION = 1
MANIFEST = "video.json"
CLASSES = "classes.json"


def dump_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def load_json(path: Path):
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise DataError(f"missing file: {path}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"malformed JSON in {path}: {exc}") from exc


def write_index_png(mask: np.ndarray, path: Path) -> None:
    mask = as_index_mask(mask)
    if mask.size and mask.max() > 255:
        img = Image.fromarray(mask.astype(np.uint16))
    else:
        img = Image.fromarray(mask.astype(np.uint8))
    img.save(path, format="PNG")


def read_index_png(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as img:
            if img.mode not in ("L", "P", "I;16", "I"):
                raise DataError(f"{path}: expected a single-channel mask, got mode {img.mode}")
            return as_index_mask(np.array(img))
    except FileNotFoundError as exc:
        raise DataError(f"missing mask file: {path}") from exc


def write_video(video: VideoRecord, root: Path, provenance: Mapping | None = None) -> Path:
    vdir = Path(root) / video.name
    (vdir / "masks").mkdir(parents=True, exist_ok=True)
    names = [f"{t:05d}.png" for t in range(len(video.frames))]
    for f, n in zip(video.frames, names):
        write_index_png(f, vdir / "masks" / n)
    if video.images is not None:
        (vdir / "images").mkdir(exist_ok=True)
        for im, n in zip(video.images, names):
            Image.fromarray(np.ascontiguousarray(im, dtype=np.uint8)).save(vdir / "images" / n, format="PNG")
    h, w = video.shape
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "name": video.name,
        "height": h,
        "width": w,
        "frames": names,
        "images": names if video.images is not None else None,
        "class_map": {str(k): v.to_json() for k, v in video.class_map.items()},
        "reference_masks": {
            str(k): {"frame": t, "rle": rle_encode(m).to_json()}
            for k, (t, m) in video.reference_masks.items()
        },
        "extra": dict(video.extra),
        "provenance": dict(provenance or {}),
    }
    dump_json(manifest, vdir / MANIFEST)
    return vdir


def read_video(vdir: Path, load_images: bool = True) -> VideoRecord:
    vdir = Path(vdir)
    meta = load_json(vdir / MANIFEST)
    try:
        frames = [read_index_png(vdir / "masks" / n) for n in meta["frames"]]
        images = None
        if load_images and meta.get("images"):
            images = []
            for n in meta["images"]:
                with Image.open(vdir / "images" / n) as img:
                    images.append(np.array(img.convert("RGB")))
        class_map = {int(k): ClassEntry.from_json(v) for k, v in meta.get("class_map", {}).items()}
        refs = {
            int(k): (int(v["frame"]), rle_decode(RleMask.from_json(v["rle"])))
            for k, v in meta.get("reference_masks", {}).items()
        }
        video = VideoRecord(meta.get("name", vdir.name), tuple(frames), refs, class_map,
                            tuple(images) if images is not None else None, meta.get("extra", {}))
    except (KeyError, TypeError) as exc:
        raise DataError(f"{vdir / MANIFEST}: malformed manifest ({exc})") from exc
    except FileNotFoundError as exc:
        raise DataError(f"{vdir}: missing file {exc.filename}") from exc
    return video


def write_prediction(name: str, frames, root: Path, provenance: Mapping | None = None) -> Path:
    vdir = Path(root) / name
    (vdir / "masks").mkdir(parents=True, exist_ok=True)
    names = [f"{t:05d}.png" for t in range(len(frames))]
    for f, n in zip(frames, names):
        write_index_png(f, vdir / "masks" / n)
    dump_json({"schema_version": SCHEMA_VERSION, "name": name, "frames": names,
               "provenance": dict(provenance or {})}, vdir / MANIFEST)
    return vdir


def read_prediction(vdir: Path) -> list[np.ndarray]:
    vdir = Path(vdir)
    manifest = vdir / MANIFEST
    if manifest.exists():
        names = load_json(manifest)["frames"]
    else:
        names = sorted(p.name for p in (vdir / "masks").glob("*.png"))
        if not names:
            raise DataError(f"no prediction masks found in {vdir}")
    return [read_index_png(vdir / "masks" / n) for n in names]


def list_videos(root: Path) -> list[str]:
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"not a corpus directory: {root}")
    return sorted(p.name for p in root.iterdir() if (p / MANIFEST).is_file())


def write_classes(split: ClassSplit, root: Path, provenance: Mapping | None = None) -> None:
    Path(root).mkdir(parents=True, exist_ok=True)
    dump_json({"schema_version": SCHEMA_VERSION, "split": split.to_json(),
               "provenance": dict(provenance or {})}, Path(root) / CLASSES)


def read_classes(root: Path) -> ClassSplit | None:
    path = Path(root) / CLASSES
    if not path.exists():
        return None
    return ClassSplit.from_json(load_json(path)["split"])
