"""Video orchestration: encode, match, argmax, update memory."""
from __future__ import annotations

from itertools import zip_longest

import numpy as np

from ..dataset import THING, VideoRecord
from ..errors import CapacityError, DataError
from .ids import MultiObjectLabel
from .model import PANOPTIC, PAOT, MemoryStore


def _pad16(image: np.ndarray) -> np.ndarray:
    h, w = image.shape[:2]
    ph, pw = -h % 16, -w % 16
    if ph or pw:
        image = np.pad(image, ((0, ph), (0, pw), (0, 0)), mode="edge")
    return image


def _run_group(model: PAOT, images, refs: dict, objects: list, kinds: tuple, shape):
    """Segment ``objects`` (original indices) jointly; returns per-frame logits.

    Object ``objects[j]`` uses label channel ``j + 1``.
    """
    h, w = shape
    cfg = model.config
    memory = MemoryStore(cap=cfg.memory_cap)
    start = {obj: refs[obj][0] for obj in objects}
    out = []
    last_added = None
    for t, image in enumerate(images):
        new = [j for j, obj in enumerate(objects) if start[obj] == t]
        active = np.array([True] + [start[obj] <= t for obj in objects])
        if memory.is_empty and not new:
            logits = np.full((len(objects) + 1, h, w), -np.inf, dtype=np.float32)
            logits[0] = 0.0
            out.append(logits)
            continue
        feats = model.encode(_pad16(image))
        caches = None
        if not memory.is_empty:
            logits, caches = model.forward(feats, memory, kinds)
            logits = logits[:, :h, :w].copy()
            logits[~active] = -np.inf
            label = np.argmax(logits, axis=0)
        else:
            logits = np.full((len(objects) + 1, h, w), -np.inf, dtype=np.float32)
            logits[0] = 0.0
            label = np.zeros((h, w), dtype=np.int64)
        for j in new:
            ref = refs[objects[j]][1]
            label[ref] = j + 1
            logits[:, ref] = -np.inf
            logits[j + 1, ref] = 0.0
        out.append(logits)

        full = np.zeros(feats.image_size, dtype=np.int64)
        full[:h, :w] = label
        ids = model.id_tokens(MultiObjectLabel.from_index_mask(full, len(objects), kinds))
        if caches is None:
            _, caches = model.forward(feats, memory, kinds, ingest=ids)
        memory.set_short(caches, ids)
        if new or last_added is None or t - last_added >= cfg.mem_every:
            memory.add(t, caches, ids)
            last_added = t
    return out


def segment_video(model: PAOT, video: VideoRecord, chunk: bool = False) -> list[np.ndarray]:
    """Predicted index mask for every frame of ``video``.

    Objects enter at their reference frame, where the given mask is pasted.
    With ``chunk`` set, objects beyond the ID capacity are split into groups
    run independently and merged per pixel by the largest object logit.
    """
    if video.images is None:
        raise DataError(f"{video.name}: raw frames are needed for segmentation")
    objects = sorted(video.reference_masks)
    h, w = video.shape
    if not objects:
        return [np.zeros((h, w), dtype=np.uint16) for _ in video.frames]
    kind_of = {obj: (video.class_map[obj].kind if obj in video.class_map else THING) for obj in objects}
    cfg = model.config
    if cfg.mode == PANOPTIC:
        things = [o for o in objects if kind_of[o] == THING]
        stuff = [o for o in objects if kind_of[o] != THING]
        th_chunks = [things[i:i + cfg.thing_capacity] for i in range(0, len(things), cfg.thing_capacity)]
        st_chunks = [stuff[i:i + cfg.stuff_capacity] for i in range(0, len(stuff), cfg.stuff_capacity)]
        groups = [sorted((a or []) + (b or [])) for a, b in zip_longest(th_chunks, st_chunks)]
    else:
        groups = [objects[i:i + cfg.capacity] for i in range(0, len(objects), cfg.capacity)]
    if len(groups) > 1 and not chunk:
        model.check_capacity(tuple(kind_of[o] for o in objects))
        raise CapacityError(f"{video.name}: too many objects", len(objects))

    best_logit = np.full((len(video.frames), h, w), -np.inf, dtype=np.float32)
    best_obj = np.zeros((len(video.frames), h, w), dtype=np.uint16)
    for group in groups:
        kinds = tuple(kind_of[o] for o in group)
        logits = _run_group(model, video.images, video.reference_masks, group, kinds, (h, w))
        for t, lg in enumerate(logits):
            j = np.argmax(lg, axis=0)
            fg = j > 0
            val = np.take_along_axis(lg, j[None], axis=0)[0]
            take = fg & (val > best_logit[t])
            best_logit[t][take] = val[take]
            best_obj[t][take] = np.asarray(group, dtype=np.uint16)[j[take] - 1]
    return [best_obj[t] for t in range(len(video.frames))]
