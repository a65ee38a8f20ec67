"""Pixel-level mask representations and arithmetic.

Index masks are 2-D ``uint16`` arrays where 0 is background and every other
value is a per-video object index. Binary masks are 2-D ``bool`` arrays.
Run-length masks store alternating 0/1 runs in row-major order, starting
with the (possibly empty) 0-run.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, ShapeError

MAX_OBJECT_INDEX = np.iinfo(np.uint16).max - 1


def as_index_mask(data) -> np.ndarray:
    """Validate ``data`` and return it as a read-only ``uint16`` index mask."""
    arr = np.asarray(data)
    if arr.ndim != 2:
        raise ShapeError(f"index mask must be 2-D, got shape {arr.shape}")
    if arr.size and not np.issubdtype(arr.dtype, np.integer):
        if not np.all(np.equal(np.mod(arr, 1), 0)):
            raise DataError("index mask must hold integers")
    if arr.size:
        lo, hi = int(arr.min()), int(arr.max())
        if lo < 0:
            raise DataError("index mask holds negative indices")
        if hi > MAX_OBJECT_INDEX:
            raise DataError(f"object index {hi} exceeds the 16-bit limit {MAX_OBJECT_INDEX}")
    out = np.array(arr, dtype=np.uint16, copy=True)
    out.setflags(write=False)
    return out


def as_binary_mask(data) -> np.ndarray:
    arr = np.asarray(data)
    if arr.ndim != 2:
        raise ShapeError(f"binary mask must be 2-D, got shape {arr.shape}")
    if arr.dtype != bool:
        if arr.size and not np.all((arr == 0) | (arr == 1)):
            raise DataError("binary mask must hold only 0 and 1")
        arr = arr.astype(bool)
    return arr


def object_ids(mask: np.ndarray) -> list[int]:
    """Sorted nonzero object indices present in ``mask``."""
    return [int(v) for v in np.unique(mask) if v != 0]


def binary_mask(mask: np.ndarray, obj: int) -> np.ndarray:
    """Binary view of object ``obj``; all-zero when the object is absent."""
    if obj < 1:
        raise DataError(f"object index must be >= 1, got {obj}")
    return np.asarray(mask) == obj


def intersection_union(a: np.ndarray, b: np.ndarray) -> tuple[int, int]:
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ShapeError(f"mask shapes differ: {a.shape} vs {b.shape}")
    inter = int(np.count_nonzero(a & b))
    union = int(np.count_nonzero(a | b))
    return inter, union


def iou(a: np.ndarray, b: np.ndarray) -> float:
    """Intersection over union; two empty masks score 1."""
    inter, union = intersection_union(a, b)
    if union == 0:
        return 1.0
    return inter / union


@dataclass(frozen=True)
class RleMask:
    height: int
    width: int
    runs: tuple[int, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "runs", tuple(int(r) for r in self.runs))
        if self.height < 0 or self.width < 0:
            raise DataError("RLE dimensions must be non-negative")
        if any(r < 0 for r in self.runs):
            raise DataError("RLE runs must be non-negative")
        if sum(self.runs) != self.height * self.width:
            raise DataError(
                f"RLE runs sum to {sum(self.runs)}, expected {self.height * self.width}"
            )
        if any(r == 0 for r in self.runs[1:]):
            raise DataError("only the leading RLE run may be empty")

    def to_json(self) -> dict:
        return {"height": self.height, "width": self.width, "runs": list(self.runs)}

    @classmethod
    def from_json(cls, obj: dict) -> "RleMask":
        try:
            return cls(int(obj["height"]), int(obj["width"]), tuple(obj["runs"]))
        except (KeyError, TypeError) as exc:
            raise DataError(f"malformed RLE record: {exc}") from exc


def rle_encode(mask: np.ndarray) -> RleMask:
    m = as_binary_mask(mask)
    h, w = m.shape
    flat = m.ravel()
    if flat.size == 0:
        return RleMask(h, w, ())
    # boundaries where the value flips, plus both ends
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], change, [flat.size]))
    runs = np.diff(bounds).tolist()
    if flat[0]:
        runs.insert(0, 0)
    return RleMask(h, w, tuple(runs))


def rle_decode(rle: RleMask) -> np.ndarray:
    # the RleMask constructor has already checked the run sum
    values = np.arange(len(rle.runs)) % 2 == 1
    flat = np.repeat(values, rle.runs)
    return flat.reshape(rle.height, rle.width)
