"""Panoptic VOS evaluation: subset IoUs, averages, crowd decay and scale ratios."""
from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy import ndimage, optimize

from .dataset import SEEN, STUFF, THING, UNSEEN, VideoRecord
from .errors import DataError, ShapeError
from .masks import binary_mask, intersection_union

DECAY_SCALE = 100.0

# (field name, metric family, kind, visibility)
SUBSETS = (
    ("M_th_s", "mask", THING, SEEN),
    ("M_th_u", "mask", THING, UNSEEN),
    ("M_sf_s", "mask", STUFF, SEEN),
    ("M_sf_u", "mask", STUFF, UNSEEN),
    ("B_th_s", "boundary", THING, SEEN),
    ("B_th_u", "boundary", THING, UNSEEN),
    ("B_sf_s", "boundary", STUFF, SEEN),
    ("B_sf_u", "boundary", STUFF, UNSEEN),
)
AVERAGES = {
    "G_s": ("M_th_s", "M_sf_s", "B_th_s", "B_sf_s"),
    "G_u": ("M_th_u", "M_sf_u", "B_th_u", "B_sf_u"),
    "G_th": ("M_th_s", "M_th_u", "B_th_s", "B_th_u"),
    "G_sf": ("M_sf_s", "M_sf_u", "B_sf_s", "B_sf_u"),
}


@dataclass(frozen=True)
class ObjectScore:
    video: str
    obj: int
    kind: str
    visibility: str
    mask_iou: float
    boundary_iou: float
    n_objects: int

    def __post_init__(self):
        for v in (self.mask_iou, self.boundary_iou):
            if not 0.0 <= v <= 1.0:
                raise DataError(f"IoU {v} outside [0, 1]")

    def to_json(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class DecayFit:
    lam: float
    s: float
    points: tuple  # ((n, g), ...) after grouping by n
    method: str = "log"

    def to_json(self) -> dict:
        return {"lambda": self.lam, "s": self.s, "method": self.method,
                "points": [[n, g] for n, g in self.points]}


@dataclass(frozen=True)
class EvalReport:
    """Subset metrics are ``None`` when the corpus has no object of that subset."""

    M_th_s: float | None
    M_th_u: float | None
    M_sf_s: float | None
    M_sf_u: float | None
    B_th_s: float | None
    B_th_u: float | None
    B_sf_s: float | None
    B_sf_u: float | None
    G_s: float | None
    G_u: float | None
    G_th: float | None
    G_sf: float | None
    G: float
    lam: float | None

    @property
    def absent(self) -> list[str]:
        return [name for name, *_ in SUBSETS if getattr(self, name) is None]

    def to_json(self) -> dict:
        out = {k: v for k, v in asdict(self).items() if k != "lam"}
        out["lambda"] = self.lam
        out["absent"] = self.absent
        return out


def _check_sequences(pred: Sequence, gt: Sequence, ref_frame: int) -> None:
    if len(pred) != len(gt):
        raise ShapeError(f"prediction has {len(pred)} frames, ground truth {len(gt)}")
    if not 0 <= ref_frame < len(gt):
        raise DataError(f"reference frame {ref_frame} outside 0..{len(gt) - 1}")
    for t, (p, g) in enumerate(zip(pred, gt)):
        if np.shape(p) != np.shape(g):
            raise ShapeError(f"frame {t}: prediction {np.shape(p)} vs ground truth {np.shape(g)}")


def _mean_iou(pairs: Iterable) -> float | None:
    vals = []
    for a, b in pairs:
        inter, union = intersection_union(a, b)
        vals.append(1.0 if union == 0 else inter / union)
    return math.fsum(vals) / len(vals) if vals else None


def object_mask_iou(pred: Sequence[np.ndarray], gt: Sequence[np.ndarray], ref_frame: int) -> float | None:
    """Mean per-frame IoU over the frames after ``ref_frame``.

    Returns ``None`` when the reference frame is the last frame.
    """
    _check_sequences(pred, gt, ref_frame)
    return _mean_iou(zip(pred[ref_frame + 1:], gt[ref_frame + 1:]))


def default_boundary_d(shape) -> int:
    h, w = shape
    return max(1, int(round(0.02 * math.hypot(h, w))))


def boundary_region(m: np.ndarray, d: int) -> np.ndarray:
    """Mask pixels within Chebyshev distance ``d`` of the outside (border counts as outside)."""
    if d < 1:
        raise DataError("boundary distance must be >= 1")
    m = np.asarray(m, dtype=bool)
    if d >= max(m.shape, default=0):
        return m.copy()
    eroded = ndimage.minimum_filter(m.view(np.uint8), size=2 * d + 1, mode="constant", cval=0)
    return m & ~eroded.astype(bool)


def object_boundary_iou(pred: Sequence[np.ndarray], gt: Sequence[np.ndarray], ref_frame: int,
                        d: int) -> float | None:
    _check_sequences(pred, gt, ref_frame)
    return _mean_iou((boundary_region(p, d), boundary_region(g, d))
                     for p, g in zip(pred[ref_frame + 1:], gt[ref_frame + 1:]))


def score_video(gt: VideoRecord, pred_frames: Sequence[np.ndarray], d: int | None = None) -> list[ObjectScore]:
    """Per-object scores for one video. Objects with no frame after their reference are skipped."""
    if len(pred_frames) != len(gt.frames):
        raise ShapeError(f"{gt.name}: {len(pred_frames)} predicted frames, {len(gt.frames)} annotated")
    if d is None:
        d = default_boundary_d(gt.shape)
    scores = []
    for obj, entry in gt.class_map.items():
        ref_frame = gt.reference_masks[obj][0]
        g = [binary_mask(f, obj) for f in gt.frames]
        p = [binary_mask(f, obj) for f in pred_frames]
        m_iou = object_mask_iou(p, g, ref_frame)
        if m_iou is None:
            continue
        b_iou = object_boundary_iou(p, g, ref_frame, d)
        scores.append(ObjectScore(gt.name, obj, entry.kind, entry.visibility,
                                  m_iou, b_iou, len(gt.class_map)))
    return scores


def _mean(values) -> float | None:
    values = [v for v in values if v is not None]
    return math.fsum(values) / len(values) if values else None


def aggregate_report(scores: Sequence[ObjectScore], decay: DecayFit | None = None) -> EvalReport:
    if not scores:
        raise DataError("cannot aggregate an empty score list")
    fields = {}
    for name, family, kind, vis in SUBSETS:
        vals = [s.mask_iou if family == "mask" else s.boundary_iou
                for s in scores if s.kind == kind and s.visibility == vis]
        fields[name] = _mean(vals)
    for name, members in AVERAGES.items():
        fields[name] = _mean(fields[m] for m in members)
    fields["G"] = _mean(fields[name] for name, *_ in SUBSETS)
    return EvalReport(**fields, lam=decay.lam if decay is not None else None)


def video_points(scores: Sequence[ObjectScore]) -> list[tuple[int, float]]:
    """(object count, mean mask IoU) for every video in ``scores``, ordered by video name."""
    by_video = defaultdict(list)
    for s in scores:
        by_video[s.video].append(s)
    out = []
    for v in sorted(by_video):
        ss = by_video[v]
        out.append((ss[0].n_objects, math.fsum(s.mask_iou for s in ss) / len(ss)))
    return out


def group_points(per_video: Iterable[tuple[int, float]]) -> list[tuple[int, float]]:
    groups = defaultdict(list)
    for n, g in per_video:
        groups[int(n)].append(float(g))
    return [(n, math.fsum(gs) / len(gs)) for n, gs in sorted(groups.items())]


def fit_decay(per_video: Iterable[tuple[int, float]], s: float = DECAY_SCALE,
              method: str = "log") -> DecayFit:
    """Fit ``g(n) = exp(-lam * n / s)``.

    ``method="log"`` is least squares of ``ln g`` on ``n`` through the
    origin (closed form); ``"nonlinear"`` minimises the squared error of
    ``g`` itself. Points sharing ``n`` are averaged first.
    """
    points = group_points(per_video)
    if any(not (0.0 < g <= 1.0) for _, g in points):
        raise DataError("decay fit needs every mean IoU in (0, 1]")
    if len(points) < 2:
        raise DataError("decay fit needs at least two distinct object counts")
    n = np.array([p[0] for p in points], dtype=float)
    g = np.array([p[1] for p in points], dtype=float)
    lam = -s * math.fsum(n * np.log(g)) / math.fsum(n * n)
    if method == "nonlinear":
        res = optimize.least_squares(lambda x: np.exp(-x[0] * n / s) - g, x0=[lam],
                                     xtol=1e-15, ftol=1e-15, gtol=1e-15)
        lam = float(res.x[0])
    elif method != "log":
        raise ValueError(f"unknown decay fit method {method!r}")
    if not math.isfinite(lam):
        raise DataError("decay fit produced a non-finite constant")
    return DecayFit(float(lam) + 0.0, float(s), tuple(points), method)


def frame_scale_ratio(mask: np.ndarray) -> float | None:
    """Largest over smallest object pixel count; ``None`` with fewer than two objects."""
    counts = np.bincount(np.asarray(mask, dtype=np.int64).ravel())[1:]
    counts = counts[counts > 0]
    if counts.size < 2:
        return None
    return float(counts.max()) / float(counts.min())


def scale_ratio_stats(videos: Iterable[VideoRecord]) -> dict:
    ratios = []
    for v in videos:
        for f in v.frames:
            r = frame_scale_ratio(f)
            if r is not None:
                ratios.append(r)
    if not ratios:
        raise DataError("no frame contains two or more objects")
    arr = np.array(ratios)
    return {"mean": float(arr.mean()), "median": float(np.median(arr)),
            "stddev": float(arr.std()), "n_frames": len(ratios)}
