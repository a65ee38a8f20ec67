import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from helpers import blob_mask
from oracles import chebyshev_boundary, frame_iou, per_frame_scale_ratios, pixel_loop_iou_counts
from panovos.dataset import SEEN, STUFF, THING, UNSEEN, ClassEntry, VideoRecord, extract_reference_masks
from panovos.errors import DataError, ShapeError
from panovos.metrics import (AVERAGES, SUBSETS, ObjectScore, aggregate_report, boundary_region,
                             default_boundary_d, fit_decay, frame_scale_ratio, group_points,
                             object_boundary_iou, object_mask_iou, scale_ratio_stats, score_video,
                             video_points)


def _frames(rng, n, h=16, w=16, p=0.4):
    return [rng.random((h, w)) < p for _ in range(n)]


# -- mask IoU -----------------------------------------------------------------

def test_mask_iou_identity_and_empty(rng):
    gt = _frames(rng, 4)
    assert object_mask_iou(gt, gt, 0) == 1.0
    empty = [np.zeros_like(g) for g in gt]
    assert object_mask_iou(empty, gt, 0) == 0.0


def test_mask_iou_matches_pixel_loop(rng):
    for _ in range(10):
        gt, pred = _frames(rng, 3), _frames(rng, 3)
        vals = []
        for p, g in zip(pred[1:], gt[1:]):
            inter, union = pixel_loop_iou_counts(p, g)
            vals.append(1.0 if union == 0 else inter / union)
        assert object_mask_iou(pred, gt, 0) == pytest.approx(sum(vals) / 2, abs=1e-15)


def test_mask_iou_excludes_reference_and_earlier_frames(rng):
    gt = _frames(rng, 5)
    pred = [np.zeros_like(g) for g in gt[:3]] + gt[3:]
    assert object_mask_iou(pred, gt, 2) == 1.0


def test_mask_iou_both_empty_frames_count_one():
    z = np.zeros((4, 4), bool)
    one = z.copy()
    one[0, 0] = True
    assert object_mask_iou([one, z, one], [one, z, z], 0) == 0.5


def test_mask_iou_none_after_last_frame(rng):
    gt = _frames(rng, 3)
    assert object_mask_iou(gt, gt, 2) is None


def test_mask_iou_errors(rng):
    gt = _frames(rng, 3)
    with pytest.raises(ShapeError):
        object_mask_iou(gt[:2], gt, 0)
    with pytest.raises(DataError):
        object_mask_iou(gt, gt, 3)
    with pytest.raises(ShapeError):
        object_mask_iou([g[:, :5] for g in gt], gt, 0)


@given(st.integers(0, 10_000), st.integers(2, 4))
def test_mask_iou_invariant_to_nearest_upscaling(seed, factor):
    rng = np.random.default_rng(seed)
    gt, pred = _frames(rng, 3, 7, 9), _frames(rng, 3, 7, 9)
    up = lambda fs: [np.kron(f, np.ones((factor, factor), dtype=bool)) for f in fs]  # noqa: E731
    assert object_mask_iou(up(pred), up(gt), 0) == object_mask_iou(pred, gt, 0)


# -- boundary -----------------------------------------------------------------

def test_boundary_of_5x5_square_is_its_perimeter():
    m = np.zeros((9, 9), bool)
    m[2:7, 2:7] = True
    region = boundary_region(m, 1)
    assert region.sum() == 16
    assert np.array_equal(region, chebyshev_boundary(m, 1))
    assert not region[3:6, 3:6].any()


def test_boundary_large_d_returns_mask(rng):
    m = rng.random((10, 13)) < 0.5
    assert np.array_equal(boundary_region(m, 13), m)
    assert np.array_equal(boundary_region(m, 17), m)


def test_boundary_empty_mask():
    assert not boundary_region(np.zeros((6, 6), bool), 2).any()


def test_boundary_image_border_counts_as_outside():
    m = np.ones((6, 6), bool)
    region = boundary_region(m, 1)
    assert region.sum() == 36 - 16


def test_boundary_rejects_zero_width():
    with pytest.raises(DataError):
        boundary_region(np.ones((3, 3), bool), 0)


@pytest.mark.parametrize("d", [1, 2, 3, 5])
def test_boundary_matches_distance_transform(rng, d):
    for _ in range(15):
        m = blob_mask(rng, 24, 31, 4) > 0
        assert np.array_equal(boundary_region(m, d), chebyshev_boundary(m, d))


def test_default_boundary_width():
    # round(0.02 * diagonal), at least 1
    assert default_boundary_d((64, 64)) == 2     # 0.02 * 90.51 = 1.81
    assert default_boundary_d((480, 854)) == 20  # 0.02 * 979.65 = 19.59
    assert default_boundary_d((8, 8)) == 1       # 0.23 rounds to 0, clamped


def test_boundary_iou_identity_and_huge_d(rng):
    gt, pred = _frames(rng, 4), _frames(rng, 4)
    assert object_boundary_iou(gt, gt, 0, 2) == 1.0
    assert object_boundary_iou(pred, gt, 1, 16) == object_mask_iou(pred, gt, 1)


# -- aggregation ----------------------------------------------------------------

def _score(kind, vis, m, b, video="v", obj=1, n=1):
    return ObjectScore(video, obj, kind, vis, m, b, n)


def _one_per_subset(values):
    """Scores whose eight subset means are ``values`` in SUBSETS order."""
    by = {name: v for (name, *_), v in zip(SUBSETS, values)}
    out = []
    for i, (kind, vis) in enumerate([(THING, SEEN), (THING, UNSEEN), (STUFF, SEEN), (STUFF, UNSEEN)]):
        k, v = ("th" if kind == THING else "sf"), ("s" if vis == SEEN else "u")
        out.append(_score(kind, vis, by[f"M_{k}_{v}"], by[f"B_{k}_{v}"], obj=i + 1))
    return out


def test_report_all_ones():
    r = aggregate_report([_score(k, v, 1.0, 1.0) for k in (THING, STUFF) for v in (SEEN, UNSEEN)])
    for name in [s[0] for s in SUBSETS] + list(AVERAGES) + ["G"]:
        assert getattr(r, name) == 1.0
    assert r.absent == []


def test_report_hand_placed_subsets():
    vals = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8]
    r = aggregate_report(_one_per_subset(vals))
    assert r.G == pytest.approx(0.45, abs=1e-15)
    # G_s averages M_th_s, M_sf_s, B_th_s, B_sf_s = 0.1, 0.3, 0.5, 0.7
    assert r.G_s == pytest.approx(0.4, abs=1e-15)
    assert r.G_u == pytest.approx(0.5, abs=1e-15)
    assert r.G_th == pytest.approx(0.35, abs=1e-15)
    assert r.G_sf == pytest.approx(0.55, abs=1e-15)


def test_report_single_subset_marks_others_absent():
    r = aggregate_report([_score(THING, SEEN, 0.6, 0.2), _score(THING, SEEN, 0.8, 0.4, obj=2)])
    assert r.M_th_s == pytest.approx(0.7)
    assert r.B_th_s == pytest.approx(0.3)
    assert set(r.absent) == {s[0] for s in SUBSETS} - {"M_th_s", "B_th_s"}
    assert r.G == pytest.approx(0.5)
    assert r.G_u is None and r.G_sf is None
    assert r.G_s == pytest.approx(0.5)


def test_report_rejects_empty():
    with pytest.raises(DataError):
        aggregate_report([])


def test_object_score_range_checked():
    with pytest.raises(DataError):
        _score(THING, SEEN, 1.2, 0.5)


score_lists = st.lists(
    st.builds(_score, st.sampled_from([THING, STUFF]), st.sampled_from([SEEN, UNSEEN]),
              st.floats(0, 1), st.floats(0, 1)),
    min_size=1, max_size=30)


@given(score_lists, st.randoms(use_true_random=False))
def test_report_permutation_invariant(scores, rnd):
    shuffled = list(scores)
    rnd.shuffle(shuffled)
    assert aggregate_report(scores) == aggregate_report(shuffled)


@given(score_lists)
def test_report_mean_identities(scores):
    r = aggregate_report(scores)
    present = [getattr(r, s[0]) for s in SUBSETS if getattr(r, s[0]) is not None]
    assert abs(r.G - math.fsum(present) / len(present)) <= 1e-12
    for name, members in AVERAGES.items():
        vals = [getattr(r, m) for m in members if getattr(r, m) is not None]
        got = getattr(r, name)
        if vals:
            assert abs(got - math.fsum(vals) / len(vals)) <= 1e-12
        else:
            assert got is None


# -- decay ----------------------------------------------------------------------

@pytest.mark.parametrize("lam", [0.0, 0.3, 0.8, 1.42, 2.9])
def test_decay_exact_on_closed_form(lam):
    pts = [(n, math.exp(-lam * n / 100)) for n in range(1, 51)]
    fit = fit_decay(pts)
    assert abs(fit.lam - lam) <= 1e-9
    assert fit.s == 100.0


def test_decay_all_ones_gives_zero():
    assert fit_decay([(2, 1.0), (5, 1.0)]).lam == 0.0


def test_decay_groups_equal_counts_first():
    pts = [(2, 0.5), (2, 0.7), (4, 0.4)]
    assert group_points(pts) == [(2, 0.6), (4, 0.4)]
    expected = -100 * (2 * math.log(0.6) + 4 * math.log(0.4)) / (4 + 16)
    assert fit_decay(pts).lam == pytest.approx(expected, rel=1e-12)


def test_decay_order_preserved():
    pts = lambda lam: [(n, math.exp(-lam * n / 100)) for n in range(1, 51)]  # noqa: E731
    assert fit_decay(pts(1.42)).lam > fit_decay(pts(0.70)).lam


def test_decay_nonlinear_agrees_on_clean_data():
    pts = [(n, math.exp(-0.84 * n / 100)) for n in range(1, 51)]
    assert fit_decay(pts, method="nonlinear").lam == pytest.approx(0.84, abs=1e-8)


def test_decay_errors():
    with pytest.raises(DataError):
        fit_decay([(1, 0.5), (2, 0.0)])
    with pytest.raises(DataError):
        fit_decay([(3, 0.5), (3, 0.6)])
    with pytest.raises(ValueError):
        fit_decay([(1, 0.5), (2, 0.4)], method="cubic")


def test_video_points_use_object_count_and_mean_mask_iou():
    scores = [_score(THING, SEEN, 0.2, 0, "a", 1, 2), _score(STUFF, SEEN, 0.6, 0, "a", 2, 2),
              _score(THING, SEEN, 0.9, 0, "b", 1, 5)]
    assert video_points(scores) == [(2, pytest.approx(0.4)), (5, 0.9)]


# -- scale ratio ----------------------------------------------------------------

def test_scale_ratio_examples():
    f = np.zeros((20, 20), np.uint16)
    f[:10, :10] = 1
    f[15:17, 15:17] = 2
    assert frame_scale_ratio(f) == 25.0
    assert frame_scale_ratio(np.ones((3, 3))) is None


def _video(frames, name="v"):
    frames = [np.asarray(f, np.uint16) for f in frames]
    refs = extract_reference_masks(frames)
    return VideoRecord(name, tuple(frames), refs, {o: ClassEntry(1, THING, SEEN) for o in refs})


def test_scale_ratio_equal_sizes():
    f = np.zeros((4, 4), np.uint16)
    f[:2, :2], f[2:, 2:] = 1, 2
    stats = scale_ratio_stats([_video([f, f])])
    assert stats == {"mean": 1.0, "median": 1.0, "stddev": 0.0, "n_frames": 2}


def test_scale_ratio_matches_sort_oracle(rng):
    videos = [_video([blob_mask(rng, 20, 20, rng.integers(1, 5)) for _ in range(4)], f"v{i}")
              for i in range(6)]
    ratios = [r for v in videos for r in per_frame_scale_ratios(v.frames)]
    stats = scale_ratio_stats(videos)
    assert stats["n_frames"] == len(ratios)
    assert stats["mean"] == pytest.approx(np.mean(ratios), rel=1e-12)
    assert stats["median"] == pytest.approx(np.median(ratios), rel=1e-12)
    assert stats["stddev"] == pytest.approx(np.std(ratios), rel=1e-9)


def test_scale_ratio_requires_a_multi_object_frame():
    with pytest.raises(DataError):
        scale_ratio_stats([_video([np.ones((3, 3))])])


# -- video scoring --------------------------------------------------------------

def test_score_video_against_oracle(rng):
    gt_frames = [blob_mask(rng, 24, 24, 3) for _ in range(4)]
    gt = _video(gt_frames)
    pred = [blob_mask(rng, 24, 24, 3) for _ in range(4)]
    scores = {s.obj: s for s in score_video(gt, pred, d=2)}
    for obj, (t, _) in gt.reference_masks.items():
        if t == 3:
            assert obj not in scores
            continue
        frames = range(t + 1, 4)
        m = np.mean([frame_iou(pred[i] == obj, gt_frames[i] == obj) for i in frames])
        b = np.mean([frame_iou(chebyshev_boundary(pred[i] == obj, 2), chebyshev_boundary(gt_frames[i] == obj, 2))
                     for i in frames])
        assert scores[obj].mask_iou == pytest.approx(m, abs=1e-15)
        assert scores[obj].boundary_iou == pytest.approx(b, abs=1e-15)
        assert scores[obj].n_objects == len(gt.class_map)


def test_score_video_frame_count_mismatch(rng):
    gt = _video([blob_mask(rng, 8, 8, 2) for _ in range(3)])
    with pytest.raises(ShapeError):
        score_video(gt, list(gt.frames[:2]))
