"""Frame aggregation, AUC, and ROC behavior."""

import numpy as np
import pytest

from skelflow.data import PoseSegment, SegmentDataset
from skelflow.flow import FlowModel
from skelflow.graph import build_graph
from skelflow.rng import Rng
from skelflow.scoring import (
    FrameScore,
    frame_scores,
    frame_table_auc,
    micro_auc,
    roc_points,
    score_segments,
    smooth_scores,
)

from oracles import pairwise_auc


# -- micro AUC ---------------------------------------------------------------------


def test_micro_auc_worked_example():
    scores = [0.1, 0.4, 0.35, 0.8]
    labels = [0, 0, 1, 1]
    assert micro_auc(scores, labels) == 0.75


def test_micro_auc_extremes():
    assert micro_auc([1.0, 2.0, 3.0, 4.0], [0, 0, 1, 1]) == 1.0
    assert micro_auc([4.0, 3.0, 2.0, 1.0], [0, 0, 1, 1]) == 0.0
    assert micro_auc([5.0, 5.0, 5.0, 5.0], [0, 1, 0, 1]) == 0.5


def test_micro_auc_matches_exhaustive_pairwise():
    rng = np.random.default_rng(0)
    for trial in range(60):
        n = int(rng.integers(2, 40))
        labels = rng.integers(0, 2, n)
        if labels.min() == labels.max():
            labels[0] = 1 - labels[0]
        scores = rng.normal(size=n)
        if trial % 3 == 0:
            # quantize to force plenty of ties
            scores = np.round(scores * 2) / 2
        fast = micro_auc(scores, labels)
        slow = pairwise_auc(scores, labels)
        assert abs(fast - slow) < 1e-12


def test_micro_auc_rejects_degenerate_input():
    with pytest.raises(ValueError):
        micro_auc([1.0, 2.0], [1, 1])
    with pytest.raises(ValueError):
        micro_auc([1.0, 2.0], [0, 0])
    with pytest.raises(ValueError):
        micro_auc([1.0, 2.0, 3.0], [0, 1])


# -- ROC ----------------------------------------------------------------------------


def test_roc_points_hand_case():
    pts = roc_points([3.0, 2.0, 1.0], [1, 0, 1])
    want = np.array([
        [0.0, 0.0, np.inf],
        [0.0, 0.5, 3.0],
        [1.0, 0.5, 2.0],
        [1.0, 1.0, 1.0],
    ])
    assert np.array_equal(pts, want)


def test_roc_ties_collapse_to_one_point():
    pts = roc_points([1.0, 1.0, 0.0], [1, 0, 0])
    want = np.array([
        [0.0, 0.0, np.inf],
        [0.5, 1.0, 1.0],
        [1.0, 1.0, 0.0],
    ])
    assert np.array_equal(pts, want)


def test_roc_area_equals_micro_auc():
    rng = np.random.default_rng(3)
    for _ in range(25):
        n = int(rng.integers(4, 60))
        labels = rng.integers(0, 2, n)
        if labels.min() == labels.max():
            labels[0] = 1 - labels[0]
        scores = np.round(rng.normal(size=n) * 4) / 4
        pts = roc_points(scores, labels)
        area = np.trapezoid(pts[:, 1], pts[:, 0])
        assert abs(area - micro_auc(scores, labels)) < 1e-12
        assert np.all(np.diff(pts[:, 0]) >= 0)
        assert np.all(np.diff(pts[:, 1]) >= 0)
        assert pts[-1, 0] == 1.0 and pts[-1, 1] == 1.0


# -- segment scoring ---------------------------------------------------------------


def segment_dataset(n_videos=2, frames=8, window=3, joints=4, seed=0):
    rng = np.random.default_rng(seed)
    segments = []
    labels = {}
    for k in range(n_videos):
        video = f"v{k}"
        labels[video] = rng.integers(0, 2, frames).astype(np.int64)
        for start in range(frames - window + 1):
            segments.append(PoseSegment(
                x=rng.normal(size=(2, window, joints)), video=video,
                person=0, start_frame=start))
    return SegmentDataset(segments, labels)


def test_score_segments_identity_model_closed_form():
    ds = segment_dataset()
    graph = build_graph(4, [(0, 1), (1, 2), (2, 3)])
    model = FlowModel.create(graph, channels=2, flow_steps=2, identity=True)
    scores = score_segments(model, ds)
    d = 2 * 3 * 4
    for s, seg in zip(scores, ds.segments):
        want = -0.5 * d * np.log(2 * np.pi) - 0.5 * np.sum((seg.x - 3.0) ** 2)
        assert abs(s - want) < 1e-12


def test_score_segments_chunking_is_equivalent():
    ds = segment_dataset(n_videos=3, frames=12, seed=4)
    graph = build_graph(4, [(0, 1), (1, 2), (2, 3)])
    model = FlowModel.create(graph, channels=2, flow_steps=3, rng=Rng(8))
    model.initialize_actnorm(ds.stacked(range(len(ds.segments))))
    small = score_segments(model, ds, batch_size=5)
    big = score_segments(model, ds, batch_size=1000)
    assert np.array_equal(small, big)
    with pytest.raises(ValueError):
        score_segments(model, ds, batch_size=0)


# -- frame aggregation -------------------------------------------------------------


def two_person_dataset():
    """Video "a": person 0 windows at 0..3, person 1 one window at 2.

    All segments are length 3 over a 6-frame video; the payload arrays are
    unused by frame_scores, only the bookkeeping matters.
    """
    dummy = np.zeros((2, 3, 4))
    segments = [
        PoseSegment(dummy, "a", 0, 0),
        PoseSegment(dummy, "a", 0, 1),
        PoseSegment(dummy, "a", 0, 2),
        PoseSegment(dummy, "a", 0, 3),
        PoseSegment(dummy, "a", 1, 2),
    ]
    labels = {"a": np.array([0, 0, 1, 1, 0, 0], dtype=np.int64)}
    return SegmentDataset(segments, labels)


def test_frame_scores_mean_then_min_across_persons():
    ds = two_person_dataset()
    s = np.array([10.0, 20.0, 30.0, 40.0, -5.0])
    rows = frame_scores(ds, s, aggregation="mean")
    person0 = [10.0, 15.0, 20.0, 30.0, 35.0, 40.0]
    person1 = [np.nan, np.nan, -5.0, -5.0, -5.0, np.nan]
    want = [p0 if np.isnan(p1) else min(p0, p1)
            for p0, p1 in zip(person0, person1)]
    assert [r.frame for r in rows] == list(range(6))
    assert [r.score for r in rows] == want
    assert [r.label for r in rows] == [0, 0, 1, 1, 0, 0]


def test_frame_scores_min_and_max_aggregation():
    ds = two_person_dataset()
    s = np.array([10.0, 20.0, 30.0, 40.0, 100.0])
    rows_min = frame_scores(ds, s, aggregation="min")
    # person 0 min over covering windows; person 1's 100 never wins the
    # cross-person minimum
    assert [r.score for r in rows_min] == [10.0, 10.0, 10.0, 20.0, 30.0, 40.0]
    rows_max = frame_scores(ds, s, aggregation="max")
    assert [r.score for r in rows_max] == [10.0, 20.0, 30.0, 40.0, 40.0, 40.0]
    with pytest.raises(ValueError):
        frame_scores(ds, s, aggregation="median")


def test_uncovered_frames_take_video_then_dataset_maximum():
    dummy = np.zeros((2, 2, 4))
    ds = SegmentDataset(
        segments=[PoseSegment(dummy, "a", 0, 1)],
        frame_labels={"a": np.zeros(5, dtype=np.int64),
                      "b": np.zeros(3, dtype=np.int64)})
    rows = frame_scores(ds, np.array([-7.0]))
    by_video = {}
    for r in rows:
        by_video.setdefault(r.video, []).append(r.score)
    # frames 1-2 of "a" are covered; everything else falls back to the max
    assert by_video["a"] == [-7.0, -7.0, -7.0, -7.0, -7.0]
    assert by_video["b"] == [-7.0, -7.0, -7.0]


def test_empty_dataset_scores_zero():
    ds = SegmentDataset(segments=[],
                        frame_labels={"a": np.zeros(2, dtype=np.int64)})
    rows = frame_scores(ds, np.empty(0))
    assert [r.score for r in rows] == [0.0, 0.0]


def test_frame_scores_validates_inputs():
    ds = two_person_dataset()
    with pytest.raises(ValueError):
        frame_scores(ds, np.zeros(3))     # wrong score count
    stray = SegmentDataset(
        segments=[PoseSegment(np.zeros((2, 3, 4)), "ghost", 0, 0)],
        frame_labels={"a": np.zeros(4, dtype=np.int64)})
    with pytest.raises(ValueError):
        frame_scores(stray, np.zeros(1))
    long = SegmentDataset(
        segments=[PoseSegment(np.zeros((2, 9, 4)), "a", 0, 0)],
        frame_labels={"a": np.zeros(4, dtype=np.int64)})
    with pytest.raises(ValueError):
        frame_scores(long, np.zeros(1))   # window extends past the video


def test_smoothing_truncated_moving_average():
    vals = np.array([0.0, 3.0, 6.0])
    assert np.array_equal(smooth_scores(vals, 3), [1.5, 3.0, 4.5])
    assert smooth_scores(vals, 1) is vals
    assert smooth_scores(vals, 0) is vals
    with pytest.raises(ValueError):
        smooth_scores(vals, 4)
    big = np.arange(10.0)
    sm = smooth_scores(big, 5)
    assert sm[5] == big[3:8].mean()
    assert sm[0] == big[0:3].mean()


def test_frame_scores_smoothing_applies_per_video():
    ds = two_person_dataset()
    s = np.array([10.0, 20.0, 30.0, 40.0, 1000.0])
    raw = frame_scores(ds, s)
    sm = frame_scores(ds, s, smooth_window=3)
    raw_vals = np.array([r.score for r in raw])
    want = smooth_scores(raw_vals, 3)
    assert np.array_equal(np.array([r.score for r in sm]), want)


def test_frame_table_auc_uses_negated_likelihood():
    rows = [
        FrameScore("a", 0, -50.0, 1),    # very unlikely -> anomalous: correct
        FrameScore("a", 1, -1.0, 0),
        FrameScore("a", 2, -2.0, 0),
        FrameScore("a", 3, -40.0, 1),
    ]
    assert frame_table_auc(rows) == 1.0
    rows[0] = FrameScore("a", 0, 0.0, 1)
    assert frame_table_auc(rows) == 0.5
