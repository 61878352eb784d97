"""From segment log-likelihoods to frame-level anomaly scores and AUC.

Scores are log-likelihoods throughout: LOWER means more anomalous. A frame's
score is built in two stages: every sliding window covering the frame for one
person is combined (mean by default), then the minimum across persons is taken,
so one anomalous person marks the frame even in a crowd. Frames nobody covers
receive the most normal score seen in their video so they never raise alarms.

micro_auc ranks all frames of all videos in a single pool (midrank handling of
ties), which equals the exhaustive probability that a random anomalous frame
outscores a random normal one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import SegmentDataset
from .flow import FlowModel, log_prob
from .tensor import Tensor, no_grad

__all__ = [
    "FrameScore",
    "AGGREGATIONS",
    "score_segments",
    "frame_scores",
    "smooth_scores",
    "micro_auc",
    "frame_table_auc",
    "roc_points",
]

AGGREGATIONS = ("mean", "min", "max")


@dataclass
class FrameScore:
    video: str
    frame: int
    score: float      # log-likelihood: lower = more anomalous
    label: int


def score_segments(model: FlowModel, dataset: SegmentDataset,
                   batch_size: int = 256) -> np.ndarray:
    """Per-segment log-likelihood, computed in batches with no gradient tape."""
    if batch_size < 1:
        raise ValueError("batch_size must be positive")
    n = len(dataset.segments)
    out = np.empty(n)
    with no_grad():
        for lo in range(0, n, batch_size):
            hi = min(lo + batch_size, n)
            batch = Tensor(dataset.stacked(range(lo, hi)))
            out[lo:hi] = log_prob(model, batch).data
    return out


def smooth_scores(values: np.ndarray, window: int) -> np.ndarray:
    """Centered moving average; the window is truncated at the video edges.

    window <= 1 returns the input unchanged. Even windows are rejected so the
    center frame is unambiguous.
    """
    if window <= 1:
        return values
    if window % 2 == 0:
        raise ValueError("smoothing window must be odd")
    half = window // 2
    n = len(values)
    out = np.empty_like(values)
    for i in range(n):
        lo, hi = max(0, i - half), min(n, i + half + 1)
        out[i] = values[lo:hi].mean()
    return out


def frame_scores(dataset: SegmentDataset, segment_scores: np.ndarray,
                 aggregation: str = "mean",
                 smooth_window: int = 0) -> list[FrameScore]:
    """Fold segment scores down to one score per (video, frame).

    Within one person, the scores of all windows covering a frame are combined
    by `aggregation`; across persons the minimum wins. Uncovered frames fall
    back to the most normal (maximum) score of their video, then of the whole
    dataset, then 0.0.
    """
    if aggregation not in AGGREGATIONS:
        raise ValueError(f"aggregation must be one of {AGGREGATIONS}")
    segment_scores = np.asarray(segment_scores, dtype=np.float64)
    if segment_scores.shape != (len(dataset.segments),):
        raise ValueError("need exactly one score per segment")

    lengths = {video: len(lab) for video, lab in dataset.frame_labels.items()}
    # per (video, person): running sum/count, or running min/max
    acc: dict[tuple[str, int], tuple[np.ndarray, np.ndarray]] = {}
    for seg, s in zip(dataset.segments, segment_scores):
        if seg.video not in lengths:
            raise ValueError(f"segment references unknown video {seg.video!r}")
        key = (seg.video, seg.person)
        if key not in acc:
            n = lengths[seg.video]
            if aggregation == "mean":
                acc[key] = (np.zeros(n), np.zeros(n))
            else:
                fill = np.inf if aggregation == "min" else -np.inf
                acc[key] = (np.full(n, fill), np.zeros(n))
        value, count = acc[key]
        lo, hi = seg.start_frame, seg.start_frame + seg.window
        if lo < 0 or hi > lengths[seg.video]:
            raise ValueError(
                f"segment at {seg.video}:{lo} extends outside the video")
        if aggregation == "mean":
            value[lo:hi] += s
        elif aggregation == "min":
            np.minimum(value[lo:hi], s, out=value[lo:hi])
        else:
            np.maximum(value[lo:hi], s, out=value[lo:hi])
        count[lo:hi] += 1

    per_video: dict[str, np.ndarray] = {}
    for video, n in lengths.items():
        per_video[video] = np.full(n, np.nan)
    for (video, _person), (value, count) in acc.items():
        covered = count > 0
        vals = np.where(covered, value / np.maximum(count, 1), np.nan) \
            if aggregation == "mean" else np.where(covered, value, np.nan)
        merged = per_video[video]
        take = covered & (np.isnan(merged) | (vals < merged))
        merged[take] = vals[take]

    finite_all = np.concatenate([v[~np.isnan(v)] for v in per_video.values()]) \
        if per_video else np.empty(0)
    dataset_max = float(finite_all.max()) if finite_all.size else 0.0
    rows: list[FrameScore] = []
    for video in sorted(lengths):
        vals = per_video[video]
        have = ~np.isnan(vals)
        video_max = float(vals[have].max()) if have.any() else dataset_max
        vals = np.where(have, vals, video_max)
        vals = smooth_scores(vals, smooth_window) if smooth_window else vals
        labels = dataset.frame_labels[video]
        for f in range(lengths[video]):
            rows.append(FrameScore(video, f, float(vals[f]), int(labels[f])))
    return rows


def micro_auc(scores, labels) -> float:
    """AUC via midranks: P(random positive outranks random negative) + half ties.

    `scores` are anomaly scores here — HIGHER means more anomalous.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.ndim != 1 or scores.shape != labels.shape:
        raise ValueError("scores and labels must be matching 1-d arrays")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = int(len(labels) - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs at least one positive and one negative")
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(len(scores))
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0    # midrank, 1-based
        i = j + 1
    rank_sum = ranks[pos].sum()
    return float((rank_sum - 0.5 * n_pos * (n_pos + 1)) / (n_pos * n_neg))


def frame_table_auc(rows: list[FrameScore]) -> float:
    """Micro AUC over a frame table; anomaly score is the negated likelihood."""
    scores = np.array([-r.score for r in rows])
    labels = np.array([r.label for r in rows])
    return micro_auc(scores, labels)


def roc_points(scores, labels) -> np.ndarray:
    """ROC curve as (fpr, tpr, threshold) rows, thresholds descending.

    A frame is predicted anomalous when its anomaly score >= threshold; the
    first row is the empty prediction at threshold +inf.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.ndim != 1 or scores.shape != labels.shape:
        raise ValueError("scores and labels must be matching 1-d arrays")
    pos = (labels == 1).astype(np.float64)
    n_pos = pos.sum()
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC needs at least one positive and one negative")
    order = np.argsort(-scores, kind="mergesort")
    sorted_scores = scores[order]
    tp = np.cumsum(pos[order])
    fp = np.cumsum(1.0 - pos[order])
    # keep only the last index of each tied score block
    last = np.nonzero(np.append(np.diff(sorted_scores) != 0, True))[0]
    out = np.empty((len(last) + 1, 3))
    out[0] = (0.0, 0.0, np.inf)
    out[1:, 0] = fp[last] / n_neg
    out[1:, 1] = tp[last] / n_pos
    out[1:, 2] = sorted_scores[last]
    return out
