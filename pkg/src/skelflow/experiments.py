"""End-to-end experiment harnesses: benchmark synthesis, evaluation,
noise robustness, training-set contamination, and the no-training baseline."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ExperimentConfig
from .data import (
    SegmentDataset,
    add_noise,
    build_dataset,
    contaminate,
    load_tracks,
    synth_anomalous,
    synth_normal,
)
from .flow import FlowModel
from .rng import Rng
from .scoring import FrameScore, frame_scores, frame_table_auc, score_segments
from .train import TrainResult, build_model, resolve_graph, train

__all__ = [
    "EvalResult",
    "make_benchmark_tracks",
    "make_benchmark",
    "load_or_synth",
    "evaluate",
    "train_and_eval",
    "run_noise_robustness",
    "run_contamination",
    "run_zero_training",
    "param_audit",
]


@dataclass
class EvalResult:
    auc: float
    rows: list[FrameScore]
    segment_scores: np.ndarray


def make_benchmark_tracks(config: ExperimentConfig):
    """Synthesize the (train, test, pool) track lists from the config's seed.

    Each of the three corpora draws from its own seed branch, so resizing one
    never reshuffles the others. The test set mixes normal and anomalous
    tracks; the pool is all anomalous and feeds contamination experiments.
    """
    rng = Rng(config.seed)
    s = config.synth
    train_tracks = synth_normal(rng.derive("synth-train"), s.train_tracks,
                                s.train_frames)
    test_tracks = (
        synth_normal(rng.derive("synth-test-normal"), s.test_normal_tracks,
                     s.test_frames, video_prefix="test-normal")
        + synth_anomalous(rng.derive("synth-test-anomalous"),
                          s.test_anomalous_tracks, s.test_frames,
                          video_prefix="test")
    )
    pool_tracks = synth_anomalous(rng.derive("synth-pool"), s.pool_tracks,
                                  s.pool_frames, video_prefix="pool")
    return train_tracks, test_tracks, pool_tracks


def make_benchmark(config: ExperimentConfig) -> tuple[SegmentDataset,
                                                      SegmentDataset,
                                                      SegmentDataset]:
    """Synthesize (train, test, pool) datasets; see make_benchmark_tracks."""
    train_tracks, test_tracks, pool_tracks = make_benchmark_tracks(config)
    kc = config.keep_confidence
    train_ds = build_dataset(train_tracks, config.window, config.stride, kc)
    test_ds = build_dataset(test_tracks, config.window, 1, kc)
    pool_ds = build_dataset(pool_tracks, config.window, config.stride, kc)
    return train_ds, test_ds, pool_ds


def load_or_synth(config: ExperimentConfig) -> tuple[SegmentDataset,
                                                     SegmentDataset,
                                                     SegmentDataset]:
    """Track files win when configured; anything unset is synthesized."""
    need_synth = (config.train_tracks is None or config.test_tracks is None
                  or config.pool_tracks is None)
    synth = make_benchmark(config) if need_synth else (None, None, None)
    out = []
    for path, fallback, stride in (
            (config.train_tracks, synth[0], config.stride),
            (config.test_tracks, synth[1], 1),
            (config.pool_tracks, synth[2], config.stride)):
        if path is None:
            out.append(fallback)
        else:
            tracks = load_tracks(path, joint_count=config.joints)
            out.append(build_dataset(tracks, config.window, stride,
                                     config.keep_confidence))
    return tuple(out)


def evaluate(model: FlowModel, test_ds: SegmentDataset,
             config: ExperimentConfig) -> EvalResult:
    seg_scores = score_segments(model, test_ds, config.batch_size)
    rows = frame_scores(test_ds, seg_scores, config.aggregation,
                        config.smooth_window)
    return EvalResult(auc=frame_table_auc(rows), rows=rows,
                      segment_scores=seg_scores)


def train_and_eval(config: ExperimentConfig,
                   train_ds: SegmentDataset,
                   test_ds: SegmentDataset) -> tuple[TrainResult, EvalResult]:
    model = build_model(config)
    result = train(model, train_ds, config)
    return result, evaluate(model, test_ds, config)


def run_noise_robustness(config: ExperimentConfig, scales: list[float],
                         train_ds: SegmentDataset,
                         test_ds: SegmentDataset) -> list[dict]:
    """Train once on clean data, then score noisy copies of the test set.

    Scale 0 reuses the test segments bit-exactly, so its row reproduces the
    clean evaluation. Each scale perturbs from its own seed branch.
    """
    result, clean = train_and_eval(config, train_ds, test_ds)
    out = []
    rng = Rng(config.seed)
    for i, scale in enumerate(scales):
        noisy = add_noise(test_ds, scale, rng.derive("noise", i))
        ev = evaluate(result.model, noisy, config)
        out.append({
            "scale": scale,
            "auc": ev.auc,
            "drop": clean.auc - ev.auc,
            "rows": ev.rows,
        })
    return out


def run_contamination(config: ExperimentConfig, fractions: list[float],
                      train_ds: SegmentDataset, test_ds: SegmentDataset,
                      pool_ds: SegmentDataset) -> list[dict]:
    """Retrain from the same initialization per fraction of anomalous
    training segments; fraction 0 is the clean baseline."""
    out = []
    rng = Rng(config.seed)
    for i, fraction in enumerate(fractions):
        mixed, manifest = contaminate(train_ds, pool_ds, fraction,
                                      rng.derive("contaminate", i))
        _result, ev = train_and_eval(config, mixed, test_ds)
        out.append({
            "fraction": fraction,
            "replaced": manifest["replaced"],
            "auc": ev.auc,
            "rows": ev.rows,
        })
    for row in out:
        if row["fraction"] == 0:
            base = row["auc"]
            break
    else:
        base = None
    for row in out:
        row["drop"] = None if base is None else base - row["auc"]
    return out


def _zero_trial(args) -> float:
    config, trial, init_batch, test_ds = args
    model = build_model(config, None, Rng(config.seed).derive("zero", trial))
    model.initialize_actnorm(init_batch)
    return evaluate(model, test_ds, config).auc


def run_zero_training(config: ExperimentConfig, trials: int,
                      train_ds: SegmentDataset, test_ds: SegmentDataset,
                      workers: int = 1) -> dict:
    """Score with freshly initialized, untrained models.

    Each trial builds a model from the seed branch ("zero", trial) and only
    calibrates the per-channel normalization on the first training batch —
    no gradient step runs. The spread over trials measures how much of the
    detector is architecture rather than learning.

    Trials run sequentially by default; workers > 1 fans them out to
    processes. Seeds are disjoint per trial and results are keyed by trial
    index, so the outcome is identical either way.
    """
    if trials < 1:
        raise ValueError("need at least one trial")
    if workers < 1:
        raise ValueError("workers must be >= 1")
    n_init = min(config.batch_size, len(train_ds.segments))
    init_batch = train_ds.stacked(range(n_init))
    jobs = [(config, t, init_batch, test_ds) for t in range(trials)]
    if workers == 1:
        aucs = [_zero_trial(job) for job in jobs]
    else:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=workers) as pool:
            aucs = list(pool.map(_zero_trial, jobs))
    aucs_arr = np.array(aucs)
    return {
        "trials": trials,
        "aucs": aucs,
        "mean_auc": float(aucs_arr.mean()),
        "std_auc": float(aucs_arr.std()),
        "min_auc": float(aucs_arr.min()),
        "max_auc": float(aucs_arr.max()),
    }


def param_audit(model: FlowModel) -> tuple[list[dict], int]:
    """Per-tensor parameter counts plus the grand total."""
    rows = []
    total = 0
    for name, tensor in model.parameters():
        count = int(tensor.data.size)
        rows.append({"name": name, "shape": tuple(tensor.data.shape),
                     "count": count})
        total += count
    return rows, total
