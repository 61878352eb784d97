"""Skeleton-sequence anomaly detection with a graph-attentive normalizing flow.

The model stacks K invertible steps — per-channel activation normalization,
a 1x1 invertible channel mixer, and an affine coupling whose conditioner is a
skeleton graph convolution followed by a dual (joint + frame) attention
module — over pose segments of shape (channels, frames, joints), and scores
anomalies by exact log-likelihood under an isotropic normal prior.
"""

from .attention import POOLING_MODES, DualAttention, dual_attention
from .config import ConfigError, ExperimentConfig, SynthConfig, load_config
from .data import (
    ANOMALY_KINDS,
    NormalizedTrack,
    PoseSegment,
    PoseTrack,
    SegmentDataset,
    SynthParams,
    TrackFormatError,
    add_noise,
    build_dataset,
    contaminate,
    load_tracks,
    make_windows,
    normalize_keypoints,
    synth_anomalous,
    synth_normal,
    write_tracks,
)
from .experiments import (
    EvalResult,
    evaluate,
    load_or_synth,
    make_benchmark,
    make_benchmark_tracks,
    param_audit,
    run_contamination,
    run_noise_robustness,
    run_zero_training,
    train_and_eval,
)
from .flow import (
    ActnormLayer,
    CouplingLayer,
    FlowError,
    FlowModel,
    FlowStep,
    InvConvLayer,
    load_model,
    log_prob,
    nll_loss,
    save_model,
)
from .graph import (
    DEFAULT_EDGES,
    DEFAULT_JOINT_COUNT,
    GcnLayer,
    GraphError,
    SkeletonGraph,
    build_graph,
    gcn_forward,
    load_graph_json,
)
from .optim import Adam
from .rng import Rng, randn
from .scoring import (
    AGGREGATIONS,
    FrameScore,
    frame_scores,
    frame_table_auc,
    micro_auc,
    roc_points,
    score_segments,
    smooth_scores,
)
from .tensor import GradientError, NonFiniteError, Tensor, backward, no_grad
from .train import TrainingDiverged, TrainResult, build_model, resolve_graph, train

__all__ = [
    "ANOMALY_KINDS",
    "AGGREGATIONS",
    "ActnormLayer",
    "Adam",
    "ConfigError",
    "CouplingLayer",
    "DEFAULT_EDGES",
    "DEFAULT_JOINT_COUNT",
    "DualAttention",
    "EvalResult",
    "ExperimentConfig",
    "FlowError",
    "FlowModel",
    "FlowStep",
    "FrameScore",
    "GcnLayer",
    "GradientError",
    "GraphError",
    "InvConvLayer",
    "NonFiniteError",
    "NormalizedTrack",
    "POOLING_MODES",
    "PoseSegment",
    "PoseTrack",
    "Rng",
    "SegmentDataset",
    "SkeletonGraph",
    "SynthConfig",
    "SynthParams",
    "Tensor",
    "TrackFormatError",
    "TrainResult",
    "TrainingDiverged",
    "add_noise",
    "backward",
    "build_dataset",
    "build_graph",
    "build_model",
    "contaminate",
    "dual_attention",
    "evaluate",
    "frame_scores",
    "frame_table_auc",
    "gcn_forward",
    "load_config",
    "load_graph_json",
    "load_model",
    "load_or_synth",
    "load_tracks",
    "log_prob",
    "make_benchmark",
    "make_benchmark_tracks",
    "make_windows",
    "micro_auc",
    "nll_loss",
    "no_grad",
    "normalize_keypoints",
    "param_audit",
    "randn",
    "resolve_graph",
    "roc_points",
    "run_contamination",
    "run_noise_robustness",
    "run_zero_training",
    "save_model",
    "score_segments",
    "smooth_scores",
    "synth_anomalous",
    "synth_normal",
    "train",
    "train_and_eval",
    "write_tracks",
]
