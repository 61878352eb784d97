"""Experiment configuration: one flat dataclass, JSON-loadable, strict keys."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields

from .attention import POOLING_MODES
from .scoring import AGGREGATIONS

__all__ = ["SynthConfig", "ExperimentConfig", "ConfigError", "load_config"]


class ConfigError(ValueError):
    """Bad configuration file or field value."""


@dataclass
class SynthConfig:
    """Sizing of the generated walker benchmark."""

    train_tracks: int = 100
    train_frames: int = 43        # 43 - 24 + 1 = 20 windows per track
    test_normal_tracks: int = 10
    test_anomalous_tracks: int = 10
    test_frames: int = 50
    pool_tracks: int = 40
    pool_frames: int = 43


@dataclass
class ExperimentConfig:
    # model shape
    channels: int = 2
    window: int = 24
    joints: int = 18
    flow_steps: int = 8
    prior_mean: float = 3.0
    coupling: str = "affine"
    pooling: str = "max"
    channel_extent: int = 3
    span_extent: int = 7
    gcn_bias: bool = True
    condition_on_second_half: bool = False
    keep_confidence: bool = False
    # optimization
    learning_rate: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 8
    batch_size: int = 256
    stride: int = 1
    seed: int = 0
    # scoring
    aggregation: str = "mean"
    smooth_window: int = 0
    # file locations (None means "synthesize" for data, "default" for graph)
    graph_path: str | None = None
    train_tracks: str | None = None
    test_tracks: str | None = None
    pool_tracks: str | None = None
    checkpoint: str | None = None
    out_dir: str = "out"
    synth: SynthConfig = field(default_factory=SynthConfig)

    def validate(self) -> None:
        if self.channels < 2:
            raise ConfigError("channels must be >= 2 (coupling needs a split)")
        if self.keep_confidence and self.channels != 3:
            raise ConfigError("keep_confidence carries 3 channels; set channels=3")
        if not self.keep_confidence and self.channels != 2:
            raise ConfigError("without confidence the input has 2 channels")
        if self.window < 1 or self.stride < 1:
            raise ConfigError("window and stride must be positive")
        if self.joints < 1:
            raise ConfigError("joints must be positive")
        if self.flow_steps < 1:
            raise ConfigError("flow_steps must be positive")
        if self.coupling not in ("affine", "additive"):
            raise ConfigError("coupling must be 'affine' or 'additive'")
        if self.pooling not in POOLING_MODES:
            raise ConfigError(f"pooling must be one of {POOLING_MODES}")
        if self.aggregation not in AGGREGATIONS:
            raise ConfigError(f"aggregation must be one of {AGGREGATIONS}")
        if self.channel_extent % 2 == 0 or self.span_extent % 2 == 0:
            raise ConfigError("attention kernel extents must be odd")
        if self.smooth_window < 0 or (self.smooth_window > 1
                                      and self.smooth_window % 2 == 0):
            raise ConfigError("smooth_window must be 0 or odd")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be positive")
        for name in ("train_tracks", "train_frames", "test_normal_tracks",
                     "test_anomalous_tracks", "test_frames", "pool_tracks",
                     "pool_frames"):
            if getattr(self.synth, name) < 0:
                raise ConfigError(f"synth.{name} must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


def _apply(cls, data: dict, where: str):
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {sorted(unknown)}")
    return data


def load_config(path: str) -> ExperimentConfig:
    """Read a JSON config; unknown keys are errors, missing keys take defaults."""
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as err:
            raise ConfigError(f"{path}: invalid json ({err.msg})") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")
    synth_raw = raw.pop("synth", None)
    _apply(ExperimentConfig, raw, path)
    cfg = ExperimentConfig(**raw)
    if synth_raw is not None:
        if not isinstance(synth_raw, dict):
            raise ConfigError(f"{path}: synth must be an object")
        _apply(SynthConfig, synth_raw, f"{path} (synth)")
        cfg.synth = SynthConfig(**synth_raw)
    cfg.validate()
    return cfg
