"""Maximum-likelihood training loop with deterministic shuffling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ExperimentConfig
from .data import SegmentDataset
from .flow import FlowModel, nll_loss
from .graph import SkeletonGraph, build_graph, load_graph_json
from .optim import Adam
from .rng import Rng
from .tensor import NonFiniteError, Tensor, backward

__all__ = ["TrainingDiverged", "TrainResult", "resolve_graph", "build_model",
           "train"]


class TrainingDiverged(RuntimeError):
    """Loss or parameters left the finite range; carries step and epoch."""


@dataclass
class TrainResult:
    model: FlowModel
    epoch_losses: list[float]    # mean NLL per epoch
    steps: int


def resolve_graph(config: ExperimentConfig) -> SkeletonGraph:
    if config.graph_path is not None:
        graph = load_graph_json(config.graph_path)
        if graph.joint_count != config.joints:
            raise ValueError(
                f"graph has {graph.joint_count} joints, config says {config.joints}")
        return graph
    return build_graph(config.joints)


def build_model(config: ExperimentConfig, graph: SkeletonGraph | None = None,
                rng: Rng | None = None) -> FlowModel:
    """Fresh model; the default rng branch is seed -> "init"."""
    if graph is None:
        graph = resolve_graph(config)
    if rng is None:
        rng = Rng(config.seed).derive("init")
    return FlowModel.create(
        graph,
        channels=config.channels,
        flow_steps=config.flow_steps,
        prior_mean=config.prior_mean,
        coupling=config.coupling,
        pooling=config.pooling,
        channel_extent=config.channel_extent,
        span_extent=config.span_extent,
        gcn_bias=config.gcn_bias,
        condition_on_second_half=config.condition_on_second_half,
        allow_uneven_split=config.channels % 2 == 1,
        rng=rng,
    )


def train(model: FlowModel, dataset: SegmentDataset,
          config: ExperimentConfig) -> TrainResult:
    """Train in place and return the per-epoch loss history.

    The first `batch_size` segments (dataset order) initialize the
    per-channel normalization before any gradient step, so an epochs=0 run
    still produces a usable, data-calibrated model. Shuffling draws from the
    seed branch ("shuffle", epoch) — reruns with one config are identical.
    """
    n = len(dataset.segments)
    if n == 0:
        raise ValueError("training dataset has no segments")
    rng = Rng(config.seed)
    init_count = min(config.batch_size, n)
    model.initialize_actnorm(dataset.stacked(range(init_count)))

    params = [t for _name, t in model.parameters()]
    opt = Adam(params, lr=config.learning_rate, beta1=config.beta1,
               beta2=config.beta2, eps=config.adam_eps)
    epoch_losses: list[float] = []
    steps = 0
    for epoch in range(config.epochs):
        order = rng.derive("shuffle", epoch).permutation(n)
        total = 0.0
        for lo in range(0, n, config.batch_size):
            indices = order[lo:lo + config.batch_size]
            batch = Tensor(dataset.stacked(indices))
            model.zero_grad()
            try:
                loss = nll_loss(model, batch, training=True)
                backward(loss)
                opt.step()
            except (NonFiniteError, np.linalg.LinAlgError) as err:
                raise TrainingDiverged(
                    f"diverged at epoch {epoch} step {steps}: {err}") from None
            except ValueError as err:
                if "singular" in str(err):
                    raise TrainingDiverged(
                        f"channel mixing became singular at epoch {epoch} "
                        f"step {steps}") from None
                raise
            total += loss.item() * len(indices)
            steps += 1
        epoch_losses.append(total / n)
    return TrainResult(model=model, epoch_losses=epoch_losses, steps=steps)
