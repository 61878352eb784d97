"""Normalizing flow over pose segments.

A model is K repeated steps, each: activation normalization (per-channel
affine), an invertible 1x1 channel mixing, and an affine coupling whose
scale/shift conditioner is a graph convolution followed by dual attention and
a zero-initialized per-channel projection. The flow maps a data segment
x (C, T, V) to a latent z of the same shape, accumulating the log-determinant
of the x -> z Jacobian, and scores

    log p(x) = log N(z; mu*1, I) + total_logdet .

Everything runs on (B, C, T, V) batches internally; (C, T, V) inputs are
treated as a batch of one and returned at their own rank.
"""

from __future__ import annotations

import json
import math

import numpy as np

from . import tensor as tz
from .attention import DualAttention, dual_attention
from .graph import GcnLayer, SkeletonGraph, build_graph, gcn_forward
from .rng import Rng
from .tensor import Tensor, no_grad

__all__ = [
    "FlowError",
    "ActnormLayer",
    "InvConvLayer",
    "CouplingLayer",
    "FlowStep",
    "FlowModel",
    "log_prob",
    "nll_loss",
    "save_model",
    "load_model",
    "CHECKPOINT_VERSION",
]

CHECKPOINT_VERSION = 1
LOG_SCALE_CLAMP = 5.0
_STD_FLOOR = 1e-12


class FlowError(RuntimeError):
    """Flow misuse: uninitialized layers, shape mismatches, bad checkpoints."""


def _as_batched(x) -> tuple[Tensor, bool]:
    if not isinstance(x, Tensor):
        x = Tensor(x)
    if x.ndim == 4:
        return x, True
    if x.ndim == 3:
        return tz.reshape(x, (1,) + x.shape), False
    raise FlowError("flow expects (C,T,V) or (B,C,T,V) input")


def _spread(scalar: Tensor, batch: int) -> Tensor:
    """Replicate a scalar log-det across a batch as a (B,) tensor."""
    return tz.broadcast_mul(tz.reshape(scalar, (1,)), Tensor(np.ones(batch)))


class ActnormLayer:
    """Per-channel affine Y_c = exp(log_scale_c) * (X_c + bias_c).

    Parameters start at the identity and are set from the first training
    batch so every channel leaves with mean 0 and variance 1.
    """

    def __init__(self, channels: int):
        self.channels = channels
        self.log_scale = Tensor(np.zeros(channels), requires_grad=True)
        self.bias = Tensor(np.zeros(channels), requires_grad=True)
        self.initialized = False

    def initialize_from(self, batch: np.ndarray) -> None:
        """Data-dependent init from a (B, C, T, V) activation batch."""
        mean = batch.mean(axis=(0, 2, 3))
        std = batch.std(axis=(0, 2, 3))
        std = np.maximum(std, _STD_FLOOR)
        self.bias.data = -mean
        self.log_scale.data = -np.log(std)
        self.initialized = True

    def forward(self, x: Tensor, training: bool = False) -> tuple[Tensor, Tensor]:
        if not self.initialized:
            if not training:
                raise FlowError("actnorm used in inference before initialization")
            self.initialize_from(x.data)
        b, c, t, v = x.shape
        ls = tz.reshape(self.log_scale, (1, c, 1, 1))
        bias = tz.reshape(self.bias, (1, c, 1, 1))
        y = tz.broadcast_mul(x + bias, tz.exp(ls))
        logdet = _spread(tz.scale(self.log_scale.sum(), float(t * v)), b)
        return y, logdet

    def inverse(self, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        if not self.initialized:
            raise FlowError("actnorm used in inference before initialization")
        b, c, t, v = y.shape
        x = y * np.exp(-self.log_scale.data)[None, :, None, None] \
            - self.bias.data[None, :, None, None]
        ld = np.full(b, -float(t * v) * self.log_scale.data.sum())
        return x, ld

    def parameters(self):
        yield "actnorm.log_scale", self.log_scale
        yield "actnorm.bias", self.bias


class InvConvLayer:
    """Invertible 1x1 channel mixing: Y[:, t, v] = Q X[:, t, v].

    Q starts as a random rotation (orthogonal, det +1), so the initial
    log-determinant is exactly zero. Inversion solves against Q directly.
    """

    def __init__(self, channels: int, rng: Rng | None = None):
        self.channels = channels
        q = np.eye(channels) if rng is None else rng.rotation(channels)
        self.q = Tensor(q, requires_grad=True)

    def forward(self, x: Tensor, training: bool = False) -> tuple[Tensor, Tensor]:
        b, c, t, v = x.shape
        h = tz.rot_axes(x, (0, 2, 3, 1))
        h = tz.matmul(tz.reshape(h, (b * t * v, c)), tz.rot_axes(self.q, (1, 0)))
        y = tz.rot_axes(tz.reshape(h, (b, t, v, c)), (0, 3, 1, 2))
        logdet = _spread(tz.scale(tz.logabsdet(self.q), float(t * v)), b)
        return y, logdet

    def inverse(self, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        b, c, t, v = y.shape
        sign, ld = np.linalg.slogdet(self.q.data)
        if sign == 0 or not math.isfinite(ld):
            raise FlowError("channel mixing matrix is singular")
        ymat = y.transpose(0, 2, 3, 1).reshape(b * t * v, c)
        xmat = np.linalg.solve(self.q.data, ymat.T).T
        x = xmat.reshape(b, t, v, c).transpose(0, 3, 1, 2)
        return np.ascontiguousarray(x), np.full(b, -float(t * v) * ld)

    def parameters(self):
        yield "mixer.q", self.q


class CouplingLayer:
    """Affine (or additive) coupling conditioned through GCN + dual attention.

    One half of the channels passes through unchanged and drives a
    conditioner h = project(attend(gcn(x_cond))) whose output splits into a
    log-scale and a shift for the other half:

        y_tr = exp(clamp(s, +-5)) * x_tr + t        (affine)
        y_tr = x_tr + t                             (additive)

    The projection starts at zero, making the layer an exact identity with
    zero log-determinant at initialization.
    """

    def __init__(self, channels: int, graph: SkeletonGraph, mode: str = "affine",
                 pooling: str = "max", channel_extent: int = 3, span_extent: int = 7,
                 gcn_bias: bool = True, condition_on_second_half: bool = False,
                 rng: Rng | None = None, allow_uneven_split: bool = False,
                 conditioner_std: float = 1.0):
        if mode not in ("affine", "additive"):
            raise FlowError(f"unknown coupling mode {mode!r}")
        if channels < 2:
            raise FlowError("coupling needs at least 2 channels")
        if channels % 2 and not allow_uneven_split:
            raise FlowError("odd channel count (enable the uneven split to allow)")
        self.channels = channels
        self.mode = mode
        self.graph = graph
        self.condition_on_second_half = condition_on_second_half
        self.n_cond = channels // 2
        self.n_trans = channels - self.n_cond
        hidden = 2 * self.n_cond
        # the output projection starts at zero, so the conditioner features can
        # afford a generous init scale; richer random features speed up the
        # short training runs this model is sized for
        self.gcn = GcnLayer(self.n_cond, hidden, graph.partition_count,
                            rng=rng.derive("gcn") if rng else None, bias=gcn_bias,
                            weight_std=conditioner_std)
        self.attention = DualAttention(pooling=pooling, channel_extent=channel_extent,
                                       span_extent=span_extent,
                                       rng=rng.derive("attention") if rng else None,
                                       weight_std=conditioner_std)
        # zero-initialized output projection -> identity coupling at start
        self.proj_weight = Tensor(np.zeros((hidden, 2 * self.n_trans)),
                                  requires_grad=True)
        self.proj_bias = Tensor(np.zeros(2 * self.n_trans), requires_grad=True)

    def _split(self, x: Tensor) -> tuple[Tensor, Tensor]:
        if self.condition_on_second_half:
            return (tz.narrow(x, 1, self.n_trans, self.n_cond),
                    tz.narrow(x, 1, 0, self.n_trans))
        return (tz.narrow(x, 1, 0, self.n_cond),
                tz.narrow(x, 1, self.n_cond, self.n_trans))

    def _merge(self, x_cond: Tensor, y_trans: Tensor) -> Tensor:
        if self.condition_on_second_half:
            return tz.concat([y_trans, x_cond], 1)
        return tz.concat([x_cond, y_trans], 1)

    def _conditioner(self, x_cond: Tensor) -> tuple[Tensor, Tensor]:
        h = gcn_forward(self.gcn, self.graph, x_cond)
        h = dual_attention(self.attention, h)
        b, c, t, v = h.shape
        flat = tz.matmul(tz.reshape(tz.rot_axes(h, (0, 2, 3, 1)), (b * t * v, c)),
                         self.proj_weight)
        flat = flat + tz.reshape(self.proj_bias, (1, 2 * self.n_trans))
        out = tz.rot_axes(tz.reshape(flat, (b, t, v, 2 * self.n_trans)), (0, 3, 1, 2))
        s_raw = tz.narrow(out, 1, 0, self.n_trans)
        t_raw = tz.narrow(out, 1, self.n_trans, self.n_trans)
        return s_raw, t_raw

    def forward(self, x: Tensor, training: bool = False) -> tuple[Tensor, Tensor]:
        if x.shape[1] != self.channels:
            raise FlowError(f"coupling expects {self.channels} channels")
        b = x.shape[0]
        x_cond, x_trans = self._split(x)
        s_raw, t_raw = self._conditioner(x_cond)
        if self.mode == "affine":
            s_log = tz.clamp(s_raw, -LOG_SCALE_CLAMP, LOG_SCALE_CLAMP)
            y_trans = tz.broadcast_mul(x_trans, tz.exp(s_log)) + t_raw
            logdet = s_log.sum(axes=(1, 2, 3))
        else:
            y_trans = x_trans + t_raw
            logdet = Tensor(np.zeros(b))
        return self._merge(x_cond, y_trans), logdet

    def inverse(self, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        b = y.shape[0]
        if self.condition_on_second_half:
            y_trans, y_cond = y[:, :self.n_trans], y[:, self.n_trans:]
        else:
            y_cond, y_trans = y[:, :self.n_cond], y[:, self.n_cond:]
        with no_grad():
            s_raw, t_raw = self._conditioner(Tensor(y_cond))
        if self.mode == "affine":
            s_log = np.clip(s_raw.data, -LOG_SCALE_CLAMP, LOG_SCALE_CLAMP)
            x_trans = (y_trans - t_raw.data) * np.exp(-s_log)
            ld = -s_log.sum(axis=(1, 2, 3))
        else:
            x_trans = y_trans - t_raw.data
            ld = np.zeros(b)
        if self.condition_on_second_half:
            x = np.concatenate([x_trans, y_cond], axis=1)
        else:
            x = np.concatenate([y_cond, x_trans], axis=1)
        return x, ld

    def parameters(self):
        yield from self.gcn.parameters()
        yield from self.attention.parameters()
        yield "projection.weight", self.proj_weight
        yield "projection.bias", self.proj_bias


class FlowStep:
    """actnorm -> invertible mixing -> coupling."""

    def __init__(self, actnorm: ActnormLayer, mixer: InvConvLayer,
                 coupling: CouplingLayer):
        self.actnorm = actnorm
        self.mixer = mixer
        self.coupling = coupling

    def forward(self, x: Tensor, training: bool = False) -> tuple[Tensor, Tensor]:
        x, ld1 = self.actnorm.forward(x, training)
        x, ld2 = self.mixer.forward(x, training)
        x, ld3 = self.coupling.forward(x, training)
        return x, ld1 + ld2 + ld3

    def inverse(self, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        y, ld3 = self.coupling.inverse(y)
        y, ld2 = self.mixer.inverse(y)
        y, ld1 = self.actnorm.inverse(y)
        return y, ld1 + ld2 + ld3

    def parameters(self):
        yield from self.actnorm.parameters()
        yield from self.mixer.parameters()
        yield from self.coupling.parameters()


class FlowModel:
    """K flow steps plus an isotropic normal prior centered at prior_mean."""

    def __init__(self, steps: list[FlowStep], graph: SkeletonGraph,
                 spec: dict, seed: int | None = None):
        if not steps:
            raise FlowError("a flow needs at least one step")
        self.steps = steps
        self.graph = graph
        self.spec = dict(spec)
        self.seed = seed

    # -- construction -------------------------------------------------------

    @classmethod
    def create(cls, graph: SkeletonGraph, channels: int = 2, flow_steps: int = 8,
               prior_mean: float = 3.0, coupling: str = "affine",
               pooling: str = "max", channel_extent: int = 3, span_extent: int = 7,
               gcn_bias: bool = True, condition_on_second_half: bool = False,
               allow_uneven_split: bool = False, rng: Rng | None = None,
               identity: bool = False, conditioner_std: float = 1.0) -> "FlowModel":
        """Build a model. With `identity=True` (or no rng) every transform is
        the exact identity: unit actnorm, Q = I, zero conditioner weights."""
        if flow_steps < 1:
            raise FlowError("flow_steps must be >= 1")
        init_rng = None if identity else rng
        steps = []
        for k in range(flow_steps):
            step_rng = init_rng.derive("step", k) if init_rng is not None else None
            act = ActnormLayer(channels)
            if identity:
                act.initialized = True
            mix = InvConvLayer(channels, rng=step_rng.derive("mix") if step_rng else None)
            cpl = CouplingLayer(
                channels, graph, mode=coupling, pooling=pooling,
                channel_extent=channel_extent, span_extent=span_extent,
                gcn_bias=gcn_bias, condition_on_second_half=condition_on_second_half,
                rng=step_rng.derive("coupling") if step_rng else None,
                allow_uneven_split=allow_uneven_split,
                conditioner_std=conditioner_std)
            steps.append(FlowStep(act, mix, cpl))
        spec = {
            "channels": channels, "flow_steps": flow_steps,
            "prior_mean": float(prior_mean), "coupling": coupling,
            "pooling": pooling, "channel_extent": channel_extent,
            "span_extent": span_extent, "gcn_bias": gcn_bias,
            "condition_on_second_half": condition_on_second_half,
            "allow_uneven_split": allow_uneven_split,
        }
        return cls(steps, graph, spec, seed=None if rng is None else rng.seed)

    # -- bookkeeping ---------------------------------------------------------

    @property
    def channels(self) -> int:
        return self.spec["channels"]

    @property
    def prior_mean(self) -> float:
        return self.spec["prior_mean"]

    def parameters(self):
        for k, step in enumerate(self.steps):
            for name, p in step.parameters():
                yield f"step{k}.{name}", p

    def parameter_tensors(self) -> list[Tensor]:
        return [p for _, p in self.parameters()]

    def zero_grad(self) -> None:
        for _, p in self.parameters():
            p.grad = None

    def _check_input(self, x: Tensor) -> None:
        if x.shape[1] != self.channels or x.shape[3] != self.graph.joint_count:
            raise FlowError(
                f"input {tuple(x.shape[1:])} does not match model "
                f"(channels={self.channels}, joints={self.graph.joint_count})")

    def initialize_actnorm(self, batch: np.ndarray) -> None:
        """Run the data-dependent actnorm init on one (B, C, T, V) batch."""
        x, _ = _as_batched(np.asarray(batch, dtype=np.float64))
        self._check_input(x)
        with no_grad():
            for step in self.steps:
                x, _ = step.forward(x, training=True)

    # -- the flow itself -------------------------------------------------------

    def forward(self, x, training: bool = False) -> tuple[Tensor, Tensor]:
        """Map data to latent; returns (z, log-det of the x->z Jacobian)."""
        x, batched = _as_batched(x)
        self._check_input(x)
        total = None
        for step in self.steps:
            x, ld = step.forward(x, training)
            total = ld if total is None else total + ld
        if not batched:
            return tz.reshape(x, x.shape[1:]), tz.reshape(total, ())
        return x, total

    def inverse(self, z) -> tuple[np.ndarray, np.ndarray]:
        """Map latent back to data; returns (x, log-det of the z->x map)."""
        z = np.asarray(z, dtype=np.float64)
        batched = z.ndim == 4
        if not batched:
            z = z[None]
        total = np.zeros(z.shape[0])
        for step in reversed(self.steps):
            z, ld = step.inverse(z)
            total = total + ld
        if not batched:
            return z[0], total[0]
        return z, total


def log_prob(model: FlowModel, x, training: bool = False) -> Tensor:
    """Segment log-likelihood(s): scalar for (C,T,V), shape (B,) for batches."""
    z, logdet = model.forward(x, training)
    axes = (1, 2, 3) if z.ndim == 4 else None
    d = float(np.prod(z.shape[1:] if z.ndim == 4 else z.shape))
    diff = z - model.prior_mean
    sq = tz.broadcast_mul(diff, diff).sum(axes=axes)
    prior = tz.scale(sq, -0.5) + (-0.5 * d * math.log(2.0 * math.pi))
    return prior + logdet


def nll_loss(model: FlowModel, batch, training: bool = True) -> Tensor:
    """Mean negative log-likelihood over a non-empty (B, C, T, V) batch."""
    if not isinstance(batch, Tensor):
        batch = Tensor(batch)
    if batch.ndim != 4 or batch.shape[0] == 0:
        raise FlowError("nll_loss expects a non-empty (B,C,T,V) batch")
    return tz.scale(log_prob(model, batch, training).mean(), -1.0)


# -- checkpoints -----------------------------------------------------------------


def _enc(arr: np.ndarray) -> dict:
    return {"shape": list(arr.shape), "data": [float(v) for v in arr.reshape(-1)]}


def _dec(doc: dict) -> np.ndarray:
    arr = np.asarray(doc["data"], dtype=np.float64).reshape(doc["shape"])
    return arr


def save_model(model: FlowModel, path: str, config: dict | None = None) -> None:
    """Write the model as a single JSON document (exact float round-trip)."""
    steps = []
    for step in model.steps:
        cpl = step.coupling
        steps.append({
            "actnorm": {
                "log_scale": _enc(step.actnorm.log_scale.data),
                "bias": _enc(step.actnorm.bias.data),
                "initialized": step.actnorm.initialized,
            },
            "mixer": {"q": _enc(step.mixer.q.data)},
            "coupling": {
                "gcn_weights": [_enc(w.data) for w in cpl.gcn.weights],
                "gcn_bias": None if cpl.gcn.bias is None else _enc(cpl.gcn.bias.data),
                "joint_kernel": _enc(cpl.attention.joint_kernel.data),
                "joint_bias": _enc(cpl.attention.joint_bias.data),
                "frame_kernel": _enc(cpl.attention.frame_kernel.data),
                "frame_bias": _enc(cpl.attention.frame_bias.data),
                "proj_weight": _enc(cpl.proj_weight.data),
                "proj_bias": _enc(cpl.proj_bias.data),
            },
        })
    doc = {
        "format_version": CHECKPOINT_VERSION,
        "model": model.spec,
        "graph": {"joints": model.graph.joint_count,
                  "edges": [list(e) for e in model.graph.edges]},
        "prior_mean": model.prior_mean,
        "seed": model.seed,
        "config": config,
        "steps": steps,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_model(path: str) -> FlowModel:
    """Rebuild a model from `save_model` output, bit-exact."""
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format_version") != CHECKPOINT_VERSION:
        raise FlowError(f"unsupported checkpoint version {doc.get('format_version')!r}")
    spec = doc["model"]
    graph = build_graph(doc["graph"]["joints"],
                        [tuple(e) for e in doc["graph"]["edges"]])
    model = FlowModel.create(
        graph,
        channels=spec["channels"], flow_steps=spec["flow_steps"],
        prior_mean=spec["prior_mean"], coupling=spec["coupling"],
        pooling=spec["pooling"], channel_extent=spec["channel_extent"],
        span_extent=spec["span_extent"], gcn_bias=spec["gcn_bias"],
        condition_on_second_half=spec["condition_on_second_half"],
        allow_uneven_split=spec.get("allow_uneven_split", False),
        rng=None, identity=True)
    model.seed = doc.get("seed")
    if len(doc["steps"]) != len(model.steps):
        raise FlowError("checkpoint step count mismatch")
    for step, sdoc in zip(model.steps, doc["steps"]):
        step.actnorm.log_scale.data = _dec(sdoc["actnorm"]["log_scale"])
        step.actnorm.bias.data = _dec(sdoc["actnorm"]["bias"])
        step.actnorm.initialized = bool(sdoc["actnorm"]["initialized"])
        step.mixer.q.data = _dec(sdoc["mixer"]["q"])
        cdoc = sdoc["coupling"]
        if len(cdoc["gcn_weights"]) != len(step.coupling.gcn.weights):
            raise FlowError("checkpoint gcn partition mismatch")
        for w, wdoc in zip(step.coupling.gcn.weights, cdoc["gcn_weights"]):
            w.data = _dec(wdoc)
        if cdoc["gcn_bias"] is not None:
            step.coupling.gcn.bias.data = _dec(cdoc["gcn_bias"])
        step.coupling.attention.joint_kernel.data = _dec(cdoc["joint_kernel"])
        step.coupling.attention.joint_bias.data = _dec(cdoc["joint_bias"])
        step.coupling.attention.frame_kernel.data = _dec(cdoc["frame_kernel"])
        step.coupling.attention.frame_bias.data = _dec(cdoc["frame_bias"])
        step.coupling.proj_weight.data = _dec(cdoc["proj_weight"])
        step.coupling.proj_bias.data = _dec(cdoc["proj_bias"])
    return model
