"""Dual attention over pose blocks: a skeleton branch and a frame branch.

Both branches follow the same recipe on a (C, T, V) block: permute so the
axis being attended over comes first, pool that axis away, run one small
same-padded convolution over the remaining two axes, squash with a sigmoid
into a gate in (0, 1), and multiply the gate back over the pooled axis.

The skeleton branch pools over time and gates per (channel, joint); the
frame branch pools over joints and gates per (frame, channel). The module
output averages the two gated blocks and adds the input back:

    Y = 0.5 * (Y_skeleton + Y_frame) + X

With zero conv kernels both gates are exactly 0.5 everywhere, so Y = 1.5 * X.
"""

from __future__ import annotations

import numpy as np

from . import tensor as tz
from .rng import Rng
from .tensor import Tensor

__all__ = ["DualAttention", "POOLING_MODES", "skeleton_attention",
           "frame_attention", "dual_attention"]

POOLING_MODES = ("max", "avg", "both")


class DualAttention:
    """Parameters of the two attention branches.

    kernel extents are (channel_extent, span_extent): the channel extent runs
    over C in both branches; the span extent runs over joints in the skeleton
    branch and over frames in the frame branch. Both extents must be odd.
    """

    def __init__(self, pooling: str = "max", channel_extent: int = 3,
                 span_extent: int = 7, rng: Rng | None = None,
                 weight_std: float = 0.1):
        if pooling not in POOLING_MODES:
            raise ValueError(f"pooling must be one of {POOLING_MODES}")
        if channel_extent % 2 == 0 or span_extent % 2 == 0:
            raise ValueError("attention kernel extents must be odd")
        self.pooling = pooling
        self.channel_extent = channel_extent
        self.span_extent = span_extent
        cin = 2 if pooling == "both" else 1
        # skeleton map is (1, C, V): rows C, cols V -> kernel (ch, span)
        # frame map is (1, T, C): rows T, cols C -> kernel (span, ch)
        shapes = {
            "joint_kernel": (1, cin, channel_extent, span_extent),
            "frame_kernel": (1, cin, span_extent, channel_extent),
        }
        for name, shape in shapes.items():
            init = (weight_std * rng.standard_normal(shape)) if rng is not None \
                else np.zeros(shape)
            setattr(self, name, Tensor(init, requires_grad=True))
        self.joint_bias = Tensor(np.zeros(1), requires_grad=True)
        self.frame_bias = Tensor(np.zeros(1), requires_grad=True)

    def parameters(self):
        yield "attention.joint_kernel", self.joint_kernel
        yield "attention.joint_bias", self.joint_bias
        yield "attention.frame_kernel", self.frame_kernel
        yield "attention.frame_bias", self.frame_bias


def _pool(stack: Tensor, pooling: str) -> Tensor:
    """Collapse axis 1 of (B, N, H, W) to the pooled channel(s)."""
    if pooling == "max":
        return tz.maxpool_axis(stack, 1)
    if pooling == "avg":
        return tz.avgpool_axis(stack, 1)
    return tz.concat([tz.maxpool_axis(stack, 1), tz.avgpool_axis(stack, 1)], 1)


def _as_batched(x: Tensor) -> tuple[Tensor, bool]:
    if x.ndim == 4:
        return x, True
    if x.ndim == 3:
        return tz.reshape(x, (1,) + x.shape), False
    raise ValueError("attention expects (C,T,V) or (B,C,T,V) input")


def _debatch(x: Tensor, batched: bool) -> Tensor:
    return x if batched else tz.reshape(x, x.shape[1:])


def skeleton_attention(params: DualAttention, x: Tensor) -> Tensor:
    """Gate each (channel, joint) cell by attention pooled across frames."""
    x, batched = _as_batched(x)
    xs = tz.rot_axes(x, (0, 2, 1, 3))                       # (B, T, C, V)
    pooled = _pool(xs, params.pooling)                      # (B, p, C, V)
    gate = tz.sigmoid(tz.conv2d_same(pooled, params.joint_kernel, params.joint_bias))
    ys = tz.broadcast_mul(gate, xs)                         # stretch over T
    return _debatch(tz.rot_axes(ys, (0, 2, 1, 3)), batched)


def frame_attention(params: DualAttention, x: Tensor) -> Tensor:
    """Gate each (frame, channel) cell by attention pooled across joints."""
    x, batched = _as_batched(x)
    xt = tz.rot_axes(x, (0, 3, 2, 1))                       # (B, V, T, C)
    pooled = _pool(xt, params.pooling)                      # (B, p, T, C)
    gate = tz.sigmoid(tz.conv2d_same(pooled, params.frame_kernel, params.frame_bias))
    yt = tz.broadcast_mul(gate, xt)                         # stretch over V
    return _debatch(tz.rot_axes(yt, (0, 3, 2, 1)), batched)


def dual_attention(params: DualAttention, x: Tensor) -> Tensor:
    """Average of the two gated branches plus a residual connection."""
    ys = skeleton_attention(params, x)
    yt = frame_attention(params, x)
    return tz.scale(ys + yt, 0.5) + x
