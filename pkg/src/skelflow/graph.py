"""Skeleton graphs and graph convolution over pose channels.

A skeleton is an undirected joint graph. For the convolution it is expanded
into two distance partitions — hop 0 (the identity, each joint to itself) and
hop 1 (the adjacency) — each symmetrically degree-normalized. A graph
convolution then mixes channels per partition and sums:

    Y_t = sum_k  W_k^T . X_t . N_k  (+ bias)

applied independently to every frame t of a (C, T, V) block.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import tensor as tz
from .rng import Rng
from .tensor import Tensor

__all__ = [
    "GraphError",
    "SkeletonGraph",
    "GcnLayer",
    "build_graph",
    "load_graph_json",
    "gcn_forward",
    "DEFAULT_JOINT_COUNT",
    "DEFAULT_EDGES",
]

# OpenPose/COCO 18-joint layout: nose, neck, shoulders/elbows/wrists (R then L),
# hips/knees/ankles (R then L), eyes, ears.
DEFAULT_JOINT_COUNT = 18
DEFAULT_EDGES: tuple[tuple[int, int], ...] = (
    (0, 1), (1, 2), (2, 3), (3, 4), (1, 5), (5, 6), (6, 7),
    (1, 8), (8, 9), (9, 10), (1, 11), (11, 12), (12, 13),
    (0, 14), (14, 15), (0, 16), (16, 17),
)


class GraphError(ValueError):
    """Invalid skeleton description."""


@dataclass(frozen=True, eq=False)
class SkeletonGraph:
    joint_count: int
    edges: tuple[tuple[int, int], ...]
    partitions: tuple[np.ndarray, ...] = field(repr=False)  # normalized, V x V each

    @property
    def partition_count(self) -> int:
        return len(self.partitions)


def _normalize(mat: np.ndarray) -> np.ndarray:
    """Symmetric degree normalization D^-1/2 M D^-1/2; zero-degree rows stay zero."""
    deg = mat.sum(axis=1)
    inv_sqrt = np.where(deg > 0, 1.0 / np.sqrt(np.where(deg > 0, deg, 1.0)), 0.0)
    return inv_sqrt[:, None] * mat * inv_sqrt[None, :]


def build_graph(joint_count: int, edges=None) -> SkeletonGraph:
    """Validate an undirected joint graph and precompute its two normalized
    distance partitions (identity and one-hop adjacency)."""
    if edges is None and joint_count == DEFAULT_JOINT_COUNT:
        edges = DEFAULT_EDGES
    if edges is None:
        raise GraphError(f"no default edges for joint_count={joint_count}")
    if joint_count < 1:
        raise GraphError("joint_count must be positive")

    canon: list[tuple[int, int]] = []
    seen: set[tuple[int, int]] = set()
    for e in edges:
        i, j = int(e[0]), int(e[1])
        if not (0 <= i < joint_count and 0 <= j < joint_count):
            raise GraphError(f"edge ({i},{j}) out of range for {joint_count} joints")
        if i == j:
            raise GraphError(f"self-edge ({i},{j}) not allowed")
        key = (min(i, j), max(i, j))
        if key in seen:
            raise GraphError(f"duplicate edge ({i},{j})")
        seen.add(key)
        canon.append(key)

    adj = np.zeros((joint_count, joint_count))
    for i, j in canon:
        adj[i, j] = adj[j, i] = 1.0

    # connectivity (a single joint with no edges counts as connected)
    reach = {0}
    frontier = [0]
    while frontier:
        v = frontier.pop()
        for u in np.flatnonzero(adj[v]):
            if u not in reach:
                reach.add(int(u))
                frontier.append(int(u))
    if len(reach) != joint_count:
        raise GraphError(f"graph is disconnected ({len(reach)}/{joint_count} reachable)")

    partitions = (_normalize(np.eye(joint_count)), _normalize(adj))
    return SkeletonGraph(joint_count, tuple(canon), partitions)


def load_graph_json(path: str) -> SkeletonGraph:
    """Read {"joints": V, "edges": [[i,j],...]} and build the graph."""
    with open(path) as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict) or "joints" not in doc or "edges" not in doc:
        raise GraphError(f"{path}: graph json needs 'joints' and 'edges'")
    return build_graph(int(doc["joints"]), [tuple(e) for e in doc["edges"]])


class GcnLayer:
    """Per-partition channel mixing weights plus one shared bias."""

    def __init__(self, in_channels: int, out_channels: int, partition_count: int,
                 rng: Rng | None = None, bias: bool = True, weight_std: float = 0.1):
        self.in_channels = in_channels
        self.out_channels = out_channels
        if rng is None:
            ws = [np.zeros((in_channels, out_channels)) for _ in range(partition_count)]
        else:
            ws = [weight_std * rng.standard_normal((in_channels, out_channels))
                  for _ in range(partition_count)]
        self.weights = [Tensor(w, requires_grad=True) for w in ws]
        self.bias = Tensor(np.zeros(out_channels), requires_grad=True) if bias else None

    def parameters(self):
        for k, w in enumerate(self.weights):
            yield f"gcn.w{k}", w
        if self.bias is not None:
            yield "gcn.bias", self.bias


def gcn_forward(layer: GcnLayer, graph: SkeletonGraph, x: Tensor) -> Tensor:
    """Apply the graph convolution to (C, T, V) or batched (B, C, T, V) input."""
    if len(layer.weights) != graph.partition_count:
        raise ValueError("layer/graph partition count mismatch")
    batched = x.ndim == 4
    if not batched:
        if x.ndim != 3:
            raise ValueError("gcn_forward expects (C,T,V) or (B,C,T,V)")
        x = tz.reshape(x, (1,) + x.shape)
    b, c, t, v = x.shape
    if c != layer.in_channels or v != graph.joint_count:
        raise ValueError(f"input shape {(c, t, v)} does not match layer/graph")

    out = None
    for nk, wk in zip(graph.partitions, layer.weights):
        # joint mixing: row (b,c,t) of the V axis times the symmetric N_k
        agg = tz.matmul(tz.reshape(x, (b * c * t, v)), Tensor(nk))
        agg = tz.reshape(agg, (b, c, t, v))
        # channel mixing: (B,T,V,C) rows through W_k
        h = tz.rot_axes(agg, (0, 2, 3, 1))
        h = tz.matmul(tz.reshape(h, (b * t * v, c)), wk)
        h = tz.rot_axes(tz.reshape(h, (b, t, v, layer.out_channels)), (0, 3, 1, 2))
        out = h if out is None else out + h
    if layer.bias is not None:
        out = out + tz.reshape(layer.bias, (1, layer.out_channels, 1, 1))
    return out if batched else tz.reshape(out, out.shape[1:])
