"""Dense float64 tensors with reverse-mode automatic differentiation.

The engine is deliberately small: a Tensor wraps a row-major numpy float64
array, and every operation that participates in training records its parents
and a vector-Jacobian closure on a tape. `backward()` walks the tape in
reverse topological order and accumulates gradients into leaf tensors.

Broadcasting is restricted to stretching axes of extent 1 between equal-rank
operands (scalars are also allowed); anything fancier is a shape error.
Producing NaN or Inf anywhere is treated as an error state, not a value.
"""

from __future__ import annotations

import contextlib
import math

import numpy as np

__all__ = [
    "Tensor",
    "NonFiniteError",
    "GradientError",
    "no_grad",
    "add",
    "broadcast_mul",
    "scale",
    "matmul",
    "conv2d_same",
    "maxpool_axis",
    "avgpool_axis",
    "rot_axes",
    "reshape",
    "narrow",
    "concat",
    "exp",
    "log",
    "sigmoid",
    "clamp",
    "logabsdet",
    "backward",
]


class NonFiniteError(FloatingPointError):
    """An operation produced (or was handed) NaN or Inf."""


class GradientError(RuntimeError):
    """Misuse of the backward machinery."""


_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (inference fast path)."""
    global _GRAD_ENABLED
    saved = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = saved


class Tensor:
    """Shape + row-major float64 buffer, optionally carrying a gradient."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp", "_done")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if not np.isfinite(arr).all():
            raise NonFiniteError("tensor constructed from non-finite values")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._vjp = None
        self._done = False

    # -- bookkeeping ----------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # -- operator sugar --------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return broadcast_mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __sub__(self, other):
        return add(self, -_wrap(other))

    def __rsub__(self, other):
        return add(_wrap(other), -self)

    def sum(self, axes=None, keepdims: bool = False) -> "Tensor":
        return _sum(self, axes, keepdims)

    def mean(self, axes=None, keepdims: bool = False) -> "Tensor":
        n = self.data.size if axes is None else _axes_size(self.shape, axes)
        if n == 0:
            raise ValueError("mean over an empty extent")
        return scale(_sum(self, axes, keepdims), 1.0 / n)

    def reshape(self, shape) -> "Tensor":
        return reshape(self, shape)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: tuple[Tensor, ...], vjp) -> Tensor:
    """Build an op result, checking finiteness and recording the tape edge."""
    if not np.isfinite(data).all():
        raise NonFiniteError("operation produced non-finite values")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._done = False
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._vjp = vjp
    else:
        out.requires_grad = False
        out._parents = ()
        out._vjp = None
    return out


def _check_broadcast(a: tuple[int, ...], b: tuple[int, ...]) -> None:
    if a == () or b == ():
        return
    if len(a) != len(b):
        raise ValueError(f"rank mismatch in broadcast: {a} vs {b}")
    for x, y in zip(a, b):
        if x != y and x != 1 and y != 1:
            raise ValueError(f"incompatible shapes {a} and {b}; only extent-1 axes stretch")


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient back down to the shape it was broadcast from."""
    if g.shape == shape:
        return g
    if shape == ():
        return np.asarray(g.sum())
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    return g.sum(axis=axes, keepdims=True)


def _axes_size(shape: tuple[int, ...], axes) -> int:
    axes = (axes,) if isinstance(axes, int) else tuple(axes)
    n = 1
    for ax in axes:
        n *= shape[ax]
    return n


# -- arithmetic -----------------------------------------------------------


def add(a, b) -> Tensor:
    """Elementwise sum with extent-1 broadcasting."""
    a, b = _wrap(a), _wrap(b)
    _check_broadcast(a.shape, b.shape)
    out = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(out, (a, b), vjp)


def broadcast_mul(a, b) -> Tensor:
    """Elementwise product with extent-1 broadcasting."""
    a, b = _wrap(a), _wrap(b)
    _check_broadcast(a.shape, b.shape)
    out = a.data * b.data

    def vjp(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _result(out, (a, b), vjp)


def scale(x, c: float) -> Tensor:
    """Multiply by a python-float constant (not differentiated through c)."""
    x = _wrap(x)
    c = float(c)

    def vjp(g):
        return (g * c,)

    return _result(x.data * c, (x,), vjp)


def _sum(x: Tensor, axes, keepdims: bool) -> Tensor:
    if axes is None:
        out = np.asarray(x.data.sum())
        if keepdims:
            out = out.reshape((1,) * x.ndim)

        def vjp(g):
            return (np.broadcast_to(np.asarray(g).reshape((1,) * x.ndim), x.shape),)

        return _result(out, (x,), vjp)

    axes = (axes,) if isinstance(axes, int) else tuple(axes)
    out = x.data.sum(axis=axes, keepdims=keepdims)
    kept = x.data.sum(axis=axes, keepdims=True).shape  # shape with 1s at reduced axes

    def vjp(g):
        return (np.broadcast_to(g.reshape(kept), x.shape),)

    return _result(out, (x,), vjp)


# -- elementwise nonlinearities -------------------------------------------


def exp(x) -> Tensor:
    x = _wrap(x)
    with np.errstate(over="ignore"):  # overflow becomes NonFiniteError below
        out = np.exp(x.data)

    def vjp(g):
        return (g * out,)

    return _result(out, (x,), vjp)


def log(x) -> Tensor:
    x = _wrap(x)
    if (x.data <= 0).any():
        raise ValueError("log of a non-positive value")
    out = np.log(x.data)

    def vjp(g):
        return (g / x.data,)

    return _result(out, (x,), vjp)


def sigmoid(x) -> Tensor:
    x = _wrap(x)
    d = x.data
    out = np.empty_like(d)
    pos = d >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    ex = np.exp(d[~pos])
    out[~pos] = ex / (1.0 + ex)

    def vjp(g):
        return (g * out * (1.0 - out),)

    return _result(out, (x,), vjp)


def clamp(x, lo: float, hi: float) -> Tensor:
    """Hard clip to [lo, hi]; gradient passes through the interior (and edges)."""
    x = _wrap(x)
    if not lo <= hi:
        raise ValueError("clamp needs lo <= hi")
    out = np.clip(x.data, lo, hi)
    inside = (x.data >= lo) & (x.data <= hi)

    def vjp(g):
        return (g * inside,)

    return _result(out, (x,), vjp)


# -- shape manipulation ----------------------------------------------------


def reshape(x, shape) -> Tensor:
    x = _wrap(x)
    shape = tuple(shape)
    out = x.data.reshape(shape)

    def vjp(g):
        return (g.reshape(x.shape),)

    return _result(out, (x,), vjp)


def rot_axes(x, perm) -> Tensor:
    """Permute axes. A pure relabeling: applying the inverse permutation
    restores the original tensor bit-for-bit."""
    x = _wrap(x)
    perm = tuple(perm)
    if sorted(perm) != list(range(x.ndim)):
        raise ValueError(f"perm {perm} is not a permutation of axes of rank {x.ndim}")
    inv = tuple(int(i) for i in np.argsort(perm))
    out = np.ascontiguousarray(np.transpose(x.data, perm))

    def vjp(g):
        return (np.ascontiguousarray(np.transpose(g, inv)),)

    return _result(out, (x,), vjp)


def narrow(x, axis: int, start: int, length: int) -> Tensor:
    """Slice `length` entries starting at `start` along `axis`."""
    x = _wrap(x)
    if not (0 <= start and length >= 0 and start + length <= x.shape[axis]):
        raise ValueError("narrow out of range")
    idx = tuple(
        slice(start, start + length) if i == axis else slice(None) for i in range(x.ndim)
    )
    out = np.ascontiguousarray(x.data[idx])

    def vjp(g):
        full = np.zeros_like(x.data)
        full[idx] = g
        return (full,)

    return _result(out, (x,), vjp)


def concat(parts, axis: int) -> Tensor:
    """Concatenate tensors along an existing axis."""
    parts = [_wrap(p) for p in parts]
    if not parts:
        raise ValueError("concat of nothing")
    out = np.concatenate([p.data for p in parts], axis=axis)
    extents = [p.shape[axis] for p in parts]

    def vjp(g):
        grads = []
        ofs = 0
        for p, n in zip(parts, extents):
            idx = tuple(
                slice(ofs, ofs + n) if i == axis else slice(None) for i in range(p.ndim)
            )
            grads.append(g[idx])
            ofs += n
        return tuple(grads)

    return _result(out, tuple(parts), vjp)


# -- pooling ----------------------------------------------------------------


def maxpool_axis(x, axis: int) -> Tensor:
    """Collapse one axis to extent 1 by max. Ties route the gradient to the
    first occurrence along the axis."""
    x = _wrap(x)
    if x.shape[axis] == 0:
        raise ValueError("maxpool over an empty axis")
    out = x.data.max(axis=axis, keepdims=True)
    argmax = x.data.argmax(axis=axis, keepdims=True)  # first occurrence on ties

    def vjp(g):
        full = np.zeros_like(x.data)
        np.put_along_axis(full, argmax, g, axis=axis)
        return (full,)

    return _result(out, (x,), vjp)


def avgpool_axis(x, axis: int) -> Tensor:
    """Collapse one axis to extent 1 by arithmetic mean."""
    x = _wrap(x)
    n = x.shape[axis]
    if n == 0:
        raise ValueError("avgpool over an empty axis")
    return scale(_sum(x, axes=axis, keepdims=True), 1.0 / n)


# -- linear algebra ----------------------------------------------------------


def matmul(a, b) -> Tensor:
    """Strict 2-D matrix product."""
    a, b = _wrap(a), _wrap(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError("matmul expects 2-D operands")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"inner extents differ: {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def vjp(g):
        return g @ b.data.T, a.data.T @ g

    return _result(out, (a, b), vjp)


def logabsdet(q) -> Tensor:
    """log|det Q| of a square matrix; errors on a singular Q."""
    q = _wrap(q)
    if q.ndim != 2 or q.shape[0] != q.shape[1]:
        raise ValueError("logabsdet expects a square matrix")
    sign, ld = np.linalg.slogdet(q.data)
    if sign == 0 or not math.isfinite(ld):
        raise ValueError("singular matrix in logabsdet")
    qinv_t = np.linalg.inv(q.data).T

    def vjp(g):
        return (np.asarray(g) * qinv_t,)

    return _result(np.asarray(ld), (q,), vjp)


# -- convolution -------------------------------------------------------------


def _corr2d(xp: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Valid cross-correlation of padded input (B,Cin,H',W') with (Cout,Cin,kh,kw)."""
    win = np.lib.stride_tricks.sliding_window_view(xp, kernel.shape[2:], axis=(2, 3))
    return np.einsum("bchwij,ocij->bohw", win, kernel, optimize=True)


def conv2d_same(x, kernel, bias=None) -> Tensor:
    """Same-padded 2-D cross-correlation (no kernel flip).

    x: (Cin, H, W) or batched (B, Cin, H, W); kernel: (Cout, Cin, kh, kw) with
    odd kh, kw; bias: (Cout,) or None. Zero padding keeps H and W.
    """
    x, kernel = _wrap(x), _wrap(kernel)
    batched = x.ndim == 4
    if not batched and x.ndim != 3:
        raise ValueError("conv2d_same expects (Cin,H,W) or (B,Cin,H,W) input")
    if kernel.ndim != 4:
        raise ValueError("kernel must be (Cout,Cin,kh,kw)")
    co, ci, kh, kw = kernel.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError("conv2d_same requires odd kernel extents")
    xd = x.data if batched else x.data[None]
    if xd.shape[1] != ci:
        raise ValueError(f"input channels {xd.shape[1]} != kernel channels {ci}")
    ph, pw = kh // 2, kw // 2
    pad = ((0, 0), (0, 0), (ph, ph), (pw, pw))
    out = _corr2d(np.pad(xd, pad), kernel.data)

    parents: list[Tensor] = [x, kernel]
    if bias is not None:
        bias = _wrap(bias)
        if bias.shape != (co,):
            raise ValueError("bias must be (Cout,)")
        out = out + bias.data[None, :, None, None]
        parents.append(bias)

    def vjp(g):
        gb = g if batched else g[None]
        # dL/dkernel: correlate input windows with the output gradient.
        win = np.lib.stride_tricks.sliding_window_view(np.pad(xd, pad), (kh, kw), axis=(2, 3))
        gk = np.einsum("bchwij,bohw->ocij", win, gb, optimize=True)
        # dL/dx: same-correlation of the gradient with the channel-swapped,
        # spatially flipped kernel (exact adjoint for odd same-padding).
        kswap = np.ascontiguousarray(kernel.data.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1])
        gx = _corr2d(np.pad(gb, pad), kswap)
        if not batched:
            gx = gx[0]
        if bias is not None:
            return gx, gk, gb.sum(axis=(0, 2, 3))
        return gx, gk

    return _result(out if batched else out[0], tuple(parents), vjp)


# -- backward pass ------------------------------------------------------------


def backward(loss: Tensor) -> None:
    """Reverse-accumulate d(loss)/d(leaf) into every reachable leaf's .grad.

    loss must be a scalar produced by a recorded computation; calling twice on
    the same result without rebuilding the graph is an error.
    """
    if not isinstance(loss, Tensor) or loss.shape != ():
        raise GradientError("backward expects a scalar Tensor loss")
    if loss._done:
        raise GradientError("backward called twice on the same graph")
    if loss._vjp is None and not loss.requires_grad:
        raise GradientError("loss is not connected to any tracked tensor")
    loss._done = True

    # Iterative postorder topological sort (graphs can be deep).
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones(())}
    for node in reversed(topo):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._vjp is None:
            if node.requires_grad:
                node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._vjp(g)):
            if pg is None or not parent.requires_grad:
                continue
            pg = np.asarray(pg, dtype=np.float64)
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
