"""Reverse-mode automatic differentiation over dense 1-D/2-D/3-D arrays.

A `Tensor` wraps a numpy array and remembers how it was computed; calling
`backward()` on a scalar walks the recorded graph in reverse topological
order and accumulates gradients on every tensor that requires them.
Training runs in float32; gradient-check harnesses build float64 graphs
with the same ops.

Every op validates its output for NaN/Inf (toggle with
`set_finite_checks`) and raises `NumericError` naming the op.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np
from scipy.special import erf

from .errors import NumericError, ShapeError

_FINITE_CHECKS = True

_INV_SQRT2 = 0.7071067811865476
_INV_SQRT_2PI = 0.3989422804014327


def set_finite_checks(enabled: bool) -> None:
    global _FINITE_CHECKS
    _FINITE_CHECKS = bool(enabled)


def _check_finite(op: str, data: np.ndarray) -> None:
    if _FINITE_CHECKS and not np.all(np.isfinite(data)):
        raise NumericError(op)


class Tensor:
    """A dense array plus an optional gradient and graph linkage."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        if arr.ndim > 3:
            raise ShapeError(f"tensors support at most 3 dims, got shape {arr.shape}")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._backward = None

    # -- basic introspection ------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data)

    # -- gradient machinery ---------------------------------------------------

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = g.astype(self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) on every reachable requires_grad tensor.

        Repeated calls accumulate; callers zero grads between steps.
        """
        if self.data.shape != ():
            raise ValueError(
                f"backward() requires a scalar tensor, got shape {self.data.shape}"
            )
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))

        seed: dict[int, np.ndarray] = {id(self): np.ones((), dtype=self.data.dtype)}
        for node in reversed(topo):
            g = seed.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                node._accumulate(g)
            if node._backward is None:
                continue
            for parent, pg in node._backward(g):
                if not (parent.requires_grad or parent._backward is not None):
                    continue
                _check_finite("backward", pg)
                if id(parent) in seed:
                    seed[id(parent)] += pg
                else:
                    # own the buffer: pg may be a view of g shared by siblings
                    seed[id(parent)] = np.array(pg, dtype=parent.data.dtype)


def _as_tensor(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.data.dtype))


def _tracked(*inputs: Tensor) -> bool:
    return any(t.requires_grad or t._backward is not None for t in inputs)


def _make(op: str, data: np.ndarray, parents: tuple, backward) -> Tensor:
    _check_finite(op, data)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = False
    if _tracked(*parents):
        out._parents = parents
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


def _sum_to_shape(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to the original operand shape."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _broadcastable(a_shape, b_shape) -> bool:
    for x, y in zip(reversed(a_shape), reversed(b_shape)):
        if x != y and x != 1 and y != 1:
            return False
    return True


# -- arithmetic ---------------------------------------------------------------


def add(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a)
    if not _broadcastable(a.shape, b.shape):
        raise ShapeError.binary("add", a.shape, b.shape)
    data = a.data + b.data

    def bwd(g):
        return ((a, _sum_to_shape(g, a.shape)), (b, _sum_to_shape(g, b.shape)))

    return _make("add", data, (a, b), bwd)


def sub(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a)
    if not _broadcastable(a.shape, b.shape):
        raise ShapeError.binary("sub", a.shape, b.shape)
    data = a.data - b.data

    def bwd(g):
        return ((a, _sum_to_shape(g, a.shape)), (b, _sum_to_shape(-g, b.shape)))

    return _make("sub", data, (a, b), bwd)


def mul(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a)
    if not _broadcastable(a.shape, b.shape):
        raise ShapeError.binary("mul", a.shape, b.shape)
    data = a.data * b.data

    def bwd(g):
        return (
            (a, _sum_to_shape(g * b.data, a.shape)),
            (b, _sum_to_shape(g * a.data, b.shape)),
        )

    return _make("mul", data, (a, b), bwd)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    data = a.data * c

    def bwd(g):
        return ((a, g * c),)

    return _make("scale", data, (a,), bwd)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D x 2-D, or batched 3-D x 3-D with equal leading dimension."""
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError.binary("matmul", a.shape, b.shape)
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError.binary("matmul", a.shape, b.shape)
    if a.data.ndim == 3 and b.data.ndim == 3 and a.shape[0] != b.shape[0]:
        raise ShapeError.binary("matmul", a.shape, b.shape)
    if a.data.ndim == 3 and b.data.ndim == 2:
        raise ShapeError.binary("matmul", a.shape, b.shape)
    if a.data.ndim == 2 and b.data.ndim == 3:
        raise ShapeError.binary("matmul", a.shape, b.shape)
    data = np.matmul(a.data, b.data)

    def bwd(g):
        at = np.swapaxes(a.data, -1, -2)
        bt = np.swapaxes(b.data, -1, -2)
        return ((a, np.matmul(g, bt)), (b, np.matmul(at, g)))

    return _make("matmul", data, (a, b), bwd)


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w + b with b broadcast over rows."""
    return add(matmul(x, w), b)


def concat(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate along the last axis."""
    if not parts:
        raise ValueError("concat requires at least one tensor")
    lead = parts[0].shape[:-1]
    for p in parts[1:]:
        if p.shape[:-1] != lead:
            raise ShapeError.binary("concat", parts[0].shape, p.shape)
    data = np.concatenate([p.data for p in parts], axis=-1)
    widths = [p.shape[-1] for p in parts]

    def bwd(g):
        outs = []
        start = 0
        for p, w in zip(parts, widths):
            outs.append((p, g[..., start : start + w]))
            start += w
        return tuple(outs)

    return _make("concat", data, tuple(parts), bwd)


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    """Contiguous slice along the first axis."""
    data = a.data[start:stop].copy()

    def bwd(g):
        full = np.zeros_like(a.data)
        full[start:stop] = g
        return ((a, full),)

    return _make("slice_rows", data, (a,), bwd)


def reshape(a: Tensor, shape: tuple) -> Tensor:
    data = a.data.reshape(shape)

    def bwd(g):
        return ((a, g.reshape(a.data.shape)),)

    return _make("reshape", data, (a,), bwd)


def swap_axes(a: Tensor, axis1: int, axis2: int) -> Tensor:
    data = np.swapaxes(a.data, axis1, axis2).copy()

    def bwd(g):
        return ((a, np.swapaxes(g, axis1, axis2)),)

    return _make("swap_axes", data, (a,), bwd)


def sum_all(a: Tensor) -> Tensor:
    data = a.data.sum(dtype=a.data.dtype)

    def bwd(g):
        return ((a, np.broadcast_to(g, a.data.shape).astype(a.data.dtype)),)

    return _make("sum_all", np.asarray(data), (a,), bwd)


def mean_all(a: Tensor) -> Tensor:
    return scale(sum_all(a), 1.0 / a.data.size)


# -- nonlinearities -----------------------------------------------------------


def softmax(a: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Softmax along the last axis.

    `mask` is an optional boolean array broadcastable to `a` (True = keep);
    masked positions get probability exactly 0. Each row must keep at least
    one position.
    """
    x = a.data
    if mask is not None:
        x = np.where(mask, x, -np.inf)
    m = np.max(x, axis=-1, keepdims=True)
    e = np.exp(x - m)
    z = e.sum(axis=-1, keepdims=True)
    data = e / z

    def bwd(g):
        inner = (g * data).sum(axis=-1, keepdims=True)
        return ((a, data * (g - inner)),)

    return _make("softmax", data, (a,), bwd)


def layer_norm(a: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean, unit variance (no affine)."""
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + np.asarray(eps, dtype=x.dtype))
    data = xc * inv

    def bwd(g):
        g_mean = g.mean(axis=-1, keepdims=True)
        gx_mean = (g * data).mean(axis=-1, keepdims=True)
        return ((a, inv * (g - g_mean - data * gx_mean)),)

    return _make("layer_norm", data, (a,), bwd)


def gelu(a: Tensor) -> Tensor:
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    data = (x * cdf).astype(x.dtype)

    def bwd(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
        return ((a, g * (cdf + x * pdf).astype(x.dtype)),)

    return _make("gelu", data, (a,), bwd)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x)))).astype(x.dtype)

    def bwd(g):
        return ((a, g * data * (1.0 - data)),)

    return _make("sigmoid", data, (a,), bwd)


def log(a: Tensor) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):
        data = np.log(a.data)

    def bwd(g):
        return ((a, g / a.data),)

    return _make("log", data, (a,), bwd)


def clip_values(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp values to [lo, hi]; gradient passes only where unclipped."""
    data = np.clip(a.data, lo, hi)
    inside = (a.data >= lo) & (a.data <= hi)

    def bwd(g):
        return ((a, g * inside),)

    return _make("clip_values", data, (a,), bwd)


def dropout(a: Tensor, rate: float, rng: np.random.Generator, train: bool) -> Tensor:
    """Inverted dropout: kept activations scaled by 1/(1-rate); identity in eval."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not train or rate == 0.0:
        return a
    keep = (rng.random(a.data.shape) >= rate).astype(a.data.dtype)
    factor = 1.0 / (1.0 - rate)
    data = a.data * keep * np.asarray(factor, dtype=a.data.dtype)

    def bwd(g):
        return ((a, g * keep * np.asarray(factor, dtype=a.data.dtype)),)

    return _make("dropout", data, (a,), bwd)


# -- losses -------------------------------------------------------------------


def mse(pred: Tensor, target: Tensor) -> Tensor:
    """Mean over all elements of squared differences."""
    if pred.shape != target.shape:
        raise ShapeError.binary("mse", pred.shape, target.shape)
    diff = pred.data - target.data
    data = np.asarray((diff * diff).mean(), dtype=pred.data.dtype)
    inv = 2.0 / diff.size

    def bwd(g):
        d = g * inv * diff
        return ((pred, d), (target, -d))

    return _make("mse", data, (pred, target), bwd)


def bce_with_logits(logits: Tensor, targets: Tensor) -> Tensor:
    """Mean binary cross-entropy from logits; targets in [0, 1]."""
    if logits.shape != targets.shape:
        raise ShapeError.binary("bce_with_logits", logits.shape, targets.shape)
    x = logits.data
    t = targets.data
    if t.size and (t.min() < 0.0 or t.max() > 1.0):
        raise ValueError("bce_with_logits targets must lie in [0, 1]")
    per = np.maximum(x, 0.0) - x * t + np.log1p(np.exp(-np.abs(x)))
    data = np.asarray(per.mean(), dtype=x.dtype)
    inv = 1.0 / per.size

    def bwd(g):
        s = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
        return ((logits, g * inv * (s - t).astype(x.dtype)), (targets, g * inv * (-x)))

    return _make("bce_with_logits", data, (logits, targets), bwd)


# -- parameter helpers ----------------------------------------------------------


def parameter(data, dtype=np.float32) -> Tensor:
    return Tensor(np.asarray(data, dtype=dtype), requires_grad=True)


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None
