"""Minimal reverse-mode differentiation over dense float64 arrays.

Each primitive returns a new :class:`Tensor` carrying an operation record:
the parent tensors plus one vector-Jacobian closure per parent.  ``backward``
walks the records in reverse topological order and accumulates gradients
additively into every tensor with ``requires_grad``.

The engine is deliberately small: double precision only, no broadcasting
beyond scalar-tensor, and the FFT is not a primitive here.  Spectral losses
differentiate their FFT analytically and hand a ready-made gradient to
:meth:`Tensor.backward` through its ``seed`` argument.

Every primitive checks its output for NaN/Inf and raises a numeric-failure
error naming the op, so a poisoned value cannot propagate silently.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import InvalidInputError, NumericError, ShapeError


@dataclass
class OpRecord:
    """One executed primitive: its parents and per-parent VJP closures."""

    name: str
    parents: tuple["Tensor", ...]
    vjps: tuple[Callable[[np.ndarray], np.ndarray], ...]


class Tensor:
    """Dense real array with an optional gradient accumulator."""

    __slots__ = ("data", "requires_grad", "grad", "_op")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NumericError("non-finite values in tensor construction")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._op: OpRecord | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def zero_grad(self):
        self.grad = None

    def backward(self, seed: np.ndarray | None = None):
        """Accumulate d(self)/d(leaf) into every reachable requires_grad leaf.

        Without ``seed`` the tensor must be scalar (seed 1).  A ``seed`` of
        the tensor's own shape starts the reverse pass from an externally
        computed gradient, which is how the analytically differentiated
        frequency-domain losses attach to the graph.
        """
        if seed is None:
            if self.data.size != 1:
                raise InvalidInputError(
                    f"backward() without a seed needs a scalar, got shape {self.shape}"
                )
            seed_arr = np.ones_like(self.data)
        else:
            seed_arr = np.asarray(seed, dtype=np.float64)
            if seed_arr.shape != self.data.shape:
                raise ShapeError(
                    f"seed shape {seed_arr.shape} does not match tensor shape {self.shape}"
                )
        if not self.requires_grad:
            return

        order = _toposort(self)
        carry: dict[int, np.ndarray] = {id(self): seed_arr}
        for t in order:
            g = carry.pop(id(t), None)
            if g is None:
                continue
            if t.grad is None:
                t.grad = np.zeros_like(t.data)
            t.grad = t.grad + g
            if t._op is None:
                continue
            for parent, vjp in zip(t._op.parents, t._op.vjps):
                if not parent.requires_grad:
                    continue
                contribution = vjp(g)
                if not np.all(np.isfinite(contribution)):
                    raise NumericError("non-finite gradient", op=t._op.name)
                prev = carry.get(id(parent))
                carry[id(parent)] = contribution if prev is None else prev + contribution

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def _toposort(root: Tensor) -> list[Tensor]:
    """Tensors in reverse execution order; each op visited exactly once."""
    seen: set[int] = set()
    order: list[Tensor] = []
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        if node._op is not None:
            for p in node._op.parents:
                if id(p) not in seen:
                    stack.append((p, False))
    order.reverse()
    return order


def _make(name: str, data: np.ndarray, parents: tuple[Tensor, ...], vjps) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NumericError("non-finite forward value", op=name)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = any(p.requires_grad for p in parents)
    out.grad = None
    out._op = OpRecord(name, parents, tuple(vjps)) if out.requires_grad else None
    return out


def _as_scalar(x) -> float | None:
    if isinstance(x, (int, float)):
        return float(x)
    return None


def add(a: Tensor, b) -> Tensor:
    s = _as_scalar(b)
    if s is not None:
        return _make("add", a.data + s, (a,), (lambda g: g,))
    if a.data.shape != b.data.shape:
        raise ShapeError(f"add shape mismatch: {a.shape} vs {b.shape}")
    return _make("add", a.data + b.data, (a, b), (lambda g: g, lambda g: g))


def multiply(a: Tensor, b) -> Tensor:
    s = _as_scalar(b)
    if s is not None:
        return _make("multiply", a.data * s, (a,), (lambda g: g * s,))
    if a.data.shape != b.data.shape:
        raise ShapeError(f"multiply shape mismatch: {a.shape} vs {b.shape}")
    return _make(
        "multiply",
        a.data * b.data,
        (a, b),
        (lambda g: g * b.data, lambda g: g * a.data),
    )


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul needs (m,k)@(k,n), got {a.shape} @ {b.shape}")
    return _make(
        "matmul",
        a.data @ b.data,
        (a, b),
        (lambda g: g @ b.data.T, lambda g: a.data.T @ g),
    )


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _make("tanh", y, (a,), (lambda g: g * (1.0 - y * y),))


def mean_over_axes(a: Tensor, axes: tuple[int, ...]) -> Tensor:
    axes = tuple(int(ax) for ax in axes)
    count = 1
    for ax in axes:
        count *= a.data.shape[ax]
    y = a.data.mean(axis=axes)

    def vjp(g):
        gg = np.expand_dims(g, axes)
        return np.broadcast_to(gg / count, a.data.shape).copy()

    return _make("mean_over_axes", y, (a,), (vjp,))


def center(a: Tensor, axis: int = 0) -> Tensor:
    """Subtract the mean along ``axis`` (the only broadcast the engine needs,
    fused into one primitive)."""
    y = a.data - a.data.mean(axis=axis, keepdims=True)

    def vjp(g):
        return g - g.mean(axis=axis, keepdims=True)

    return _make("center", y, (a,), (vjp,))


def slice_time(a: Tensor, start: int, stop: int, axis: int = 0) -> Tensor:
    n = a.data.shape[axis]
    if not (0 <= start < stop <= n):
        raise ShapeError(f"slice [{start}:{stop}] out of range for axis of length {n}")
    idx = tuple(
        slice(start, stop) if ax == axis else slice(None) for ax in range(a.data.ndim)
    )

    def vjp(g):
        out = np.zeros_like(a.data)
        out[idx] = g
        return out

    return _make("slice", a.data[idx].copy(), (a,), (vjp,))


def concat(tensors: list[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise InvalidInputError("concat of an empty list")
    datas = [t.data for t in tensors]
    sizes = [d.shape[axis] for d in datas]
    y = np.concatenate(datas, axis=axis)
    bounds = np.cumsum([0] + sizes)

    def make_vjp(i):
        def vjp(g):
            idx = tuple(
                slice(bounds[i], bounds[i + 1]) if ax == axis else slice(None)
                for ax in range(g.ndim)
            )
            return g[idx].copy()

        return vjp

    return _make("concat", y, tuple(tensors), tuple(make_vjp(i) for i in range(len(tensors))))


def replicate_pad(a: Tensor, before: int, after: int, axis: int = 0) -> Tensor:
    """Edge-value padding along ``axis`` (repeats the first/last slice)."""
    if before < 0 or after < 0:
        raise InvalidInputError("padding must be non-negative")
    widths = [(0, 0)] * a.data.ndim
    widths[axis] = (before, after)
    y = np.pad(a.data, widths, mode="edge")
    n = a.data.shape[axis]

    def take(arr, sl):
        idx = tuple(sl if ax == axis else slice(None) for ax in range(arr.ndim))
        return arr[idx]

    def vjp(g):
        core = take(g, slice(before, before + n)).copy()
        if before:
            first = take(core, slice(0, 1))
            first += take(g, slice(0, before)).sum(axis=axis, keepdims=True)
        if after:
            last = take(core, slice(n - 1, n))
            last += take(g, slice(before + n, before + n + after)).sum(
                axis=axis, keepdims=True
            )
        return core

    return _make("replicate_pad", y, (a,), (vjp,))


def temporal_conv(x: Tensor, kernel: Tensor, bias: Tensor) -> Tensor:
    """Valid 1-D convolution along time: (T, Ci) * (K, Ci, Co) -> (T-K+1, Co).

    The bias add is folded into the op, one entry per output channel.
    """
    if x.data.ndim != 2 or kernel.data.ndim != 3:
        raise ShapeError(
            f"temporal_conv needs (T,Ci) input and (K,Ci,Co) kernel, got "
            f"{x.shape} and {kernel.shape}"
        )
    t_len, ci = x.data.shape
    k, kci, co = kernel.data.shape
    if kci != ci or bias.data.shape != (co,):
        raise ShapeError(
            f"temporal_conv kernel/bias mismatch: input {x.shape}, kernel "
            f"{kernel.shape}, bias {bias.shape}"
        )
    if t_len < k:
        raise ShapeError(f"input length {t_len} shorter than kernel {k}")
    windows = np.lib.stride_tricks.sliding_window_view(x.data, k, axis=0)  # (T', Ci, K)
    y = np.einsum("tck,kco->to", windows, kernel.data) + bias.data

    def vjp_x(g):
        out = np.zeros_like(x.data)
        for kk in range(k):
            out[kk : kk + g.shape[0]] += g @ kernel.data[kk].T
        return out

    def vjp_kernel(g):
        return np.einsum("tck,to->kco", windows, g)

    def vjp_bias(g):
        return g.sum(axis=0)

    return _make("temporal_conv", y, (x, kernel, bias), (vjp_x, vjp_kernel, vjp_bias))


def conv3d(x: Tensor, kernel: Tensor, bias: Tensor) -> Tensor:
    """Valid spatiotemporal convolution.

    (T, H, W, Ci) * (Kt, Kh, Kw, Ci, Co) -> (T-Kt+1, H-Kh+1, W-Kw+1, Co),
    bias folded in per output channel.
    """
    if x.data.ndim != 4 or kernel.data.ndim != 5:
        raise ShapeError(
            f"conv3d needs (T,H,W,Ci) input and (Kt,Kh,Kw,Ci,Co) kernel, got "
            f"{x.shape} and {kernel.shape}"
        )
    kt, kh, kw, ci, co = kernel.data.shape
    if x.data.shape[3] != ci or bias.data.shape != (co,):
        raise ShapeError(
            f"conv3d kernel/bias mismatch: input {x.shape}, kernel "
            f"{kernel.shape}, bias {bias.shape}"
        )
    if any(x.data.shape[i] < (kt, kh, kw)[i] for i in range(3)):
        raise ShapeError(f"input {x.shape} smaller than kernel {kernel.shape}")
    windows = np.lib.stride_tricks.sliding_window_view(
        x.data, (kt, kh, kw), axis=(0, 1, 2)
    )  # (T', H', W', Ci, Kt, Kh, Kw)
    y = np.einsum("pqrcabe,abeco->pqro", windows, kernel.data) + bias.data

    def vjp_x(g):
        out = np.zeros_like(x.data)
        tp, hp, wp = g.shape[:3]
        for a_ in range(kt):
            for b_ in range(kh):
                for e_ in range(kw):
                    out[a_ : a_ + tp, b_ : b_ + hp, e_ : e_ + wp] += np.einsum(
                        "pqro,co->pqrc", g, kernel.data[a_, b_, e_]
                    )
        return out

    def vjp_kernel(g):
        return np.einsum("pqrcabe,pqro->abeco", windows, g)

    def vjp_bias(g):
        return g.sum(axis=(0, 1, 2))

    return _make("conv3d", y, (x, kernel, bias), (vjp_x, vjp_kernel, vjp_bias))


def linear_resample(x: Tensor, new_len: int, axis: int = 0) -> Tensor:
    """Length change along ``axis`` by linear interpolation, endpoints aligned."""
    n = x.data.shape[axis]
    if new_len < 2 or n < 2:
        raise InvalidInputError("linear_resample needs lengths of at least 2")
    pos = np.arange(new_len) * (n - 1) / (new_len - 1)
    i0 = np.minimum(pos.astype(np.int64), n - 2)
    frac = pos - i0
    moved = np.moveaxis(x.data, axis, 0)
    y = moved[i0] * (1.0 - frac).reshape((-1,) + (1,) * (moved.ndim - 1)) + moved[
        i0 + 1
    ] * frac.reshape((-1,) + (1,) * (moved.ndim - 1))
    y = np.moveaxis(y, 0, axis)

    def vjp(g):
        gm = np.moveaxis(g, axis, 0)
        out = np.zeros_like(moved)
        w0 = (1.0 - frac).reshape((-1,) + (1,) * (gm.ndim - 1))
        w1 = frac.reshape((-1,) + (1,) * (gm.ndim - 1))
        np.add.at(out, i0, gm * w0)
        np.add.at(out, i0 + 1, gm * w1)
        return np.moveaxis(out, 0, axis)

    return _make("linear_resample", y, (x,), (vjp,))
