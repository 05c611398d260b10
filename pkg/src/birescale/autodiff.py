"""Minimal reverse-mode automatic differentiation over dense numpy arrays.

Operations record themselves on the active :class:`Tape` (entered with a
``with`` block) whenever at least one input requires a gradient; outside a
tape every op is a plain numpy evaluation.  ``Tape.gradient`` replays the
recorded pullbacks in exact reverse recording order.

There is no broadcasting beyond scalar multiplication: all shape alignment is
explicit and mismatches raise :class:`ContractViolation`.  Arrays keep the
dtype they are created with; use float64 inputs and parameters for gradient
checking.
"""

from __future__ import annotations

import contextvars
from typing import Callable, Sequence

import numpy as np

from .errors import ContractViolation

DEFAULT_DTYPE = np.float32

_active_tape: contextvars.ContextVar = contextvars.ContextVar("active_tape", default=None)


class Tensor:
    """A node in the value graph: an array plus a gradient-tracking flag."""

    __slots__ = ("data", "requires_grad", "name", "__weakref__")

    def __init__(self, data, requires_grad=False, name=None, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(DEFAULT_DTYPE)
        if arr.ndim > 4 or any(d < 1 for d in arr.shape):
            raise ContractViolation("Tensor", f"unsupported shape {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def __repr__(self):
        flag = ", requires_grad" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Records operations for one backward pass.  Single owner, not thread-safe."""

    def __init__(self):
        self.records: list[tuple[str, tuple[Tensor, ...], Tensor, Callable]] = []
        self._token = None

    def __enter__(self):
        self._token = _active_tape.set(self)
        return self

    def __exit__(self, *exc):
        _active_tape.reset(self._token)
        self._token = None
        return False

    def record(self, op, inputs, output, pullback):
        self.records.append((op, inputs, output, pullback))

    def gradient(self, loss: Tensor, params: Sequence[Tensor]) -> list[np.ndarray]:
        """Gradients of scalar ``loss`` with respect to each of ``params``.

        Parameters the loss does not depend on get zero gradients.
        """
        if loss.data.size != 1:
            raise ContractViolation("backward", f"loss must be scalar, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for op, inputs, output, pullback in reversed(self.records):
            g = grads.pop(id(output), None)
            if g is None:
                continue
            for inp, gi in zip(inputs, pullback(g)):
                if gi is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
        return [grads.get(id(p), np.zeros_like(p.data)) for p in params]


def _emit(op: str, inputs: tuple[Tensor, ...], out: np.ndarray, pullback) -> Tensor:
    needs = any(t.requires_grad for t in inputs)
    tape = _active_tape.get()
    result = Tensor(out, requires_grad=needs and tape is not None, dtype=out.dtype)
    if result.requires_grad:
        tape.record(op, inputs, result, pullback)
    return result


def _check(op, cond, message):
    if not cond:
        raise ContractViolation(op, message)


def _same_shape(op, a: Tensor, b: Tensor):
    _check(op, a.shape == b.shape, f"shape mismatch {a.shape} vs {b.shape}")


# --------------------------------------------------------------------------
# elementwise
# --------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("add", a, b)
    return _emit("add", (a, b), a.data + b.data, lambda g: (g, g))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("sub", a, b)
    return _emit("sub", (a, b), a.data - b.data, lambda g: (g, -g))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("mul", a, b)
    return _emit("mul", (a, b), a.data * b.data, lambda g: (g * b.data, g * a.data))


def scalar_mul(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = a.data.dtype.type(c)
    return _emit("scalar_mul", (a,), a.data * c, lambda g: (g * c,))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0  # subgradient at 0 is 0
    return _emit("relu", (a,), np.maximum(a.data, 0), lambda g: (g * mask,))


def softplus(a) -> Tensor:
    a = as_tensor(a)
    out = np.logaddexp(a.data.dtype.type(0), a.data)

    def pullback(g):
        return (g / (1 + np.exp(-a.data)),)

    return _emit("softplus", (a,), out, pullback)


def abs_(a) -> Tensor:
    a = as_tensor(a)
    sign = np.sign(a.data)
    return _emit("abs", (a,), np.abs(a.data), lambda g: (g * sign,))


def square(a) -> Tensor:
    a = as_tensor(a)
    return _emit("square", (a,), a.data * a.data, lambda g: (2 * g * a.data,))


# --------------------------------------------------------------------------
# reductions and reshaping
# --------------------------------------------------------------------------

def mean(a, axis=None) -> Tensor:
    """Mean over ``axis`` (int or tuple), or over everything when None."""
    a = as_tensor(a)
    out = np.mean(a.data, axis=axis)
    if np.ndim(out) == 0:
        axis = None
    out = np.asarray(out, dtype=a.dtype).reshape(np.shape(out) or (1,))
    count = a.data.size // out.size

    def pullback(g):
        if axis is None:
            return (np.full_like(a.data, g.reshape(-1)[0] / count),)
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        expanded = np.expand_dims(g, tuple(ax % a.data.ndim for ax in axes))
        return (np.broadcast_to(expanded / count, a.shape).copy(),)

    return _emit("mean", (a,), out, pullback)


def total(a) -> Tensor:
    a = as_tensor(a)
    out = np.asarray(a.data.sum(), dtype=a.dtype).reshape(1)
    return _emit("sum", (a,), out, lambda g: (np.full_like(a.data, g.reshape(-1)[0]),))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _emit("reshape", (a,), a.data.reshape(shape), lambda g: (g.reshape(a.shape),))


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    inv = np.argsort(axes)
    return _emit("transpose", (a,), np.ascontiguousarray(a.data.transpose(axes)),
                 lambda g: (g.transpose(inv),))


def image_to_rows(a) -> Tensor:
    """(C, H, W) -> (H*W, C), row-major pixel order."""
    a = as_tensor(a)
    _check("image_to_rows", a.data.ndim == 3, f"expected (C, H, W), got {a.shape}")
    c, h, w = a.shape
    return reshape(transpose(a, (1, 2, 0)), (h * w, c))


def rows_to_image(a, h: int, w: int) -> Tensor:
    """(H*W, C) -> (C, H, W)."""
    a = as_tensor(a)
    _check("rows_to_image", a.data.ndim == 2 and a.shape[0] == h * w,
           f"cannot view {a.shape} as {h}x{w} pixels")
    return transpose(reshape(a, (h, w, a.shape[1])), (2, 0, 1))


def concat(tensors: Sequence, axis: int = 1) -> Tensor:
    ts = tuple(as_tensor(t) for t in tensors)
    ref = ts[0].shape
    for t in ts[1:]:
        _check("concat", len(t.shape) == len(ref) and all(
            d1 == d2 for i, (d1, d2) in enumerate(zip(t.shape, ref)) if i != axis % len(ref)),
            f"incompatible shapes {[t.shape for t in ts]}")
    sizes = [t.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.data for t in ts], axis=axis)
    return _emit("concat", ts, out, lambda g: tuple(np.split(g, splits, axis=axis)))


def gather_rows(a, index) -> Tensor:
    """``a[index]`` along the first axis."""
    a = as_tensor(a)
    index = np.asarray(index, dtype=np.int64)
    _check("gather_rows", index.ndim == 1, "index must be 1-D")
    _check("gather_rows", index.size == 0 or (index.min() >= 0 and index.max() < a.shape[0]),
           "index out of range")

    def pullback(g):
        out = np.zeros_like(a.data)
        np.add.at(out, index, g)
        return (out,)

    return _emit("gather_rows", (a,), a.data[index], pullback)


# --------------------------------------------------------------------------
# layers
# --------------------------------------------------------------------------

def linear(x, weight, bias=None) -> Tensor:
    """``x @ weight + bias`` with x (N, in), weight (in, out), bias (out,)."""
    x, weight = as_tensor(x), as_tensor(weight)
    _check("linear", x.data.ndim == 2 and weight.data.ndim == 2
           and x.shape[1] == weight.shape[0],
           f"shape mismatch {x.shape} @ {weight.shape}")
    out = x.data @ weight.data
    if bias is None:
        return _emit("linear", (x, weight), out,
                     lambda g: (g @ weight.data.T, x.data.T @ g))
    bias = as_tensor(bias)
    _check("linear", bias.shape == (weight.shape[1],), f"bias shape {bias.shape}")
    out = out + bias.data
    return _emit("linear", (x, weight, bias), out,
                 lambda g: (g @ weight.data.T, x.data.T @ g, g.sum(axis=0)))


def _pad(x, p, mode):
    """Pad axes 1 and 2 of a channels-last (B, H, W, C) array."""
    if p == 0:
        return x
    width = ((0, 0), (p, p), (p, p), (0, 0))
    return np.pad(x, width, mode="edge" if mode == "replicate" else "constant")


def _unpad(g, p, mode):
    """Adjoint of :func:`_pad`."""
    if p == 0:
        return g
    if mode == "replicate":
        g = g.copy()
        g[:, p] += g[:, :p].sum(axis=1)
        g[:, -p - 1] += g[:, -p:].sum(axis=1)
        g[:, :, p] += g[:, :, :p].sum(axis=2)
        g[:, :, -p - 1] += g[:, :, -p:].sum(axis=2)
    return g[:, p:-p, p:-p]


def conv2d(x, weight, bias=None, padding: str = "replicate") -> Tensor:
    """Stride-1 same-size 2-D convolution (cross-correlation).

    x is (B, Cin, H, W), weight (Cout, Cin, k, k) with odd k.
    ``padding`` is ``"replicate"`` (edge) or ``"zeros"``.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    _check("conv2d", x.data.ndim == 4 and weight.data.ndim == 4, "expected 4-D input and weight")
    b, cin, h, w = x.shape
    cout, wcin, kh, kw = weight.shape
    _check("conv2d", wcin == cin, f"input has {cin} channels, weight expects {wcin}")
    _check("conv2d", kh == kw and kh % 2 == 1, f"kernel must be square and odd, got {kh}x{kw}")
    _check("conv2d", padding in ("replicate", "zeros"), f"unknown padding {padding!r}")
    p = kh // 2
    taps = [(dy, dx) for dy in range(kh) for dx in range(kw)]
    # channels-last so every tap is a contiguous-row slice
    xp = _pad(x.data.transpose(0, 2, 3, 1), p, padding)
    cols = np.empty((b, h, w, len(taps), cin), dtype=x.dtype)
    for t, (dy, dx) in enumerate(taps):
        cols[:, :, :, t, :] = xp[:, dy:dy + h, dx:dx + w, :]
    cols = cols.reshape(b * h * w, len(taps) * cin)
    # (Cout, Cin, k, k) -> (k*k*Cin, Cout) matching the column layout
    wmat = weight.data.transpose(2, 3, 1, 0).reshape(-1, cout)
    out = cols @ wmat
    if bias is not None:
        bias = as_tensor(bias)
        _check("conv2d", bias.shape == (cout,), f"bias shape {bias.shape}")
        out += bias.data
    out = np.ascontiguousarray(out.reshape(b, h, w, cout).transpose(0, 3, 1, 2))

    def pullback(g):
        grows = g.transpose(0, 2, 3, 1).reshape(-1, cout)
        gw = (cols.T @ grows).reshape(kh, kw, cin, cout).transpose(3, 2, 0, 1)
        gcols = (grows @ wmat.T).reshape(b, h, w, len(taps), cin)
        gpad = np.zeros_like(xp)
        for t, (dy, dx) in enumerate(taps):
            gpad[:, dy:dy + h, dx:dx + w, :] += gcols[:, :, :, t, :]
        gx = np.ascontiguousarray(_unpad(gpad, p, padding).transpose(0, 3, 1, 2))
        gw = np.ascontiguousarray(gw)
        if bias is None:
            return gx, gw
        return gx, gw, grows.sum(axis=0)

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return _emit("conv2d", inputs, out, pullback)


def weighted_scatter_reduce(values, weights, groups, n_groups: int) -> Tensor:
    """Normalized weighted group sum.

    ``out[g] = sum_k w_k v_k / sum_k w_k`` over the k with ``groups[k] == g``.
    values is (K, C) or (K,), weights (K,).  Evaluated as the group's first
    value plus the weighted mean offset from it, so a group of equal values
    returns that value exactly.  Sums run in ascending k within a group, so
    results are reproducible bit for bit.
    """
    values, weights = as_tensor(values), as_tensor(weights)
    groups = np.asarray(groups, dtype=np.int64)
    op = "weighted_scatter_reduce"
    k = values.shape[0]
    _check(op, weights.shape == (k,), f"weights shape {weights.shape} != ({k},)")
    _check(op, groups.shape == (k,), f"groups shape {groups.shape} != ({k},)")
    _check(op, k == 0 or (groups.min() >= 0 and groups.max() < n_groups), "group index out of range")
    v2 = values.data.reshape(k, -1)
    w = weights.data
    wsum = np.bincount(groups, weights=w, minlength=n_groups)
    counts = np.bincount(groups, minlength=n_groups)
    _check(op, np.all(counts > 0), "every group needs at least one element")
    _check(op, np.all(wsum > 0), "weight sum must be positive in every group")
    # offsets from each group's first element, so equal values reduce exactly
    anchor = v2[np.unique(groups, return_index=True)[1]].astype(np.float64)
    delta = v2 - anchor[groups]
    num = np.stack([np.bincount(groups, weights=w * delta[:, c], minlength=n_groups)
                    for c in range(v2.shape[1])], axis=1)
    out = (anchor + num / wsum[:, None]).astype(values.dtype)
    out_shape = (n_groups,) + values.shape[1:]

    def pullback(g):
        g2 = g.reshape(n_groups, -1)
        scale = (g2 / wsum[:, None])[groups]                 # (K, C)
        gv = (scale * w[:, None]).astype(values.dtype).reshape(values.shape)
        gw = ((v2 - out[groups]) * scale).sum(axis=1).astype(weights.dtype)
        return gv, gw

    return _emit(op, (values, weights), out.reshape(out_shape), pullback)
