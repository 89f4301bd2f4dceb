"""Dense float64 tensors with tape-based reverse-mode differentiation.

Only the primitives the separation network needs are provided.  Every
primitive computes its forward result with numpy and, when any input
requires a gradient, records a node carrying a backward rule.  Nodes are
numbered in creation order, so replaying them in reverse creation order is a
valid topological order for the chain rule.
"""

from __future__ import annotations

import contextlib
import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

from .errors import ConfigurationError, ContractError, DimensionError

_SEQ = itertools.count()
_GRAD_ENABLED = [True]
_FLOP_COUNTERS: list["FlopCounter"] = []

# per-element FLOP costs shared with the analytic counter in model.py
SILU_FLOPS = 4
SOFTMAX_FLOPS = 4
NORM_FLOPS = 8
PRELU_FLOPS = 1
# ops counted by the matmul-only convention (what torch's FlopCounterMode reports)
MATMUL_OPS = ("linear", "conv1d", "matmul")


class _Node:
    __slots__ = ("seq", "inputs", "backward_fn", "name")

    def __init__(self, inputs, backward_fn, name):
        self.seq = next(_SEQ)
        self.inputs = inputs
        self.backward_fn = backward_fn
        self.name = name


class Tensor:
    """A row-major float64 array that can take part in differentiation."""

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._node: _Node | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def backward(self) -> None:
        backward(self)

    # arithmetic sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


@contextlib.contextmanager
def no_grad():
    """Disable recording inside the block."""
    _GRAD_ENABLED.append(False)
    try:
        yield
    finally:
        _GRAD_ENABLED.pop()


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED[-1]


class FlopCounter:
    """Context manager accumulating the FLOPs of every primitive executed inside it."""

    def __init__(self):
        self.total = 0
        self.by_op: dict[str, int] = {}

    def add(self, name: str, flops: int) -> None:
        self.total += int(flops)
        self.by_op[name] = self.by_op.get(name, 0) + int(flops)

    @property
    def matmul_total(self) -> int:
        return sum(self.by_op.get(op, 0) for op in MATMUL_OPS)

    def __enter__(self):
        _FLOP_COUNTERS.append(self)
        return self

    def __exit__(self, *exc):
        _FLOP_COUNTERS.remove(self)
        return False


def _count(name: str, flops: int) -> None:
    for counter in _FLOP_COUNTERS:
        counter.add(name, flops)


def make_op(data: np.ndarray, inputs: Sequence[Tensor], backward_fn: Callable, name: str) -> Tensor:
    """Wrap a forward result and record it on the tape when needed.

    ``backward_fn(grad, needs)`` receives the output gradient and a tuple of
    booleans telling which inputs require a gradient; it returns one array
    (or None) per input.
    """
    out = Tensor(data)
    if _GRAD_ENABLED[-1] and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._node = _Node(tuple(inputs), backward_fn, name)
    return out


@dataclass
class Tape:
    """Recorded operations reachable from one output, in recording order."""

    entries: list[tuple[Tensor, _Node]] = field(default_factory=list)

    @classmethod
    def from_output(cls, out: Tensor) -> "Tape":
        seen: set[int] = set()
        entries = []
        stack = [out]
        while stack:
            t = stack.pop()
            if id(t) in seen or t._node is None:
                continue
            seen.add(id(t))
            entries.append((t, t._node))
            stack.extend(t._node.inputs)
        entries.sort(key=lambda e: e[1].seq)
        return cls(entries)

    def __len__(self) -> int:
        return len(self.entries)

    def op_names(self) -> list[str]:
        return [node.name for _, node in self.entries]

    def replay(self, out: Tensor, seed: np.ndarray) -> None:
        grads: dict[int, np.ndarray] = {id(out): seed}
        leaves: dict[int, Tensor] = {}
        for t, node in reversed(self.entries):
            g = grads.pop(id(t), None)
            if g is None:
                continue
            t.grad = g if t.grad is None else t.grad + g
            needs = tuple(inp.requires_grad for inp in node.inputs)
            in_grads = node.backward_fn(g, needs)
            for inp, need, ig in zip(node.inputs, needs, in_grads):
                if not need or ig is None:
                    continue
                if ig.shape != inp.shape:
                    ig = np.broadcast_to(ig, inp.shape) if ig.size == 1 else ig.reshape(inp.shape)
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + ig
                else:
                    grads[key] = ig
                if inp._node is None:
                    leaves[key] = inp
        for key, leaf in leaves.items():
            g = grads[key]
            leaf.grad = np.array(g, copy=True) if leaf.grad is None else leaf.grad + g


def backward(loss: Tensor) -> Tape:
    """Populate ``.grad`` of every tensor the scalar ``loss`` depends on.

    Gradients accumulate across calls; call ``zero_grad`` to reset.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss does not depend on any tensor that requires a gradient")
    seed = np.ones_like(loss.data)
    if loss._node is None:
        loss.grad = seed if loss.grad is None else loss.grad + seed
        return Tape()
    tape = Tape.from_output(loss)
    tape.replay(loss, seed)
    return tape


# ---------------------------------------------------------------------------
# elementwise and structural primitives


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data
    _count("add", out.size)

    def bw(g, needs):
        return (_unbroadcast(g, a.shape) if needs[0] else None,
                _unbroadcast(g, b.shape) if needs[1] else None)

    return make_op(out, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data
    _count("sub", out.size)

    def bw(g, needs):
        return (_unbroadcast(g, a.shape) if needs[0] else None,
                _unbroadcast(-g, b.shape) if needs[1] else None)

    return make_op(out, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data
    _count("mul", out.size)

    def bw(g, needs):
        return (_unbroadcast(g * b.data, a.shape) if needs[0] else None,
                _unbroadcast(g * a.data, b.shape) if needs[1] else None)

    return make_op(out, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    _count("div", out.size)

    def bw(g, needs):
        ga = _unbroadcast(g / b.data, a.shape) if needs[0] else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if needs[1] else None
        return ga, gb

    return make_op(out, (a, b), bw, "div")


def neg(a: Tensor) -> Tensor:
    _count("neg", a.size)
    return make_op(-a.data, (a,), lambda g, needs: (-g,), "neg")


def power(a: Tensor, exponent: float) -> Tensor:
    out = a.data ** exponent
    _count("pow", a.size)

    def bw(g, needs):
        return (g * exponent * a.data ** (exponent - 1),)

    return make_op(out, (a,), bw, "pow")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    _count("exp", a.size)
    return make_op(out, (a,), lambda g, needs: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    _count("log", a.size)
    return make_op(np.log(a.data), (a,), lambda g, needs: (g / a.data,), "log")


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    _count("sqrt", a.size)
    return make_op(out, (a,), lambda g, needs: (g * 0.5 / out,), "sqrt")


def tabs(a: Tensor) -> Tensor:
    """Absolute value; the subgradient at zero is taken as zero."""
    _count("abs", a.size)
    return make_op(np.abs(a.data), (a,), lambda g, needs: (g * np.sign(a.data),), "abs")


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = np.sum(a.data, axis=axis, keepdims=keepdims)
    _count("sum", a.size)

    def bw(g, needs):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape),)

    return make_op(out, (a,), bw, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    return tsum(a, axis, keepdims) * (1.0 / n)


def reshape(a: Tensor, shape) -> Tensor:
    out = a.data.reshape(shape)
    return make_op(out, (a,), lambda g, needs: (g.reshape(a.shape),), "reshape")


def transpose(a: Tensor, axes=None) -> Tensor:
    axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
    inverse = tuple(np.argsort(axes))
    out = a.data.transpose(axes)
    return make_op(out, (a,), lambda g, needs: (g.transpose(inverse),), "transpose")


def getitem(a: Tensor, index) -> Tensor:
    out = a.data[index]

    def bw(g, needs):
        full = np.zeros_like(a.data)
        if _is_advanced(index):
            np.add.at(full, index, g)
        else:
            full[index] = g
        return (full,)

    return make_op(out, (a,), bw, "getitem")


def _is_advanced(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def bw(g, needs):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) if needs[i] else None
                     for i in range(len(tensors)))

    return make_op(out, tensors, bw, "concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in tensors], axis=axis)

    def bw(g, needs):
        return tuple(np.take(g, i, axis=axis) if needs[i] else None for i in range(len(tensors)))

    return make_op(out, tensors, bw, "stack")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product over the last two axes (numpy batch broadcasting)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out = a.data @ b.data
    _count("matmul", 2 * out.size * a.shape[-1])

    def bw(g, needs):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape) if needs[0] else None
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape) if needs[1] else None
        return ga, gb

    return make_op(out, (a, b), bw, "matmul")


# ---------------------------------------------------------------------------
# network primitives


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``y[..., j] = sum_i x[..., i] * weight[j, i] + bias[j]``."""
    if weight.ndim != 2 or x.shape[-1] != weight.shape[1]:
        raise DimensionError(f"linear: input {x.shape} does not match weight {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise DimensionError(f"linear: bias {bias.shape} does not match weight {weight.shape}")
    d_out, d_in = weight.shape
    rows = x.size // d_in
    x2 = x.data.reshape(rows, d_in)
    out = x2 @ weight.data.T
    if bias is not None:
        out += bias.data
        _count("bias", rows * d_out)
    _count("linear", 2 * rows * d_out * d_in)
    out = out.reshape(x.shape[:-1] + (d_out,))
    inputs = (x, weight) if bias is None else (x, weight, bias)

    def bw(g, needs):
        g2 = g.reshape(rows, d_out)
        gx = (g2 @ weight.data).reshape(x.shape) if needs[0] else None
        gw = g2.T @ x2 if needs[1] else None
        if bias is None:
            return gx, gw
        return gx, gw, (g2.sum(axis=0) if needs[2] else None)

    return make_op(out, inputs, bw, "linear")


def grouped_conv1d(x: Tensor, weight: Tensor, bias: Tensor | None = None, groups: int = 1) -> Tensor:
    """Grouped 1-D cross-correlation with 'same' zero padding and stride 1.

    ``x`` is ``[..., C_in, N]`` (leading axes are batch), ``weight`` is
    ``[C_out, C_in // groups, K]`` with odd ``K``.
    """
    if x.ndim < 2 or weight.ndim != 3:
        raise DimensionError(f"grouped_conv1d: bad shapes x={x.shape} weight={weight.shape}")
    c_in, n = x.shape[-2:]
    c_out, cig, k = weight.shape
    if groups < 1 or c_in % groups or c_out % groups:
        raise ConfigurationError(f"channels {c_in}->{c_out} not divisible by groups={groups}")
    if cig != c_in // groups:
        raise DimensionError(f"grouped_conv1d: weight {weight.shape} expects {cig * groups} input channels, got {c_in}")
    if k % 2 == 0:
        raise ConfigurationError(f"kernel size must be odd for same padding, got {k}")
    if bias is not None and bias.shape != (c_out,):
        raise DimensionError(f"grouped_conv1d: bias {bias.shape} does not match {c_out} outputs")
    pad = (k - 1) // 2
    cog = c_out // groups
    batch = x.shape[:-2]
    nb = int(np.prod(batch, dtype=np.int64))
    # im2col with the batch folded into the time axis: one matmul per group
    xp = np.zeros((nb, groups, cig, n + 2 * pad))
    xp[..., pad:pad + n] = x.data.reshape(nb, groups, cig, n)
    cols = np.stack([xp[..., j:j + n] for j in range(k)], axis=3)  # [B, G, Cig, K, N]
    cols = cols.transpose(1, 2, 3, 0, 4).reshape(groups, cig * k, nb * n)
    wg = weight.data.reshape(groups, cog, cig * k)
    out = (wg @ cols).reshape(groups, cog, nb, n).transpose(2, 0, 1, 3).reshape(batch + (c_out, n))
    n_out = nb * c_out * n
    if bias is not None:
        out += bias.data[:, None]
        _count("bias", n_out)
    _count("conv1d", 2 * n_out * cig * k)
    inputs = (x, weight) if bias is None else (x, weight, bias)

    def bw(g, needs):
        gg = g.reshape(nb, groups, cog, n).transpose(1, 2, 0, 3).reshape(groups, cog, nb * n)
        gx = gw = None
        if needs[0]:
            gcols = (np.swapaxes(wg, -1, -2) @ gg).reshape(groups, cig, k, nb, n)
            gxp = np.zeros((groups, cig, nb, n + 2 * pad))
            for j in range(k):
                gxp[..., j:j + n] += gcols[:, :, j]
            gx = gxp[..., pad:pad + n].transpose(2, 0, 1, 3).reshape(x.shape)
        if needs[1]:
            gw = (gg @ np.swapaxes(cols, -1, -2)).reshape(weight.shape)
        if bias is None:
            return gx, gw
        gb = g.reshape(-1, c_out, n).sum(axis=(0, 2)) if needs[2] else None
        return gx, gw, gb

    return make_op(out, inputs, bw, "grouped_conv1d")


def _normalize_backward(g_hat: np.ndarray, x_hat: np.ndarray, inv_std: np.ndarray, axes) -> np.ndarray:
    m1 = g_hat.mean(axis=axes, keepdims=True)
    m2 = (g_hat * x_hat).mean(axis=axes, keepdims=True)
    return inv_std * (g_hat - m1 - x_hat * m2)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, axis: int = -1, eps: float = 1e-5) -> Tensor:
    """Standardize along ``axis`` (population variance) then apply a per-feature affine map."""
    axis = axis % x.ndim
    size = x.shape[axis]
    if gamma.shape != (size,) or beta.shape != (size,):
        raise DimensionError(f"layer_norm: gamma/beta {gamma.shape}/{beta.shape} vs axis size {size}")
    shape = [1] * x.ndim
    shape[axis] = size
    mu = x.data.mean(axis=axis, keepdims=True)
    xc = x.data - mu
    inv_std = 1.0 / np.sqrt((xc * xc).mean(axis=axis, keepdims=True) + eps)
    x_hat = xc * inv_std
    gam = gamma.data.reshape(shape)
    out = x_hat * gam + beta.data.reshape(shape)
    _count("layer_norm", NORM_FLOPS * x.size)
    other = tuple(i for i in range(x.ndim) if i != axis)

    def bw(g, needs):
        gx = _normalize_backward(g * gam, x_hat, inv_std, axis) if needs[0] else None
        ggam = (g * x_hat).sum(axis=other) if needs[1] else None
        gbet = g.sum(axis=other) if needs[2] else None
        return gx, ggam, gbet

    return make_op(out, (x, gamma, beta), bw, "layer_norm")


def group_norm(x: Tensor, groups: int, gamma: Tensor, beta: Tensor, eps: float = 1e-5,
               channel_axis: int = 0) -> Tensor:
    """Normalize each group of channels jointly with every axis after ``channel_axis``.

    Axes before ``channel_axis`` are independent batch axes.
    """
    channel_axis = channel_axis % x.ndim
    c = x.shape[channel_axis]
    if groups < 1 or c % groups:
        raise ConfigurationError(f"group_norm: {c} channels not divisible by {groups} groups")
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(f"group_norm: gamma/beta {gamma.shape}/{beta.shape} vs {c} channels")
    lead = x.shape[:channel_axis]
    rest = x.shape[channel_axis + 1:]
    xg = x.data.reshape(lead + (groups, c // groups) + rest)
    axes = tuple(range(len(lead) + 1, xg.ndim))
    mu = xg.mean(axis=axes, keepdims=True)
    xc = xg - mu
    inv_std = 1.0 / np.sqrt((xc * xc).mean(axis=axes, keepdims=True) + eps)
    x_hat = (xc * inv_std).reshape(x.shape)
    shape = [1] * x.ndim
    shape[channel_axis] = c
    gam = gamma.data.reshape(shape)
    out = x_hat * gam + beta.data.reshape(shape)
    _count("group_norm", NORM_FLOPS * x.size)
    other = tuple(i for i in range(x.ndim) if i != channel_axis)

    def bw(g, needs):
        gx = None
        if needs[0]:
            g_hat = (g * gam).reshape(xg.shape)
            gx = _normalize_backward(g_hat, x_hat.reshape(xg.shape), inv_std, axes).reshape(x.shape)
        ggam = (g * x_hat).sum(axis=other) if needs[1] else None
        gbet = g.sum(axis=other) if needs[2] else None
        return gx, ggam, gbet

    return make_op(out, (x, gamma, beta), bw, "group_norm")


def _sigmoid(v: np.ndarray) -> np.ndarray:
    return expit(v)


def silu(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)
    out = x.data * s
    _count("silu", SILU_FLOPS * x.size)

    def bw(g, needs):
        return (g * s * (1.0 + x.data * (1.0 - s)),)

    return make_op(out, (x,), bw, "silu")


def sigmoid(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)
    _count("sigmoid", 3 * x.size)
    return make_op(s, (x,), lambda g, needs: (g * s * (1.0 - s),), "sigmoid")


def prelu(x: Tensor, slope: Tensor, axis: int = -1) -> Tensor:
    """``x`` where ``x >= 0`` else ``slope * x``, one slope per entry of ``axis``."""
    axis = axis % x.ndim
    if slope.shape != (x.shape[axis],):
        raise DimensionError(f"prelu: slope {slope.shape} vs channel axis size {x.shape[axis]}")
    shape = [1] * x.ndim
    shape[axis] = x.shape[axis]
    a = slope.data.reshape(shape)
    neg_mask = x.data < 0
    out = np.where(neg_mask, a * x.data, x.data)
    _count("prelu", PRELU_FLOPS * x.size)
    other = tuple(i for i in range(x.ndim) if i != axis)

    def bw(g, needs):
        gx = np.where(neg_mask, a * g, g) if needs[0] else None
        ga = np.where(neg_mask, g * x.data, 0.0).sum(axis=other) if needs[1] else None
        return gx, ga

    return make_op(out, (x, slope), bw, "prelu")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    _count("softmax", SOFTMAX_FLOPS * x.size)

    def bw(g, needs):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return make_op(y, (x,), bw, "softmax")


def complex_abs(re: Tensor, im: Tensor) -> Tensor:
    """Magnitude of ``re + j*im``; gradient taken as zero where the magnitude is zero."""
    mag = np.sqrt(re.data * re.data + im.data * im.data)
    _count("complex_abs", 4 * mag.size)
    safe = np.where(mag > 0, mag, 1.0)

    def bw(g, needs):
        scale = np.where(mag > 0, g / safe, 0.0)
        return (scale * re.data if needs[0] else None, scale * im.data if needs[1] else None)

    return make_op(mag, (re, im), bw, "complex_abs")


# ---------------------------------------------------------------------------
# finite-difference gradient checking


@dataclass
class GradCheckReport:
    name: str
    max_rel_error: float
    tol: float
    checked: int
    worst_index: tuple | None = None

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_error < self.tol)

    def __str__(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: max rel err {self.max_rel_error:.2e} over {self.checked} entries (tol {self.tol:g})"


def relative_error(analytic: float, numeric: float, floor: float = 1e-6) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def grad_check(f: Callable[[], Tensor], inputs: Tensor | Sequence[Tensor], h: float = 1e-5, tol: float = 1e-4,
               max_entries: int | None = None, rng: np.random.Generator | None = None,
               name: str = "f", floor: float = 1e-6, scale: float = 1e-3) -> GradCheckReport:
    """Compare tape gradients of scalar ``f()`` with central differences.

    ``f`` closes over ``inputs`` and is re-evaluated after each perturbation,
    so it must be deterministic.  With ``max_entries`` only a random subset of
    each input's entries is perturbed.  Relative errors use
    ``max(|analytic|, |numeric|, floor_i)`` as denominator, where ``floor_i``
    is the larger of ``floor`` and ``scale * max|analytic|`` over input ``i``.
    Entries far below the input's gradient scale (exact zeros, for instance)
    are thereby compared against that scale instead of against round-off.
    """
    inputs = [inputs] if isinstance(inputs, Tensor) else list(inputs)
    rng = rng if rng is not None else np.random.default_rng(0)
    for t in inputs:
        t.data = np.ascontiguousarray(t.data)
        t.requires_grad = True
        t.grad = None
    backward(f())
    analytic = [np.zeros(t.shape) if t.grad is None else t.grad.copy() for t in inputs]
    worst, worst_idx, checked = 0.0, None, 0
    with no_grad():
        for ti, t in enumerate(inputs):
            floor_i = max(floor, scale * float(np.max(np.abs(analytic[ti]), initial=0.0)))
            flat = t.data.reshape(-1)
            idx = np.arange(flat.size)
            if max_entries is not None and flat.size > max_entries:
                idx = rng.choice(flat.size, size=max_entries, replace=False)
            for i in idx:
                orig = flat[i]
                flat[i] = orig + h
                fp = f().item()
                flat[i] = orig - h
                fm = f().item()
                flat[i] = orig
                numeric = (fp - fm) / (2 * h)
                err = relative_error(analytic[ti].reshape(-1)[i], numeric, floor_i)
                checked += 1
                if err > worst or math.isnan(err):
                    worst, worst_idx = err, (ti, int(i))
    for t in inputs:
        t.grad = None
    return GradCheckReport(name, worst, tol, checked, worst_idx)
