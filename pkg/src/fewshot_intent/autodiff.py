"""Reverse-mode automatic differentiation on numpy arrays.

Small tape-based engine covering exactly the operations the model needs:
matrix multiply, elementwise arithmetic and nonlinearities, axis softmax /
log-softmax, concatenation, stacking, slicing, max reductions, a guarded
cosine similarity, and an LSTM cell/scan built from the primitives.

Every op validates that its output is finite and aborts with the op name
otherwise.  Max-style reductions send gradient to the first (lowest-index)
maximal element, so backward passes are deterministic.
"""

from __future__ import annotations

import math
import re
from contextlib import contextmanager
from contextvars import ContextVar
from dataclasses import dataclass, field

import numpy as np

COS_EPS = 1e-8

_GRAD_ENABLED: ContextVar[bool] = ContextVar("grad_enabled", default=True)


@contextmanager
def no_grad():
    """Disable tape recording inside the block (pure forward evaluation)."""
    token = _GRAD_ENABLED.set(False)
    try:
        yield
    finally:
        _GRAD_ENABLED.reset(token)


def grad_enabled() -> bool:
    return _GRAD_ENABLED.get()


class Tensor:
    """A numpy array plus the tape bookkeeping needed for backprop."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self):
        self.grad = None

    def backward(self):
        """Backpropagate from this scalar through the recorded tape."""
        if self.data.size != 1:
            raise ValueError(f"backward() needs a scalar, got shape {self.shape}")
        order = _toposort(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # operator sugar -------------------------------------------------
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
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return take(self, key)


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order  # parents precede children


def _wrap(value, like: Tensor | None = None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    dtype = like.data.dtype if like is not None else None
    return Tensor(np.asarray(value, dtype=dtype))


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum gradient g down to `shape` (inverse of numpy broadcasting)."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _accum(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    contrib = _unbroadcast(g, t.data.shape)
    t.grad = contrib if t.grad is None else t.grad + contrib


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward, op: str) -> Tensor:
    if not np.isfinite(data.sum()) and not np.isfinite(data).all():
        raise FloatingPointError(f"non-finite values produced by op '{op}'")
    out = Tensor(data)
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


# ---------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------


def add(a, b) -> Tensor:
    a = _wrap(a, b if isinstance(b, Tensor) else None)
    b = _wrap(b, a)

    def backward(g):
        _accum(a, g)
        _accum(b, g)

    return _make(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a = _wrap(a, b if isinstance(b, Tensor) else None)
    b = _wrap(b, a)

    def backward(g):
        _accum(a, g)
        _accum(b, -g)

    return _make(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a = _wrap(a, b if isinstance(b, Tensor) else None)
    b = _wrap(b, a)

    def backward(g):
        _accum(a, g * b.data)
        _accum(b, g * a.data)

    return _make(a.data * b.data, (a, b), backward, "mul")


def div(a, b) -> Tensor:
    a = _wrap(a, b if isinstance(b, Tensor) else None)
    b = _wrap(b, a)

    def backward(g):
        _accum(a, g / b.data)
        _accum(b, -g * a.data / (b.data * b.data))

    return _make(a.data / b.data, (a, b), backward, "div")


# ---------------------------------------------------------------------
# nonlinearities
# ---------------------------------------------------------------------


def tanh(x) -> Tensor:
    x = _wrap(x)
    out_data = np.tanh(x.data)

    def backward(g):
        _accum(x, g * (1.0 - out_data * out_data))

    return _make(out_data, (x,), backward, "tanh")


def sigmoid(x) -> Tensor:
    x = _wrap(x)
    out_data = 1.0 / (1.0 + np.exp(-x.data))

    def backward(g):
        _accum(x, g * out_data * (1.0 - out_data))

    return _make(out_data, (x,), backward, "sigmoid")


def relu(x) -> Tensor:
    x = _wrap(x)
    mask = x.data > 0

    def backward(g):
        _accum(x, g * mask)

    return _make(np.where(mask, x.data, 0.0), (x,), backward, "relu")


def exp(x) -> Tensor:
    x = _wrap(x)
    out_data = np.exp(x.data)

    def backward(g):
        _accum(x, g * out_data)

    return _make(out_data, (x,), backward, "exp")


def log(x) -> Tensor:
    x = _wrap(x)

    def backward(g):
        _accum(x, g / x.data)

    return _make(np.log(x.data), (x,), backward, "log")


def xlogx(x) -> Tensor:
    """x * log(x) with the 0 * log(0) = 0 convention (and zero gradient there)."""
    x = _wrap(x)
    positive = x.data > 0
    logs = np.log(np.where(positive, x.data, 1.0))

    def backward(g):
        _accum(x, g * np.where(positive, logs + 1.0, 0.0))

    return _make(x.data * logs, (x,), backward, "xlogx")


def maximum(a, b) -> Tensor:
    """Elementwise max; on ties the gradient goes to the first argument."""
    a = _wrap(a, b if isinstance(b, Tensor) else None)
    b = _wrap(b, a)
    take_a = a.data >= b.data

    def backward(g):
        _accum(a, g * take_a)
        _accum(b, g * ~take_a)

    return _make(np.where(take_a, a.data, b.data), (a, b), backward, "maximum")


def minimum(a, b) -> Tensor:
    """Elementwise min; on ties the gradient goes to the first argument."""
    a = _wrap(a, b if isinstance(b, Tensor) else None)
    b = _wrap(b, a)
    take_a = a.data <= b.data

    def backward(g):
        _accum(a, g * take_a)
        _accum(b, g * ~take_a)

    return _make(np.where(take_a, a.data, b.data), (a, b), backward, "minimum")


# ---------------------------------------------------------------------
# reductions and shape ops
# ---------------------------------------------------------------------


def _expand_reduced(g: np.ndarray, shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(g, shape)
    axes = axis if isinstance(axis, tuple) else (axis,)
    if not keepdims:
        for ax in sorted(a % len(shape) for a in axes):
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape)


def sum_(x, axis=None, keepdims=False) -> Tensor:
    x = _wrap(x)
    shape = x.data.shape

    def backward(g):
        _accum(x, _expand_reduced(g, shape, axis, keepdims))

    return _make(x.data.sum(axis=axis, keepdims=keepdims), (x,), backward, "sum")


def mean(x, axis=None, keepdims=False) -> Tensor:
    x = _wrap(x)
    shape = x.data.shape
    count = x.data.size if axis is None else np.prod(
        [shape[a] for a in (axis if isinstance(axis, tuple) else (axis,))]
    )

    def backward(g):
        _accum(x, _expand_reduced(g / count, shape, axis, keepdims))

    return _make(x.data.mean(axis=axis, keepdims=keepdims), (x,), backward, "mean")


def max_reduce(x, axis: int) -> Tensor:
    """Max along an axis; gradient flows to the first maximal element only."""
    x = _wrap(x)
    idx = np.argmax(x.data, axis=axis)
    out_data = np.take_along_axis(x.data, np.expand_dims(idx, axis), axis=axis).squeeze(axis)

    def backward(g):
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis)
        _accum(x, gx)

    return _make(out_data, (x,), backward, "max_reduce")


def softmax(x, axis: int = -1) -> Tensor:
    x = _wrap(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        gx = out_data * (g - (g * out_data).sum(axis=axis, keepdims=True))
        _accum(x, gx)

    return _make(out_data, (x,), backward, "softmax")


def log_softmax(x, axis: int = -1) -> Tensor:
    x = _wrap(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    out_data = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

    def backward(g):
        gx = g - np.exp(out_data) * g.sum(axis=axis, keepdims=True)
        _accum(x, gx)

    return _make(out_data, (x,), backward, "log_softmax")


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            _accum(t, piece)

    return _make(np.concatenate([t.data for t in tensors], axis=axis),
                 tuple(tensors), backward, "concat")


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = [_wrap(t) for t in tensors]

    def backward(g):
        for i, t in enumerate(tensors):
            _accum(t, np.take(g, i, axis=axis))

    return _make(np.stack([t.data for t in tensors], axis=axis),
                 tuple(tensors), backward, "stack")


def take(x, key) -> Tensor:
    """Basic numpy indexing/slicing as a differentiable op."""
    x = _wrap(x)

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[key] += g
        _accum(x, gx)

    return _make(x.data[key], (x,), backward, "take")


def reshape(x, shape) -> Tensor:
    x = _wrap(x)
    old = x.data.shape

    def backward(g):
        _accum(x, g.reshape(old))

    return _make(x.data.reshape(shape), (x,), backward, "reshape")


def broadcast_to(x, shape) -> Tensor:
    x = _wrap(x)
    old = x.data.shape

    def backward(g):
        _accum(x, _unbroadcast(g, old))

    return _make(np.broadcast_to(x.data, shape), (x,), backward, "broadcast_to")


def transpose(x, axes=None) -> Tensor:
    x = _wrap(x)
    if axes is None:
        axes = tuple(reversed(range(x.data.ndim)))
    inverse = np.argsort(axes)

    def backward(g):
        _accum(x, g.transpose(inverse))

    return _make(x.data.transpose(axes), (x,), backward, "transpose")


# ---------------------------------------------------------------------
# matrix multiply
# ---------------------------------------------------------------------


def matmul(a, b) -> Tensor:
    """np.matmul semantics, including broadcast batch dims and 1-D operands."""
    a = _wrap(a, b if isinstance(b, Tensor) else None)
    b = _wrap(b, a)
    a1, b1 = a.data.ndim == 1, b.data.ndim == 1
    am = a.data[None, :] if a1 else a.data
    bm = b.data[:, None] if b1 else b.data
    out = am @ bm
    out_data = out
    if a1 and b1:
        out_data = out.reshape(())
    elif a1:
        out_data = out.squeeze(-2)
    elif b1:
        out_data = out.squeeze(-1)

    def backward(g):
        gm = g
        if a1 and b1:
            gm = gm.reshape(1, 1)
        elif a1:
            gm = np.expand_dims(gm, -2)
        elif b1:
            gm = np.expand_dims(gm, -1)
        ga = _unbroadcast(gm @ np.swapaxes(bm, -1, -2), am.shape)
        gb = _unbroadcast(np.swapaxes(am, -1, -2) @ gm, bm.shape)
        _accum(a, ga.reshape(a.data.shape))
        _accum(b, gb.reshape(b.data.shape))

    return _make(out_data, (a, b), backward, "matmul")


# ---------------------------------------------------------------------
# guarded cosine similarity
# ---------------------------------------------------------------------


def cosine(u, v, eps: float = COS_EPS) -> Tensor:
    """Cosine similarity along the last axis with guarded denominators.

    cos(u, v) = <u, v> / (max(|u|, eps) * max(|v|, eps)), so a zero vector
    yields 0 instead of a division error.  Broadcasts like an elementwise op
    over the leading axes.
    """
    u = _wrap(u, v if isinstance(v, Tensor) else None)
    v = _wrap(v, u)
    ud, vd = np.broadcast_arrays(u.data, v.data)
    s = (ud * vd).sum(axis=-1, keepdims=True)
    nu = np.sqrt((ud * ud).sum(axis=-1, keepdims=True))
    nv = np.sqrt((vd * vd).sum(axis=-1, keepdims=True))
    gu = np.maximum(nu, eps)
    gv = np.maximum(nv, eps)
    denom = gu * gv
    out_data = (s / denom).squeeze(-1)

    def backward(g):
        gk = np.expand_dims(g, -1)
        # gradient of the guarded norm: u/|u| where the guard is inactive, else 0
        nu_safe = np.where(nu > 0, nu, 1.0)
        nv_safe = np.where(nv > 0, nv, 1.0)
        du = gk * (vd / denom - (nu >= eps) * s * ud / (nu_safe * gu * denom))
        dv = gk * (ud / denom - (nv >= eps) * s * vd / (nv_safe * gv * denom))
        _accum(u, _unbroadcast(du, u.data.shape))
        _accum(v, _unbroadcast(dv, v.data.shape))

    return _make(out_data, (u, v), backward, "cosine")


# ---------------------------------------------------------------------
# LSTM cell and scan
# ---------------------------------------------------------------------


def lstm_cell(x: Tensor, h: Tensor, c: Tensor, W: Tensor, b: Tensor):
    """One LSTM step.  W: (in+H, 4H) over [input, hidden]; gate order i,f,g,o."""
    hidden = h.shape[-1]
    z = matmul(concat([x, h], axis=-1), W) + b
    i = sigmoid(z[..., :hidden])
    f = sigmoid(z[..., hidden:2 * hidden])
    g = tanh(z[..., 2 * hidden:3 * hidden])
    o = sigmoid(z[..., 3 * hidden:])
    c_new = f * c + i * g
    h_new = o * tanh(c_new)
    return h_new, c_new


def lstm_scan(xs: Tensor, W: Tensor, b: Tensor, reverse: bool = False) -> Tensor:
    """Run an LSTM over axis -2 of xs (..., T, in) -> states (..., T, H).

    Initial hidden and cell states are zero.  With reverse=True the scan
    consumes positions T-1..0; the returned states stay aligned with the
    input positions either way.
    """
    steps = xs.shape[-2]
    hidden = W.shape[-1] // 4
    lead = xs.shape[:-2]
    h = Tensor(np.zeros(lead + (hidden,), dtype=xs.data.dtype))
    c = Tensor(np.zeros(lead + (hidden,), dtype=xs.data.dtype))
    order = range(steps - 1, -1, -1) if reverse else range(steps)
    states: list[Tensor | None] = [None] * steps
    for t in order:
        h, c = lstm_cell(xs[..., t, :], h, c, W, b)
        states[t] = h
    return stack(states, axis=-2)


# ---------------------------------------------------------------------
# parameter store
# ---------------------------------------------------------------------


class ParamStore:
    """Named trainable tensors with a flat-vector view for optimizers.

    Iteration order is registration order, which fixes the layout of the
    flat value/gradient views and of the serialized file.
    """

    def __init__(self, dtype=np.float64):
        self.dtype = np.dtype(dtype)
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, values) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name}")
        arr = np.asarray(values, dtype=self.dtype)
        if arr.ndim == 0:
            raise ValueError(f"parameter {name} must be at least 1-D")
        t = Tensor(arr, requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self):
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def tensors(self) -> list[Tensor]:
        return list(self._params.values())

    @property
    def size(self) -> int:
        return sum(t.data.size for t in self._params.values())

    def flat(self) -> np.ndarray:
        return np.concatenate([t.data.ravel() for t in self._params.values()]).astype(np.float64)

    def set_flat(self, vec: np.ndarray):
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (self.size,):
            raise ValueError(f"flat vector has size {vec.size}, expected {self.size}")
        offset = 0
        for t in self._params.values():
            n = t.data.size
            t.data[...] = vec[offset:offset + n].reshape(t.data.shape).astype(self.dtype)
            offset += n

    def grad_flat(self) -> np.ndarray:
        parts = []
        for t in self._params.values():
            if t.grad is None:
                parts.append(np.zeros(t.data.size))
            else:
                parts.append(np.asarray(t.grad, dtype=np.float64).ravel())
        return np.concatenate(parts)

    def zero_grad(self):
        for t in self._params.values():
            t.grad = None

    # serialization: text header (`name shape offset` per parameter, offsets
    # in elements), a blank line, then the flat values as little-endian f64
    def save(self, path):
        header = [f"paramstore {len(self._params)}"]
        offset = 0
        for name, t in self._params.items():
            shape = "x".join(str(d) for d in t.data.shape)
            header.append(f"{name} {shape} {offset}")
            offset += t.data.size
        with open(path, "wb") as fh:
            fh.write(("\n".join(header) + "\n\n").encode("ascii"))
            fh.write(self.flat().astype("<f8").tobytes())

    @classmethod
    def load(cls, path, dtype=np.float64) -> "ParamStore":
        with open(path, "rb") as fh:
            blob = fh.read()
        sep = blob.index(b"\n\n")
        lines = blob[:sep].decode("ascii").splitlines()
        m = re.fullmatch(r"paramstore (\d+)", lines[0])
        if m is None or len(lines) != int(m.group(1)) + 1:
            raise ValueError(f"malformed parameter file header in {path}")
        values = np.frombuffer(blob[sep + 2:], dtype="<f8")
        store = cls(dtype=dtype)
        for line in lines[1:]:
            name, shape_s, offset_s = line.rsplit(" ", 2)
            shape = tuple(int(d) for d in shape_s.split("x"))
            offset = int(offset_s)
            n = int(np.prod(shape))
            store.add(name, values[offset:offset + n].reshape(shape))
        if store.size != values.size:
            raise ValueError(f"parameter file {path} has {values.size} values, header describes {store.size}")
        return store


# ---------------------------------------------------------------------
# gradient verification
# ---------------------------------------------------------------------


def forward_backward(loss_fn, params: ParamStore) -> tuple[float, np.ndarray]:
    """Evaluate a scalar loss and return (loss value, flat analytic gradient)."""
    params.zero_grad()
    loss = loss_fn(params)
    if loss.data.size != 1:
        raise ValueError("loss_fn must return a scalar Tensor")
    loss.backward()
    return float(loss.data), params.grad_flat()


@dataclass
class GradientCheckEntry:
    name: str
    checked: int
    max_rel_err: float
    worst_index: int
    analytic: float
    numeric: float


@dataclass
class GradientCheckReport:
    rel_tol: float
    epsilon: float
    entries: list[GradientCheckEntry] = field(default_factory=list)
    failures: list[tuple[str, int, float, float, float]] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures

    @property
    def max_rel_err(self) -> float:
        return max((e.max_rel_err for e in self.entries), default=0.0)

    @property
    def coords_checked(self) -> int:
        return sum(e.checked for e in self.entries)

    def __str__(self):
        lines = [f"{'parameter':<24} {'checked':>7} {'max rel err':>12}"]
        for e in self.entries:
            lines.append(f"{e.name:<24} {e.checked:>7} {e.max_rel_err:>12.3e}")
        verdict = "PASS" if self.passed else "FAIL"
        lines.append(f"{verdict}: {self.coords_checked} coordinates, "
                     f"max rel err {self.max_rel_err:.3e} (tol {self.rel_tol:g})")
        for name, idx, a, n, err in self.failures[:10]:
            lines.append(f"  FAIL {name}[{idx}]: analytic={a:.6e} numeric={n:.6e} rel_err={err:.3e}")
        return "\n".join(lines)


def gradient_check(loss_fn, params: ParamStore, epsilon: float = 1e-5,
                   rel_tol: float = 1e-3, min_coords: int = 64,
                   seed: int = 0) -> GradientCheckReport:
    """Compare analytic gradients with central finite differences.

    Samples at least `min_coords` coordinates (all of them if the store is
    smaller), spread over every parameter tensor.  Relative error is
    |a - n| / max(|a|, |n|, 1e-8).  Requires 64-bit parameters.
    """
    if params.dtype != np.float64:
        raise ValueError("gradient_check requires float64 parameters")
    _, analytic = forward_backward(loss_fn, params)

    rng = np.random.default_rng(seed)
    named = list(params.items())
    check_all = params.size <= min_coords
    per_tensor = max(2, math.ceil(min_coords / max(len(named), 1)))
    chosen: list[tuple[str, Tensor, np.ndarray]] = []
    total = 0
    for name, t in named:
        k = t.data.size if check_all else min(t.data.size, per_tensor)
        idx = np.sort(rng.choice(t.data.size, size=k, replace=False))
        chosen.append((name, t, idx))
        total += k
    # top up until the floor is met, taking extras from the roomiest tensor
    while total < min(min_coords, params.size):
        pos = max(range(len(chosen)), key=lambda j: chosen[j][1].data.size - len(chosen[j][2]))
        name, t, idx = chosen[pos]
        free = np.setdiff1d(np.arange(t.data.size), idx)
        extra = rng.choice(free, size=min(len(free), min_coords - total), replace=False)
        chosen[pos] = (name, t, np.sort(np.concatenate([idx, extra])))
        total += len(extra)

    def eval_loss() -> float:
        with no_grad():
            return loss_fn(params).item()

    report = GradientCheckReport(rel_tol=rel_tol, epsilon=epsilon)
    offset = 0
    offsets = {}
    for name, t in named:
        offsets[name] = offset
        offset += t.data.size

    for name, t, idx in chosen:
        flat_view = t.data.reshape(-1)
        worst = (0.0, -1, 0.0, 0.0)
        for i in idx:
            original = flat_view[i]
            flat_view[i] = original + epsilon
            f_plus = eval_loss()
            flat_view[i] = original - epsilon
            f_minus = eval_loss()
            flat_view[i] = original
            numeric = (f_plus - f_minus) / (2.0 * epsilon)
            a = analytic[offsets[name] + i]
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            if err > worst[0]:
                worst = (err, int(i), float(a), float(numeric))
            if err > rel_tol:
                report.failures.append((name, int(i), float(a), float(numeric), float(err)))
        report.entries.append(GradientCheckEntry(
            name=name, checked=len(idx), max_rel_err=worst[0],
            worst_index=worst[1], analytic=worst[2], numeric=worst[3]))
    return report
