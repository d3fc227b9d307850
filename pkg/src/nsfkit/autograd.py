"""Dense-array reverse-mode differentiation for the vocoder graphs.

Graphs are built define-by-run: every op call creates a :class:`Tensor`
holding its value, its parents and a backward rule. The rule receives the
upstream gradient and returns one gradient per parent; accumulation is done
by :func:`backward`, which sums contributions in creation order so that the
result does not depend on which topological order is walked.
"""
from __future__ import annotations

import contextlib
import enum
import itertools
from typing import Callable, Iterable, Sequence

import numpy as np

_DTYPE = np.float32
_GRAD_ENABLED = True
_ids = itertools.count()


def get_dtype():
    return _DTYPE


def set_double_precision(flag: bool) -> None:
    global _DTYPE
    _DTYPE = np.float64 if flag else np.float32


@contextlib.contextmanager
def double_precision():
    """Temporarily switch newly created arrays to float64."""
    previous = _DTYPE
    set_double_precision(True)
    try:
        yield
    finally:
        set_double_precision(previous == np.float64)


@contextlib.contextmanager
def no_grad():
    """Build no graph: nodes keep values only, so intermediates are freed early."""
    global _GRAD_ENABLED
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class OpKind(str, enum.Enum):
    LEAF = "leaf"
    MATMUL = "matmul"
    CONV1D = "dilated-causal-conv1d"
    LSTM = "lstm-cell"
    ADD = "add"
    MULTIPLY = "multiply"
    TANH = "tanh"
    SIGMOID = "sigmoid"
    EXP = "exp"
    CONCAT = "concat"
    SLICE = "slice"
    REPEAT = "repeat"
    RESHAPE = "reshape"
    SUM = "sum"
    FRAME_WINDOW = "frame-window"
    FIR = "fir-filter"
    SPECTRAL_LOSS = "custom-spectral-loss"
    MSE = "waveform-mse"
    CHECKPOINT = "checkpoint"


class GraphError(RuntimeError):
    pass


class Tensor:
    """A graph node: value, gradient buffer, producing op and parents."""

    __slots__ = ("value", "grad", "op", "parents", "backward_rule",
                 "requires_grad", "trainable", "name", "uid")

    def __init__(self, value, parents: Sequence["Tensor"] = (),
                 op: OpKind = OpKind.LEAF, backward_rule: Callable | None = None,
                 requires_grad: bool | None = None, trainable: bool = False,
                 name: str | None = None):
        value = np.asarray(value)
        if op is OpKind.LEAF and value.dtype != _DTYPE:
            value = value.astype(_DTYPE)
        self.value = value
        if not _GRAD_ENABLED and not trainable:
            parents, backward_rule, requires_grad = (), None, False
        self.parents = tuple(parents)
        self.op = op
        self.backward_rule = backward_rule
        if requires_grad is None:
            requires_grad = trainable or any(p.requires_grad for p in self.parents)
        self.requires_grad = requires_grad
        self.trainable = trainable
        self.name = name
        self.grad = None
        self.uid = next(_ids)
        if trainable:
            self.zero_grad()

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.value)

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor({self.op.value}{label}, shape={self.shape})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def constant(value) -> Tensor:
    return Tensor(np.asarray(value, dtype=_DTYPE), requires_grad=False)


def variable(value, name: str | None = None) -> Tensor:
    """A non-trainable input whose gradient is exposed after backward."""
    return Tensor(np.asarray(value, dtype=_DTYPE), requires_grad=True, name=name)


def parameter(value, name: str | None = None) -> Tensor:
    return Tensor(np.asarray(value, dtype=_DTYPE), trainable=True, name=name)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else constant(x)


def _check(cond: bool, op: OpKind, *shapes) -> None:
    if not cond:
        dims = " vs ".join(str(tuple(s)) for s in shapes)
        raise ValueError(f"{op.value}: incompatible shapes {dims}")


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _finite(out: np.ndarray, op: OpKind) -> np.ndarray:
    if not np.all(np.isfinite(out)):
        raise FloatingPointError(f"{op.value}: non-finite value produced")
    return out


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = a.value + b.value
    except ValueError:
        _check(False, OpKind.ADD, a.shape, b.shape)

    def rule(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor(out, (a, b), OpKind.ADD, rule)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = a.value * b.value
    except ValueError:
        _check(False, OpKind.MULTIPLY, a.shape, b.shape)

    def rule(g):
        ga = _unbroadcast(g * b.value, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.value, b.shape) if b.requires_grad else None
        return ga, gb

    return Tensor(out, (a, b), OpKind.MULTIPLY, rule)


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.value)
    return Tensor(y, (x,), OpKind.TANH, lambda g: (g * (1.0 - y * y),))


def sigmoid(x: Tensor) -> Tensor:
    y = _sigmoid(x.value)
    return Tensor(y, (x,), OpKind.SIGMOID, lambda g: (g * y * (1.0 - y),))


def exp(x: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        y = _finite(np.exp(x.value), OpKind.EXP)
    return Tensor(y, (x,), OpKind.EXP, lambda g: (g * y,))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (np.tanh(0.5 * z) + 1.0)


# ---------------------------------------------------------------- structural

def matmul(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w`` (plus a bias row ``b`` if given) for 2-d ``x`` and ``w``."""
    x, w = _as_tensor(x), _as_tensor(w)
    _check(x.value.ndim == 2 and w.value.ndim == 2 and x.shape[1] == w.shape[0],
           OpKind.MATMUL, x.shape, w.shape)
    out = x.value @ w.value
    parents = (x, w)
    if b is not None:
        out += b.value
        parents = (x, w, b)

    def rule(g):
        gx = g @ w.value.T if x.requires_grad else None
        gw = x.value.T @ g if w.requires_grad else None
        return (gx, gw) if b is None else (gx, gw, g.sum(axis=0))

    return Tensor(out, parents, OpKind.MATMUL, rule)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.value for t in tensors], axis=axis)
    except ValueError:
        _check(False, OpKind.CONCAT, *(t.shape for t in tensors))
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def rule(g):
        return tuple(np.take(g, np.arange(lo, hi), axis=axis)
                     for lo, hi in zip(bounds[:-1], bounds[1:]))

    return Tensor(out, tensors, OpKind.CONCAT, rule)


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    """Columns ``start:stop`` of a 2-d tensor."""
    _check(x.value.ndim == 2 and 0 <= start < stop <= x.shape[1], OpKind.SLICE, x.shape)
    out = x.value[:, start:stop]

    def rule(g):
        full = np.zeros_like(x.value)
        full[:, start:stop] = g
        return (full,)

    return Tensor(out, (x,), OpKind.SLICE, rule)


def repeat_rows(x: Tensor, factor: int) -> Tensor:
    """Replicate every row ``factor`` times (frame-to-sample upsampling)."""
    out = np.repeat(x.value, factor, axis=0)
    rows = x.shape[0]

    def rule(g):
        return (g.reshape(rows, factor, *g.shape[1:]).sum(axis=1),)

    return Tensor(out, (x,), OpKind.REPEAT, rule)


def reshape(x: Tensor, shape) -> Tensor:
    out = x.value.reshape(shape)
    return Tensor(out, (x,), OpKind.RESHAPE, lambda g: (g.reshape(x.shape),))


def sum_all(x: Tensor) -> Tensor:
    out = np.asarray(x.value.sum(), dtype=x.value.dtype)
    return Tensor(out, (x,), OpKind.SUM, lambda g: (np.full_like(x.value, g),))


# ---------------------------------------------------------------- convolution

def conv1d(x: Tensor, w: Tensor, b: Tensor | None = None, dilation: int = 1,
           causal: bool = True) -> Tensor:
    """Dilated 1-d convolution of a ``T x Cin`` signal with ``K x Cin x Cout`` taps.

    Causal mode pads on the left only, so output ``t`` sees inputs
    ``t, t-d, ..., t-(K-1)d``. Non-causal mode centres the kernel.
    """
    x, w = _as_tensor(x), _as_tensor(w)
    _check(x.value.ndim == 2 and w.value.ndim == 3 and w.shape[1] == x.shape[1],
           OpKind.CONV1D, x.shape, w.shape)
    T = x.shape[0]
    K = w.shape[0]
    if causal:
        shifts = [(K - 1 - k) * dilation for k in range(K)]
    else:
        half = (K - 1) // 2
        shifts = [(half - k) * dilation for k in range(K)]

    xv, wv = x.value, w.value
    out = np.zeros((T, w.shape[2]), dtype=np.result_type(xv, wv))
    for k, s in enumerate(shifts):
        if abs(s) >= T:
            continue
        if s >= 0:
            out[s:] += xv[:T - s] @ wv[k]
        else:
            out[:T + s] += xv[-s:] @ wv[k]
    parents = [x, w]
    if b is not None:
        out += b.value
        parents.append(b)

    def rule(g):
        gx = np.zeros_like(xv) if x.requires_grad else None
        gw = np.zeros_like(wv) if w.requires_grad else None
        for k, s in enumerate(shifts):
            if abs(s) >= T:
                continue
            if s >= 0:
                src, dst = slice(0, T - s), slice(s, T)
            else:
                src, dst = slice(-s, T), slice(0, T + s)
            if gx is not None:
                gx[src] += g[dst] @ wv[k].T
            if gw is not None:
                gw[k] = xv[src].T @ g[dst]
        grads = [gx, gw]
        if b is not None:
            grads.append(g.sum(axis=0))
        return tuple(grads)

    return Tensor(out, parents, OpKind.CONV1D, rule)


# ---------------------------------------------------------------- recurrence

def lstm(x: Tensor, w_in: Tensor, w_rec: Tensor, bias: Tensor,
         reverse: bool = False) -> Tensor:
    """Single-direction LSTM over a ``T x D`` sequence, returning ``T x H``.

    Gate order in the packed ``4H`` axis is input, forget, cell, output.
    Backward runs full back-propagation through time.
    """
    H = w_rec.shape[0]
    _check(x.shape[1] == w_in.shape[0] and w_in.shape[1] == 4 * H
           and w_rec.shape == (H, 4 * H), OpKind.LSTM, x.shape, w_in.shape, w_rec.shape)
    xv = x.value[::-1] if reverse else x.value
    T = xv.shape[0]
    dtype = np.result_type(xv, w_in.value)
    pre = xv @ w_in.value + bias.value
    gates = np.empty((T, 4 * H), dtype=dtype)
    cells = np.empty((T, H), dtype=dtype)
    hs = np.empty((T, H), dtype=dtype)
    h = np.zeros(H, dtype=dtype)
    c = np.zeros(H, dtype=dtype)
    wr = w_rec.value
    for t in range(T):
        z = pre[t] + h @ wr
        i = _sigmoid(z[:H])
        f = _sigmoid(z[H:2 * H])
        u = np.tanh(z[2 * H:3 * H])
        o = _sigmoid(z[3 * H:])
        c = f * c + i * u
        h = o * np.tanh(c)
        gates[t, :H], gates[t, H:2 * H], gates[t, 2 * H:3 * H], gates[t, 3 * H:] = i, f, u, o
        cells[t] = c
        hs[t] = h
    out = hs[::-1].copy() if reverse else hs

    def rule(g):
        gh_seq = g[::-1] if reverse else g
        dz = np.empty_like(gates)
        dh_next = np.zeros(H, dtype=dtype)
        dc_next = np.zeros(H, dtype=dtype)
        for t in range(T - 1, -1, -1):
            i, f, u, o = (gates[t, :H], gates[t, H:2 * H],
                          gates[t, 2 * H:3 * H], gates[t, 3 * H:])
            tc = np.tanh(cells[t])
            dh = gh_seq[t] + dh_next
            dc = dc_next + dh * o * (1.0 - tc * tc)
            c_prev = cells[t - 1] if t > 0 else np.zeros(H, dtype=dtype)
            dz[t, :H] = dc * u * i * (1.0 - i)
            dz[t, H:2 * H] = dc * c_prev * f * (1.0 - f)
            dz[t, 2 * H:3 * H] = dc * i * (1.0 - u * u)
            dz[t, 3 * H:] = dh * tc * o * (1.0 - o)
            dc_next = dc * f
            dh_next = dz[t] @ wr.T
        h_prev = np.vstack([np.zeros((1, H), dtype=dtype), hs[:-1]])
        gx = dz @ w_in.value.T
        if reverse:
            gx = gx[::-1].copy()
        return gx, xv.T @ dz, h_prev.T @ dz, dz.sum(axis=0)

    return Tensor(out, (x, w_in, w_rec, bias), OpKind.LSTM, rule)


# ---------------------------------------------------------------- custom ops

def custom(op: OpKind, value: np.ndarray, parents: Sequence[Tensor],
           rule: Callable) -> Tensor:
    """Register an op whose forward was computed elsewhere (loss, filters)."""
    return Tensor(value, parents, op, rule)


def checkpoint(fn: Callable[..., Tensor], inputs: Sequence[Tensor],
               params: Sequence[Tensor]) -> Tensor:
    """Run ``fn(*inputs)`` without keeping its intermediates.

    The sub-graph is rebuilt during backward and differentiated on the spot;
    parameters used by ``fn`` receive their gradients from that inner pass.
    Trades one extra forward of ``fn`` for memory proportional to its inputs.
    """
    if not _GRAD_ENABLED:
        return fn(*inputs)
    with no_grad():
        out = fn(*inputs)

    def rule(g):
        local = [Tensor(t.value, requires_grad=t.requires_grad) for t in inputs]
        inner = fn(*local)
        if inner.requires_grad:
            backward(inner, g)
        return tuple(t.grad if t.requires_grad else None for t in local)

    needs = any(t.requires_grad for t in inputs) or any(p.requires_grad for p in params)
    return Tensor(out.value, tuple(inputs), OpKind.CHECKPOINT, rule, requires_grad=needs)


# ---------------------------------------------------------------- backward

def topological_order(root: Tensor) -> list[Tensor]:
    """Nodes reachable from ``root`` that need gradients, parents first."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if node.uid in seen or not node.requires_grad:
            continue
        seen.add(node.uid)
        stack.append((node, True))
        for p in reversed(node.parents):
            if p.uid not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def backward(root: Tensor, seed=None, order: Sequence[Tensor] | None = None) -> None:
    """Propagate ``seed`` (default ones) from ``root`` to every leaf.

    Trainable leaves accumulate into ``.grad``; other gradient-requiring
    nodes have ``.grad`` overwritten. ``order`` may supply any valid
    topological order (parents before children) of the reachable nodes.
    """
    if not root.requires_grad:
        raise GraphError("backward called on a node with no trainable ancestry")
    if order is None:
        order = topological_order(root)
    if seed is None:
        seed = np.ones_like(root.value)
    seed = np.asarray(seed, dtype=root.value.dtype)
    if seed.shape != root.shape:
        raise ValueError(f"seed shape {seed.shape} != root shape {root.shape}")

    pending: dict[int, list] = {root.uid: [(-1, 0, seed)]}
    for node in reversed(order):
        contribs = pending.pop(node.uid, None)
        if not contribs:
            continue
        contribs.sort(key=lambda c: (c[0], c[1]))
        g = contribs[0][2]
        for _, _, extra in contribs[1:]:
            g = g + extra
        if node.trainable:
            node.grad += g
        elif node.op is OpKind.LEAF:
            node.grad = g
        if node.backward_rule is None:
            continue
        grads = node.backward_rule(g)
        for slot, (parent, pg) in enumerate(zip(node.parents, grads)):
            if pg is None or not parent.requires_grad:
                continue
            pending.setdefault(parent.uid, []).append((node.uid, slot, pg))


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.zero_grad()


class Graph:
    """A rebuildable computation: ``build(**inputs)`` returns the root node.

    The structure is fixed by ``build``; it is re-run for every new set of
    inputs (utterance lengths vary), and backward is only legal after a
    forward on the same instance.
    """

    def __init__(self, build: Callable[..., Tensor], params: Sequence[Tensor] = ()):
        self.build = build
        self.params = list(params)
        self.root: Tensor | None = None

    def forward(self, **inputs) -> np.ndarray:
        self.root = self.build(**inputs)
        return self.root.value

    def backward(self, seed=None) -> dict[str, np.ndarray]:
        if self.root is None:
            raise GraphError("backward called before forward")
        backward(self.root, seed)
        return {p.name or str(i): p.grad for i, p in enumerate(self.params)}


# ---------------------------------------------------------------- checking

def _require_finite(root: Tensor) -> None:
    for node in topological_order(root):
        if not np.all(np.isfinite(node.value)):
            label = f" ({node.name})" if node.name else ""
            raise FloatingPointError(f"non-finite value produced by {node.op.value}{label}")

def grad_check(loss_fn: Callable[[], Tensor], wrt: Sequence[Tensor],
               eps: float = 1e-4, indices: dict[int, np.ndarray] | None = None) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``loss_fn`` rebuilds the graph from the current values of ``wrt`` and
    returns a scalar node. ``indices`` optionally restricts, per position in
    ``wrt``, which flat entries are probed. Run under :func:`double_precision`
    with float64 values.
    """
    for t in wrt:
        if t.value.dtype != np.float64:
            raise TypeError("grad_check requires float64 tensors")
        t.grad = np.zeros_like(t.value)
    root = loss_fn()
    _require_finite(root)
    backward(root)
    analytic = [np.array(t.grad, copy=True) for t in wrt]

    worst = 0.0
    for pos, t in enumerate(wrt):
        flat = t.value.reshape(-1)
        probe = range(flat.size) if indices is None or pos not in indices else indices[pos]
        for idx in probe:
            orig = flat[idx]
            flat[idx] = orig + eps
            up = float(loss_fn().value)
            flat[idx] = orig - eps
            down = float(loss_fn().value)
            flat[idx] = orig
            numeric = (up - down) / (2 * eps)
            a = analytic[pos].reshape(-1)[idx]
            worst = max(worst, abs(a - numeric) / max(abs(numeric), 1e-8))
    return worst
