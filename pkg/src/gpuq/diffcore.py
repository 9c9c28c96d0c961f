"""Reverse-mode differentiation over numpy arrays, plus Adam.

A :class:`Tensor` records the operation that produced it and a vector-Jacobian
product for each input. :func:`grad` walks the recorded graph backwards from a
scalar output. The graph is rebuilt on every forward pass; nothing persists
between training steps except the :class:`Parameter` leaves.

All values are float64.
"""
from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.linalg import solve_triangular as _sp_solve_triangular

from .errors import NotPositiveDefiniteError, NumericError

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Evaluate expressions without recording the graph (prediction only)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("value", "parents", "op", "name")
    __array_ufunc__ = None

    def __init__(self, value, parents=(), op: str = "const", name: str | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        # tuple of (input tensor, vjp) where vjp maps output cotangent -> input cotangent
        self.parents = parents
        self.op = op
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def numpy(self) -> np.ndarray:
        return self.value

    def __repr__(self) -> str:
        return f"Tensor(op={self.op}, shape={self.shape})"

    def __len__(self) -> int:
        return len(self.value)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        if not other.parents and not isinstance(other, Parameter):
            return mul(self, 1.0 / other.value)
        return mul(self, reciprocal(other))

    def __rtruediv__(self, other):
        return mul(as_tensor(other), reciprocal(self))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(as_tensor(other), self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    @property
    def T(self):
        return transpose(self)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        n = self.value.size if axis is None else np.prod([self.shape[a] for a in np.atleast_1d(axis)])
        return tsum(self, axis=axis, keepdims=keepdims) * (1.0 / n)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


class Parameter(Tensor):
    """Trainable leaf.

    With ``positive=True`` the stored value is the log of the quantity and
    :meth:`read` returns its exponential, so the materialized value is always
    strictly positive while the optimizer works on an unconstrained number.
    """

    __slots__ = ("positive", "grad", "trainable")

    def __init__(self, value, positive: bool = False, name: str | None = None, trainable: bool = True):
        value = np.array(value, dtype=np.float64)
        if positive:
            if np.any(value <= 0):
                raise ValueError(f"parameter {name!r} needs a positive initial value")
            value = np.log(value)
        super().__init__(value, (), "param", name)
        self.positive = positive
        self.trainable = trainable
        self.grad = np.zeros_like(self.value)

    def read(self) -> Tensor:
        return exp(self) if self.positive else self

    def get(self) -> np.ndarray:
        """Materialized value as a plain array."""
        return np.exp(self.value) if self.positive else self.value.copy()

    def set(self, value) -> None:
        value = np.asarray(value, dtype=np.float64)
        if value.shape != self.value.shape:
            raise ValueError(f"shape mismatch for {self.name!r}: {value.shape} vs {self.value.shape}")
        if self.positive:
            if np.any(value <= 0):
                raise ValueError(f"parameter {self.name!r} must stay positive")
            value = np.log(value)
        self.value = value.copy()

    def __repr__(self) -> str:
        return f"Parameter({self.name}, shape={self.shape}, positive={self.positive})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(value, parents, op):
    if not _GRAD_ENABLED:
        return Tensor(value, (), op)
    parents = tuple((p, f) for p, f in parents if p.parents or isinstance(p, Parameter))
    return Tensor(value, parents, op)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.value + b.value,
                 ((a, lambda g: _unbroadcast(g, a.shape)), (b, lambda g: _unbroadcast(g, b.shape))),
                 "add")


def neg(a) -> Tensor:
    return _node(-a.value, ((a, lambda g: -g),), "neg")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value
    return _node(av * bv,
                 ((a, lambda g: _unbroadcast(g * bv, a.shape)), (b, lambda g: _unbroadcast(g * av, b.shape))),
                 "mul")


def reciprocal(a) -> Tensor:
    out = 1.0 / a.value
    return _node(out, ((a, lambda g: -g * out * out),), "reciprocal")


def square(a) -> Tensor:
    av = a.value
    return _node(av * av, ((a, lambda g: 2.0 * g * av),), "square")


def sqrt(a) -> Tensor:
    out = np.sqrt(a.value)
    return _node(out, ((a, lambda g: 0.5 * g / out),), "sqrt")


def exp(a) -> Tensor:
    out = np.exp(a.value)
    return _node(out, ((a, lambda g: g * out),), "exp")


def log(a) -> Tensor:
    av = a.value
    return _node(np.log(av), ((a, lambda g: g / av),), "log")


def relu(a) -> Tensor:
    mask = a.value > 0
    return _node(np.maximum(a.value, 0.0), ((a, lambda g: g * mask),), "relu")


def softplus(a) -> Tensor:
    av = a.value
    out = np.logaddexp(0.0, av)
    return _node(out, ((a, lambda g: g * _sigmoid(av)),), "softplus")


def _sigmoid(x):
    return np.exp(-np.logaddexp(0.0, -x))


def clip_min(a, lo: float) -> Tensor:
    """max(a, lo); the gradient is passed only where the bound is inactive."""
    mask = a.value > lo
    return _node(np.where(mask, a.value, lo), ((a, lambda g: g * mask),), "clip_min")


# ---------------------------------------------------------------- reductions / shape

def tsum(a, axis=None, keepdims=False) -> Tensor:
    shape = a.shape

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, shape).copy()

    return _node(a.value.sum(axis=axis, keepdims=keepdims), ((a, vjp),), "sum")


def reshape(a, shape) -> Tensor:
    old = a.shape
    return _node(a.value.reshape(shape), ((a, lambda g: g.reshape(old)),), "reshape")


def transpose(a, axes=None) -> Tensor:
    """Swap the last two axes by default; ``axes`` gives a full permutation."""
    if axes is None:
        if a.ndim < 2:
            return a
        axes = tuple(range(a.ndim - 2)) + (a.ndim - 1, a.ndim - 2)
    inv = tuple(np.argsort(axes))
    return _node(np.transpose(a.value, axes), ((a, lambda g: np.transpose(g, inv)),), "transpose")


def expand_dims(a, axis) -> Tensor:
    return reshape(a, np.expand_dims(a.value, axis).shape)


def getitem(a, idx) -> Tensor:
    shape = a.shape

    def vjp(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return out

    return _node(a.value[idx], ((a, vjp),), "getitem")


def concatenate(ts: Sequence[Tensor], axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in ts]
    sizes = [t.shape[axis] for t in ts]
    bounds = np.cumsum([0] + sizes)
    parents = []
    for i, t in enumerate(ts):
        sl = [slice(None)] * t.ndim
        sl[axis] = slice(bounds[i], bounds[i + 1])
        sl = tuple(sl)
        parents.append((t, lambda g, sl=sl: g[sl]))
    return _node(np.concatenate([t.value for t in ts], axis=axis), parents, "concatenate")


def stack(ts: Sequence[Tensor], axis: int = 0) -> Tensor:
    ts = [expand_dims(as_tensor(t), axis) for t in ts]
    return concatenate(ts, axis=axis)


def tile_rows(a, reps: int) -> Tensor:
    """Stack ``reps`` copies of a 2-D tensor along the first axis."""
    n = a.shape[0]
    return _node(np.tile(a.value, (reps, 1)),
                 ((a, lambda g: g.reshape(reps, n, -1).sum(axis=0)),), "tile_rows")


def diagonal(a) -> Tensor:
    """Diagonal of the trailing two axes."""
    shape = a.shape
    n = shape[-1]

    def vjp(g):
        out = np.zeros(shape)
        idx = np.arange(n)
        out[..., idx, idx] = g
        return out

    return _node(np.diagonal(a.value, axis1=-2, axis2=-1).copy(), ((a, vjp),), "diagonal")


# ---------------------------------------------------------------- linear algebra

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value
    if av.ndim < 2 or bv.ndim < 2:
        raise ValueError("matmul operands must be at least 2-D")

    def va(g):
        return _unbroadcast(g @ np.swapaxes(bv, -1, -2), a.shape)

    def vb(g):
        return _unbroadcast(np.swapaxes(av, -1, -2) @ g, b.shape)

    return _node(av @ bv, ((a, va), (b, vb)), "matmul")


JITTER_START = 1e-8
JITTER_MAX = 1e-3


def _chol_ladder(A: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(A)):
        raise NotPositiveDefiniteError("matrix has non-finite entries")
    try:
        return np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        pass
    scale = np.mean(np.diagonal(A, axis1=-2, axis2=-1))
    if not np.isfinite(scale) or scale <= 0:
        raise NotPositiveDefiniteError("matrix has non-positive or non-finite mean diagonal")
    eye = np.eye(A.shape[-1])
    jitter = JITTER_START * scale
    while jitter <= JITTER_MAX * scale * (1 + 1e-12):
        try:
            return np.linalg.cholesky(A + jitter * eye)
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise NotPositiveDefiniteError(f"Cholesky failed with jitter up to {JITTER_MAX * scale:.3g}")


def _trisolve(L: np.ndarray, B: np.ndarray, trans: bool = False) -> np.ndarray:
    """Solve L X = B (or L^T X = B) for lower-triangular L, batched over leading axes."""
    if L.ndim == 2 and B.ndim == 2:
        return _sp_solve_triangular(L, B, lower=True, trans=1 if trans else 0, check_finite=False)
    batch = np.broadcast_shapes(L.shape[:-2], B.shape[:-2])
    Lb = np.broadcast_to(L, batch + L.shape[-2:])
    Bb = np.broadcast_to(B, batch + B.shape[-2:])
    out = np.empty(batch + B.shape[-2:])
    for idx in np.ndindex(*batch):
        out[idx] = _sp_solve_triangular(Lb[idx], Bb[idx], lower=True, trans=1 if trans else 0,
                                        check_finite=False)
    return out


def cholesky(A) -> Tensor:
    """Lower Cholesky factor with the jitter ladder, batched over leading axes.

    The backward pass treats the input as symmetric and returns a symmetric
    cotangent.
    """
    A = as_tensor(A)
    L = _chol_ladder(A.value)

    def vjp(gL):
        # Phi(L^T gL) with halved diagonal, then L^{-T} P L^{-1}
        P = np.tril(np.swapaxes(L, -1, -2) @ gL)
        idx = np.arange(L.shape[-1])
        P[..., idx, idx] *= 0.5
        S = _trisolve(L, np.swapaxes(_trisolve(L, P, trans=True), -1, -2), trans=True)
        return 0.5 * (S + np.swapaxes(S, -1, -2))

    return _node(L, ((A, vjp),), "cholesky")


def solve_triangular(L, B) -> Tensor:
    """X = L^{-1} B for lower-triangular L."""
    L, B = as_tensor(L), as_tensor(B)
    X = _trisolve(L.value, B.value)

    def vB(g):
        return _unbroadcast(_trisolve(L.value, g, trans=True), B.shape)

    def vL(g):
        gB = _trisolve(L.value, g, trans=True)
        return _unbroadcast(-np.tril(gB @ np.swapaxes(X, -1, -2)), L.shape)

    return _node(X, ((L, vL), (B, vB)), "solve_triangular")


def logdet(A) -> Tensor:
    """log|A| for symmetric positive-definite A (batched)."""
    A = as_tensor(A)
    L = _chol_ladder(A.value)
    val = 2.0 * np.log(np.diagonal(L, axis1=-2, axis2=-1)).sum(-1)

    def vjp(g):
        eye = np.broadcast_to(np.eye(L.shape[-1]), L.shape)
        Linv = _trisolve(L, eye)
        inv = np.swapaxes(Linv, -1, -2) @ Linv
        return np.asarray(g)[..., None, None] * inv

    return _node(val, ((A, vjp),), "logdet")


# ---------------------------------------------------------------- softmax family

def logsumexp(a, axis=-1, keepdims=False) -> Tensor:
    av = a.value
    mx = np.max(av, axis=axis, keepdims=True)
    mx = np.where(np.isfinite(mx), mx, 0.0)
    s = np.log(np.sum(np.exp(av - mx), axis=axis, keepdims=True)) + mx
    w = np.exp(av - s)
    out = s if keepdims else np.squeeze(s, axis=axis)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return g * w

    return _node(out, ((a, vjp),), "logsumexp")


def log_softmax(a, axis=-1) -> Tensor:
    return a - logsumexp(a, axis=axis, keepdims=True)


def softmax(a, axis=-1) -> Tensor:
    av = a.value
    z = av - np.max(av, axis=axis, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return p * (g - np.sum(g * p, axis=axis, keepdims=True))

    return _node(p, ((a, vjp),), "softmax")


# ---------------------------------------------------------------- backward

def grad(output: Tensor, params: Iterable[Parameter]) -> list[np.ndarray]:
    """Gradients of a scalar ``output`` with respect to each of ``params``.

    Also stores each result in ``param.grad``. Raises ``ValueError`` for a
    non-scalar output and :class:`NumericError` naming the first node whose
    cotangent turns non-finite.
    """
    params = list(params)
    if output.value.size != 1:
        raise ValueError(f"grad needs a scalar output, got shape {output.shape}")

    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(output, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p, _ in node.parents:
            if id(p) not in seen:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(output): np.ones_like(output.value)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if isinstance(node, Parameter):
            grads[id(node)] = g  # leaves keep their cotangent
            continue
        for p, vjp in node.parents:
            with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
                gp = vjp(g)
            # a finite sum implies finite entries; only overflowed sums need the full scan
            if not np.isfinite(np.sum(gp)) and not np.all(np.isfinite(gp)):
                raise NumericError(f"non-finite gradient flowing out of '{node.op}' node"
                                   f" into '{p.name or p.op}'")
            if id(p) in grads:
                grads[id(p)] = grads[id(p)] + gp
            else:
                grads[id(p)] = np.array(gp, dtype=np.float64)

    out = []
    for p in params:
        g = grads.get(id(p))
        g = np.zeros_like(p.value) if g is None else g.reshape(p.shape)
        p.grad = g
        out.append(g)
    return out


def value_and_grad(fn: Callable[[], Tensor], params: Sequence[Parameter]):
    out = fn()
    return float(out.value), grad(out, params)


# ---------------------------------------------------------------- Adam

@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: Sequence[Tensor], **kw) -> "AdamState":
        arrays = [np.asarray(getattr(p, "value", p), dtype=np.float64) for p in params]
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays], **kw)


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamState,
              lr: float) -> tuple[list[np.ndarray], AdamState]:
    """One bias-corrected Adam update (minimization). Pure: returns new arrays."""
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    if not (len(params) == len(grads) == len(state.m)):
        raise ValueError("params, grads and state have different lengths")
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        p, g = np.asarray(p), np.asarray(g)
        if p.shape != g.shape or p.shape != m.shape:
            raise ValueError(f"shape mismatch in adam_step: {p.shape}, {g.shape}, {m.shape}")
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        new_p.append(p - lr * mhat / (np.sqrt(vhat) + state.eps))
        new_m.append(m)
        new_v.append(v)
    return new_p, AdamState(new_m, new_v, t, b1, b2, state.eps)


@dataclass
class Adam:
    """Stateful wrapper around :func:`adam_step` for a fixed parameter list."""

    params: list[Parameter]
    lr: float = 1e-2
    state: AdamState = field(init=False)

    def __post_init__(self):
        self.params = [p for p in self.params if p.trainable]
        self.state = AdamState.zeros_like(self.params)

    def step(self, loss: Tensor) -> float:
        grads = grad(loss, self.params)
        new, self.state = adam_step([p.value for p in self.params], grads, self.state, self.lr)
        for p, v in zip(self.params, new):
            p.value = v
        return float(loss.value)
