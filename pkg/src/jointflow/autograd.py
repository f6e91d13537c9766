"""Small reverse-mode automatic differentiation engine over numpy arrays.

Every value lives in a :class:`Node`.  Operations record a closure that maps
the output gradient to parent gradients; :func:`backward` walks the recorded
graph in reverse topological order.  All arithmetic is float64.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

LEAKY_SLOPE = 0.01

_recording = True


class NonFiniteError(FloatingPointError):
    """Raised when an operation produces NaN or Inf."""


class Node:
    """A value in the computation graph."""

    __slots__ = ("value", "grad", "parents", "backward_fn", "requires_grad", "op")
    # make ``ndarray <op> Node`` defer to the reflected Node operators
    __array_ufunc__ = None

    def __init__(self, value, requires_grad: bool = False, parents=(), backward_fn=None, op: str = "leaf"):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.parents: tuple[Node, ...] = parents
        self.backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = backward_fn
        self.requires_grad = requires_grad
        self.op = op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __repr__(self) -> str:
        return f"Node(op={self.op!r}, shape={self.shape})"

    def zero_grad(self) -> None:
        self.grad = None

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_node(other)))

    def __rsub__(self, other):
        return add(as_node(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return take(self, idx)


def as_node(x) -> Node:
    return x if isinstance(x, Node) else Node(x)


def parameter(value) -> Node:
    return Node(np.array(value, dtype=np.float64), requires_grad=True)


def _check_finite(value: np.ndarray, op: str) -> np.ndarray:
    # one reduction is cheaper than isfinite(); confirm before raising
    if not np.isfinite(value.sum()) and not np.all(np.isfinite(value)):
        raise NonFiniteError(f"non-finite result in {op}")
    return value


@contextlib.contextmanager
def no_grad():
    """Evaluate without recording the graph (inference only)."""
    global _recording
    prev, _recording = _recording, False
    try:
        yield
    finally:
        _recording = prev


def _make(value, parents: tuple[Node, ...], backward_fn, op: str) -> Node:
    value = _check_finite(np.asarray(value, dtype=np.float64), op)
    if _recording and any(p.requires_grad for p in parents):
        return Node(value, True, parents, backward_fn, op)
    return Node(value, False, (), None, op)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    ndim_extra = grad.ndim - len(shape)
    if ndim_extra > 0:
        grad = grad.sum(axis=tuple(range(ndim_extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(a: Node, b: Node, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}") from exc


# ---------------------------------------------------------------------------
# primitives


def add(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _broadcast_shape(a, b, "add")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.value + b.value, (a, b), bw, "add")


def mul(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _broadcast_shape(a, b, "mul")

    def bw(g):
        return _unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)

    return _make(a.value * b.value, (a, b), bw, "mul")


def neg(a) -> Node:
    a = as_node(a)
    return _make(-a.value, (a,), lambda g: (-g,), "neg")


def matmul(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: shape mismatch {a.shape} @ {b.shape}")

    def bw(g):
        return g @ b.value.T, a.value.T @ g

    return _make(a.value @ b.value, (a, b), bw, "matmul")


def exp(a) -> Node:
    a = as_node(a)
    out = np.exp(a.value)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Node:
    a = as_node(a)
    if np.any(a.value <= 0):
        raise ValueError("log of non-positive value")
    return _make(np.log(a.value), (a,), lambda g: (g / a.value,), "log")


def tanh(a) -> Node:
    a = as_node(a)
    out = np.tanh(a.value)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def leaky_relu(a, slope: float = LEAKY_SLOPE) -> Node:
    a = as_node(a)
    factor = np.where(a.value > 0, 1.0, slope)
    return _make(a.value * factor, (a,), lambda g: (g * factor,), "leaky_relu")


def abs_(a) -> Node:
    a = as_node(a)
    sign = np.sign(a.value)
    return _make(np.abs(a.value), (a,), lambda g: (g * sign,), "abs")


def sum_(a, axis=None, keepdims: bool = False) -> Node:
    a = as_node(a)
    out = a.value.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(out, (a,), bw, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Node:
    a = as_node(a)
    count = a.value.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / float(count))


def concat(nodes: Sequence, axis: int = -1) -> Node:
    nodes = [as_node(n) for n in nodes]
    try:
        out = np.concatenate([n.value for n in nodes], axis=axis)
    except ValueError as exc:
        raise ValueError(f"concat: shape mismatch {[n.shape for n in nodes]}") from exc
    sizes = [n.shape[axis] for n in nodes]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(out, tuple(nodes), bw, "concat")


def take(a, index, axis: int = -1, unique: bool | None = None) -> Node:
    """Gather ``index`` (slice or integer array) along ``axis``.

    Pass ``unique=True`` when the index array has no repeats to skip the check.
    """
    a = as_node(a)
    ax = axis % a.value.ndim
    sl = [slice(None)] * a.value.ndim
    sl[ax] = index
    sl = tuple(sl)
    out = a.value[sl]
    if unique is None:
        unique = isinstance(index, slice) or np.unique(np.asarray(index)).size == np.asarray(index).size

    def bw(g):
        full = np.zeros_like(a.value)
        if unique:
            full[sl] = g
        else:
            np.add.at(full, sl, g)
        return (full,)

    return _make(out, (a,), bw, "slice")


def reshape(a, shape) -> Node:
    a = as_node(a)
    try:
        out = a.value.reshape(shape)
    except ValueError as exc:
        raise ValueError(f"reshape: cannot reshape {a.shape} to {shape}") from exc
    return _make(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


PRIMITIVES: dict[str, Callable[..., Node]] = {
    "matmul": matmul,
    "add": add,
    "mul": mul,
    "neg": neg,
    "exp": exp,
    "log": log,
    "tanh": tanh,
    "leaky-relu": leaky_relu,
    "sum": sum_,
    "mean": mean,
    "abs": abs_,
    "concat": lambda *ns, axis=-1: concat(ns, axis=axis),
    "slice": take,
    "reshape": reshape,
}


def primitive(kind: str, *inputs, **kwargs) -> Node:
    """Apply the primitive named ``kind`` to ``inputs``."""
    try:
        fn = PRIMITIVES[kind]
    except KeyError:
        raise ValueError(f"unknown primitive {kind!r}") from None
    return fn(*inputs, **kwargs)


# ---------------------------------------------------------------------------
# backward pass


def _topo_order(root: Node) -> list[Node]:
    order: list[Node] = []
    visited: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in visited:
                stack.append((p, False))
    return order


def backward(loss: Node, params: Iterable[Node] | None = None) -> list[np.ndarray] | None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf reachable from ``loss``.

    If ``params`` is given, returns their gradients in order; parameters that do
    not influence ``loss`` get zeros.
    """
    if loss.value.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
    for node in reversed(_topo_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.backward_fn is None:
            if node.requires_grad:
                _check_finite(g, "backward")
                node.grad = g if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else pg
    if params is None:
        return None
    return [p.grad if p.grad is not None else np.zeros_like(p.value) for p in params]


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adam_step(params: Sequence[Node], grads: Sequence[np.ndarray], state: AdamState) -> AdamState:
    """One Adam update with bias correction, in place on ``params``."""
    if not state.m:
        state.m = [np.zeros_like(p.value) for p in params]
        state.v = [np.zeros_like(p.value) for p in params]
    if len(grads) != len(params) or len(state.m) != len(params):
        raise ValueError("params, grads and state do not line up")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g.shape != p.value.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.value.shape}")
        _check_finite(g, "adam_step")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.value -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return state


# ---------------------------------------------------------------------------
# initialisation and checking


def orthogonal(shape: tuple[int, int], gain: float, rng: np.random.Generator) -> np.ndarray:
    """Orthogonal matrix init (QR of a Gaussian, sign-fixed so diag(R) > 0)."""
    rows, cols = shape
    flat = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(flat)
    q *= np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]


def numerical_jacobian(fn: Callable[[np.ndarray], np.ndarray], u: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central-difference Jacobian of a batched map ``(B, n) -> (B, m)`` at one point ``u`` (n,)."""
    u = np.asarray(u, dtype=np.float64).reshape(-1)
    n = u.size
    eye = np.eye(n) * step
    out = fn(np.concatenate([u + eye, u - eye], axis=0))
    jac = (out[:n] - out[n:]).T / (2.0 * step)
    return _check_finite(jac, "numerical_jacobian")


def finite_diff_check(f: Callable[[Node], Node], x: np.ndarray, step: float = 1e-5) -> float:
    """Max relative error between autodiff and central differences of ``f`` at ``x``."""
    x = np.array(x, dtype=np.float64)
    leaf = parameter(x)
    out = f(leaf)
    backward(out)
    g_ad = leaf.grad if leaf.grad is not None else np.zeros_like(x)
    g_fd = np.zeros_like(x)
    flat = x.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + step
        hi = f(Node(x)).value
        flat[i] = old - step
        lo = f(Node(x)).value
        flat[i] = old
        g_fd.reshape(-1)[i] = (float(hi) - float(lo)) / (2.0 * step)
    _check_finite(g_fd, "finite_diff_check")
    return float(np.max(np.abs(g_ad - g_fd) / (np.abs(g_fd) + 1e-12))) if x.size else 0.0
