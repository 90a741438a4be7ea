"""Dense reverse-mode automatic differentiation over 2D float64 arrays.

Every operation in this module accepts either plain ``numpy`` arrays or
:class:`Var` handles living on a :class:`Tape`. With plain arrays the result
is a plain array and nothing is recorded. As soon as one operand is a
``Var`` the operation is recorded on that operand's tape together with its
vector-Jacobian product, and a new ``Var`` is returned.

A tape is meant to live for a single forward/backward pass; build a new one
for every training step.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ContractError, DimensionError, ParameterError

LOG_FLOOR = 1e-12

ArrayLike = Union[np.ndarray, "Var"]
Vjp = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]


def as_matrix(x, name: str = "matrix") -> np.ndarray:
    """Coerce ``x`` to a 2D float64 array, rejecting other ranks."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be 2D, got shape {arr.shape}")
    return arr


@dataclass
class Node:
    kind: str
    inputs: Tuple[int, ...]
    value: np.ndarray
    vjp: Optional[Vjp]


class Var:
    """Handle to a node on a tape. Supports the usual arithmetic operators."""

    __slots__ = ("tape", "id")
    __array_ufunc__ = None  # make ndarray <op> Var defer to the reflected Var method

    def __init__(self, tape: "Tape", node_id: int):
        self.tape = tape
        self.id = node_id

    @property
    def value(self) -> np.ndarray:
        return self.tape.nodes[self.id].value

    @property
    def shape(self) -> Tuple[int, int]:
        return self.value.shape

    @property
    def T(self) -> "Var":
        return transpose(self)

    def item(self) -> float:
        return float(self.value.reshape(-1)[0])

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        if np.isscalar(other):
            return scale(self, other)
        return mul(other, self)

    def __truediv__(self, other):
        if np.isscalar(other):
            return scale(self, 1.0 / other)
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __repr__(self) -> str:
        node = self.tape.nodes[self.id]
        return f"Var(id={self.id}, kind={node.kind!r}, shape={self.shape})"


class Tape:
    """Ordered record of operations. Node ids are topologically ordered."""

    def __init__(self):
        self.nodes: list[Node] = []

    def __len__(self) -> int:
        return len(self.nodes)

    def leaf(self, value, name: str = "leaf") -> Var:
        """Register an input (parameter or constant) and return its handle."""
        arr = as_matrix(value, name)
        self.nodes.append(Node("leaf", (), arr, None))
        return Var(self, len(self.nodes) - 1)

    def record(self, kind: str, inputs: Sequence[Var], value: np.ndarray, vjp: Vjp) -> Var:
        for v in inputs:
            if v.tape is not self:
                raise ContractError(f"{kind}: operand belongs to a different tape")
        self.nodes.append(Node(kind, tuple(v.id for v in inputs), value, vjp))
        return Var(self, len(self.nodes) - 1)

    def backward(self, loss: Var) -> Dict[int, np.ndarray]:
        """Accumulate d(loss)/d(node) for every node the loss depends on.

        Returns a map from node id to gradient. The loss must be 1x1.
        """
        if loss.tape is not self:
            raise ContractError("loss node belongs to a different tape")
        if loss.shape != (1, 1):
            raise ContractError(f"backward needs a 1x1 loss, got shape {loss.shape}")
        grads: Dict[int, np.ndarray] = {loss.id: np.ones((1, 1))}
        for nid in range(loss.id, -1, -1):
            g = grads.get(nid)
            if g is None:
                continue
            node = self.nodes[nid]
            if node.vjp is None:
                continue
            for inp, gi in zip(node.inputs, node.vjp(g)):
                if gi is None:
                    continue
                if inp in grads:
                    grads[inp] = grads[inp] + gi
                else:
                    grads[inp] = gi
        return grads


def grad_of(grads: Dict[int, np.ndarray], v: Var) -> np.ndarray:
    """Gradient of ``v`` from a backward map; zeros if the loss ignores ``v``."""
    g = grads.get(v.id)
    return np.zeros_like(v.value) if g is None else g


# -- helpers -----------------------------------------------------------------


def _tape_of(*xs) -> Optional[Tape]:
    tape = None
    for x in xs:
        if isinstance(x, Var):
            if tape is None:
                tape = x.tape
            elif x.tape is not tape:
                raise ContractError("operands belong to different tapes")
    return tape


def _val(x) -> np.ndarray:
    if isinstance(x, Var):
        return x.value
    if np.isscalar(x):
        return np.array([[float(x)]])
    return as_matrix(x)


def _lift(tape: Tape, x) -> Var:
    return x if isinstance(x, Var) else tape.leaf(_val(x), "constant")


def _broadcast_shape(kind: str, a: Tuple[int, int], b: Tuple[int, int]) -> Tuple[int, int]:
    out = []
    for da, db in zip(a, b):
        if da == db or db == 1:
            out.append(da)
        elif da == 1:
            out.append(db)
        else:
            raise DimensionError(f"{kind}: shapes {a} and {b} do not conform")
    return tuple(out)


def _unbroadcast(g: np.ndarray, shape: Tuple[int, int]) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape[0] == 1 and g.shape[0] != 1:
        g = g.sum(axis=0, keepdims=True)
    if shape[1] == 1 and g.shape[1] != 1:
        g = g.sum(axis=1, keepdims=True)
    return g


def _unary(kind: str, x, fwd, bwd):
    """``bwd(g, x_value, y_value)`` returns the input gradient."""
    xv = _val(x)
    y = fwd(xv)
    tape = _tape_of(x)
    if tape is None:
        return y
    return tape.record(kind, (x,), y, lambda g: (bwd(g, xv, y),))


def _binary(kind: str, a, b, fwd, bwd_a, bwd_b):
    av, bv = _val(a), _val(b)
    out_shape = _broadcast_shape(kind, av.shape, bv.shape)
    tape = _tape_of(a, b)
    if tape is None:
        with np.errstate(divide="ignore", invalid="ignore"):
            return fwd(av, bv)
    y = fwd(av, bv)
    assert y.shape == out_shape
    va, vb = _lift(tape, a), _lift(tape, b)
    return tape.record(
        kind,
        (va, vb),
        y,
        lambda g: (
            _unbroadcast(bwd_a(g, av, bv, y), av.shape),
            _unbroadcast(bwd_b(g, av, bv, y), bv.shape),
        ),
    )


# -- operations --------------------------------------------------------------


def matmul(a, b):
    av, bv = _val(a), _val(b)
    if av.shape[1] != bv.shape[0]:
        raise DimensionError(f"matmul: shapes {av.shape} and {bv.shape} do not conform")
    y = av @ bv
    tape = _tape_of(a, b)
    if tape is None:
        return y
    va, vb = _lift(tape, a), _lift(tape, b)
    return tape.record("matmul", (va, vb), y, lambda g: (g @ bv.T, av.T @ g))


def add(a, b):
    return _binary("add", a, b, np.add, lambda g, a, b, y: g, lambda g, a, b, y: g)


def sub(a, b):
    return _binary("sub", a, b, np.subtract, lambda g, a, b, y: g, lambda g, a, b, y: -g)


def mul(a, b):
    return _binary(
        "mul", a, b, np.multiply, lambda g, a, b, y: g * b, lambda g, a, b, y: g * a
    )


def div(a, b):
    """Elementwise quotient. Zero divisors give inf/nan off-tape and raise on-tape."""
    if _tape_of(a, b) is not None and np.any(_val(b) == 0.0):
        raise ZeroDivisionError("div: zero entry in divisor while recording")
    return _binary(
        "div",
        a,
        b,
        np.divide,
        lambda g, a, b, y: g / b,
        lambda g, a, b, y: -g * y / b,
    )


def scale(x, c: float):
    c = float(c)
    return _unary("scale", x, lambda v: c * v, lambda g, v, y: c * g)


def exp(x):
    return _unary("exp", x, np.exp, lambda g, v, y: g * y)


def log_clamped(x):
    """``log(max(x, 1e-12))``; the gradient is zero wherever the clamp is active."""

    def bwd(g, v, y):
        live = v >= LOG_FLOOR
        return np.where(live, g / np.where(live, v, 1.0), 0.0)

    return _unary("log_clamped", x, lambda v: np.log(np.maximum(v, LOG_FLOOR)), bwd)


def abs_(x):
    return _unary("abs", x, np.abs, lambda g, v, y: g * np.sign(v))


def relu(x):
    return _unary("relu", x, lambda v: np.maximum(v, 0.0), lambda g, v, y: g * (v > 0.0))


def tanh(x):
    return _unary("tanh", x, np.tanh, lambda g, v, y: g * (1.0 - y * y))


def transpose(x):
    return _unary("transpose", x, lambda v: v.T.copy(), lambda g, v, y: g.T)


def reduce_sum(x):
    """Sum of all entries as a 1x1 matrix."""
    return _unary(
        "reduce_sum",
        x,
        lambda v: np.array([[v.sum()]]),
        lambda g, v, y: np.full_like(v, g[0, 0]),
    )


def reduce_rows(x):
    """Per-row sums, n x m -> n x 1."""
    return _unary(
        "reduce_rows",
        x,
        lambda v: v.sum(axis=1, keepdims=True),
        lambda g, v, y: np.broadcast_to(g, v.shape).copy(),
    )


def reduce_cols(x):
    """Per-column sums, n x m -> 1 x m."""
    return _unary(
        "reduce_cols",
        x,
        lambda v: v.sum(axis=0, keepdims=True),
        lambda g, v, y: np.broadcast_to(g, v.shape).copy(),
    )


def detach(x):
    """Identity on values; blocks gradient flow into ``x``."""
    if isinstance(x, Var):
        return x.tape.leaf(x.value.copy(), "detached")
    return _val(x)


def concat_rows(xs: Sequence[ArrayLike]):
    vals = [_val(x) for x in xs]
    if len({v.shape[1] for v in vals}) != 1:
        raise DimensionError(f"concat_rows: column counts differ {[v.shape for v in vals]}")
    y = np.concatenate(vals, axis=0)
    tape = _tape_of(*xs)
    if tape is None:
        return y
    lifted = [_lift(tape, x) for x in xs]
    bounds = np.cumsum([0] + [v.shape[0] for v in vals])

    def vjp(g):
        return tuple(g[bounds[i] : bounds[i + 1]] for i in range(len(vals)))

    return tape.record("concat_rows", lifted, y, vjp)


def _check_temperature(temperature: float) -> float:
    t = float(temperature)
    if not t > 0.0:
        raise ParameterError(f"temperature must be positive, got {temperature}")
    return t


def softmax_rows(z, temperature: float = 1.0):
    """Row-wise softmax of ``z / temperature`` with max subtraction."""
    t = _check_temperature(temperature)

    def fwd(v):
        s = v / t
        e = np.exp(s - s.max(axis=1, keepdims=True))
        return e / e.sum(axis=1, keepdims=True)

    def bwd(g, v, y):
        return y * (g - (g * y).sum(axis=1, keepdims=True)) / t

    return _unary("softmax_rows", z, fwd, bwd)


def log_softmax_rows(z, temperature: float = 1.0):
    t = _check_temperature(temperature)

    def fwd(v):
        s = v / t
        s = s - s.max(axis=1, keepdims=True)
        return s - np.log(np.exp(s).sum(axis=1, keepdims=True))

    def bwd(g, v, y):
        return (g - np.exp(y) * g.sum(axis=1, keepdims=True)) / t

    return _unary("log_softmax_rows", z, fwd, bwd)


_ELEMENTWISE = {
    "exp": exp,
    "log_clamped": log_clamped,
    "abs": abs_,
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "scale": scale,
    "transpose": transpose,
    "reduce_sum": reduce_sum,
    "reduce_rows": reduce_rows,
    "reduce_cols": reduce_cols,
}


def elementwise(kind: str, *operands):
    """Dispatch one of the named elementwise/reduction operations by name."""
    try:
        fn = _ELEMENTWISE[kind]
    except KeyError:
        raise ParameterError(f"unknown elementwise kind {kind!r}") from None
    return fn(*operands)


def finite_diff_grad(loss_fn: Callable[[Sequence[np.ndarray]], float],
                     params: Sequence[np.ndarray], h: float = 1e-5) -> list[np.ndarray]:
    """Central-difference gradient of ``loss_fn(params)`` w.r.t. every entry.

    ``loss_fn`` receives a list of arrays and must return a float. The input
    arrays are not modified.
    """
    if not h > 0:
        raise ParameterError(f"step must be positive, got {h}")
    work = [np.array(p, dtype=np.float64, copy=True) for p in params]
    out = []
    for p in work:
        g = np.zeros_like(p)
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + h
            up = float(loss_fn(work))
            flat[k] = orig - h
            down = float(loss_fn(work))
            flat[k] = orig
            gflat[k] = (up - down) / (2.0 * h)
        out.append(g)
    return out


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> float:
    """``||a - b|| / max(||a||, ||b||, floor)`` in the Frobenius norm."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    return float(np.linalg.norm(a - b) / denom)
