"""Reverse-mode automatic differentiation over dense float64 matrices.

Every value is a 2-D matrix (vectors are columns, scalars are 1x1). Each
operation records its parents and a vector-Jacobian closure on the node it
creates, so the computation graph in creation order doubles as the tape:
walking it backwards from a scalar loss yields exact reverse-mode gradients
with summed accumulation for parameters reused across timesteps.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

from .errors import ContractError, OracleError, ShapeError

_order_counter = itertools.count()
_grad_enabled = True

GELU_COEFF = 0.044715
_GELU_SCALE = math.sqrt(2.0 / math.pi)


class no_grad:
    """Context manager that suspends tape recording (forward-only evaluation)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def _as_matrix(values) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    if v.ndim == 0:
        v = v.reshape(1, 1)
    elif v.ndim == 1:
        v = v.reshape(-1, 1)
    elif v.ndim != 2:
        raise ShapeError(f"tensors are 2-D matrices, got ndim={v.ndim}")
    return v


class Tensor:
    """Dense float64 matrix node on the tape."""

    __slots__ = ("values", "requires_grad", "name", "_parents", "_vjp", "_order")

    def __init__(self, values, requires_grad: bool = False, name: str | None = None):
        self.values = _as_matrix(values)
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents: tuple = ()
        self._vjp = None
        self._order = next(_order_counter)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def item(self) -> float:
        if self.values.size != 1:
            raise ContractError(f"item() needs a scalar tensor, got shape {self.shape}")
        return float(self.values[0, 0])

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    # operator sugar; constants are wrapped on the fly
    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return hadamard(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, _wrap(other))


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(values: np.ndarray, parents: tuple, vjp) -> Tensor:
    out = Tensor(values)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._vjp = vjp
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape[0] == 1 and g.shape[0] != 1:
        g = g.sum(axis=0, keepdims=True)
    if shape[1] == 1 and g.shape[1] != 1:
        g = g.sum(axis=1, keepdims=True)
    return g


def _check_elementwise(a: Tensor, b: Tensor, op: str) -> None:
    sa, sb = a.shape, b.shape
    ok_rows = sa[0] == sb[0] or sa[0] == 1 or sb[0] == 1
    ok_cols = sa[1] == sb[1] or sa[1] == 1 or sb[1] == 1
    if not (ok_rows and ok_cols):
        raise ShapeError(f"{op}: shapes {sa} and {sb} do not align")


# ---------------------------------------------------------------------------
# primitive operations

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dims differ, {a.shape} x {b.shape}")
    av, bv = a.values, b.values

    def vjp(g):
        return g @ bv.T, av.T @ g

    return _node(av @ bv, (a, b), vjp)


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_elementwise(a, b, "add")

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node(a.values + b.values, (a, b), vjp)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_elementwise(a, b, "sub")

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _node(a.values - b.values, (a, b), vjp)


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    _check_elementwise(a, b, "hadamard")
    av, bv = a.values, b.values

    def vjp(g):
        return _unbroadcast(g * bv, a.shape), _unbroadcast(g * av, b.shape)

    return _node(av * bv, (a, b), vjp)


def scale(a: Tensor, alpha: float) -> Tensor:
    alpha = float(alpha)

    def vjp(g):
        return (alpha * g,)

    return _node(alpha * a.values, (a,), vjp)


def relu(a: Tensor) -> Tensor:
    mask = a.values > 0.0

    def vjp(g):
        return (g * mask,)

    return _node(a.values * mask, (a,), vjp)


def sigmoid(a: Tensor) -> Tensor:
    s = 1.0 / (1.0 + np.exp(-a.values))

    def vjp(g):
        return (g * s * (1.0 - s),)

    return _node(s, (a,), vjp)


def exp(a: Tensor) -> Tensor:
    e = np.exp(a.values)

    def vjp(g):
        return (g * e,)

    return _node(e, (a,), vjp)


def gelu(a: Tensor) -> Tensor:
    # tanh form: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)));
    # the backward differentiates this approximation, not erf.
    x = a.values
    inner = _GELU_SCALE * (x + GELU_COEFF * x**3)
    t = np.tanh(inner)

    def vjp(g):
        d_inner = _GELU_SCALE * (1.0 + 3.0 * GELU_COEFF * x**2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t**2) * d_inner),)

    return _node(0.5 * x * (1.0 + t), (a,), vjp)


def identity(a: Tensor) -> Tensor:
    def vjp(g):
        return (g,)

    return _node(a.values.copy(), (a,), vjp)


def row_softmax(a: Tensor) -> Tensor:
    """Softmax along each row, with per-row max subtraction for overflow safety."""
    shifted = a.values - a.values.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=1, keepdims=True)

    def vjp(g):
        return (s * (g - (g * s).sum(axis=1, keepdims=True)),)

    return _node(s, (a,), vjp)


def concat_rows(parts: list[Tensor]) -> Tensor:
    cols = parts[0].shape[1]
    for p in parts:
        if p.shape[1] != cols:
            raise ShapeError(f"concat_rows: column counts differ ({p.shape[1]} vs {cols})")
    splits = np.cumsum([p.shape[0] for p in parts])[:-1]

    def vjp(g):
        return tuple(np.vsplit(g, splits))

    return _node(np.vstack([p.values for p in parts]), tuple(parts), vjp)


def sum_all(a: Tensor) -> Tensor:
    shape = a.shape

    def vjp(g):
        return (np.full(shape, g[0, 0]),)

    return _node(np.array([[a.values.sum()]]), (a,), vjp)


# ---------------------------------------------------------------------------
# backward pass

def backward(loss: Tensor, wrt: list[Tensor]) -> dict[Tensor, np.ndarray]:
    """Gradients of a scalar loss with respect to the given leaf tensors.

    Leaves that do not appear on any path to the loss get a zero gradient.
    """
    if loss.shape != (1, 1):
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")

    # collect the reachable subgraph; creation order is a topological order
    nodes: dict[int, Tensor] = {}
    stack = [loss]
    while stack:
        node = stack.pop()
        if id(node) in nodes:
            continue
        nodes[id(node)] = node
        stack.extend(node._parents)

    grads: dict[int, np.ndarray] = {id(loss): np.ones((1, 1))}
    for node in sorted(nodes.values(), key=lambda n: n._order, reverse=True):
        if node._vjp is None:
            continue
        g = grads.pop(id(node), None)
        if g is None:
            continue
        parent_grads = node._vjp(g)
        for parent, pg in zip(node._parents, parent_grads):
            if not parent.requires_grad:
                continue
            acc = grads.get(id(parent))
            if acc is None:
                grads[id(parent)] = pg.copy() if pg.base is not None or pg is g else pg
            else:
                acc += pg

    return {p: grads.get(id(p), np.zeros(p.shape)) for p in wrt}


def finite_difference_check(loss_fn, params: list[Tensor], step: float = 1e-5) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    ``loss_fn`` must be deterministic and return a scalar Tensor computed from
    the current parameter values; relative error per coordinate is
    |g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|).
    """
    if not (0.0 < step <= 1e-3):
        raise ContractError(f"finite-difference step must lie in (0, 1e-3], got {step}")
    base = loss_fn()
    repeat = loss_fn()
    if not np.array_equal(base.values, repeat.values):
        raise OracleError("loss_fn is not deterministic: repeated evaluations differ")

    analytic = backward(base, params)
    worst = 0.0
    for p in params:
        g_ad = analytic[p]
        flat = p.values.ravel()
        for idx in range(flat.size):
            orig = flat[idx]
            with no_grad():
                flat[idx] = orig + step
                hi = loss_fn().item()
                flat[idx] = orig - step
                lo = loss_fn().item()
            flat[idx] = orig
            g_fd = (hi - lo) / (2.0 * step)
            g = g_ad.ravel()[idx]
            err = abs(g - g_fd) / max(1e-8, abs(g) + abs(g_fd))
            worst = max(worst, err)
    return worst
