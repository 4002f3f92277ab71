"""Reverse-mode automatic differentiation over dense float64 arrays.

The recording is implicit: every operation returns a fresh :class:`Tensor`
that remembers its parents and a vector-Jacobian rule, so the set of live
tensors *is* the tape.  ``backward`` on a scalar output replays that tape in
reverse topological order and returns the adjoints as a mapping; it never
mutates the graph, so running it twice gives identical results.  Tapes are
single-use, cheap to rebuild each step, and confined to one thread.
Parameters are plain leaf tensors that may appear in any number of tapes.

Supported broadcasting is numpy-style but intended for leading batch
dimension expansion (and size-1 axes); anything numpy rejects raises
:class:`ShapeError` here.  All values are float64 and every operation
checks its output for NaN/Inf so numerical failures surface where they
happen instead of three modules later.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "AutodiffError",
    "NonFiniteError",
    "ShapeError",
    "Tensor",
    "add",
    "backward",
    "broadcast",
    "concat",
    "const",
    "div",
    "exp",
    "gradcheck",
    "lgamma",
    "log",
    "logsumexp",
    "matmul",
    "mean",
    "mul",
    "neg",
    "record",
    "reshape",
    "sigmoid",
    "slice_last",
    "softplus",
    "square",
    "sub",
    "tensor_sum",
    "tanh",
]


class AutodiffError(Exception):
    """Base class for graph construction and replay failures."""


class ShapeError(AutodiffError):
    """Operands cannot be combined under the supported broadcasting rules."""


class NonFiniteError(AutodiffError):
    """A NaN or Inf appeared at a graph boundary."""


class Tensor:
    """A float64 array plus the bookkeeping needed to backpropagate.

    Tensors double as tape nodes: ``op`` names the operation kind, ``parents``
    holds the input nodes and ``vjps`` the per-parent vector-Jacobian rules.
    Leaves (parameters, constants) simply have no parents.
    """

    __slots__ = ("data", "parents", "op", "vjps")

    def __init__(self, data, parents=(), op="leaf", vjps=()):
        arr = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError(f"{op}: non-finite values at graph boundary")
        self.data = arr
        self.parents = tuple(parents)
        self.op = op
        self.vjps = tuple(vjps)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def __repr__(self):  # pragma: no cover - debugging aid
        return f"Tensor(op={self.op!r}, shape={self.data.shape})"

    # Operator sugar; scalars and ndarrays are lifted to constant leaves.
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

    def __matmul__(self, other):
        return matmul(self, other)


def const(value) -> Tensor:
    """Wrap a value as a constant leaf tensor."""

    return value if isinstance(value, Tensor) else Tensor(value)


def _lift(value, op: str) -> Tensor:
    if isinstance(value, Tensor):
        return value
    try:
        return Tensor(value)
    except NonFiniteError:
        raise NonFiniteError(f"{op}: non-finite operand") from None


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce ``grad`` back to ``shape`` by summing broadcast axes."""

    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _make(op, data, parents, vjps) -> Tensor:
    return Tensor(data, parents=parents, op=op, vjps=vjps)


# ---------------------------------------------------------------------------
# elementwise binary ops
# ---------------------------------------------------------------------------


def _binary(op, a, b, fwd, vjp_a, vjp_b):
    a = _lift(a, op)
    b = _lift(b, op)
    try:
        out = fwd(a.data, b.data)
    except ValueError as err:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape}: {err}") from None
    return _make(
        op,
        out,
        (a, b),
        (
            lambda g, a=a, b=b: _unbroadcast(vjp_a(g, a.data, b.data), a.shape),
            lambda g, a=a, b=b: _unbroadcast(vjp_b(g, a.data, b.data), b.shape),
        ),
    )


def add(a, b) -> Tensor:
    return _binary("add", a, b, np.add, lambda g, x, y: g, lambda g, x, y: g)


def sub(a, b) -> Tensor:
    return _binary("sub", a, b, np.subtract, lambda g, x, y: g, lambda g, x, y: -g)


def mul(a, b) -> Tensor:
    return _binary("mul", a, b, np.multiply, lambda g, x, y: g * y, lambda g, x, y: g * x)


def div(a, b) -> Tensor:
    return _binary(
        "div",
        a,
        b,
        np.divide,
        lambda g, x, y: g / y,
        lambda g, x, y: -g * x / (y * y),
    )


# ---------------------------------------------------------------------------
# matmul
# ---------------------------------------------------------------------------


def matmul(a, b) -> Tensor:
    """Matrix product for 1-D/2-D operands (numpy ``@`` semantics)."""

    a = _lift(a, "matmul")
    b = _lift(b, "matmul")
    if a.ndim not in (1, 2) or b.ndim not in (1, 2):
        raise ShapeError(f"matmul: expected 1-D or 2-D operands, got {a.shape} @ {b.shape}")
    try:
        out = a.data @ b.data
    except ValueError as err:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape}: {err}") from None

    def vjp_a(g, a=a, b=b):
        if a.ndim == 2 and b.ndim == 2:
            return g @ b.data.T
        if a.ndim == 1 and b.ndim == 2:
            return b.data @ g
        if a.ndim == 2 and b.ndim == 1:
            return np.outer(g, b.data)
        return g * b.data  # 1-D dot 1-D

    def vjp_b(g, a=a, b=b):
        if a.ndim == 2 and b.ndim == 2:
            return a.data.T @ g
        if a.ndim == 1 and b.ndim == 2:
            return np.outer(a.data, g)
        if a.ndim == 2 and b.ndim == 1:
            return a.data.T @ g
        return g * a.data

    return _make("matmul", out, (a, b), (vjp_a, vjp_b))


# ---------------------------------------------------------------------------
# elementwise unary ops
# ---------------------------------------------------------------------------


def _unary(op, a, fwd, vjp):
    a = _lift(a, op)
    out_data = fwd(a.data)
    out = _make(op, out_data, (a,), ())
    out.vjps = (lambda g, a=a, out=out: vjp(g, a.data, out.data),)
    return out


def neg(a) -> Tensor:
    return _unary("neg", a, np.negative, lambda g, x, y: -g)


def exp(a) -> Tensor:
    return _unary("exp", a, np.exp, lambda g, x, y: g * y)


def log(a) -> Tensor:
    return _unary("log", a, np.log, lambda g, x, y: g / x)


def tanh(a) -> Tensor:
    return _unary("tanh", a, np.tanh, lambda g, x, y: g * (1.0 - y * y))


def square(a) -> Tensor:
    return _unary("square", a, np.square, lambda g, x, y: 2.0 * g * x)


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _softplus_np(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def sigmoid(a) -> Tensor:
    return _unary(
        "sigmoid",
        a,
        lambda x: _sigmoid_np(np.asarray(x, dtype=np.float64)),
        lambda g, x, y: g * y * (1.0 - y),
    )


def softplus(a) -> Tensor:
    return _unary(
        "softplus",
        a,
        lambda x: _softplus_np(np.asarray(x, dtype=np.float64)),
        lambda g, x, y: g * _sigmoid_np(np.asarray(x, dtype=np.float64)),
    )


# ---------------------------------------------------------------------------
# log-gamma via the Lanczos approximation, derivative via digamma
# ---------------------------------------------------------------------------

_LANCZOS_G = 7.0
_LANCZOS_COEF = (
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
)


def _lgamma_np(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if np.any(x <= 0.0):
        raise NonFiniteError("lgamma: domain is x > 0")
    small = x < 0.5
    xs = np.where(small, 1.0 - x, x)
    acc = np.full_like(xs, _LANCZOS_COEF[0])
    for i, c in enumerate(_LANCZOS_COEF[1:], start=1):
        acc = acc + c / (xs - 1.0 + i)
    t = xs + _LANCZOS_G - 0.5
    out = 0.5 * np.log(2.0 * np.pi) + (xs - 0.5) * np.log(t) - t + np.log(acc)
    if np.any(small):
        # reflection keeps the approximation inside its accurate range
        flat = np.atleast_1d(np.asarray(out, dtype=np.float64).copy())
        xs1 = np.atleast_1d(x)
        sm = np.atleast_1d(small)
        flat[sm] = np.log(np.pi / np.sin(np.pi * xs1[sm])) - flat[sm]
        out = flat.reshape(np.shape(x))
    return out


def _digamma_np(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if np.any(x <= 0.0):
        raise NonFiniteError("digamma: domain is x > 0")
    res = np.zeros_like(x)
    xx = np.array(x, dtype=np.float64, copy=True)
    # recurrence psi(x) = psi(x+1) - 1/x until the asymptotic series applies
    for _ in range(8):
        small = xx < 6.0
        if not small.any():
            break
        res = res - np.where(small, 1.0 / xx, 0.0)
        xx = xx + small
    inv = 1.0 / xx
    inv2 = inv * inv
    series = inv2 * (
        1.0 / 12.0
        - inv2 * (1.0 / 120.0 - inv2 * (1.0 / 252.0 - inv2 * (1.0 / 240.0 - inv2 / 132.0)))
    )
    return res + np.log(xx) - 0.5 * inv - series


def lgamma(a) -> Tensor:
    return _unary("lgamma", a, _lgamma_np, lambda g, x, y: g * _digamma_np(x))


# ---------------------------------------------------------------------------
# shape ops
# ---------------------------------------------------------------------------


def _axis_tuple(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def _expand_reduced(g, shape, axes):
    out_shape = list(shape)
    for a in axes:
        out_shape[a] = 1
    return np.broadcast_to(np.reshape(g, out_shape), shape)


def tensor_sum(a, axis=None, keepdims=False) -> Tensor:
    a = _lift(a, "sum")
    axes = _axis_tuple(axis, a.ndim)
    out = a.data.sum(axis=axes if axis is not None else None, keepdims=keepdims)

    def vjp(g, a=a, axes=axes, keepdims=keepdims):
        if keepdims:
            return np.broadcast_to(g, a.shape)
        return _expand_reduced(g, a.shape, axes)

    return _make("sum", out, (a,), (vjp,))


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = _lift(a, "mean")
    axes = _axis_tuple(axis, a.ndim)
    count = float(np.prod([a.shape[i] for i in axes])) if a.ndim else 1.0
    out = a.data.mean(axis=axes if axis is not None else None, keepdims=keepdims)

    def vjp(g, a=a, axes=axes, keepdims=keepdims, count=count):
        if keepdims:
            return np.broadcast_to(g, a.shape) / count
        return _expand_reduced(g, a.shape, axes) / count

    return _make("mean", out, (a,), (vjp,))


def broadcast(a, shape) -> Tensor:
    a = _lift(a, "broadcast")
    try:
        out = np.broadcast_to(a.data, shape).copy()
    except ValueError as err:
        raise ShapeError(f"broadcast: {a.shape} -> {shape}: {err}") from None
    return _make("broadcast", out, (a,), (lambda g, a=a: _unbroadcast(g, a.shape),))


def reshape(a, shape) -> Tensor:
    a = _lift(a, "reshape")
    try:
        out = a.data.reshape(shape)
    except ValueError as err:
        raise ShapeError(f"reshape: {a.shape} -> {shape}: {err}") from None
    return _make("reshape", out, (a,), (lambda g, a=a: g.reshape(a.shape),))


def slice_last(a, start: int, stop: int) -> Tensor:
    """Slice ``a[..., start:stop]`` along the last axis."""

    a = _lift(a, "slice")
    n = a.shape[-1] if a.ndim else 0
    if not (0 <= start <= stop <= n):
        raise ShapeError(f"slice: [{start}:{stop}] out of range for last axis {n}")
    out = a.data[..., start:stop]

    def vjp(g, a=a, start=start, stop=stop):
        full = np.zeros(a.shape, dtype=np.float64)
        full[..., start:stop] = g
        return full

    return _make("slice", out, (a,), (vjp,))


def concat(tensors, axis: int = -1) -> Tensor:
    ts = [_lift(t, "concat") for t in tensors]
    if not ts:
        raise ShapeError("concat: need at least one tensor")
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as err:
        raise ShapeError(f"concat: {err}") from None
    ax = axis % out.ndim
    sizes = [t.shape[ax] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def make_vjp(i):
        def vjp(g, i=i):
            sl = [slice(None)] * g.ndim
            sl[ax] = slice(int(offsets[i]), int(offsets[i + 1]))
            return g[tuple(sl)]

        return vjp

    return _make("concat", out, tuple(ts), tuple(make_vjp(i) for i in range(len(ts))))


def logsumexp(a, axis: int) -> Tensor:
    """Stable log-sum-exp along ``axis`` (the max shift is a constant)."""

    a = _lift(a, "logsumexp")
    m = np.max(a.data, axis=axis, keepdims=True)
    shifted = sub(a, Tensor(m))
    s = tensor_sum(exp(shifted), axis=axis)
    return add(log(s), Tensor(np.squeeze(m, axis=axis)))


# ---------------------------------------------------------------------------
# recording by op-kind name
# ---------------------------------------------------------------------------

_OPS = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "neg": neg,
    "matmul": matmul,
    "sum": tensor_sum,
    "mean": mean,
    "exp": exp,
    "log": log,
    "tanh": tanh,
    "softplus": softplus,
    "sigmoid": sigmoid,
    "square": square,
    "lgamma": lgamma,
    "broadcast": broadcast,
    "reshape": reshape,
    "slice": slice_last,
    "concat": concat,
}


def record(kind: str, *inputs, **kwargs) -> Tensor:
    """Apply the operation named ``kind`` and return the new tape node."""

    try:
        op = _OPS[kind]
    except KeyError:
        raise AutodiffError(f"unknown op kind {kind!r}") from None
    return op(*inputs, **kwargs)


# ---------------------------------------------------------------------------
# reverse pass
# ---------------------------------------------------------------------------


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
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
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(output: Tensor, wrt=None) -> dict[Tensor, np.ndarray]:
    """Adjoints of a scalar ``output`` for every node reachable from it.

    Returns a mapping keyed by tensor identity.  When ``wrt`` is given, the
    result is restricted to those tensors, with zero adjoints for any that
    the output does not depend on.  The pass is pure: no tensor is mutated,
    and repeated calls return equal values.
    """

    if output.size != 1:
        raise ShapeError(f"backward: output must be scalar, got shape {output.shape}")
    order = _toposort(output)
    adj: dict[int, np.ndarray] = {id(output): np.ones_like(output.data)}
    nodes: dict[int, Tensor] = {id(n): n for n in order}
    for node in reversed(order):
        g = adj.get(id(node))
        if g is None:
            continue
        for parent, vjp in zip(node.parents, node.vjps):
            contrib = vjp(g)
            if not np.all(np.isfinite(contrib)):
                raise NonFiniteError(f"{node.op}: non-finite adjoint")
            prev = adj.get(id(parent))
            adj[id(parent)] = contrib if prev is None else prev + contrib
    if wrt is not None:
        return {
            t: np.array(adj.get(id(t), np.zeros_like(t.data)), copy=True) for t in wrt
        }
    return {nodes[i]: g for i, g in adj.items()}


# ---------------------------------------------------------------------------
# finite-difference checking
# ---------------------------------------------------------------------------


def gradcheck(fn, tensors, step: float = 1e-5, rtol: float = 1e-4, atol: float = 1e-6):
    """Compare analytic gradients of ``fn(*tensors)`` with central differences.

    ``fn`` must build a scalar tensor from the given leaf tensors and be
    deterministic (any randomness fixed outside).  Returns the maximum
    elementwise error ratio; raises ``AssertionError`` beyond tolerance.
    """

    out = fn(*tensors)
    grads = backward(out, wrt=tensors)
    worst = 0.0
    for t in tensors:
        g = grads[t]
        flat = t.data.reshape(-1)
        num = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = float(fn(*tensors).data)
            flat[i] = orig - step
            lo = float(fn(*tensors).data)
            flat[i] = orig
            num[i] = (hi - lo) / (2.0 * step)
        num = num.reshape(t.shape)
        denom = np.maximum(np.abs(num), np.abs(g))
        err = np.abs(g - num)
        bad = err > (atol + rtol * denom)
        if np.any(bad):
            raise AssertionError(
                f"gradcheck failed: max abs err {err.max():.3e} "
                f"(analytic {g.reshape(-1)[err.argmax()]:.6e}, "
                f"numeric {num.reshape(-1)[err.argmax()]:.6e})"
            )
        scale = np.where(denom > 0, denom, 1.0)
        worst = max(worst, float((err / scale).max()))
    return worst
