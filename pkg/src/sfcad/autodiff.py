"""Dense float64 tensors with tape-based reverse-mode differentiation.

Operations run eagerly on numpy arrays. While a :class:`GradientTape` is
active, every operation touching a watched tensor (or a tensor derived from
one) is appended to the tape together with its vector-Jacobian product;
:func:`backward` replays the tape in reverse recording order.

Broadcasting is deliberately narrow: elementwise binary operations accept
operands of identical shape, or one 0-d (scalar) operand. Anything else has
to go through :func:`expand` explicitly.
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, DimensionError

_local = threading.local()


def _active_tape():
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


class Tensor:
    """An immutable float64 array, optionally tracked by a tape."""

    __slots__ = ("data", "_tape", "_node")

    def __init__(self, data, _tape=None, _node=-1):
        self.data = np.asarray(data, dtype=np.float64)
        self._tape = _tape
        self._node = _node

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        tracked = ", tracked" if self._tape is not None else ""
        return f"Tensor(shape={self.shape}{tracked})"

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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)


class GradientTape:
    """Ordered record of primitive operations.

    Use as a context manager; ``watch`` turns arrays into tracked leaves.
    A tape belongs to the thread that entered it.
    """

    def __init__(self):
        self._parents: list[tuple] = []
        self._vjps: list = []
        self.op_names: list[str] = []
        self.watched: dict[str, Tensor] = {}
        self.last_replay: list[int] = []

    def __enter__(self):
        if not hasattr(_local, "stack"):
            _local.stack = []
        _local.stack.append(self)
        return self

    def __exit__(self, *exc):
        _local.stack.remove(self)
        return False

    def __len__(self):
        return len(self._parents)

    def _push(self, name, parents, vjp) -> int:
        self._parents.append(parents)
        self._vjps.append(vjp)
        self.op_names.append(name)
        return len(self._parents) - 1

    def watch(self, value, name: str | None = None) -> Tensor:
        arr = value.data if isinstance(value, Tensor) else value
        node = self._push("leaf", (), None)
        t = Tensor(arr, self, node)
        if name is not None:
            self.watched[name] = t
        return t

    def watch_all(self, params: dict) -> dict:
        return {k: self.watch(v, k) for k, v in params.items()}


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(name, out, inputs, vjp) -> Tensor:
    tape = _active_tape()
    if tape is not None:
        parents = None
        for i, t in enumerate(inputs):
            if t._tape is tape:
                parents = tuple(u._node if u._tape is tape else -1 for u in inputs)
                break
        if parents is not None:
            return Tensor(out, tape, tape._push(name, parents, vjp))
    return Tensor(out)


def backward(tape: GradientTape, loss: Tensor, wrt: dict | None = None) -> dict:
    """Gradients of a scalar ``loss`` w.r.t. watched tensors.

    ``wrt`` defaults to every tensor watched under a name. Tensors that do
    not influence the loss receive zero gradients of their own shape.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    wrt = tape.watched if wrt is None else wrt
    if loss._tape is not tape:
        return {k: np.zeros_like(t.data) for k, t in wrt.items()}
    grads: list = [None] * len(tape._parents)
    grads[loss._node] = np.ones_like(loss.data)
    visited = []
    for idx in range(loss._node, -1, -1):
        g = grads[idx]
        vjp = tape._vjps[idx]
        if g is None or vjp is None:
            continue
        visited.append(idx)
        for p, ig in zip(tape._parents[idx], vjp(g)):
            if p < 0 or ig is None:
                continue
            grads[p] = ig if grads[p] is None else grads[p] + ig
    tape.last_replay = visited
    out = {}
    for k, t in wrt.items():
        g = grads[t._node] if t._tape is tape else None
        out[k] = np.zeros_like(t.data) if g is None else np.asarray(g, dtype=np.float64).reshape(t.shape)
    return out


# --- elementwise -----------------------------------------------------------


def _binary_shapes(a: Tensor, b: Tensor, op: str):
    if a.shape == b.shape or a.ndim == 0 or b.ndim == 0:
        return
    raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape} (only exact match or scalar)")


def _fold(g, shape):
    return g.sum() if shape == () and g.shape != () else g


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes(a, b, "add")
    sa, sb = a.shape, b.shape
    return _record("add", a.data + b.data, (a, b), lambda g: (_fold(g, sa), _fold(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _record("sub", a.data - b.data, (a, b), lambda g: (_fold(g, sa), _fold(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes(a, b, "mul")
    ad, bd = a.data, b.data
    return _record("mul", ad * bd, (a, b), lambda g: (_fold(g * bd, ad.shape), _fold(g * ad, bd.shape)))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _record("neg", -a.data, (a,), lambda g: (-g,))


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _stable_sigmoid(a.data)
    return _record("sigmoid", out, (a,), lambda g: (g * out * (1.0 - out),))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _record("tanh", out, (a,), lambda g: (g * (1.0 - out * out),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _record("relu", np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _record("exp", out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    return _record("log", np.log(x), (a,), lambda g: (g / x,))


def rsqrt(a) -> Tensor:
    a = as_tensor(a)
    out = 1.0 / np.sqrt(a.data)
    return _record("rsqrt", out, (a,), lambda g: (-0.5 * g * out ** 3,))


def clip(a, lo: float, hi: float) -> Tensor:
    a = as_tensor(a)
    x = a.data
    inside = (x > lo) & (x < hi)
    return _record("clip", np.clip(x, lo, hi), (a,), lambda g: (g * inside,))


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    nd = ts[0].ndim
    ax = axis % nd
    for t in ts[1:]:
        if t.ndim != nd or any(s != r for i, (s, r) in enumerate(zip(t.shape, ts[0].shape)) if i != ax):
            raise DimensionError(f"concat along axis {axis}: incompatible shapes {ts[0].shape} and {t.shape}")
    sizes = np.cumsum([t.shape[ax] for t in ts])[:-1]
    out = np.concatenate([t.data for t in ts], axis=ax)
    return _record("concat", out, tuple(ts), lambda g: tuple(np.split(g, sizes, axis=ax)))


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    for t in ts[1:]:
        if t.shape != ts[0].shape:
            raise DimensionError(f"stack: incompatible shapes {ts[0].shape} and {t.shape}")
    out = np.stack([t.data for t in ts], axis=axis)
    ax = axis % out.ndim
    n = len(ts)
    return _record("stack", out, tuple(ts), lambda g: tuple(np.take(g, i, axis=ax) for i in range(n)))


_ELEMENTWISE = {
    "sigmoid": sigmoid,
    "tanh": tanh,
    "relu": relu,
    "add": add,
    "mul": mul,
}


def elementwise(op: str, *operands, axis: int = -1) -> Tensor:
    """Dispatch by name: sigmoid, tanh, relu, add, mul or concat."""
    if op == "concat":
        return concat(operands, axis=axis)
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ContractError(f"unknown elementwise op {op!r}") from None
    return fn(*operands)


# --- shape and reduction ---------------------------------------------------


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes.

    Accepts ``(..., m, k) @ (k, n)`` (shared right operand) or two operands
    with identical leading batch extents.
    """
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    if ad.ndim < 2 or bd.ndim < 2 or ad.shape[-1] != bd.shape[-2]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} do not align")
    if bd.ndim == 2:
        out = ad @ bd
        k, n = bd.shape

        def vjp(g):
            return g @ bd.T, ad.reshape(-1, k).T @ g.reshape(-1, n)

    else:
        if ad.shape[:-2] != bd.shape[:-2]:
            raise DimensionError(f"matmul: batch extents differ in {a.shape} and {b.shape}")
        out = ad @ bd

        def vjp(g):
            return g @ np.swapaxes(bd, -1, -2), np.swapaxes(ad, -1, -2) @ g

    return _record("matmul", out, (a, b), vjp)


def expand(a, shape: tuple) -> Tensor:
    """Explicit numpy-style broadcast to ``shape``; gradients are summed back."""
    a = as_tensor(a)
    src = a.shape
    try:
        out = np.broadcast_to(a.data, shape)
    except ValueError:
        raise DimensionError(f"expand: cannot broadcast {src} to {tuple(shape)}") from None
    lead = len(shape) - len(src)

    def vjp(g):
        if lead:
            g = g.sum(axis=tuple(range(lead)))
        axes = tuple(i for i, s in enumerate(src) if s == 1 and g.shape[i] != 1)
        if axes:
            g = g.sum(axis=axes, keepdims=True)
        return (g,)

    return _record("expand", out, (a,), vjp)


def reshape(a, shape: tuple) -> Tensor:
    a = as_tensor(a)
    src = a.shape
    return _record("reshape", a.data.reshape(shape), (a,), lambda g: (g.reshape(src),))


def transpose(a, axes: tuple) -> Tensor:
    a = as_tensor(a)
    inv = tuple(np.argsort(axes))
    return _record("transpose", np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def getitem(a, idx) -> Tensor:
    """Basic (slice/integer) indexing only."""
    a = as_tensor(a)
    src = a.shape

    def vjp(g):
        z = np.zeros(src)
        z[idx] = g
        return (z,)

    return _record("getitem", a.data[idx], (a,), vjp)


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    src = a.shape

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, src),)

    return _record("sum", a.data.sum(axis=axis, keepdims=keepdims), (a,), vjp)


def mean(a, axis=None, keepdims: bool = False, order_free: bool = False) -> Tensor:
    """``order_free`` sums in sorted order, so permuting the reduced axis
    cannot change the result even in the last bit."""
    a = as_tensor(a)
    src = a.shape
    n = a.data.size if axis is None else np.prod([src[i] for i in np.atleast_1d(axis)])

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, src),)

    data = np.sort(a.data, axis=axis) if order_free and axis is not None else a.data
    return _record("mean", data.mean(axis=axis, keepdims=keepdims), (a,), vjp)


def max(a, axis: int) -> Tensor:  # noqa: A001
    """Maximum along one axis; the gradient goes to the first maximiser."""
    a = as_tensor(a)
    x = a.data
    idx = np.expand_dims(np.argmax(x, axis=axis), axis)
    out = np.take_along_axis(x, idx, axis=axis).squeeze(axis)

    def vjp(g):
        z = np.zeros_like(x)
        np.put_along_axis(z, idx, np.expand_dims(g, axis), axis=axis)
        return (z,)

    return _record("max", out, (a,), vjp)


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    x = a.data
    if x.ndim == 0 or not -x.ndim <= axis < x.ndim:
        raise ContractError(f"softmax: axis {axis} invalid for shape {a.shape}")
    z = np.exp(x - x.max(axis=axis, keepdims=True))
    out = z / z.sum(axis=axis, keepdims=True)

    def vjp(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _record("softmax", out, (a,), vjp)


# --- verification ----------------------------------------------------------


def value_and_grad(f: Callable[[dict], Tensor], params: dict) -> tuple[float, dict]:
    """Evaluate ``f`` on watched copies of ``params`` and differentiate."""
    with GradientTape() as tape:
        loss = f(tape.watch_all(params))
    return float(loss.data), backward(tape, loss)


def grad_check(f: Callable[[dict], Tensor], params: dict, epsilon: float = 1e-5,
               names: Iterable[str] | None = None) -> float:
    """Max relative error between tape gradients and central differences.

    Per coordinate the error is ``|a - fd| / max(|a|, |fd|, 1e-8)``. The
    finite-difference side evaluates ``f`` on plain tensors, no tape.
    """
    params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    _, analytic = value_and_grad(f, params)
    worst = 0.0
    for name in (params if names is None else names):
        arr = params[name]
        flat = arr.reshape(-1)
        ga = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            fp = float(f({k: Tensor(v) for k, v in params.items()}).data)
            flat[i] = orig - epsilon
            fm = float(f({k: Tensor(v) for k, v in params.items()}).data)
            flat[i] = orig
            fd = (fp - fm) / (2.0 * epsilon)
            err = abs(ga[i] - fd) / np.maximum(np.maximum(abs(ga[i]), abs(fd)), 1e-8)
            worst = err if err > worst else worst
    return float(worst)
