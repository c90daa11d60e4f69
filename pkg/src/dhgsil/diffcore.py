"""Small define-by-run reverse-mode autodiff over float64 numpy arrays.

Every op returns a new :class:`Tensor`. When at least one operand requires a
gradient the result keeps a reference to its parents and a closure that maps
the upstream gradient to one gradient per parent; :func:`gradient` walks that
graph once in reverse topological order.

Operations on constants only are evaluated eagerly and never enter the tape.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

_ids = itertools.count()


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


class Tensor:
    __slots__ = ("data", "op", "parents", "backward_fn", "requires_grad", "id")

    def __init__(self, data, requires_grad: bool = False, *, op: str = "leaf",
                 parents: tuple["Tensor", ...] = (), backward_fn: Callable | None = None,
                 _owned: bool = False):
        arr = np.asarray(data, dtype=np.float64) if _owned else np.array(data, dtype=np.float64)
        if not np.isfinite(arr).all():
            raise NonFiniteError(f"{op}: produced non-finite values")
        arr.flags.writeable = False
        self.data = arr
        self.op = op
        self.parents = parents
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad
        self.id = next(_ids)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(op={self.op}, shape={self.shape}, requires_grad={self.requires_grad})"

    __array_priority__ = 1000

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return take(self, index)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(x) -> Tensor:
    return Tensor(x, requires_grad=True)


def _node(value: np.ndarray, op: str, parents: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    tracked = any(p.requires_grad for p in parents)
    if not tracked:
        return Tensor(value, op=op, _owned=True)
    return Tensor(value, requires_grad=True, op=op, parents=tuple(parents),
                  backward_fn=backward_fn, _owned=True)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_check(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- binary ops

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("add", a, b)
    return _node(a.data + b.data, "add", (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("sub", a, b)
    return _node(a.data - b.data, "sub", (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("mul", a, b)
    return _node(a.data * b.data, "mul", (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
                            _unbroadcast(g * a.data, b.shape) if b.requires_grad else None))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("div", a, b)
    out = a.data / b.data
    return _node(out, "div", (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape),
                            _unbroadcast(-g * out / b.data, b.shape)))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}") from None

    def backward(g):
        # skip products nobody consumes (e.g. gradients w.r.t. data inputs)
        ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape) if b.requires_grad else None
        return ga, gb

    return _node(out, "matmul", (a, b), backward)


# ----------------------------------------------------------------- unary ops

def neg(x) -> Tensor:
    x = as_tensor(x)
    return _node(-x.data, "neg", (x,), lambda g: (-g,))


def exp(x) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)
    return _node(out, "exp", (x,), lambda g: (g * out,))


def log(x) -> Tensor:
    x = as_tensor(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(x.data)  # non-positive inputs are reported by the finiteness check
    return _node(out, "log", (x,), lambda g: (g / x.data,))


def square(x) -> Tensor:
    x = as_tensor(x)
    return _node(x.data * x.data, "square", (x,), lambda g: (2.0 * g * x.data,))


def sqrt(x) -> Tensor:
    x = as_tensor(x)
    out = np.sqrt(x.data)
    return _node(out, "sqrt", (x,), lambda g: (0.5 * g / out,))


def tanh(x) -> Tensor:
    x = as_tensor(x)
    out = np.tanh(x.data)
    return _node(out, "tanh", (x,), lambda g: (g * (1.0 - out * out),))


def softplus(x) -> Tensor:
    """log(1 + e^x), evaluated without overflow."""
    x = as_tensor(x)
    out = np.logaddexp(0.0, x.data)
    return _node(out, "softplus", (x,), lambda g: (g * np.exp(x.data - out),))


def maximum(x, c: float = 0.0) -> Tensor:
    """Elementwise max(x, c) for a constant c; subgradient 0 at the kink."""
    x = as_tensor(x)
    mask = x.data > c
    return _node(np.where(mask, x.data, c), "maximum", (x,), lambda g: (g * mask,))


def relu(x) -> Tensor:
    return maximum(x, 0.0)


def norm(x, axis=None) -> Tensor:
    """Euclidean / Frobenius norm (unsquared). Subgradient 0 where the norm is 0."""
    x = as_tensor(x)
    out = np.sqrt(np.sum(x.data * x.data, axis=axis, keepdims=True))
    safe = np.where(out > 0.0, out, 1.0)

    def backward(g):
        g = np.reshape(g, out.shape) if axis is not None else g
        return (np.where(out > 0.0, g * x.data / safe, 0.0),)

    value = out.reshape(()) if axis is None else np.squeeze(out, axis=axis)
    return _node(value, "norm", (x,), backward)


# -------------------------------------------------------------- reductions

def tsum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    out = np.sum(x.data, axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _node(out, "sum", (x,), backward)


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    count = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return tsum(x, axis=axis, keepdims=keepdims) * (1.0 / float(count))


# ------------------------------------------------------------ shape ops

def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    try:
        out = np.reshape(x.data, shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {x.shape} to {tuple(shape)}") from None
    return _node(out, "reshape", (x,), lambda g: (np.reshape(g, x.shape),))


def transpose(x, axes=None) -> Tensor:
    x = as_tensor(x)
    out = np.transpose(x.data, axes)
    inverse = None if axes is None else tuple(np.argsort(axes))
    return _node(out, "transpose", (x,), lambda g: (np.transpose(g, inverse),))


def take(x, index) -> Tensor:
    """Basic or advanced indexing; repeated indices accumulate in backward."""
    x = as_tensor(x)
    try:
        out = x.data[index]
    except IndexError as exc:
        raise ShapeError(f"slice: {exc} for shape {x.shape}") from None

    basic = _is_basic(index)

    def backward(g):
        full = np.zeros(x.shape)
        if basic:
            full[index] = g
        else:
            np.add.at(full, index, g)
        return (full,)

    return _node(out, "slice", (x,), backward)


def _is_basic(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(i is Ellipsis or i is None or isinstance(i, (int, np.integer, slice)) for i in items)


def concat(items: Sequence, axis: int = 0) -> Tensor:
    items = [as_tensor(t) for t in items]
    try:
        out = np.concatenate([t.data for t in items], axis=axis)
    except ValueError:
        raise ShapeError("concat: incompatible shapes " + ", ".join(str(t.shape) for t in items)) from None
    bounds = np.cumsum([t.shape[axis] for t in items])[:-1]
    return _node(out, "concat", tuple(items), lambda g: tuple(np.split(g, bounds, axis=axis)))


def stack(items: Sequence, axis: int = 0) -> Tensor:
    items = [as_tensor(t) for t in items]
    shapes = {t.shape for t in items}
    if len(shapes) != 1:
        raise ShapeError("stack: incompatible shapes " + ", ".join(str(s) for s in shapes))
    return concat([reshape(t, t.shape[:axis] + (1,) + t.shape[axis:]) for t in items], axis=axis)


# -------------------------------------------------------------- backward

def _topological(output: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack_: list[tuple[Tensor, bool]] = [(output, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if node.id in seen or not node.requires_grad:
            continue
        seen.add(node.id)
        stack_.append((node, True))
        for p in node.parents:
            if p.requires_grad and p.id not in seen:
                stack_.append((p, False))
    return order


def gradient(output: Tensor, params, stats: dict | None = None):
    """Gradients of a scalar ``output`` with respect to ``params``.

    ``params`` is a mapping name -> Tensor or a sequence of Tensors; the result
    has the same keys (or order). Parameters not reached by the output get
    zeros. If ``stats`` is given, ``stats["visited"]`` receives the number of
    tape nodes whose backward closure ran.
    """
    if output.data.size != 1:
        raise ShapeError(f"gradient: output must be scalar, got shape {output.shape}")
    grads: dict[int, np.ndarray] = {}
    visited = 0
    if output.requires_grad:
        grads[output.id] = np.ones(output.shape)
        for node in reversed(_topological(output)):
            g = grads.get(node.id)
            if g is None:
                continue
            visited += 1
            if node.backward_fn is None:
                continue
            for parent, pg in zip(node.parents, node.backward_fn(g)):
                if not parent.requires_grad:
                    continue
                if parent.id in grads:
                    grads[parent.id] = grads[parent.id] + pg
                else:
                    grads[parent.id] = pg
    if stats is not None:
        stats["visited"] = visited

    def pick(t: Tensor) -> np.ndarray:
        g = grads.get(t.id)
        return np.zeros(t.shape) if g is None else np.asarray(g, dtype=np.float64).reshape(t.shape)

    if isinstance(params, Mapping):
        return {k: pick(t) for k, t in params.items()}
    return [pick(t) for t in params]


def numerical_gradient(f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function of one array."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """max |a - n| / max(|a|, |n|, floor); the floor keeps near-zero entries from dominating."""
    a, n = np.asarray(analytic), np.asarray(numeric)
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))


# -------------------------------------------------------------- optimizer

@dataclass
class OptimizerState:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray],
              state: OptimizerState) -> tuple[dict[str, np.ndarray], OptimizerState]:
    """One bias-corrected Adam update. Returns fresh parameter arrays; ``state`` is advanced in place."""
    for k, p in params.items():
        if k not in grads:
            raise KeyError(f"adam_step: missing gradient for {k!r}")
        if np.shape(grads[k]) != np.shape(p):
            raise ShapeError(f"adam_step: gradient shape {np.shape(grads[k])} != parameter shape {np.shape(p)} for {k!r}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.step
    bc2 = 1.0 - b2 ** state.step
    updated = {}
    for k, p in params.items():
        g = np.asarray(grads[k], dtype=np.float64)
        m = state.m.get(k)
        if m is None:
            m = np.zeros_like(g)
            state.v[k] = np.zeros_like(g)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * state.v[k] + (1.0 - b2) * (g * g)
        state.m[k], state.v[k] = m, v
        updated[k] = p - state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return updated, state


def evaluate(fn: Callable[..., Tensor], *arrays) -> np.ndarray:
    """Run ``fn`` on constant tensors and return the forward value as an array."""
    return fn(*[as_tensor(a) for a in arrays]).data
