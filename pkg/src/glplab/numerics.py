"""Dense float64 arithmetic with reverse-mode differentiation.

Model code is written against plain numpy (``np.tanh(x @ W + b)``); when any
operand is a :class:`Var` the same expression builds a graph instead. Only a
small primitive set is differentiable. Anything else raises
:class:`UnsupportedPrimitiveError` at the moment the expression is built.

Also here: central-difference gradient checking, parameter initialization and
the Adam optimizer used by every learned component.
"""

from __future__ import annotations

from collections.abc import Callable, Iterator, Mapping
from dataclasses import dataclass, field

import numpy as np

DTYPE = np.float64


class UnsupportedPrimitiveError(TypeError):
    """An operation outside the differentiable primitive set was applied to a Var."""


class NonFiniteError(FloatingPointError):
    """A forward value or gradient became NaN or infinite."""


def _check_finite(value: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(value)):
        raise NonFiniteError(f"non-finite value produced by '{op}'")


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    # Sum out axes that broadcasting added or stretched.
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Var:
    """A node in a differentiable computation graph.

    ``value`` is always a float64 ndarray of rank <= 2. Gradients are filled by
    :func:`backward`.
    """

    __slots__ = ("value", "grad", "_parents", "_op")

    def __init__(self, value, parents=(), op: str = "leaf"):
        self.value = np.asarray(value, dtype=DTYPE)
        if self.value.ndim > 2:
            raise UnsupportedPrimitiveError("tensors above rank 2 are not supported")
        self.grad: np.ndarray | None = None
        # parents: tuple of (Var, vjp) where vjp maps upstream grad -> grad wrt that parent
        self._parents = parents
        self._op = op
        _check_finite(self.value, op)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    @property
    def T(self) -> Var:
        return Var(self.value.T, ((self, lambda g: g.T),), "transpose")

    def __repr__(self) -> str:
        return f"Var(shape={self.shape}, op={self._op})"

    # numpy interop: ufuncs on Vars route to the primitive set or fail loudly
    def __array_ufunc__(self, ufunc, method, *inputs, **kwargs):
        if method != "__call__" or kwargs:
            raise UnsupportedPrimitiveError(f"{ufunc.__name__}.{method} is not differentiable here")
        impl = _UFUNCS.get(ufunc)
        if impl is None:
            raise UnsupportedPrimitiveError(f"unsupported primitive: np.{ufunc.__name__}")
        return impl(*inputs)

    def __array_function__(self, func, types, args, kwargs):
        impl = _FUNCTIONS.get(func)
        if impl is None:
            raise UnsupportedPrimitiveError(f"unsupported primitive: np.{func.__name__}")
        return impl(*args, **kwargs)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return subtract(self, other)

    def __rsub__(self, other):
        return subtract(other, self)

    def __mul__(self, other):
        return multiply(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Var):
            raise UnsupportedPrimitiveError("division by a Var is not a supported primitive")
        return multiply(self, 1.0 / np.asarray(other, dtype=DTYPE))

    def __rtruediv__(self, other):
        raise UnsupportedPrimitiveError("division by a Var is not a supported primitive")

    def __neg__(self):
        return negative(self)

    def __pow__(self, exponent):
        if exponent == 2:
            return square(self)
        raise UnsupportedPrimitiveError("only x**2 is a supported power")

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, key):
        raise UnsupportedPrimitiveError("indexing is not a supported primitive")

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis=axis, keepdims=keepdims)


def _as_var(x) -> Var:
    return x if isinstance(x, Var) else Var(x, op="const")


def _lift(*xs):
    """Return (values, vars) where vars is None when nothing is differentiable."""
    if not any(isinstance(x, Var) for x in xs):
        return [np.asarray(x, dtype=DTYPE) for x in xs], None
    vs = [_as_var(x) for x in xs]
    return [v.value for v in vs], vs


def add(x, y):
    (a, b), vs = _lift(x, y)
    out = a + b
    if vs is None:
        return out
    return Var(out, ((vs[0], lambda g: _unbroadcast(g, a.shape)),
                     (vs[1], lambda g: _unbroadcast(g, b.shape))), "add")


def subtract(x, y):
    (a, b), vs = _lift(x, y)
    out = a - b
    if vs is None:
        return out
    return Var(out, ((vs[0], lambda g: _unbroadcast(g, a.shape)),
                     (vs[1], lambda g: -_unbroadcast(g, b.shape))), "subtract")


def multiply(x, y):
    (a, b), vs = _lift(x, y)
    out = a * b
    if vs is None:
        return out
    return Var(out, ((vs[0], lambda g: _unbroadcast(g * b, a.shape)),
                     (vs[1], lambda g: _unbroadcast(g * a, b.shape))), "multiply")


def negative(x):
    (a,), vs = _lift(x)
    if vs is None:
        return -a
    return Var(-a, ((vs[0], lambda g: -g),), "negative")


def matmul(x, y):
    (a, b), vs = _lift(x, y)
    if a.ndim == 0 or b.ndim == 0:
        raise UnsupportedPrimitiveError("matmul needs rank >= 1 operands")
    out = a @ b
    if vs is None:
        return out

    def grad_a(g):
        if b.ndim == 1:
            return np.multiply.outer(g, b) if a.ndim == 2 else g * b
        return g @ b.T

    def grad_b(g):
        if a.ndim == 1:
            return np.multiply.outer(a, g) if b.ndim == 2 else g * a
        if b.ndim == 1:
            return a.T @ g
        return a.T @ g

    return Var(out, ((vs[0], grad_a), (vs[1], grad_b)), "matmul")


def _unary(name: str, fwd: Callable, dfdx: Callable):
    def op(x):
        (a,), vs = _lift(x)
        # overflow is reported as NonFiniteError by Var instead of a numpy warning
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            out = fwd(a)
        if vs is None:
            return out
        return Var(out, ((vs[0], lambda g: g * dfdx(a, out)),), name)

    op.__name__ = name
    return op


tanh = _unary("tanh", np.tanh, lambda a, y: 1.0 - y * y)
relu = _unary("relu", lambda a: np.maximum(a, 0.0), lambda a, y: (a > 0).astype(DTYPE))
exp = _unary("exp", np.exp, lambda a, y: y)
square = _unary("square", np.square, lambda a, y: 2.0 * a)
sqrt = _unary("sqrt", np.sqrt, lambda a, y: 0.5 / y)


def log(x):
    (a,), vs = _lift(x)
    if np.any(a <= 0):
        raise NonFiniteError("log of a non-positive value")
    out = np.log(a)
    if vs is None:
        return out
    return Var(out, ((vs[0], lambda g: g / a),), "log")


def reduce_sum(x, axis=None, keepdims=False):
    (a,), vs = _lift(x)
    out = a.sum(axis=axis, keepdims=keepdims)
    if vs is None:
        return out

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, a.shape).copy()

    return Var(out, ((vs[0], vjp),), "sum")


def reduce_mean(x, axis=None, keepdims=False):
    (a,), vs = _lift(x)
    count = a.size if axis is None else a.shape[axis]
    return multiply(reduce_sum(x, axis=axis, keepdims=keepdims), 1.0 / count) if vs else a.mean(axis=axis, keepdims=keepdims)


def affine(x, W, b):
    """``x @ W + b``: the affine map primitive."""
    return add(matmul(x, W), b)


def squared_error(pred, target):
    """Sum of squared differences, reduced over every entry."""
    return reduce_sum(square(subtract(pred, target)))


def row_norm(x, axis: int = -1, floor: float = 0.0):
    """Euclidean norm along ``axis``; ``floor`` is added under the root to keep d/dx finite at 0."""
    total = reduce_sum(square(x), axis=axis)
    return sqrt(add(total, floor)) if floor else sqrt(total)


_UFUNCS = {
    np.add: add,
    np.subtract: subtract,
    np.multiply: multiply,
    np.negative: negative,
    np.matmul: matmul,
    np.tanh: tanh,
    np.exp: exp,
    np.log: log,
    np.square: square,
    np.sqrt: sqrt,
}

_FUNCTIONS = {
    np.sum: reduce_sum,
    np.mean: reduce_mean,
    np.dot: matmul,
}


def backward(root: Var) -> None:
    """Accumulate d(root)/d(node) into ``node.grad`` for every ancestor."""
    if root.value.size != 1:
        raise ValueError("backward() needs a scalar root")
    order: list[Var] = []
    seen: set[int] = set()
    stack: list[tuple[Var, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent, _ in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.value)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        node.grad = g if node.grad is None else node.grad + g
        for parent, vjp in node._parents:
            contrib = vjp(g)
            _check_finite(contrib, f"d/d({parent._op}) via {node._op}")
            key = id(parent)
            grads[key] = contrib if key not in grads else grads[key] + contrib


class ParamSet(Mapping):
    """Ordered, read-only mapping of parameter name to float64 array."""

    def __init__(self, items=()):
        data = dict(items)
        self._data: dict[str, np.ndarray] = {}
        for name, value in data.items():
            arr = np.array(value, dtype=DTYPE)
            arr.setflags(write=False)
            self._data[name] = arr

    def __getitem__(self, name: str) -> np.ndarray:
        return self._data[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._data)

    def __len__(self) -> int:
        return len(self._data)

    def __repr__(self) -> str:
        shapes = ", ".join(f"{k}: {v.shape}" for k, v in self._data.items())
        return f"ParamSet({shapes})"

    def replace(self, **updates) -> ParamSet:
        return ParamSet({**self._data, **updates})

    def num_entries(self) -> int:
        return sum(v.size for v in self._data.values())

    def allclose(self, other: Mapping, atol: float = 0.0) -> bool:
        return list(self) == list(other) and all(
            np.allclose(self[k], other[k], rtol=0.0, atol=atol) for k in self
        )


def grad(loss_fn: Callable[[Mapping], Var], params: Mapping) -> ParamSet:
    """Gradient of a scalar ``loss_fn(params)`` with respect to every parameter."""
    leaves = {name: Var(value) for name, value in params.items()}
    loss = loss_fn(leaves)
    if not isinstance(loss, Var):
        # loss independent of the parameters
        return ParamSet({k: np.zeros_like(np.asarray(v, dtype=DTYPE)) for k, v in params.items()})
    backward(loss)
    return ParamSet({
        k: (leaf.grad if leaf.grad is not None else np.zeros_like(leaf.value)).reshape(leaf.shape)
        for k, leaf in leaves.items()
    })


def value_and_grad(loss_fn, params: Mapping) -> tuple[float, ParamSet]:
    leaves = {name: Var(value) for name, value in params.items()}
    loss = loss_fn(leaves)
    if not isinstance(loss, Var):
        return float(loss), ParamSet({k: np.zeros_like(np.asarray(v, DTYPE)) for k, v in params.items()})
    backward(loss)
    return float(loss.value), ParamSet({
        k: leaf.grad if leaf.grad is not None else np.zeros_like(leaf.value) for k, leaf in leaves.items()
    })


def _scalar(x) -> float:
    return float(x.value if isinstance(x, Var) else np.asarray(x))


def check_gradient(loss_fn, params: Mapping, fd_step: float = 1e-5) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    Entries where both estimates are below 1e-8 in magnitude are scored by
    absolute error instead.
    """
    if fd_step <= 0:
        raise ValueError("fd_step must be positive")
    analytic = grad(loss_fn, params)
    base = {k: np.array(v, dtype=DTYPE) for k, v in params.items()}
    worst = 0.0
    for name, arr in base.items():
        flat = arr.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + fd_step
            up = _scalar(loss_fn(base))
            flat[i] = orig - fd_step
            down = _scalar(loss_fn(base))
            flat[i] = orig
            numeric = (up - down) / (2.0 * fd_step)
            exact = float(analytic[name].reshape(-1)[i])
            scale = max(abs(numeric), abs(exact))
            err = abs(numeric - exact)
            worst = max(worst, err / scale if scale >= 1e-8 else err)
    return worst


def init_dense(rng: np.random.Generator, fan_in: int, fan_out: int) -> tuple[np.ndarray, np.ndarray]:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases."""
    bound = 1.0 / np.sqrt(fan_in)
    W = rng.uniform(-bound, bound, size=(fan_in, fan_out))
    b = rng.uniform(-bound, bound, size=(fan_out,))
    return W, b


@dataclass(frozen=True)
class OptimizerState:
    """Adam moments and step counter; hyperparameters travel with the state."""

    m: ParamSet
    v: ParamSet
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: Mapping, lr: float = 1e-3, beta1: float = 0.9,
                   beta2: float = 0.999, eps: float = 1e-8) -> OptimizerState:
        zeros = ParamSet({k: np.zeros_like(np.asarray(v, DTYPE)) for k, v in params.items()})
        return cls(m=zeros, v=zeros, step=0, lr=lr, beta1=beta1, beta2=beta2, eps=eps)


def optimizer_step(params: Mapping, grads: Mapping, state: OptimizerState) -> tuple[ParamSet, OptimizerState]:
    """One bias-corrected Adam update. Returns new params and state; inputs are untouched."""
    if list(params) != list(grads) or list(params) != list(state.m):
        raise ValueError("params, grads and optimizer state must have identical names and order")
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    new_p, new_m, new_v = {}, {}, {}
    for k in params:
        p = np.asarray(params[k], DTYPE)
        g = np.asarray(grads[k], DTYPE)
        if g.shape != p.shape or state.m[k].shape != p.shape:
            raise ValueError(f"shape mismatch for parameter '{k}': {p.shape} vs grad {g.shape}")
        m = b1 * state.m[k] + (1.0 - b1) * g
        v = b2 * state.v[k] + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        new_p[k] = p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        new_m[k], new_v[k] = m, v
    new_state = OptimizerState(ParamSet(new_m), ParamSet(new_v), t, state.lr, b1, b2, state.eps)
    return ParamSet(new_p), new_state


def gradient_step(params: Mapping, grads: Mapping, lr: float) -> ParamSet:
    """Plain gradient descent ``p - lr * g``; unlike Adam, the step shrinks with the gradient."""
    if list(params) != list(grads):
        raise ValueError("params and grads must have identical names and order")
    return ParamSet({k: np.asarray(params[k], DTYPE) - lr * np.asarray(grads[k], DTYPE) for k in params})


@dataclass
class Adam:
    """Stateful convenience wrapper around :func:`optimizer_step`."""

    params: ParamSet
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    state: OptimizerState = field(init=False)

    def __post_init__(self):
        self.params = ParamSet(self.params)
        self.state = OptimizerState.for_params(self.params, self.lr, self.beta1, self.beta2, self.eps)

    def step(self, grads: Mapping) -> ParamSet:
        self.params, self.state = optimizer_step(self.params, grads, self.state)
        return self.params
