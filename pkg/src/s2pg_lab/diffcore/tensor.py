"""Define-by-run reverse-mode differentiation over dense float64 arrays.

A :class:`Tape` records every operation whose inputs live on it. Leaves are
created with :meth:`Tape.watch`; anything else (numpy arrays, python floats,
tensors created outside a tape) enters an op as a constant.

Broadcasting is deliberately narrow: binary elementwise ops accept operands of
identical shape, or a 0-d operand against anything. Row-wise bias addition goes
through :func:`linear`, and :func:`expand_rows` tiles a vector explicitly.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "DiffcoreError",
    "ShapeError",
    "NumericError",
    "TapeError",
    "DomainError",
    "Tensor",
    "Tape",
    "as_tensor",
    "backward",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "matmul",
    "linear",
    "tanh",
    "sigmoid",
    "relu",
    "softplus",
    "exp",
    "log",
    "square",
    "sum",
    "mean",
    "concat",
    "slice_",
    "reshape",
    "expand_rows",
    "minimum",
    "clip",
    "detach",
    "gaussian_logpdf",
    "gaussian_logpdf_logstd",
    "forward_op",
]

LOG_2PI = math.log(2.0 * math.pi)


class DiffcoreError(Exception):
    """Base class of every error raised by diffcore."""


class ShapeError(DiffcoreError, ValueError):
    """Operand shapes do not conform."""


class NumericError(DiffcoreError, FloatingPointError):
    """An op produced NaN or Inf."""


class TapeError(DiffcoreError, RuntimeError):
    """Misuse of a tape: detached loss, consumed tape, mixed tapes."""


class DomainError(DiffcoreError, ValueError):
    """Input outside the mathematical domain of the op."""


class Tensor:
    """A float64 array, optionally recorded on a :class:`Tape`."""

    __slots__ = ("data", "_tape", "_parents", "_vjp", "name", "__weakref__")

    __array_priority__ = 100  # make ``ndarray op Tensor`` defer to Tensor

    def __init__(self, data, *, _tape=None, _parents=(), _vjp=None, name=None):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self._tape = _tape
        self._parents = _parents
        self._vjp = _vjp
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def tape(self):
        return self._tape

    @property
    def requires_grad(self) -> bool:
        return self._tape is not None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single value, shape is {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        where = "tape" if self._tape is not None else "const"
        return f"Tensor({self.data!r}, {where})"

    def __len__(self) -> int:
        return len(self.data)

    # operator sugar
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

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return slice_(self, idx)

    def sum(self, axis=None):
        return sum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


class Tape:
    """Records ops in creation order; gradients flow back to watched leaves.

    ``backward`` consumes the tape. ``vjp`` does not, which is what Jacobian
    computations use to pull back one output component at a time.
    """

    def __init__(self):
        self._nodes: list[Tensor] = []
        self._leaves: dict[str, Tensor] = {}
        self._consumed = False

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        return False

    @property
    def consumed(self) -> bool:
        return self._consumed

    @property
    def leaves(self) -> dict[str, Tensor]:
        return dict(self._leaves)

    def watch(self, value, name: str | None = None) -> Tensor:
        """Create a differentiable leaf holding a copy of ``value``."""
        self._check_open()
        if name is None:
            name = f"leaf{len(self._leaves)}"
        if name in self._leaves:
            raise TapeError(f"leaf name {name!r} already watched on this tape")
        data = np.array(value.data if isinstance(value, Tensor) else value, dtype=np.float64)
        if not np.isfinite(data).all():
            raise NumericError(f"leaf {name!r} holds non-finite values")
        leaf = Tensor(data, _tape=self, name=name)
        self._nodes.append(leaf)
        self._leaves[name] = leaf
        return leaf

    def _check_open(self):
        if self._consumed:
            raise TapeError("tape already consumed by backward()")

    def _record(self, data, parents, vjp) -> Tensor:
        self._check_open()
        out = Tensor(data, _tape=self, _parents=parents, _vjp=vjp)
        self._nodes.append(out)
        return out

    def vjp(self, output: Tensor, cotangent=None) -> dict[str, np.ndarray]:
        """Pull ``cotangent`` back from ``output`` to every watched leaf."""
        self._check_open()
        if output._tape is not self:
            raise TapeError("output is not recorded on this tape")
        if cotangent is None:
            if output.size != 1:
                raise ShapeError("cotangent required for non-scalar output")
            cotangent = np.ones_like(output.data)
        cot = np.asarray(cotangent, dtype=np.float64)
        if cot.shape != output.shape:
            raise ShapeError(f"cotangent shape {cot.shape} != output shape {output.shape}")
        grads: dict[int, np.ndarray] = {id(output): cot}
        result: dict[str, np.ndarray] = {}
        for node in reversed(self._nodes):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._vjp is None:
                result[node.name] = g
                continue
            for parent, pg in zip(node._parents, node._vjp(g)):
                if pg is None or parent._tape is not self:
                    continue
                key = id(parent)
                prev = grads.get(key)
                grads[key] = pg if prev is None else prev + pg
        out = {}
        for name, leaf in self._leaves.items():
            g = result.get(name)
            g = np.zeros_like(leaf.data) if g is None else np.array(g, dtype=np.float64)
            if not np.isfinite(g).all():
                raise NumericError(f"non-finite gradient for {name!r}")
            out[name] = g
        return out

    def backward(self, loss: Tensor) -> dict[str, np.ndarray]:
        """Gradient of a scalar ``loss`` w.r.t. every leaf; consumes the tape."""
        if not isinstance(loss, Tensor) or loss._tape is None:
            raise TapeError("loss is detached from any tape")
        if loss._tape is not self:
            raise TapeError("loss belongs to a different tape")
        if loss.size != 1:
            raise ShapeError(f"loss must be scalar, got shape {loss.shape}")
        grads = self.vjp(loss, np.ones_like(loss.data))
        self._consumed = True
        self._nodes = []
        return grads


def backward(loss: Tensor) -> dict[str, np.ndarray]:
    """Gradient map of a scalar loss over the leaves of its tape."""
    if not isinstance(loss, Tensor) or loss._tape is None:
        raise TapeError("loss is detached from any tape")
    return loss._tape.backward(loss)


# ------------------------------------------------------------------ helpers


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _common_tape(tensors: Iterable[Tensor]):
    tape = None
    for t in tensors:
        if t._tape is None:
            continue
        if tape is None:
            tape = t._tape
        elif t._tape is not tape:
            raise TapeError("operands recorded on different tapes")
    return tape


def _finish(op: str, data: np.ndarray, inputs: Sequence[Tensor], vjp: Callable) -> Tensor:
    if not np.isfinite(data).all():
        raise NumericError(f"{op} produced non-finite values")
    tape = _common_tape(inputs)
    if tape is None:
        return Tensor(data)
    return tape._record(data, tuple(inputs), vjp)


def _unary(op: str, x, fwd, dfdx):
    x = as_tensor(x)
    with np.errstate(all="ignore"):
        out = fwd(x.data)
    return _finish(op, out, (x,), lambda g: (g * dfdx(x.data, out),))


def _reduce_to(g: np.ndarray, shape: tuple) -> np.ndarray:
    # only the 0-d broadcast is legal, so reducing means summing everything
    if g.shape == shape:
        return g
    return np.asarray(g.sum())


def _check_binary(op: str, a: Tensor, b: Tensor):
    if a.shape != b.shape and a.ndim != 0 and b.ndim != 0:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not conform")


# --------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_binary("add", a, b)
    sa, sb = a.shape, b.shape
    return _finish("add", a.data + b.data, (a, b), lambda g: (_reduce_to(g, sa), _reduce_to(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_binary("sub", a, b)
    sa, sb = a.shape, b.shape
    return _finish("sub", a.data - b.data, (a, b), lambda g: (_reduce_to(g, sa), _reduce_to(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_binary("mul", a, b)
    ad, bd = a.data, b.data
    return _finish(
        "mul", ad * bd, (a, b),
        lambda g: (_reduce_to(g * bd, ad.shape), _reduce_to(g * ad, bd.shape)),
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_binary("div", a, b)
    ad, bd = a.data, b.data
    with np.errstate(all="ignore"):
        out = ad / bd
    return _finish(
        "div", out, (a, b),
        lambda g: (_reduce_to(g / bd, ad.shape), _reduce_to(-g * out / bd, bd.shape)),
    )


def neg(x) -> Tensor:
    x = as_tensor(x)
    return _finish("neg", -x.data, (x,), lambda g: (-g,))


def tanh(x) -> Tensor:
    return _unary("tanh", x, np.tanh, lambda _x, y: 1.0 - y * y)


def _sigmoid(v):
    return 0.5 * (1.0 + np.tanh(0.5 * v))


def sigmoid(x) -> Tensor:
    return _unary("sigmoid", x, _sigmoid, lambda _x, y: y * (1.0 - y))


def relu(x) -> Tensor:
    return _unary("relu", x, lambda v: np.maximum(v, 0.0), lambda v, _y: (v > 0.0).astype(np.float64))


def softplus(x) -> Tensor:
    return _unary("softplus", x, lambda v: np.logaddexp(0.0, v), lambda v, _y: _sigmoid(v))


def exp(x) -> Tensor:
    return _unary("exp", x, np.exp, lambda _x, y: y)


def log(x) -> Tensor:
    return _unary("log", x, np.log, lambda v, _y: 1.0 / v)


def square(x) -> Tensor:
    return _unary("square", x, np.square, lambda v, _y: 2.0 * v)


def minimum(a, b) -> Tensor:
    """Elementwise minimum; on ties the gradient goes to ``b``."""
    a, b = as_tensor(a), as_tensor(b)
    _check_binary("minimum", a, b)
    take_a = a.data < b.data
    return _finish(
        "minimum", np.minimum(a.data, b.data), (a, b),
        lambda g: (_reduce_to(np.where(take_a, g, 0.0), a.shape), _reduce_to(np.where(take_a, 0.0, g), b.shape)),
    )


def clip(x, lo: float, hi: float) -> Tensor:
    """Clip to constant bounds; gradient passes only strictly inside them."""
    x = as_tensor(x)
    inside = (x.data > lo) & (x.data < hi)
    return _finish("clip", np.clip(x.data, lo, hi), (x,), lambda g: (np.where(inside, g, 0.0),))


def detach(x) -> Tensor:
    return Tensor(as_tensor(x).data)


# ---------------------------------------------------------------- structural


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim == 0 or b.ndim == 0 or a.ndim > 2 or b.ndim > 2:
        raise ShapeError(f"matmul expects 1-d or 2-d operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def vjp(g):
        if ad.ndim == 1 and bd.ndim == 1:
            return g * bd, g * ad
        if ad.ndim == 1:  # (k,) @ (k, n)
            return bd @ g, np.outer(ad, g)
        if bd.ndim == 1:  # (m, k) @ (k,)
            return np.outer(g, bd), ad.T @ g
        return g @ bd.T, ad.T @ g

    return _finish("matmul", ad @ bd, (a, b), vjp)


def linear(x, w, b=None) -> Tensor:
    """``x @ w + b`` with the bias added to every row."""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim not in (1, 2) or w.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise ShapeError(f"linear: cannot apply weight {w.shape} to input {x.shape}")
    out = x.data @ w.data
    if b is None:
        return _finish("linear", out, (x, w), lambda g: _linear_vjp(g, x.data, w.data)[:2])
    b = as_tensor(b)
    if b.shape != (w.shape[1],):
        raise ShapeError(f"linear: bias shape {b.shape} != ({w.shape[1]},)")
    return _finish("linear", out + b.data, (x, w, b), lambda g: _linear_vjp(g, x.data, w.data))


def _linear_vjp(g, xd, wd):
    if xd.ndim == 1:
        return g @ wd.T, np.outer(xd, g), g
    return g @ wd.T, xd.T @ g, g.sum(axis=0)


def sum(x, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy naming
    x = as_tensor(x)
    shape = x.shape

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _finish("sum", np.asarray(x.data.sum(axis=axis)), (x,), vjp)


def mean(x, axis=None) -> Tensor:
    x = as_tensor(x)
    n = x.size if axis is None else x.shape[axis]
    if n == 0:
        raise ShapeError("mean of an empty tensor")
    return div(sum(x, axis), float(n))


def concat(xs: Sequence, axis: int = 0) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    if not xs:
        raise ShapeError("concat of nothing")
    try:
        out = np.concatenate([x.data for x in xs], axis=axis)
    except ValueError as err:
        raise ShapeError(f"concat: {err}") from None
    bounds = np.cumsum([x.shape[axis] for x in xs])[:-1]
    return _finish("concat", out, tuple(xs), lambda g: tuple(np.split(g, bounds, axis=axis)))


def slice_(x, idx) -> Tensor:
    x = as_tensor(x)
    try:
        out = np.array(x.data[idx], dtype=np.float64)
    except IndexError as err:
        raise ShapeError(f"slice: {err}") from None
    shape = x.shape

    def vjp(g):
        full = np.zeros(shape)
        np.add.at(full, idx, g)
        return (full,)

    return _finish("slice", out, (x,), vjp)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError as err:
        raise ShapeError(f"reshape: {err}") from None
    old = x.shape
    return _finish("reshape", out, (x,), lambda g: (g.reshape(old),))


def expand_rows(v, rows: int) -> Tensor:
    """Tile a vector ``(d,)`` into ``(rows, d)``."""
    v = as_tensor(v)
    if v.ndim != 1:
        raise ShapeError(f"expand_rows expects a vector, got {v.shape}")
    return _finish("expand_rows", np.tile(v.data, (rows, 1)), (v,), lambda g: (g.sum(axis=0),))


# ------------------------------------------------------------------ densities


def _logpdf_shapes(x: Tensor, m: Tensor, s: Tensor, what: str):
    if x.shape != m.shape or x.ndim not in (1, 2):
        raise ShapeError(f"gaussian_logpdf: x {x.shape} and mean {m.shape} must match (d,) or (B, d)")
    if s.shape != x.shape[-1:] and s.shape != x.shape:
        raise ShapeError(f"gaussian_logpdf: {what} shape {s.shape} incompatible with {x.shape}")


def _sum_to(g: np.ndarray, shape: tuple) -> np.ndarray:
    return g if g.shape == shape else g.sum(axis=0)


def gaussian_logpdf(x, mean, diag_cov) -> Tensor:
    """Log-density of a diagonal Gaussian given its variances.

    Vector input gives a scalar; ``(B, d)`` input gives one value per row.
    """
    x, m, v = as_tensor(x), as_tensor(mean), as_tensor(diag_cov)
    _logpdf_shapes(x, m, v, "diag_cov")
    if not (v.data > 0.0).all():
        raise DomainError("gaussian_logpdf: variances must be strictly positive")
    diff = x.data - m.data
    quad = diff * diff / v.data
    out = -0.5 * (quad + np.log(v.data) + LOG_2PI).sum(axis=-1)

    def vjp(g):
        ge = np.expand_dims(g, -1) if x.ndim == 2 else g
        dx = -ge * diff / v.data
        dv = -0.5 * ge * (1.0 / v.data - quad / v.data)
        return dx, -dx, _sum_to(dv, v.shape)

    return _finish("gaussian_logpdf", np.asarray(out), (x, m, v), vjp)


def gaussian_logpdf_logstd(x, mean, log_std) -> Tensor:
    """Same density parameterized by per-dimension log standard deviations."""
    x, m, ls = as_tensor(x), as_tensor(mean), as_tensor(log_std)
    _logpdf_shapes(x, m, ls, "log_std")
    inv_var = np.exp(-2.0 * ls.data)
    diff = x.data - m.data
    quad = diff * diff * inv_var
    out = -(0.5 * quad + ls.data + 0.5 * LOG_2PI).sum(axis=-1)

    def vjp(g):
        ge = np.expand_dims(g, -1) if x.ndim == 2 else g
        dx = -ge * diff * inv_var
        dls = ge * (quad - 1.0)
        return dx, -dx, _sum_to(dls, ls.shape)

    return _finish("gaussian_logpdf", np.asarray(out), (x, m, ls), vjp)


# ---------------------------------------------------------------- dispatcher

_OPS = {
    "matmul": matmul,
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "neg": neg,
    "tanh": tanh,
    "sigmoid": sigmoid,
    "relu": relu,
    "softplus": softplus,
    "exp": exp,
    "log": log,
    "sum": sum,
    "mean": mean,
    "concat": lambda *xs, axis=0: concat(xs, axis=axis),
    "slice": slice_,
    "square": square,
    "minimum": minimum,
    "linear": linear,
}


def forward_op(op_kind: str, *inputs, **kwargs) -> Tensor:
    """Apply an op by name, e.g. ``forward_op("tanh", x)``."""
    try:
        fn = _OPS[op_kind]
    except KeyError:
        raise ValueError(f"unknown op {op_kind!r}; known: {sorted(_OPS)}") from None
    return fn(*inputs, **kwargs)
