"""Dense tensors with reverse-mode automatic differentiation.

Every differentiable operation returns a new :class:`Tensor` that keeps a
reference to its inputs and a vector-Jacobian product closure. Calling
:func:`backward` on a scalar result builds a :class:`Tape` (the reverse
topological order of the reachable graph), runs it once and releases it.
There is no global graph: two forward passes produce two independent tapes.
"""
import contextlib
import contextvars

import numpy as np

from ..errors import ContractError, DimensionError

_grad_enabled = contextvars.ContextVar("fewshot_grad_enabled", default=True)


@contextlib.contextmanager
def no_grad():
    """Run forward code without recording any graph."""
    token = _grad_enabled.set(False)
    try:
        yield
    finally:
        _grad_enabled.reset(token)


def is_grad_enabled():
    return _grad_enabled.get()


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp", "_op", "__weakref__")

    def __init__(self, data, requires_grad=False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=dtype)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._vjp = None
        self._op = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def is_leaf(self):
        return self._vjp is None

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self):
        return len(self.data)

    # arithmetic -----------------------------------------------------------
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
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def max(self, axis=-1, keepdims=False):
        return max_over_axis(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def relu(self):
        return relu(self)

    def sqrt(self):
        return sqrt(self)


class Parameter(Tensor):
    """A trainable leaf tensor with an accumulated gradient and a dotted name."""

    __slots__ = ("name",)

    def __init__(self, data, name="", dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.name = name
        self.grad = np.zeros_like(self.data)

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def assign(self, value):
        value = np.asarray(value, dtype=self.data.dtype)
        if value.shape != self.data.shape:
            raise DimensionError(f"assign {self.name}: shape {value.shape} != {self.data.shape}")
        self.data = value.copy()

    def astype(self, dtype):
        self.data = self.data.astype(dtype)
        self.grad = self.grad.astype(dtype)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape}, dtype={self.dtype})"


def as_tensor(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if isinstance(like, Tensor) else None
    return Tensor(np.asarray(x, dtype=dtype))


def make_result(data, parents, vjp, op):
    """Wrap ``data`` as an op output, recording the graph edge when needed."""
    out = Tensor(data)
    if _grad_enabled.get() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._vjp = vjp
        out._op = op
    return out


_CONSUMED = "<consumed>"


class Tape:
    """Reverse topological schedule of the graph reachable from a scalar loss."""

    def __init__(self, loss):
        if not isinstance(loss, Tensor):
            raise ContractError("backward expects a Tensor")
        if loss.data.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss._op == _CONSUMED:
            raise ContractError("this loss was already back-propagated; its tape is consumed")
        if not loss.requires_grad:
            raise ContractError("loss is not connected to any tensor requiring grad")
        self.loss = loss
        self.nodes = self._toposort(loss)

    @staticmethod
    def _toposort(root):
        order, seen = [], set()
        stack = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
        order.reverse()
        return order

    def run(self, seed_grad=None):
        root = self.loss
        if seed_grad is None:
            seed_grad = np.ones_like(root.data)
        grads = {id(root): np.asarray(seed_grad, dtype=root.data.dtype).reshape(root.shape)}
        for node in self.nodes:
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._vjp is None:
                if node.grad is None:
                    node.grad = np.zeros_like(node.data)
                node.grad += g
                continue
            parent_grads = node._vjp(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
            # consume the tape: release references so the graph can be freed
            node._parents = ()
            node._vjp = None
            node._op = _CONSUMED
        self.nodes = []


def backward(loss):
    """Accumulate d loss / d leaf into every reachable leaf's ``.grad``."""
    Tape(loss).run()


# ---------------------------------------------------------------------------
# elementwise and linear-algebra primitives


def _broadcast_shape(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


def unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (the inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a, b):
    a, b = as_tensor(a, b), as_tensor(b, a)
    _broadcast_shape("add", a, b)

    def vjp(g):
        return unbroadcast(g, a.shape), unbroadcast(g, b.shape)

    return make_result(a.data + b.data, (a, b), vjp, "add")


def sub(a, b):
    a, b = as_tensor(a, b), as_tensor(b, a)
    _broadcast_shape("sub", a, b)

    def vjp(g):
        return unbroadcast(g, a.shape), unbroadcast(-g, b.shape)

    return make_result(a.data - b.data, (a, b), vjp, "sub")


def mul(a, b):
    a, b = as_tensor(a, b), as_tensor(b, a)
    _broadcast_shape("mul", a, b)

    def vjp(g):
        ga = unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_result(a.data * b.data, (a, b), vjp, "mul")


def div(a, b):
    a, b = as_tensor(a, b), as_tensor(b, a)
    _broadcast_shape("div", a, b)
    out = a.data / b.data

    def vjp(g):
        ga = unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_result(out, (a, b), vjp, "div")


def scale(a, c):
    """Multiply by a Python scalar constant."""
    c = float(c)

    def vjp(g):
        return (g * c,)

    return make_result(a.data * c, (a,), vjp, "scale")


def matmul(a, b):
    a, b = as_tensor(a, b), as_tensor(b, a)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def vjp(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb

    return make_result(a.data @ b.data, (a, b), vjp, "matmul")


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def sum_(a, axis=None, keepdims=False):
    axes = _norm_axis(axis, a.ndim)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return make_result(a.data.sum(axis=axes, keepdims=keepdims), (a,), vjp, "sum")


def mean(a, axis=None, keepdims=False):
    axes = _norm_axis(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, a.shape).copy(),)

    return make_result(a.data.mean(axis=axes, keepdims=keepdims), (a,), vjp, "mean")


def max_over_axis(a, axis=-1, keepdims=False):
    """Maximum along one axis; the gradient goes to the first maximal entry."""
    axis = axis % a.ndim
    idx = np.argmax(a.data, axis=axis)
    out = np.take_along_axis(a.data, np.expand_dims(idx, axis), axis=axis)
    if not keepdims:
        out = np.squeeze(out, axis)

    def vjp(g):
        ga = np.zeros_like(a.data)
        if not keepdims:
            g = np.expand_dims(g, axis)
        np.put_along_axis(ga, np.expand_dims(idx, axis), g, axis=axis)
        return (ga,)

    return make_result(out, (a,), vjp, "max")


def reshape(a, shape):
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot reshape {a.shape} to {tuple(shape)}") from None

    def vjp(g):
        return (g.reshape(a.shape),)

    return make_result(out, (a,), vjp, "reshape")


def transpose(a, axes=None):
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inverse = np.argsort(axes)

    def vjp(g):
        return (g.transpose(inverse),)

    return make_result(a.data.transpose(axes), (a,), vjp, "transpose")


def exp(a):
    out = np.exp(a.data)

    def vjp(g):
        return (g * out,)

    return make_result(out, (a,), vjp, "exp")


def log(a):
    def vjp(g):
        return (g / a.data,)

    return make_result(np.log(a.data), (a,), vjp, "log")


def sqrt(a):
    out = np.sqrt(a.data)

    def vjp(g):
        return (g * 0.5 / out,)

    return make_result(out, (a,), vjp, "sqrt")


def relu(a):
    mask = a.data > 0

    def vjp(g):
        return (g * mask,)

    return make_result(np.where(mask, a.data, 0).astype(a.data.dtype), (a,), vjp, "relu")


def take(a, index):
    """Index along the leading axes (basic or integer-array indexing)."""
    if isinstance(index, Tensor):
        index = index.data
    out = a.data[index]

    def vjp(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, index, g)
        return (ga,)

    return make_result(np.array(out, copy=True), (a,), vjp, "take")


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise DimensionError("concat: empty tensor list")
    ref = tensors[0]
    axis = axis % ref.ndim
    for t in tensors[1:]:
        if t.ndim != ref.ndim or any(
            s != r for i, (s, r) in enumerate(zip(t.shape, ref.shape)) if i != axis
        ):
            raise DimensionError(f"concat: incompatible shapes {ref.shape} and {t.shape}")
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def vjp(g):
        return tuple(
            np.take(g, np.arange(lo, hi), axis=axis) for lo, hi in zip(bounds[:-1], bounds[1:])
        )

    out = np.concatenate([t.data for t in tensors], axis=axis)
    return make_result(out, tuple(tensors), vjp, "concat")
