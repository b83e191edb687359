"""Dense tensors with tape-based reverse-mode differentiation.

Operations are recorded only while a :class:`Tape` is active and at least one
input requires a gradient, so inference code pays no bookkeeping cost::

    with Tape() as tape:
        loss = (x * x).sum()
    backward(loss, tape)
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ContractError, GraphError, ShapeError, SizeError
from .rng import generator

DEFAULT_DTYPE = np.float32
_FLOAT_DTYPES = (np.float32, np.float64)


class Tensor:
    """Row-major n-d float array with an optional gradient buffer."""

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            if isinstance(data, np.ndarray) and data.dtype.type in _FLOAT_DTYPES:
                dtype = data.dtype
            else:
                dtype = DEFAULT_DTYPE
        self.data = np.ascontiguousarray(data, dtype=dtype)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self):
        return sum_all(self)

    def mean(self):
        return mean_all(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


@dataclass
class Node:
    inputs: tuple
    output: Tensor
    backward: BackwardFn


class Tape:
    """Ordered record of differentiable operations.

    Nodes are appended as operations execute, so the list is topologically
    sorted by construction.
    """

    _stack: list = []

    def __init__(self):
        self.nodes: list[Node] = []
        self._outputs: set[int] = set()

    def __enter__(self) -> "Tape":
        Tape._stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        Tape._stack.remove(self)

    def record(self, inputs, output: Tensor, backward_fn: BackwardFn) -> None:
        self.nodes.append(Node(tuple(inputs), output, backward_fn))
        self._outputs.add(id(output))

    def __contains__(self, tensor: Tensor) -> bool:
        return id(tensor) in self._outputs

    def __len__(self) -> int:
        return len(self.nodes)


def active_tape() -> Optional[Tape]:
    return Tape._stack[-1] if Tape._stack else None


def make_result(data: np.ndarray, inputs: Sequence[Tensor], backward_fn: BackwardFn) -> Tensor:
    """Wrap ``data`` as an op output, recording it when gradients are needed."""
    out = Tensor(data)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(inputs, out, backward_fn)
    return out


def backward(loss: Tensor, tape: Tape) -> None:
    """Populate ``.grad`` on every requires-grad ancestor of ``loss``.

    Gradients accumulate into existing ``.grad`` buffers.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss not in tape:
        raise GraphError("loss was not produced on this tape")

    pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    tensors: dict[int, Tensor] = {id(loss): loss}
    for node in reversed(tape.nodes):
        g = pending.pop(id(node.output), None)
        if g is None:
            continue
        _accumulate(node.output, g)
        for inp, ig in zip(node.inputs, node.backward(g)):
            if ig is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key in pending:
                pending[key] = pending[key] + ig
            else:
                pending[key] = ig
                tensors[key] = inp
    # whatever is left belongs to leaves (tensors not produced on this tape)
    for key, g in pending.items():
        _accumulate(tensors[key], g)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    g = np.asarray(g, dtype=t.dtype).reshape(t.shape)
    t.grad = g.copy() if t.grad is None else t.grad + g


# ---------------------------------------------------------------------------
# construction


def create(
    shape,
    init: str = "zeros",
    *,
    value: float = 0.0,
    fan_in: Optional[int] = None,
    seed=0,
    values=None,
    dtype=DEFAULT_DTYPE,
    requires_grad: bool = False,
) -> Tensor:
    """Build a tensor of ``shape`` filled according to ``init``.

    ``init`` is one of ``zeros``, ``ones``, ``constant`` (uses ``value``),
    ``he_normal`` (normal with std ``sqrt(2 / fan_in)``, drawn from ``seed``,
    which may be an int or a tuple of ints) or ``from_values`` (uses ``values``).
    """
    shape = tuple(int(d) for d in shape)
    if not shape or any(d < 1 for d in shape):
        raise ShapeError(f"all dimensions must be >= 1, got {list(shape)}")

    if init == "zeros":
        data = np.zeros(shape, dtype=dtype)
    elif init == "ones":
        data = np.ones(shape, dtype=dtype)
    elif init == "constant":
        data = np.full(shape, value, dtype=dtype)
    elif init == "he_normal":
        if fan_in is None or fan_in < 1:
            raise ContractError(f"he_normal needs fan_in >= 1, got {fan_in}")
        keys = seed if isinstance(seed, (tuple, list)) else (seed,)
        rng = generator(*keys)
        data = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape).astype(dtype)
    elif init == "from_values":
        flat = np.asarray(values, dtype=dtype).reshape(-1)
        if flat.size != int(np.prod(shape)):
            raise SizeError(f"{flat.size} values cannot fill shape {list(shape)}")
        data = flat.reshape(shape)
    else:
        raise ValueError(f"unknown init {init!r}")
    return Tensor(data, requires_grad=requires_grad)


def as_tensor(x, dtype=None) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, dtype=dtype)


# ---------------------------------------------------------------------------
# elementwise and linear algebra


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {list(a.shape)} and {list(b.shape)} differ")


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return make_result(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    return make_result(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    da, db = a.data, b.data
    return make_result(da * db, (a, b), lambda g: (g * db, g * da))


def scale(a: Tensor, c: float) -> Tensor:
    c = a.dtype.type(c)
    return make_result(a.data * c, (a,), lambda g: (g * c,))


def relu(a: Tensor) -> Tensor:
    # subgradient at 0 is 0
    mask = a.data > 0
    return make_result(np.where(mask, a.data, 0).astype(a.dtype), (a,), lambda g: (g * mask,))


def elementwise(op: str, a: Tensor, b: Optional[Tensor] = None, c: Optional[float] = None) -> Tensor:
    """Dispatch by name: ``add``, ``sub``, ``mul``, ``scale`` (needs ``c``) or ``relu_fwd``."""
    if op == "relu_fwd":
        return relu(a)
    if op == "scale":
        if c is None:
            raise ContractError("scale needs a constant c")
        return scale(a, c)
    binary = {"add": add, "sub": sub, "mul": mul}
    if op not in binary:
        raise ValueError(f"unknown elementwise op {op!r}")
    if b is None:
        raise ContractError(f"{op} needs two operands")
    return binary[op](a, b)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {list(a.shape)} by {list(b.shape)}")
    da, db = a.data, b.data
    return make_result(da @ db, (a, b), lambda g: (g @ db.T, da.T @ g))


def sum_all(a: Tensor) -> Tensor:
    shape = a.shape
    return make_result(
        np.asarray(a.data.sum(), dtype=a.dtype), (a,), lambda g: (np.full(shape, g, dtype=a.dtype),)
    )


def mean_all(a: Tensor) -> Tensor:
    n = a.size
    shape = a.shape
    return make_result(
        np.asarray(a.data.mean(), dtype=a.dtype),
        (a,),
        lambda g: (np.full(shape, g / n, dtype=a.dtype),),
    )


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(int(d) for d in shape)
    if int(np.prod(shape)) != a.size:
        raise SizeError(f"cannot reshape {list(a.shape)} into {list(shape)}")
    old = a.shape
    return make_result(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


# ---------------------------------------------------------------------------
# finite-difference oracle


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-5) -> float:
    """Max relative error between tape gradients and central differences.

    ``f`` must map ``x`` to a single-element tensor; ``x`` must be float64.
    The error per element is ``|a - n| / max(1e-12, |a| + |n|)``.
    """
    if x.dtype != np.float64:
        raise ContractError("grad_check runs in 64-bit mode; pass a float64 tensor")
    x.requires_grad = True
    x.grad = None
    with Tape() as tape:
        y = f(x)
    if y.size != 1:
        raise ContractError(f"grad_check needs a scalar-valued f, got shape {y.shape}")
    backward(y, tape)
    analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()

    numeric = np.empty_like(x.data)
    flat = x.data.reshape(-1)
    num_flat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = float(f(x).data.reshape(-1)[0])
        flat[i] = orig - eps
        fm = float(f(x).data.reshape(-1)[0])
        flat[i] = orig
        num_flat[i] = (fp - fm) / (2 * eps)

    denom = np.maximum(1e-12, np.abs(analytic) + np.abs(numeric))
    return float(np.max(np.abs(analytic - numeric) / denom))
