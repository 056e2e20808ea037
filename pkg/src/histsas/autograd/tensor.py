"""Dense tensor with reverse-mode differentiation.

Every differentiable op produces a :class:`Tensor` that remembers its parent
tensors and a closure mapping the output gradient to one gradient per parent.
Calling :meth:`Tensor.backward` on a scalar builds the tape (a topological
ordering of the recorded ops reachable from the root) and walks it in reverse,
summing gradients into shared inputs.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

from ..errors import DimensionError, NumericalError, UsageError

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

_state = {
    "dtype": np.float64,
    "grad_enabled": True,
    "debug": False,
}


def get_default_dtype() -> type:
    return _state["dtype"]


def set_default_dtype(dtype) -> None:
    """Switch the dtype new tensors are created with (float64 or float32)."""
    dtype = np.dtype(dtype).type
    if dtype not in (np.float64, np.float32):
        raise ValueError(f"unsupported dtype {dtype!r}; use float64 or float32")
    _state["dtype"] = dtype


def set_debug(flag: bool) -> None:
    """When on, every forward op asserts its output is finite."""
    _state["debug"] = bool(flag)


def is_grad_enabled() -> bool:
    return _state["grad_enabled"]


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording inside the block."""
    prev = _state["grad_enabled"]
    _state["grad_enabled"] = False
    try:
        yield
    finally:
        _state["grad_enabled"] = prev


@contextlib.contextmanager
def default_dtype(dtype) -> Iterator[None]:
    prev = _state["dtype"]
    set_default_dtype(dtype)
    try:
        yield
    finally:
        _state["dtype"] = prev


class Tensor:
    """An n-d float array plus the bookkeeping needed for backprop.

    ``data`` is always a C-contiguous numpy array of the default dtype.
    ``grad`` stays ``None`` until a backward pass reaches the tensor.
    """

    __array_priority__ = 100  # make ndarray + Tensor dispatch to Tensor.__radd__

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        *,
        name: Optional[str] = None,
        dtype=None,
    ):
        self.data = np.ascontiguousarray(data, dtype=dtype or _state["dtype"])
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Optional[BackwardFn] = None
        self.op = "leaf"

    @classmethod
    def _from_op(
        cls,
        data: np.ndarray,
        parents: Sequence["Tensor"],
        backward: BackwardFn,
        op: str,
    ) -> "Tensor":
        out = cls.__new__(cls)
        out.data = np.ascontiguousarray(data)
        out.grad = None
        out.name = None
        out.op = op
        needs = _state["grad_enabled"] and any(p.requires_grad for p in parents)
        out.requires_grad = needs
        out._parents = tuple(parents) if needs else ()
        out._backward = backward if needs else None
        if _state["debug"] and not np.all(np.isfinite(out.data)):
            raise NumericalError(f"non-finite output from op '{op}'")
        return out

    # -- basic properties -------------------------------------------------
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
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _not_scalar(self.shape)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    def __len__(self) -> int:
        return self.shape[0]

    # -- operators delegate to ops ----------------------------------------
    def __add__(self, other):
        from . import ops

        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops

        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops

        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops

        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops

        return ops.negate(self)

    def sum(self) -> "Tensor":
        from . import ops

        return ops.sum(self)

    def mean(self) -> "Tensor":
        from . import ops

        return ops.mean(self)

    def reshape(self, *shape) -> "Tensor":
        from . import ops

        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    # -- differentiation --------------------------------------------------
    def backward(self, accumulate: bool = False) -> None:
        """Populate ``.grad`` on every requires-grad leaf reachable from here.

        A leaf that already holds a gradient raises :class:`UsageError` unless
        ``accumulate`` is set, in which case the new gradient is added to it.
        """
        if self.data.size != 1:
            raise UsageError(f"backward() needs a scalar root, got shape {self.shape}")
        if not self.requires_grad:
            raise UsageError("root does not require grad; nothing to differentiate")

        tape = build_tape(self)
        leaves = [t for t in tape if t.is_leaf and t.requires_grad]
        if not accumulate:
            stale = [t for t in leaves if t.grad is not None]
            if stale:
                raise UsageError(
                    f"{len(stale)} leaf tensor(s) already hold gradients; call "
                    "zero_grad() first or pass accumulate=True"
                )

        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(tape):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.is_leaf:
                if node.grad is None:
                    node.grad = np.array(g, copy=True)
                else:
                    node.grad = node.grad + g
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                if pg.shape != parent.shape:
                    raise DimensionError(
                        f"backward of '{node.op}' produced grad {pg.shape} "
                        f"for input {parent.shape}"
                    )
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg


def build_tape(root: Tensor) -> list[Tensor]:
    """Topologically ordered list of tensors reachable from ``root``.

    Inputs always precede the op results that consume them.
    """
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
        for parent in reversed(node._parents):
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def _not_scalar(shape) -> float:
    raise UsageError(f"item() needs a single-element tensor, got shape {shape}")


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)
