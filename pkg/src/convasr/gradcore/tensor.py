"""Dense tensor with a recorded computation history.

Every op produces a new :class:`Tensor` holding references to its parents and
a closure mapping the output adjoint to one adjoint per parent. Reverse mode
walks the graph in reverse topological order; the order is derived from a
depth-first traversal over parents in argument order, so two identical graphs
always accumulate gradients in the same sequence.
"""
from __future__ import annotations

import itertools
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

_ids = itertools.count()

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


def _as_array(data) -> np.ndarray:
    arr = np.asarray(data)
    if arr.dtype == np.float32:
        return arr
    return arr.astype(np.float64, copy=False)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward", "_id")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        name: str | None = None,
        _parents: tuple["Tensor", ...] = (),
        _backward: BackwardFn | None = None,
    ):
        self.data = _as_array(data)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents = _parents
        self._backward = _backward
        self._id = next(_ids)

    # -- introspection -----------------------------------------------------
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
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return len(self.data)

    # -- operator sugar (implementations live in ops) ----------------------
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
        return ops.neg(self)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __getitem__(self, index):
        from . import ops
        return ops.getitem(self, index)

    def sum(self, axis=None):
        from . import ops
        return ops.sum(self, axis)

    def mean(self, axis=None):
        from . import ops
        return ops.mean(self, axis)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def transpose(self, *axes):
        from . import ops
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return ops.transpose(self, axes or None)

    @property
    def T(self):
        return self.transpose()

    def backward(self, seed: np.ndarray | None = None) -> None:
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every leaf that requires grad."""
        adjoints = backprop(self, seed)
        for node in _topological(self):
            if node.is_leaf and node.requires_grad:
                g = adjoints.get(node._id)
                if g is None:
                    continue
                node.grad = g.copy() if node.grad is None else node.grad + g


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if node._id in seen:
            continue
        seen.add(node._id)
        stack.append((node, True))
        for parent in reversed(node._parents):
            if parent._id not in seen and parent.requires_grad:
                stack.append((parent, False))
    return order


def backprop(root: Tensor, seed: np.ndarray | None = None) -> dict[int, np.ndarray]:
    """Run reverse mode from ``root``; return adjoints keyed by tensor id."""
    if seed is None:
        if root.size != 1:
            raise ValueError("seed required for non-scalar output")
        seed = np.ones_like(root.data)
    adjoints: dict[int, np.ndarray] = {root._id: np.asarray(seed, dtype=root.data.dtype)}
    for node in reversed(_topological(root)):
        g = adjoints.get(node._id)
        if g is None or node._backward is None:
            continue
        parent_grads = node._backward(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            prev = adjoints.get(parent._id)
            adjoints[parent._id] = pg if prev is None else prev + pg
    return adjoints


def grad(output: Tensor, inputs: Iterable[Tensor], seed: np.ndarray | None = None) -> list[np.ndarray]:
    """Gradients of ``output`` w.r.t. ``inputs`` without touching ``.grad``.

    Inputs that do not influence ``output`` get a zero array.
    """
    adjoints = backprop(output, seed)
    out = []
    for t in inputs:
        g = adjoints.get(t._id)
        out.append(np.zeros_like(t.data) if g is None else g)
    return out
