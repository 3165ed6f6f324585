"""Reverse-mode automatic differentiation over dense float64 arrays.

A Tensor wraps a numpy array plus an optional gradient. Operations build a
DAG; `backward()` walks it in reverse topological order and accumulates
gradients into every tensor that requires them. Gradients on leaves persist
until an optimizer clears them.
"""

from __future__ import annotations

import numpy as np

from ..errors import DimensionError, StateError

_grad_enabled = True


def is_grad_enabled() -> bool:
    return _grad_enabled


class no_grad:
    """Context manager that disables graph construction."""

    def __enter__(self):
        global _grad_enabled
        self._saved = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._saved
        return False


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn = None

    # -- basic introspection ------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- autograd machinery ---------------------------------------------------

    def _accumulate(self, grad: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += grad

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, grad: np.ndarray | None = None) -> None:
        if not self.requires_grad:
            raise StateError("backward() on a tensor that does not require grad")
        if grad is None:
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=np.float64)
            if grad.shape != self.data.shape:
                raise DimensionError(
                    f"seed gradient shape {grad.shape} != tensor shape {self.data.shape}"
                )

        # iterative topological sort (graphs can be deep)
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited and parent.requires_grad:
                    stack.append((parent, False))

        self._accumulate(grad)
        for node in reversed(topo):
            if node._backward_fn is not None:
                node._backward_fn(node.grad)
                if node is not self:
                    node.grad = None  # free intermediate gradients

    # -- elementwise arithmetic ----------------------------------------------

    def __add__(self, other):
        if isinstance(other, Tensor):
            out = _node(self.data + other.data, (self, other))
            if out._parents:

                def backward(gy, a=self, b=other):
                    if a.requires_grad:
                        a._accumulate(_unbroadcast(gy, a.shape))
                    if b.requires_grad:
                        b._accumulate(_unbroadcast(gy, b.shape))

                out._backward_fn = backward
            return out
        other = np.asarray(other, dtype=np.float64)
        out = _node(self.data + other, (self,))
        if out._parents:

            def backward(gy, a=self):
                a._accumulate(_unbroadcast(gy, a.shape))

            out._backward_fn = backward
        return out

    __radd__ = __add__

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        return self + (-other if isinstance(other, Tensor) else -np.asarray(other))

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, Tensor):
            out = _node(self.data * other.data, (self, other))
            if out._parents:

                def backward(gy, a=self, b=other):
                    if a.requires_grad:
                        a._accumulate(_unbroadcast(gy * b.data, a.shape))
                    if b.requires_grad:
                        b._accumulate(_unbroadcast(gy * a.data, b.shape))

                out._backward_fn = backward
            return out
        other = np.asarray(other, dtype=np.float64)
        out = _node(self.data * other, (self,))
        if out._parents:

            def backward(gy, a=self, c=other):
                a._accumulate(_unbroadcast(gy * c, a.shape))

            out._backward_fn = backward
        return out

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return self * (1.0 / float(scalar))

    # -- indexing and reductions -----------------------------------------------

    def __getitem__(self, idx):
        out = _node(np.array(self.data[idx]), (self,))
        if out._parents:

            def backward(gy, a=self, i=idx):
                if a.grad is None:
                    a.grad = np.zeros_like(a.data)
                a.grad[i] += gy

            out._backward_fn = backward
        return out

    def sum(self, axis=None):
        out = _node(np.asarray(self.data.sum(axis=axis)), (self,))
        if out._parents:

            def backward(gy, a=self, ax=axis):
                if ax is None:
                    a._accumulate(np.broadcast_to(gy, a.shape))
                else:
                    a._accumulate(np.expand_dims(gy, ax) * np.ones_like(a.data))

            out._backward_fn = backward
        return out

    def mean(self, axis=None):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis) * (1.0 / n)


def _node(data: np.ndarray, parents: tuple[Tensor, ...]) -> Tensor:
    """Create a graph node; tracked only when grad mode is on and a parent needs it."""
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
    return out
