"""Dense float64 tensors with a dynamic reverse-mode gradient graph.

Every differentiable op records its parents and a backward closure. The
backward closures are themselves written with :class:`Tensor` ops, so when
:func:`grad` is called with ``create_graph=True`` the gradient computation is
recorded too and can be differentiated again (this is how the gradient
penalty gets its parameter gradient).

The graph lives only as long as the tensors reference it; a fresh graph is
built on every forward pass.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class NumericError(FloatingPointError):
    """A NaN or Inf appeared where finite values are required."""


class ContractError(ValueError):
    """A caller violated an operation's precondition."""


_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


@contextlib.contextmanager
def enable_grad():
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = True
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


BackwardFn = Callable[["Tensor"], Sequence["Tensor | None"]]


class Tensor:
    __slots__ = ("data", "requires_grad", "_parents", "_backward", "op")

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: BackwardFn | None = None
        self.op = ""

    # -- construction helpers -------------------------------------------
    @staticmethod
    def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward: BackwardFn,
              op: str) -> Tensor:
        out = Tensor.__new__(Tensor)
        out.data = data
        out.op = op
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward = backward
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward = None
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    # -- arithmetic --------------------------------------------------------
    def __add__(self, other) -> Tensor:
        other = as_tensor(other)
        a, b = self, other

        def backward(g):
            return g.sum_to(a.shape), g.sum_to(b.shape)

        return Tensor._make(a.data + b.data, (a, b), backward, "add")

    __radd__ = __add__

    def __sub__(self, other) -> Tensor:
        other = as_tensor(other)
        a, b = self, other

        def backward(g):
            return g.sum_to(a.shape), (-g).sum_to(b.shape)

        return Tensor._make(a.data - b.data, (a, b), backward, "sub")

    def __rsub__(self, other) -> Tensor:
        return as_tensor(other) - self

    def __mul__(self, other) -> Tensor:
        other = as_tensor(other)
        a, b = self, other

        def backward(g):
            ga = (g * b).sum_to(a.shape) if a.requires_grad else None
            gb = (g * a).sum_to(b.shape) if b.requires_grad else None
            return ga, gb

        return Tensor._make(a.data * b.data, (a, b), backward, "mul")

    __rmul__ = __mul__

    def __truediv__(self, other) -> Tensor:
        if isinstance(other, Tensor):
            return self * other.reciprocal()
        return self * (1.0 / other)

    def __rtruediv__(self, other) -> Tensor:
        return as_tensor(other) * self.reciprocal()

    def __neg__(self) -> Tensor:
        a = self
        return Tensor._make(-a.data, (a,), lambda g: (-g,), "neg")

    def __pow__(self, exponent: float) -> Tensor:
        if isinstance(exponent, Tensor):
            raise ContractError("only scalar constant exponents are supported")
        a, p = self, float(exponent)
        if p == 2.0:
            return a * a

        def backward(g):
            return (g * (a ** (p - 1.0)) * p,)

        return Tensor._make(a.data ** p, (a,), backward, "pow")

    def reciprocal(self) -> Tensor:
        a = self

        def backward(g):
            return (-g / (a * a),)

        return Tensor._make(1.0 / a.data, (a,), backward, "reciprocal")

    def __matmul__(self, other) -> Tensor:
        other = as_tensor(other)
        a, b = self, other
        if a.ndim != 2 or b.ndim != 2:
            raise DimensionError(f"matmul expects 2-D operands, got {a.shape} @ {b.shape}")
        if a.shape[1] != b.shape[0]:
            raise DimensionError(f"matmul shape mismatch {a.shape} @ {b.shape}")

        def backward(g):
            ga = g @ b.T if a.requires_grad else None
            gb = a.T @ g if b.requires_grad else None
            return ga, gb

        return Tensor._make(a.data @ b.data, (a, b), backward, "matmul")

    # -- shape ops -----------------------------------------------------------
    @property
    def T(self) -> Tensor:
        a = self
        return Tensor._make(a.data.T, (a,), lambda g: (g.T,), "transpose")

    def reshape(self, *shape) -> Tensor:
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self
        old = a.shape
        return Tensor._make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),),
                            "reshape")

    def broadcast_to(self, shape: tuple[int, ...]) -> Tensor:
        shape = tuple(shape)
        if shape == self.shape:
            return self
        a = self
        return Tensor._make(np.broadcast_to(a.data, shape).copy(), (a,),
                            lambda g: (g.sum_to(a.shape),), "broadcast")

    def sum_to(self, shape: tuple[int, ...]) -> Tensor:
        """Sum broadcast axes away so the result has ``shape``."""
        shape = tuple(shape)
        if shape == self.shape:
            return self
        data = _sum_to(self.data, shape)
        a = self
        return Tensor._make(data, (a,), lambda g: (g.broadcast_to(a.shape),), "sum_to")

    # -- reductions ------------------------------------------------------------
    def sum(self, axis: int | None = None, keepdims: bool = False) -> Tensor:
        a = self
        data = np.asarray(a.data.sum(axis=axis, keepdims=keepdims))

        def backward(g):
            if axis is not None and not keepdims:
                g = g.reshape(np.expand_dims(g.data, axis).shape)
            elif axis is None and not keepdims:
                g = g.reshape((1,) * a.ndim)
            return (g.broadcast_to(a.shape),)

        return Tensor._make(data, (a,), backward, "sum")

    def mean(self, axis: int | None = None, keepdims: bool = False) -> Tensor:
        n = self.size if axis is None else self.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    # -- elementwise nonlinearities ---------------------------------------------
    def relu(self) -> Tensor:
        a = self
        mask = a.data > 0

        def backward(g):
            # the mask is a constant: second derivative is zero almost everywhere
            return (g * Tensor(mask.astype(np.float64)),)

        return Tensor._make(np.where(mask, a.data, 0.0), (a,), backward, "relu")

    def tanh(self) -> Tensor:
        a = self
        out_data = np.tanh(a.data)
        holder: list[Tensor] = []

        def backward(g):
            y = holder[0]
            return (g * (1.0 - y * y),)

        out = Tensor._make(out_data, (a,), backward, "tanh")
        holder.append(out)
        return out

    def log(self) -> Tensor:
        a = self
        return Tensor._make(np.log(a.data), (a,), lambda g: (g / a,), "log")

    def log1p(self) -> Tensor:
        a = self
        return Tensor._make(np.log1p(a.data), (a,), lambda g: (g / (a + 1.0),), "log1p")

    def exp(self) -> Tensor:
        a = self
        holder: list[Tensor] = []
        out = Tensor._make(np.exp(a.data), (a,), lambda g: (g * holder[0],), "exp")
        holder.append(out)
        return out

    def sqrt(self) -> Tensor:
        a = self
        holder: list[Tensor] = []
        out = Tensor._make(np.sqrt(a.data), (a,), lambda g: (g * 0.5 / holder[0],), "sqrt")
        holder.append(out)
        return out

    def square(self) -> Tensor:
        return self * self


def _sum_to(x: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if x.shape == shape:
        return x
    lead = x.ndim - len(shape)
    axes = tuple(range(lead)) + tuple(
        i + lead for i, s in enumerate(shape) if s == 1 and x.shape[i + lead] != 1)
    out = x.sum(axis=axes, keepdims=True)
    if lead:
        out = out.reshape(out.shape[lead:])
    return out.reshape(shape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _toposort(roots: Iterable[Tensor]) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    for root in roots:
        if id(root) in seen or not root.requires_grad:
            continue
        stack = [(root, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
    return order


def grad(outputs: Tensor | Sequence[Tensor], inputs: Sequence[Tensor],
         grad_outputs: Sequence[Tensor] | None = None,
         create_graph: bool = False) -> list[Tensor]:
    """Reverse-mode gradients of ``outputs`` with respect to ``inputs``.

    Inputs the outputs do not depend on receive zero gradients. With
    ``create_graph=True`` the returned tensors carry their own graph and can
    be differentiated again.
    """
    if isinstance(outputs, Tensor):
        outputs = [outputs]
    if grad_outputs is None:
        for out in outputs:
            if out.size != 1:
                raise ContractError(
                    f"gradient of non-scalar output {out.shape} needs grad_outputs")
        grad_outputs = [Tensor(np.ones_like(o.data)) for o in outputs]

    ctx = enable_grad() if create_graph else no_grad()
    with ctx:
        grads: dict[int, Tensor] = {}
        for out, g in zip(outputs, grad_outputs):
            if out.requires_grad:
                grads[id(out)] = grads[id(out)] + g if id(out) in grads else g
        for node in reversed(_toposort(outputs)):
            g = grads.get(id(node))
            if g is None or node._backward is None:
                continue
            parent_grads = node._backward(g)
            for p, pg in zip(node._parents, parent_grads):
                if pg is None or not p.requires_grad:
                    continue
                key = id(p)
                grads[key] = grads[key] + pg if key in grads else pg

        result = []
        for x in inputs:
            g = grads.get(id(x))
            result.append(Tensor(np.zeros_like(x.data)) if g is None else g)
    return result
