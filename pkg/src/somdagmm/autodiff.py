"""Reverse-mode gradient accumulation over a fixed set of array primitives.

This is not a general autodiff system: it supports exactly the primitives
needed by the model graph (elementwise arithmetic with broadcasting, 2-D
matmul, tanh/exp/log/sqrt, reductions, concatenation/slicing, row softmax)
plus fused custom operations registered through :meth:`Tape.custom` (the
mixture-energy kernel lives in :mod:`somdagmm.estimation`).

Usage::

    tape = Tape()
    w = tape.param(w0)
    loss = ((x @ w - y) ** nothing ...).sum()   # build with operators
    (gw,) = gradients(loss, [w])

A tape is single-use: one forward build, one backward pass. All values are
float64 ndarrays (0-d allowed for scalars).
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape``, undoing numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


class Var:
    """A node in the computation graph: a float64 value plus backward wiring."""

    __slots__ = ("value", "grad", "tape", "_vjp")

    # Keep numpy from elementwise-mapping `ndarray <op> Var`; opting out
    # makes numpy return NotImplemented so the reflected Var operator runs.
    __array_ufunc__ = None

    def __init__(self, value: np.ndarray, tape: "Tape", vjp: Callable | None):
        self.value = value
        self.grad: np.ndarray | None = None
        self.tape = tape
        self._vjp = vjp

    # -- graph helpers -------------------------------------------------

    def _accum(self, g: np.ndarray) -> None:
        self.grad = g if self.grad is None else self.grad + g

    def _lift(self, other) -> "Var":
        if isinstance(other, Var):
            if other.tape is not self.tape:
                raise ValueError("cannot combine Vars from different tapes")
            return other
        return self.tape.constant(other)

    def item(self) -> float:
        return float(self.value)

    @property
    def shape(self) -> tuple:
        return self.value.shape

    # -- arithmetic ----------------------------------------------------

    def __add__(self, other):
        a, b = self, self._lift(other)
        out = self.tape._node(a.value + b.value)

        def vjp(g):
            a._accum(_unbroadcast(g, a.value.shape))
            b._accum(_unbroadcast(g, b.value.shape))

        out._vjp = vjp
        return out

    __radd__ = __add__

    def __neg__(self):
        a = self
        out = self.tape._node(-a.value)
        out._vjp = lambda g: a._accum(-g)
        return out

    def __sub__(self, other):
        a, b = self, self._lift(other)
        out = self.tape._node(a.value - b.value)

        def vjp(g):
            a._accum(_unbroadcast(g, a.value.shape))
            b._accum(_unbroadcast(-g, b.value.shape))

        out._vjp = vjp
        return out

    def __rsub__(self, other):
        return self._lift(other).__sub__(self)

    def __mul__(self, other):
        a, b = self, self._lift(other)
        out = self.tape._node(a.value * b.value)

        def vjp(g):
            a._accum(_unbroadcast(g * b.value, a.value.shape))
            b._accum(_unbroadcast(g * a.value, b.value.shape))

        out._vjp = vjp
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        a, b = self, self._lift(other)
        val = a.value / b.value
        out = self.tape._node(val)

        def vjp(g):
            a._accum(_unbroadcast(g / b.value, a.value.shape))
            b._accum(_unbroadcast(-g * val / b.value, b.value.shape))

        out._vjp = vjp
        return out

    def __rtruediv__(self, other):
        return self._lift(other).__truediv__(self)

    def __matmul__(self, other):
        a, b = self, self._lift(other)
        if a.value.ndim != 2 or b.value.ndim != 2:
            raise ValueError("matmul is defined for 2-D operands only")
        if a.value.shape[1] != b.value.shape[0]:
            raise ValueError(
                f"matmul shape mismatch: {a.value.shape} @ {b.value.shape}"
            )
        out = self.tape._node(a.value @ b.value)

        def vjp(g):
            a._accum(g @ b.value.T)
            b._accum(a.value.T @ g)

        out._vjp = vjp
        return out

    # -- elementwise functions ----------------------------------------

    def tanh(self):
        a = self
        t = np.tanh(a.value)
        out = self.tape._node(t)
        out._vjp = lambda g: a._accum(g * (1.0 - t * t))
        return out

    def exp(self):
        a = self
        e = np.exp(a.value)
        out = self.tape._node(e)
        out._vjp = lambda g: a._accum(g * e)
        return out

    def log(self):
        a = self
        out = self.tape._node(np.log(a.value))
        out._vjp = lambda g: a._accum(g / a.value)
        return out

    def sqrt(self):
        a = self
        s = np.sqrt(a.value)
        out = self.tape._node(s)
        out._vjp = lambda g: a._accum(g / (2.0 * s))
        return out

    def clip_min(self, floor: float):
        """max(self, floor); gradient passes through where value > floor."""
        a = self
        mask = a.value > floor
        out = self.tape._node(np.where(mask, a.value, floor))
        out._vjp = lambda g: a._accum(g * mask)
        return out

    # -- shape ops -----------------------------------------------------

    @property
    def T(self):
        a = self
        if a.value.ndim != 2:
            raise ValueError("T is defined for 2-D values only")
        out = self.tape._node(a.value.T.copy())
        out._vjp = lambda g: a._accum(g.T)
        return out

    def reshape(self, *shape):
        a = self
        orig = a.value.shape
        out = self.tape._node(a.value.reshape(*shape))
        out._vjp = lambda g: a._accum(g.reshape(orig))
        return out

    def sum(self, axis: int | None = None):
        a = self
        out = self.tape._node(np.asarray(a.value.sum(axis=axis)))

        def vjp(g):
            if axis is None:
                a._accum(np.broadcast_to(g, a.value.shape))
            else:
                a._accum(np.broadcast_to(np.expand_dims(g, axis), a.value.shape))

        out._vjp = vjp
        return out

    def mean(self, axis: int | None = None):
        n = self.value.size if axis is None else self.value.shape[axis]
        return self.sum(axis=axis) * (1.0 / n)

    def diagonal(self):
        a = self
        if a.value.ndim != 2 or a.value.shape[0] != a.value.shape[1]:
            raise ValueError("diagonal expects a square 2-D value")
        out = self.tape._node(np.diagonal(a.value).copy())

        def vjp(g):
            full = np.zeros_like(a.value)
            np.fill_diagonal(full, g)
            a._accum(full)

        out._vjp = vjp
        return out

    def softmax_rows(self):
        """Row-wise stable softmax of a 2-D value."""
        a = self
        e = np.exp(a.value - a.value.max(axis=1, keepdims=True))
        y = e / e.sum(axis=1, keepdims=True)
        out = self.tape._node(y)

        def vjp(g):
            a._accum(y * (g - (g * y).sum(axis=1, keepdims=True)))

        out._vjp = vjp
        return out


def concat_cols(parts: Sequence[Var]) -> Var:
    """Concatenate 2-D Vars along axis 1."""
    return _concat(parts, axis=1)


def concat_rows(parts: Sequence[Var]) -> Var:
    """Concatenate 2-D Vars along axis 0."""
    return _concat(parts, axis=0)


def _concat(parts: Sequence[Var], axis: int) -> Var:
    parts = list(parts)
    tape = parts[0].tape
    widths = [p.value.shape[axis] for p in parts]
    out = tape._node(np.concatenate([p.value for p in parts], axis=axis))

    def vjp(g):
        start = 0
        for p, w in zip(parts, widths):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(start, start + w)
            p._accum(g[tuple(sl)])
            start += w

    out._vjp = vjp
    return out


def stack0(parts: Sequence[Var]) -> Var:
    """Stack equal-shape Vars along a new leading axis."""
    parts = list(parts)
    tape = parts[0].tape
    out = tape._node(np.stack([p.value for p in parts], axis=0))

    def vjp(g):
        for k, p in enumerate(parts):
            p._accum(g[k])

    out._vjp = vjp
    return out


def slice_cols(a: Var, j0: int, j1: int) -> Var:
    """Columns [j0, j1) of a 2-D Var."""
    out = a.tape._node(a.value[:, j0:j1].copy())

    def vjp(g):
        full = np.zeros_like(a.value)
        full[:, j0:j1] = g
        a._accum(full)

    out._vjp = vjp
    return out


class Tape:
    """Records the forward graph; creation order doubles as topological order."""

    def __init__(self):
        self._nodes: list[Var] = []
        self._consumed = False

    def _node(self, value: np.ndarray) -> Var:
        if self._consumed:
            raise RuntimeError("tape already backpropagated; start a new forward pass")
        v = Var(np.asarray(value, dtype=np.float64), self, None)
        self._nodes.append(v)
        return v

    def param(self, value: np.ndarray) -> Var:
        """A leaf holding trainable values; read its adjoint after backward."""
        return self._node(value)

    def constant(self, value) -> Var:
        """A leaf treated as data: participates in the graph, adjoints unused."""
        return self._node(value)

    def custom(self, value: np.ndarray, parents: Sequence[Var], vjp: Callable) -> Var:
        """Register a fused primitive.

        ``vjp(g)`` must return one gradient array per parent (or None to
        skip a parent), evaluated at the recorded forward state.
        """
        parents = list(parents)
        out = self._node(value)

        def run(g):
            contribs = vjp(g)
            for p, c in zip(parents, contribs):
                if c is not None:
                    p._accum(c)

        out._vjp = run
        return out


def gradients(loss: Var, params: Sequence[Var]) -> list[np.ndarray]:
    """Adjoints of a scalar loss with respect to each parameter slot.

    Runs the single allowed backward pass of the loss's tape. Parameters
    that do not influence the loss get zero adjoints of matching shape.
    """
    tape = loss.tape
    if tape._consumed:
        raise RuntimeError("tape already backpropagated; start a new forward pass")
    if loss.value.ndim != 0:
        raise ValueError("objective must evaluate to a scalar")
    if not np.isfinite(loss.value):
        raise ValueError("objective is not finite")
    tape._consumed = True
    loss.grad = np.asarray(1.0)
    for node in reversed(tape._nodes):
        if node.grad is not None and node._vjp is not None:
            node._vjp(node.grad)
    return [
        p.grad if p.grad is not None else np.zeros_like(p.value) for p in params
    ]
