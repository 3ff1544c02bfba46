"""Define-by-run reverse-mode differentiation over numpy arrays.

Every primitive's backward rule is written with differentiable primitives, so a
backward pass executed with ``higher_order=True`` is itself recorded and can be
differentiated again (needed for the gradient penalty).
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

DTYPE = np.float64

_grad_enabled = True


class ShapeError(ValueError):
    """Operand extents are incompatible with the requested operation."""


class GeometryError(ValueError):
    """Convolution/window geometry yields no valid output positions."""


class TapeError(RuntimeError):
    """Backward requested on something that was never recorded."""


@contextlib.contextmanager
def no_grad():
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


@contextlib.contextmanager
def _grad_mode(enabled: bool):
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, enabled
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """Dense float64 array plus the tape node that produced it.

    ``_parents``/``_backward`` are only set when the tensor was produced while
    recording and at least one input requires a gradient.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "name", "__weakref__")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.name = name

    # -- introspection --------------------------------------------------
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
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self) -> int:
        return self.shape[0]

    # -- operators -------------------------------------------------------
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

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis, keepdims)

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


class Parameter(Tensor):
    """Leaf tensor that always requires a gradient."""

    __slots__ = ()

    def __init__(self, data, name: str | None = None):
        super().__init__(data, requires_grad=True, name=name)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    needs = _grad_enabled and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=needs)
    if needs:
        out._parents = tuple(parents)
        out._backward = backward
    return out


# -- broadcasting helpers ------------------------------------------------

def _reduced_axes(shape: tuple[int, ...], target: tuple[int, ...]) -> tuple[tuple[int, ...], int]:
    lead = len(shape) - len(target)
    axes = tuple(range(lead)) + tuple(
        i + lead for i, t in enumerate(target) if t == 1 and shape[i + lead] != 1
    )
    return axes, lead


def sum_to(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    """Sum ``x`` down to ``shape`` (the adjoint of broadcasting)."""
    shape = tuple(shape)
    if x.shape == shape:
        return x
    axes, lead = _reduced_axes(x.shape, shape)
    data = x.data.sum(axis=axes, keepdims=True)
    if lead:
        data = data.reshape(data.shape[lead:])
    return _make(data.reshape(shape), (x,), lambda g: (broadcast_to(g, x.shape),))


def broadcast_to(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    shape = tuple(shape)
    if x.shape == shape:
        return x
    data = np.broadcast_to(x.data, shape).copy()
    return _make(data, (x,), lambda g: (sum_to(g, x.shape),))


# -- elementwise ---------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data + b.data, (a, b), lambda g: (sum_to(g, a.shape), sum_to(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data - b.data, (a, b), lambda g: (sum_to(g, a.shape), sum_to(neg(g), b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        ga = sum_to(mul(g, b), a.shape) if a.requires_grad else None
        gb = sum_to(mul(g, a), b.shape) if b.requires_grad else None
        return ga, gb

    return _make(a.data * b.data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        ga = sum_to(div(g, b), a.shape) if a.requires_grad else None
        gb = sum_to(neg(div(mul(g, a), mul(b, b))), b.shape) if b.requires_grad else None
        return ga, gb

    return _make(a.data / b.data, (a, b), backward)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (neg(g),))


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    p = float(exponent)

    def backward(g):
        if p == 0.0:
            return (mul(g, 0.0),)
        return (mul(g, mul(power(a, p - 1.0), p)),)

    return _make(np.power(a.data, p), (a,), backward)


def sqrt(a) -> Tensor:
    return power(a, 0.5)


def exp(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.exp(a.data), (a,), lambda g: (mul(g, exp(a)),))


def log(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.log(a.data), (a,), lambda g: (div(g, a),))


def tanh(a) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        t = tanh(a)
        return (mul(g, sub(1.0, mul(t, t))),)

    return _make(np.tanh(a.data), (a,), backward)


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = (a.data > 0).astype(DTYPE)
    return _make(a.data * mask, (a,), lambda g: (mul(g, Tensor(mask)),))


def leaky_relu(a, slope: float = 0.2) -> Tensor:
    a = as_tensor(a)
    scale = np.where(a.data > 0, 1.0, slope)
    return _make(a.data * scale, (a,), lambda g: (mul(g, Tensor(scale)),))


# -- reductions and shape ------------------------------------------------

def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    data = a.data.sum(axis=axes, keepdims=keepdims)
    kept_shape = tuple(1 if i in axes else n for i, n in enumerate(a.shape))

    def backward(g):
        return (broadcast_to(reshape(g, kept_shape), a.shape),)

    return _make(data, (a,), backward)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    return mul(sum_(a, axes, keepdims), 1.0 / count)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    data = a.data.reshape(shape)
    return _make(data, (a,), lambda g: (reshape(g, a.shape),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _make(a.data.transpose(axes), (a,), lambda g: (transpose(g, inverse),))


def swap_last(a) -> Tensor:
    axes = list(range(a.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(a, axes)


def getitem(a, index) -> Tensor:
    a = as_tensor(a)
    return _make(a.data[index], (a,), lambda g: (scatter_index(g, index, a.shape),))


def scatter_index(g, index, shape) -> Tensor:
    """Adjoint of ``getitem``: place ``g`` at ``index`` in zeros of ``shape``."""
    g = as_tensor(g)
    out = np.zeros(shape, dtype=DTYPE)
    np.add.at(out, index, g.data)
    return _make(out, (g,), lambda h: (getitem(h, index),))


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    axis = axis % tensors[0].ndim
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(t.shape[i] != ref[i] for i in range(len(ref)) if i != axis):
            raise ShapeError(f"cannot concatenate shapes {ref} and {t.shape} along axis {axis}")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g):
        grads = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(int(lo), int(hi))
            grads.append(getitem(g, tuple(idx)))
        return tuple(grads)

    return _make(data, tensors, backward)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs operands of rank >= 2, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} @ {b.shape}")

    def backward(g):
        ga = sum_to(matmul(g, swap_last(b)), a.shape) if a.requires_grad else None
        gb = sum_to(matmul(swap_last(a), g), b.shape) if b.requires_grad else None
        return ga, gb

    return _make(np.matmul(a.data, b.data), (a, b), backward)


def take_rows(table, labels) -> Tensor:
    """Row lookup ``table[labels]``; the gradient scatters into those rows only."""
    table = as_tensor(table)
    labels = np.asarray(labels, dtype=np.int64)
    n = table.shape[0]
    if labels.size and (labels.min() < 0 or labels.max() >= n):
        raise IndexError(f"label out of range [0, {n}): {labels.tolist()}")
    return _make(table.data[labels], (table,), lambda g: (scatter_rows(g, labels, n),))


def scatter_rows(g, labels: np.ndarray, n: int) -> Tensor:
    g = as_tensor(g)
    out = np.zeros((n,) + g.shape[1:], dtype=DTYPE)
    np.add.at(out, labels, g.data)
    return _make(out, (g,), lambda h: (take_rows(h, labels),))


# -- sliding windows (basis of both convolutions) ------------------------

def window_count(length: int, kernel: int, stride: int, padding: int) -> int:
    return (length + 2 * padding - kernel) // stride + 1


def unfold1d(x, kernel: int, stride: int, padding: int) -> Tensor:
    """[B, C, L] -> [B, C*K, Lout]; column ``c*K + k`` holds tap ``k`` of channel ``c``."""
    x = as_tensor(x)
    b, c, length = x.shape
    lout = window_count(length, kernel, stride, padding)
    if lout < 1:
        raise GeometryError(f"no output positions: L={length}, K={kernel}, stride={stride}, padding={padding}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding))) if padding else x.data
    cols = np.empty((b, c, kernel, lout), dtype=DTYPE)
    span = stride * (lout - 1) + 1
    for k in range(kernel):
        cols[:, :, k, :] = xp[:, :, k:k + span:stride]
    cols = cols.reshape(b, c * kernel, lout)
    return _make(cols, (x,), lambda g: (fold1d(g, length, kernel, stride, padding),))


def fold1d(cols, length: int, kernel: int, stride: int, padding: int) -> Tensor:
    """Adjoint of ``unfold1d``: overlap-add columns back onto a length-``length`` signal."""
    cols = as_tensor(cols)
    b, ck, lout = cols.shape
    if ck % kernel:
        raise ShapeError(f"column count {ck} not divisible by kernel {kernel}")
    if window_count(length, kernel, stride, padding) != lout:
        raise GeometryError(
            f"fold geometry mismatch: L={length}, K={kernel}, stride={stride}, padding={padding} "
            f"gives {window_count(length, kernel, stride, padding)} windows, columns have {lout}"
        )
    c = ck // kernel
    blocks = cols.data.reshape(b, c, kernel, lout)
    out = np.zeros((b, c, length + 2 * padding), dtype=DTYPE)
    span = stride * (lout - 1) + 1
    for k in range(kernel):
        out[:, :, k:k + span:stride] += blocks[:, :, k, :]
    out = out[:, :, padding:padding + length]
    return _make(np.ascontiguousarray(out), (cols,), lambda g: (unfold1d(g, kernel, stride, padding),))


# -- the tape --------------------------------------------------------------

class Tape:
    """Recorded ops reachable from ``outputs``, parents before children."""

    def __init__(self, outputs: Iterable[Tensor]):
        order: list[Tensor] = []
        seen: set[int] = set()
        for root in outputs:
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
        self.nodes = order

    def __len__(self) -> int:
        return len(self.nodes)

    def backward(self, seeds: dict[int, Tensor], higher_order: bool = False) -> dict[int, Tensor]:
        """Propagate seed gradients to every node; returns id(node) -> gradient."""
        grads: dict[int, Tensor] = dict(seeds)
        with _grad_mode(higher_order):
            for node in reversed(self.nodes):
                g = grads.get(id(node))
                if g is None or node._backward is None:
                    continue
                parent_grads = node._backward(g)
                for parent, pg in zip(node._parents, parent_grads):
                    if pg is None or not parent.requires_grad:
                        continue
                    key = id(parent)
                    grads[key] = pg if key not in grads else add(grads[key], pg)
        return grads


def grad(output: Tensor, inputs: Sequence[Tensor], grad_output=None, higher_order: bool = False) -> list[Tensor]:
    """Gradients of ``output`` w.r.t. ``inputs`` (zeros where unreachable).

    With ``higher_order=True`` the returned tensors are themselves on the tape.
    """
    if not output.requires_grad:
        raise TapeError("output was not recorded on a tape (no input requires grad)")
    if grad_output is None:
        if output.size != 1:
            raise ShapeError(f"grad_output required for non-scalar output of shape {output.shape}")
        grad_output = Tensor(np.ones(output.shape))
    tape = Tape([output])
    grads = tape.backward({id(output): as_tensor(grad_output)}, higher_order=higher_order)
    out = []
    for x in inputs:
        g = grads.get(id(x))
        out.append(g if g is not None else Tensor(np.zeros(x.shape)))
    return out


def backward(loss: Tensor, higher_order: bool = False) -> dict[Tensor, np.ndarray]:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every requires-grad leaf.

    Returns the leaf -> gradient map of this call.
    """
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise TapeError("loss was not recorded on a tape (no input requires grad)")
    tape = Tape([loss])
    grads = tape.backward({id(loss): Tensor(np.ones(loss.shape))}, higher_order=higher_order)
    result: dict[Tensor, np.ndarray] = {}
    for node in tape.nodes:
        if node._backward is None and id(node) in grads:
            g = grads[id(node)].data
            node.grad = g.copy() if node.grad is None else node.grad + g
            result[node] = g
    return result
