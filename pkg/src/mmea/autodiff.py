"""Reverse-mode automatic differentiation over dense float64 arrays.

A :class:`Tape` records each differentiable operation as it executes
(define-by-run).  ``Tape.backward`` walks the record exactly once in
reverse, accumulates gradients into every participating leaf, and clears
the record for the next step.  Outside a tape, every op is a plain numpy
computation with no side effects, so frozen-parameter inference is safe
to run concurrently.

Shapes are explicit everywhere: the only implicit broadcast is
scalar-times-tensor (``scale``).  Everything is float64; the gradient
checks in the test suite rely on it.
"""

from __future__ import annotations

import itertools
from functools import reduce
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, DegenerateInputError, ShapeError

_node_ids = itertools.count()

# Single recording context per process; deliberately not thread-safe.
_ACTIVE_TAPE: "Tape | None" = None


class Tensor:
    """Dense float64 array with an optional same-shape gradient buffer."""

    __slots__ = ("data", "grad", "node_id", "requires_grad", "is_leaf")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.node_id = next(_node_ids)
        self.requires_grad = requires_grad
        self.is_leaf = True

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.data.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    # Operator sugar; each delegates to the module-level op.
    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __neg__(self) -> "Tensor":
        return neg(self)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return hadamard(self, other)
        return scale(self, other)

    def __rmul__(self, other):
        return scale(self, other)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)


class _Op:
    """One recorded operation: inputs, output, and its local gradient rule."""

    __slots__ = ("inputs", "output", "grad_fn")

    def __init__(self, inputs, output, grad_fn):
        self.inputs = inputs
        self.output = output
        self.grad_fn = grad_fn


class Tape:
    """Ordered operation record for one forward/backward cycle.

    Entries are appended in execution order, so every op's inputs precede
    it in the record and a single reverse sweep is a valid topological
    backward pass.
    """

    def __init__(self):
        self.ops: list[_Op] = []

    def __enter__(self) -> "Tape":
        global _ACTIVE_TAPE
        if _ACTIVE_TAPE is not None:
            raise ContractError("a recording tape is already active")
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = None

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(leaf) into every differentiable leaf.

        ``loss`` must be a scalar produced by ops recorded on this tape.
        The record is cleared afterwards.  Gradient buffers are never
        mutated in place: accumulation always allocates, so pass-through
        rules may alias their upstream arrays safely.
        """
        if loss.data.size != 1:
            raise ContractError(f"backward() needs a scalar loss, got shape {loss.data.shape}")
        if not self.ops or all(op.output is not loss for op in self.ops):
            raise ContractError("loss was not produced by operations recorded on this tape")
        pending: dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.data)}
        for op in reversed(self.ops):
            out_grad = pending.pop(op.output.node_id, None)
            if out_grad is None:
                continue
            for tensor, grad in zip(op.inputs, op.grad_fn(out_grad)):
                if grad is None or not tensor.requires_grad:
                    continue
                if tensor.is_leaf:
                    tensor.grad = grad if tensor.grad is None else tensor.grad + grad
                else:
                    held = pending.get(tensor.node_id)
                    pending[tensor.node_id] = grad if held is None else held + grad
        loss.grad = np.ones_like(loss.data)
        self.ops.clear()


def _record(inputs: tuple[Tensor, ...], out_data: np.ndarray, grad_fn: Callable) -> Tensor:
    out = Tensor(out_data)
    if _ACTIVE_TAPE is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.is_leaf = False
        _ACTIVE_TAPE.ops.append(_Op(inputs, out, grad_fn))
    return out


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _same_shape(name: str, a: Tensor, b: Tensor) -> None:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"{name}: shapes {a.data.shape} and {b.data.shape} differ")


def _require_2d(name: str, t: Tensor) -> None:
    if t.data.ndim != 2:
        raise ShapeError(f"{name}: expected a matrix, got shape {t.data.shape}")


# ---------------------------------------------------------------------------
# Elementwise and linear ops


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    return _record((a, b), a.data + b.data, lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)
    return _record((a, b), a.data - b.data, lambda g: (g, -g))


def neg(a: Tensor) -> Tensor:
    return _record((a,), -a.data, lambda g: (-g,))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _record((a,), a.data * c, lambda g: (g * c,))


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("hadamard", a, b)
    return _record((a, b), a.data * b.data, lambda g: (g * b.data, g * a.data))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    _require_2d("matmul", a)
    _require_2d("matmul", b)
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: inner extents of {a.data.shape} and {b.data.shape} differ")
    return _record(
        (a, b),
        a.data @ b.data,
        lambda g: (g @ b.data.T, a.data.T @ g),
    )


def transpose(a: Tensor) -> Tensor:
    _require_2d("transpose", a)
    return _record((a,), a.data.T.copy(), lambda g: (g.T,))


def add_row(mat: Tensor, vec: Tensor) -> Tensor:
    """Add a length-d vector to every row of an n-by-d matrix."""
    _require_2d("add_row", mat)
    if vec.data.ndim != 1 or vec.data.shape[0] != mat.data.shape[1]:
        raise ShapeError(f"add_row: matrix {mat.data.shape} and vector {vec.data.shape}")
    return _record((mat, vec), mat.data + vec.data, lambda g: (g, g.sum(axis=0)))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _record((a,), y, lambda g: ((1.0 - y * y) * g,))


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    return _record((a,), y, lambda g: (y * g,))


def log(a: Tensor) -> Tensor:
    return _record((a,), np.log(a.data), lambda g: (g / a.data,))


def tensor_sum(a: Tensor) -> Tensor:
    return _record((a,), np.asarray(a.data.sum()), lambda g: (np.full_like(a.data, float(g)),))


def tensor_mean(a: Tensor) -> Tensor:
    n = a.data.size
    return _record((a,), np.asarray(a.data.mean()), lambda g: (np.full_like(a.data, float(g) / n),))


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    if int(np.prod(shape, dtype=np.int64)) != a.data.size:
        raise ShapeError(f"reshape: {a.data.shape} has {a.data.size} elements, target {shape}")
    old = a.data.shape
    return _record((a,), a.data.reshape(shape), lambda g: (g.reshape(old),))


# ---------------------------------------------------------------------------
# Normalization and similarity


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis, with max-subtraction for stability.

    Accepts a vector (one distribution) or a matrix (one per row).
    """
    m = x.data.max(axis=-1, keepdims=True)
    e = np.exp(x.data - m)
    y = e / e.sum(axis=-1, keepdims=True)
    return _record(
        (x,),
        y,
        lambda g: (y * (g - (g * y).sum(axis=-1, keepdims=True)),),
    )


def row_logsumexp(mat: Tensor) -> Tensor:
    """Per-row log-sum-exp of an n-by-k matrix, returned as an n-by-1 column."""
    _require_2d("row_logsumexp", mat)
    m = mat.data.max(axis=1, keepdims=True)
    e = np.exp(mat.data - m)
    s = e.sum(axis=1, keepdims=True)
    return _record((mat,), m + np.log(s), lambda g: (g * (e / s),))


def l2_normalize(x: Tensor) -> Tensor:
    if x.data.ndim != 1:
        raise ShapeError(f"l2_normalize: expected a vector, got shape {x.data.shape}")
    n = float(np.linalg.norm(x.data))
    if n == 0.0:
        raise DegenerateInputError("l2_normalize: zero vector")
    y = x.data / n
    return _record((x,), y, lambda g: ((g - y * float(y @ g)) / n,))


def l2_normalize_rows(mat: Tensor) -> Tensor:
    _require_2d("l2_normalize_rows", mat)
    norms = np.linalg.norm(mat.data, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        row = int(np.argmin(norms))
        raise DegenerateInputError(f"l2_normalize_rows: row {row} has zero norm")
    y = mat.data / norms
    return _record(
        (mat,),
        y,
        lambda g: ((g - y * (y * g).sum(axis=1, keepdims=True)) / norms,),
    )


def dot(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 1 or b.data.ndim != 1:
        raise ShapeError(f"dot: expected vectors, got {a.data.shape} and {b.data.shape}")
    _same_shape("dot", a, b)
    return _record(
        (a, b),
        np.asarray(a.data @ b.data),
        lambda g: (float(g) * b.data, float(g) * a.data),
    )


def cosine_sim(a: Tensor, b: Tensor) -> Tensor:
    """Cosine similarity of two vectors, as a differentiable scalar."""
    return dot(l2_normalize(a), l2_normalize(b))


# ---------------------------------------------------------------------------
# Row selection, scatter, and segment ops (graph plumbing)


def _check_indices(name: str, idx: np.ndarray, upper: int) -> np.ndarray:
    idx = np.asarray(idx)
    if idx.ndim != 1 or not np.issubdtype(idx.dtype, np.integer):
        raise ContractError(f"{name}: indices must be a 1-D integer array")
    if idx.size and (idx.min() < 0 or idx.max() >= upper):
        raise ContractError(f"{name}: index out of range [0, {upper})")
    return idx


def gather_rows(mat: Tensor, idx: np.ndarray) -> Tensor:
    _require_2d("gather_rows", mat)
    idx = _check_indices("gather_rows", idx, mat.data.shape[0])

    def grad_fn(g):
        dm = np.zeros_like(mat.data)
        np.add.at(dm, idx, g)
        return (dm,)

    return _record((mat,), mat.data[idx], grad_fn)


def rowwise_dot(a: Tensor, b: Tensor) -> Tensor:
    """Per-row dot product of two n-by-d matrices, as an n-by-1 column."""
    _require_2d("rowwise_dot", a)
    _same_shape("rowwise_dot", a, b)
    out = (a.data * b.data).sum(axis=1, keepdims=True)
    return _record((a, b), out, lambda g: (g * b.data, g * a.data))


def scale_rows(mat: Tensor, col: Tensor) -> Tensor:
    """Multiply row i of an n-by-d matrix by scalar col[i, 0]."""
    _require_2d("scale_rows", mat)
    if col.data.shape != (mat.data.shape[0], 1):
        raise ShapeError(f"scale_rows: matrix {mat.data.shape} and column {col.data.shape}")
    return _record(
        (mat, col),
        mat.data * col.data,
        lambda g: (g * col.data, (g * mat.data).sum(axis=1, keepdims=True)),
    )


def segment_sum(mat: Tensor, segments: np.ndarray, num_segments: int) -> Tensor:
    """Sum rows of an E-by-d matrix into num_segments buckets."""
    _require_2d("segment_sum", mat)
    segments = _check_indices("segment_sum", segments, num_segments)
    if segments.shape[0] != mat.data.shape[0]:
        raise ShapeError(f"segment_sum: {mat.data.shape[0]} rows but {segments.shape[0]} segment ids")
    out = np.zeros((num_segments, mat.data.shape[1]))
    np.add.at(out, segments, mat.data)
    return _record((mat,), out, lambda g: (g[segments],))


def segment_softmax(logits: Tensor, segments: np.ndarray, num_segments: int) -> Tensor:
    """Softmax of an E-by-1 logit column within each segment.

    Entries sharing a segment id form one distribution; each distribution
    is max-shifted before exponentiation.  Empty segments are allowed.
    """
    if logits.data.ndim != 2 or logits.data.shape[1] != 1:
        raise ShapeError(f"segment_softmax: expected an E-by-1 column, got {logits.data.shape}")
    segments = _check_indices("segment_softmax", segments, num_segments)
    if segments.shape[0] != logits.data.shape[0]:
        raise ShapeError(
            f"segment_softmax: {logits.data.shape[0]} logits but {segments.shape[0]} segment ids"
        )
    m = np.full((num_segments, 1), -np.inf)
    np.maximum.at(m, segments, logits.data)
    e = np.exp(logits.data - m[segments])
    s = np.zeros((num_segments, 1))
    np.add.at(s, segments, e)
    y = e / s[segments]

    def grad_fn(g):
        weighted = np.zeros((num_segments, 1))
        np.add.at(weighted, segments, g * y)
        return (y * (g - weighted[segments]),)

    return _record((logits,), y, grad_fn)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ContractError("concat: empty input list")
    ndim = tensors[0].data.ndim
    for t in tensors[1:]:
        if t.data.ndim != ndim:
            raise ShapeError(f"concat: ranks differ ({tensors[0].data.shape} vs {t.data.shape})")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum(sizes)[:-1]

    def grad_fn(g):
        return tuple(np.split(g, offsets, axis=axis))

    return _record(tuple(tensors), out, grad_fn)


def slice_cols(mat: Tensor, start: int, stop: int) -> Tensor:
    _require_2d("slice_cols", mat)
    if not (0 <= start < stop <= mat.data.shape[1]):
        raise ShapeError(f"slice_cols: [{start}, {stop}) out of range for {mat.data.shape}")

    def grad_fn(g):
        dm = np.zeros_like(mat.data)
        dm[:, start:stop] = g
        return (dm,)

    return _record((mat,), mat.data[:, start:stop].copy(), grad_fn)


def take_diag(mat: Tensor) -> Tensor:
    """Diagonal of a square matrix, as an n-by-1 column."""
    _require_2d("take_diag", mat)
    n, m = mat.data.shape
    if n != m:
        raise ShapeError(f"take_diag: matrix {mat.data.shape} is not square")

    def grad_fn(g):
        dm = np.zeros_like(mat.data)
        np.fill_diagonal(dm, g[:, 0])
        return (dm,)

    return _record((mat,), np.diag(mat.data).reshape(n, 1).copy(), grad_fn)


def outer_product(vectors: Sequence[Tensor]) -> Tensor:
    """Outer product of M vectors: an order-M tensor.

    Test-oracle helper only; it carries no gradient rule and is never
    recorded.
    """
    arrays = [as_tensor(v).data for v in vectors]
    for a in arrays:
        if a.ndim != 1:
            raise ShapeError(f"outer_product: expected vectors, got shape {a.shape}")
    return Tensor(reduce(np.multiply.outer, arrays))
