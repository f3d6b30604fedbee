"""Dense float64 tensors with reverse-mode automatic differentiation.

Define-by-run: every operation records a backward closure on its output, and
``Tensor.backward`` replays the closures in reverse topological order. Arrays
are always float64 and C-contiguous. Broadcasting is deliberately narrow: two
operands must have identical shapes, or one shape must be a trailing suffix
of the other (so a bias of shape (d,) can be added to an (n, d) activation).
Anything else raises ShapeError rather than silently expanding.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from . import kernels

Array = np.ndarray

_GRAD_ENABLED = [True]


class ShapeError(ValueError):
    """Raised when an operation receives arrays of incompatible shape."""

    def __init__(self, op: str, detail: str):
        super().__init__(f"{op}: {detail}")
        self.op = op


@contextlib.contextmanager
def no_grad():
    """Disables graph construction inside the context (used for decoding)."""
    prev = _GRAD_ENABLED[0]
    _GRAD_ENABLED[0] = False
    try:
        yield
    finally:
        _GRAD_ENABLED[0] = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_prev", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        self.data = np.ascontiguousarray(arr)
        self.grad: Array | None = None
        self.requires_grad = bool(requires_grad)
        self._prev: tuple[Tensor, ...] = ()
        self._backward: Callable[[Array], None] | None = None
        self._op = ""

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Backpropagates from a scalar output through the recorded graph."""
        if self.data.size != 1:
            raise ShapeError("backward", f"output must be scalar, got shape {self.shape}")
        order = _topological_order(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}, op={self._op!r})"

    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __sub__(self, other):
        return add(self, scale(_as_tensor(other), -1.0))


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for child in node._prev:
            if id(child) not in visited:
                stack.append((child, False))
    return order


def _accumulate(t: Tensor, g: Array) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64)
    else:
        t.grad += g


def _result(data: Array, op: str, parents: Sequence[Tensor], backward: Callable[[Array], None]) -> Tensor:
    grad_parents = tuple(p for p in parents if p.requires_grad)
    if _GRAD_ENABLED[0] and grad_parents:
        out = Tensor(data, requires_grad=True)
        out._prev = grad_parents
        out._backward = backward
        out._op = op
        return out
    return Tensor(data)


def _is_suffix(small: tuple[int, ...], big: tuple[int, ...]) -> bool:
    return len(small) <= len(big) and big[len(big) - len(small):] == small


def _reduce_to(g: Array, shape: tuple[int, ...]) -> Array:
    """Sums gradient g over the leading axes the forward pass broadcast over."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    return g.reshape(shape)


def _binary_shapes(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape == b.shape:
        return
    if _is_suffix(b.shape, a.shape) or _is_suffix(a.shape, b.shape):
        return
    raise ShapeError(op, f"incompatible shapes {a.shape} and {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes("add", a, b)
    data = a.data + b.data

    def backward(dy: Array) -> None:
        _accumulate(a, _reduce_to(dy, a.shape))
        _accumulate(b, _reduce_to(dy, b.shape))

    return _result(data, "add", (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes("mul", a, b)
    data = a.data * b.data

    def backward(dy: Array) -> None:
        _accumulate(a, _reduce_to(dy * b.data, a.shape))
        _accumulate(b, _reduce_to(dy * a.data, b.shape))

    return _result(data, "mul", (a, b), backward)


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    data = a.data * s

    def backward(dy: Array) -> None:
        _accumulate(a, dy * s)

    return _result(data, "scale", (a,), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError("matmul", f"expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", f"inner dimensions disagree: {a.shape} and {b.shape}")
    data = a.data @ b.data

    def backward(dy: Array) -> None:
        _accumulate(a, dy @ b.data.T)
        _accumulate(b, a.data.T @ dy)

    return _result(data, "matmul", (a, b), backward)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError("transpose", f"expects a 2-D operand, got {a.shape}")
    data = np.ascontiguousarray(a.data.T)

    def backward(dy: Array) -> None:
        _accumulate(a, dy.T)

    return _result(data, "transpose", (a,), backward)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    if int(np.prod(shape, dtype=np.int64)) != a.data.size:
        raise ShapeError("reshape", f"cannot view {a.shape} as {tuple(shape)}")
    data = a.data.reshape(shape)
    old = a.shape

    def backward(dy: Array) -> None:
        _accumulate(a, dy.reshape(old))

    return _result(data, "reshape", (a,), backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ShapeError("concat", "needs at least one input")
    base = tensors[0].data.ndim
    for t in tensors[1:]:
        if t.data.ndim != base:
            raise ShapeError("concat", f"rank mismatch: {tensors[0].shape} vs {t.shape}")
        for ax in range(base):
            if ax != (axis % base) and t.shape[ax] != tensors[0].shape[ax]:
                raise ShapeError("concat", f"off-axis shapes disagree: {tensors[0].shape} vs {t.shape}")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis % base] for t in tensors]

    def backward(dy: Array) -> None:
        offset = 0
        for t, size in zip(tensors, sizes):
            sl = [slice(None)] * dy.ndim
            sl[axis % base] = slice(offset, offset + size)
            _accumulate(t, dy[tuple(sl)])
            offset += size

    return _result(data, "concat", tuple(tensors), backward)


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    ax = axis % a.data.ndim
    if start < 0 or start + length > a.shape[ax]:
        raise ShapeError("narrow", f"slice [{start}, {start + length}) exceeds axis {ax} of {a.shape}")
    sl = [slice(None)] * a.data.ndim
    sl[ax] = slice(start, start + length)
    data = np.ascontiguousarray(a.data[tuple(sl)])

    def backward(dy: Array) -> None:
        full = np.zeros_like(a.data)
        full[tuple(sl)] = dy
        _accumulate(a, full)

    return _result(data, "narrow", (a,), backward)


def relu(a: Tensor) -> Tensor:
    data = np.maximum(a.data, 0.0)
    mask = a.data > 0.0

    def backward(dy: Array) -> None:
        _accumulate(a, dy * mask)

    return _result(data, "relu", (a,), backward)


def exp(a: Tensor) -> Tensor:
    data = np.exp(a.data)

    def backward(dy: Array) -> None:
        _accumulate(a, dy * data)

    return _result(data, "exp", (a,), backward)


def log(a: Tensor) -> Tensor:
    data = np.log(a.data)

    def backward(dy: Array) -> None:
        _accumulate(a, dy / a.data)

    return _result(data, "log", (a,), backward)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Softmax along ``axis``. Entries of -inf are treated as masked (weight 0)."""
    ax = axis % a.data.ndim
    moved = np.moveaxis(a.data, ax, -1)
    lead = moved.shape[:-1]
    flat = np.ascontiguousarray(moved.reshape(-1, moved.shape[-1]))
    y_flat = kernels.softmax_rows(flat)
    y = np.moveaxis(y_flat.reshape(moved.shape), -1, ax)

    def backward(dy: Array) -> None:
        dy_flat = np.ascontiguousarray(np.moveaxis(dy, ax, -1).reshape(-1, moved.shape[-1]))
        dx_flat = kernels.softmax_grad_rows(y_flat, dy_flat)
        dx = np.moveaxis(dx_flat.reshape(lead + (moved.shape[-1],)), -1, ax)
        _accumulate(a, dx)

    return _result(np.ascontiguousarray(y), "softmax", (a,), backward)


def layer_norm(a: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalizes the last axis to zero mean and unit variance (no affine part)."""
    mu = a.data.mean(axis=-1, keepdims=True)
    xc = a.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = xc * inv

    def backward(dy: Array) -> None:
        m1 = dy.mean(axis=-1, keepdims=True)
        m2 = (dy * y).mean(axis=-1, keepdims=True)
        _accumulate(a, inv * (dy - m1 - y * m2))

    return _result(y, "layer_norm", (a,), backward)


def _check_indices(op: str, ids: Array, limit: int) -> None:
    if ids.size == 0:
        return
    lo, hi = int(ids.min()), int(ids.max())
    if lo < 0 or hi >= limit:
        bad = hi if hi >= limit else lo
        raise IndexError(f"{op}: index {bad} out of range for {limit} rows")


def _normalize_ids(op: str, ids) -> Array:
    arr = np.asarray(ids)
    if arr.ndim != 1:
        raise ShapeError(op, f"indices must be 1-D, got shape {arr.shape}")
    if arr.size and not np.issubdtype(arr.dtype, np.integer):
        raise ShapeError(op, f"indices must be integers, got dtype {arr.dtype}")
    return np.ascontiguousarray(arr, dtype=np.int64)


def gather_rows(a: Tensor, ids) -> Tensor:
    """Selects rows of a 2-D tensor; backward scatter-adds into the source."""
    if a.data.ndim != 2:
        raise ShapeError("gather_rows", f"expects a 2-D operand, got {a.shape}")
    idx = _normalize_ids("gather_rows", ids)
    _check_indices("gather_rows", idx, a.shape[0])
    data = np.ascontiguousarray(a.data[idx])

    def backward(dy: Array) -> None:
        if not a.requires_grad:
            return
        g = np.zeros_like(a.data)
        kernels.scatter_add_rows(g, idx, np.ascontiguousarray(dy))
        _accumulate(a, g)

    return _result(data, "gather_rows", (a,), backward)


def embedding_lookup(table: Tensor, ids) -> Tensor:
    """Row lookup into an embedding table; alias of gather_rows with its checks."""
    return gather_rows(table, ids)


def segment_sum(a: Tensor, ids, num_segments: int) -> Tensor:
    """Sums rows of ``a`` into ``num_segments`` buckets given by ``ids``."""
    if a.data.ndim != 2:
        raise ShapeError("segment_sum", f"expects a 2-D operand, got {a.shape}")
    idx = _normalize_ids("segment_sum", ids)
    if idx.shape[0] != a.shape[0]:
        raise ShapeError("segment_sum", f"needs one id per row: {a.shape[0]} rows, {idx.shape[0]} ids")
    _check_indices("segment_sum", idx, num_segments)
    data = np.zeros((num_segments, a.shape[1]), dtype=np.float64)
    kernels.scatter_add_rows(data, idx, a.data)

    def backward(dy: Array) -> None:
        _accumulate(a, np.ascontiguousarray(dy[idx]))

    return _result(data, "segment_sum", (a,), backward)


def tensor_sum(a: Tensor, axis: int | None = None) -> Tensor:
    if axis is None:
        data = np.asarray(a.data.sum())

        def backward(dy: Array) -> None:
            _accumulate(a, np.broadcast_to(dy, a.shape).astype(np.float64))

        return _result(data, "sum", (a,), backward)
    ax = axis % a.data.ndim
    data = a.data.sum(axis=ax)

    def backward_axis(dy: Array) -> None:
        _accumulate(a, np.broadcast_to(np.expand_dims(dy, ax), a.shape).astype(np.float64))

    return _result(data, "sum", (a,), backward_axis)


def tensor_mean(a: Tensor, axis: int | None = None) -> Tensor:
    if axis is None:
        n = a.data.size
        return scale(tensor_sum(a), 1.0 / n)
    n = a.shape[axis % a.data.ndim]
    return scale(tensor_sum(a, axis), 1.0 / n)


def cross_entropy(logits: Tensor, target_ids, ignore_index: int | None = None) -> Tensor:
    """Mean negative log-likelihood of integer targets under row-wise softmax.

    ``logits`` is (positions, classes); ``target_ids`` one id per position.
    Positions whose target equals ``ignore_index`` are excluded from the mean.
    """
    if logits.data.ndim != 2:
        raise ShapeError("cross_entropy", f"logits must be 2-D, got {logits.shape}")
    ids = _normalize_ids("cross_entropy", target_ids)
    if ids.shape[0] != logits.shape[0]:
        raise ShapeError(
            "cross_entropy",
            f"needs one target per row: {logits.shape[0]} rows, {ids.shape[0]} targets",
        )
    keep = np.ones(ids.shape[0], dtype=bool) if ignore_index is None else ids != ignore_index
    kept = int(keep.sum())
    if kept == 0:
        raise ShapeError("cross_entropy", "every position is ignored; nothing to score")
    _check_indices("cross_entropy", ids[keep], logits.shape[1])

    x = logits.data
    m = x.max(axis=1, keepdims=True)
    e = np.exp(x - m)
    z = e.sum(axis=1, keepdims=True)
    lse = (m + np.log(z)).reshape(-1)
    rows = np.arange(x.shape[0])
    nll = lse - x[rows, np.clip(ids, 0, logits.shape[1] - 1)]
    data = np.asarray((nll * keep).sum() / kept)
    probs = e / z

    def backward(dy: Array) -> None:
        d = probs.copy()
        d[rows[keep], ids[keep]] -= 1.0
        d[~keep] = 0.0
        _accumulate(logits, d * (float(np.asarray(dy).reshape(())) / kept))

    return _result(data, "cross_entropy", (logits,), backward)


def cosine_matrix(a: Tensor, b: Tensor) -> Tensor:
    """All-pairs cosine similarity between rows of ``a`` and rows of ``b``.

    Rows with zero norm have no defined direction and are rejected.
    """
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError("cosine_matrix", f"expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[1]:
        raise ShapeError("cosine_matrix", f"feature widths disagree: {a.shape} and {b.shape}")
    na = np.linalg.norm(a.data, axis=1)
    nb = np.linalg.norm(b.data, axis=1)
    for side, norms in (("left", na), ("right", nb)):
        bad = np.where(norms < 1e-12)[0]
        if bad.size:
            raise ValueError(f"cosine_matrix: row {int(bad[0])} of the {side} input has zero norm")
    ah = a.data / na[:, None]
    bh = b.data / nb[:, None]
    s = ah @ bh.T

    def backward(dy: Array) -> None:
        row_dot_a = (dy * s).sum(axis=1, keepdims=True)
        _accumulate(a, (dy @ bh - row_dot_a * ah) / na[:, None])
        col_dot_b = (dy * s).sum(axis=0)[:, None]
        _accumulate(b, (dy.T @ ah - col_dot_b * bh) / nb[:, None])

    return _result(s, "cosine_matrix", (a, b), backward)


def numeric_grad_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-5) -> float:
    """Compares reverse-mode and central-difference gradients of ``f`` at ``x``.

    Returns the worst relative error max |g_ad - g_fd| / (|g_ad| + |g_fd| + 1e-12)
    over all elements of ``x``. Non-finite values anywhere make the check fail
    with a return of +inf rather than raising.
    """
    if not (0.0 < eps <= 1e-2):
        raise ValueError(f"numeric_grad_check: eps must lie in (0, 1e-2], got {eps}")
    if not x.requires_grad:
        raise ValueError("numeric_grad_check: x must have requires_grad=True")
    x.grad = None
    out = f(x)
    if out.data.size != 1:
        raise ShapeError("numeric_grad_check", f"f must return a scalar, got shape {out.shape}")
    if not np.isfinite(out.data):
        return float("inf")
    out.backward()
    g_ad = x.grad.copy() if x.grad is not None else np.zeros_like(x.data)
    x.grad = None

    g_fd = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    fd_flat = g_fd.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = f(x).item()
            flat[i] = orig - eps
            lo = f(x).item()
            flat[i] = orig
            fd_flat[i] = (hi - lo) / (2.0 * eps)
    if not (np.isfinite(g_ad).all() and np.isfinite(g_fd).all()):
        return float("inf")
    rel = np.abs(g_ad - g_fd) / (np.abs(g_ad) + np.abs(g_fd) + 1e-12)
    return float(rel.max()) if rel.size else 0.0


def global_norm(arrays: Iterable[Array]) -> float:
    """Euclidean norm of all entries of all arrays taken together."""
    total = 0.0
    for g in arrays:
        total += float((g * g).sum())
    return float(np.sqrt(total))
