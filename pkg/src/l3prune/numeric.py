"""Dense float64 tensors with reverse-mode differentiation.

Every tensor wraps a C-contiguous float64 ndarray and is validated to be
finite on creation. Operations executed while gradients are enabled are
recorded on a dynamic graph (one per forward pass); ``backward`` replays the
records in reverse insertion order and frees the graph. Elementwise binary
ops require identical shapes, except that the second operand may omit
leading batch dimensions (it is then broadcast across them); anything else
is a loud shape error.
"""

from __future__ import annotations

import contextlib
from collections import Counter

import numpy as np

from .errors import NumericError

__all__ = [
    "Tensor",
    "Graph",
    "ShapeError",
    "NonFiniteError",
    "GraphConsumedError",
    "ZeroNormError",
    "tensor",
    "zeros",
    "backward",
    "zero_grad",
    "no_grad",
    "matmul",
    "add",
    "sub",
    "mul",
    "scale",
    "exp",
    "log",
    "silu",
    "softmax",
    "logsumexp",
    "reduce_sum",
    "reduce_mean",
    "reshape",
    "transpose",
    "concat",
    "slice_rows",
    "diagonal",
    "normalize_rows",
    "rms_norm",
    "rope",
    "embedding_lookup",
    "weighted_sum_seq",
    "op_counts",
    "reset_op_counts",
]


class ShapeError(NumericError):
    """Operand shapes are incompatible for the requested operation."""


class NonFiniteError(NumericError):
    """A computation produced NaN or Inf."""


class GraphConsumedError(NumericError):
    """backward was called twice on the same recorded graph."""


class ZeroNormError(NumericError):
    """A vector with zero norm was passed where a direction is required."""


# Execution counts per op name, for cost assertions in tests. Ticks whether
# or not gradients are enabled.
_OP_COUNTS: Counter[str] = Counter()


def op_counts() -> Counter:
    return Counter(_OP_COUNTS)


def reset_op_counts() -> None:
    _OP_COUNTS.clear()


class Graph:
    """Ordered record of the operations of one forward pass."""

    __slots__ = ("nodes", "consumed")

    def __init__(self) -> None:
        self.nodes: list[_Node] = []
        self.consumed = False


class _Node:
    __slots__ = ("graph", "out", "parents", "backward_fn", "op")

    def __init__(self, graph, out, parents, backward_fn, op):
        self.graph = graph
        self.out = out
        self.parents = parents
        self.backward_fn = backward_fn
        self.op = op


_ACTIVE_GRAPH: Graph | None = None
_GRAD_ENABLED: bool = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference / profiling)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    """A finite float64 array, optionally tracked for gradients."""

    __slots__ = ("data", "requires_grad", "grad", "node")

    def __init__(self, data: np.ndarray, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64, order="C")
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError("tensor contains NaN or Inf")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.node: _Node | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() requires a scalar, got shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad)


def zeros(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape, dtype=np.float64), requires_grad)


def zero_grad(*tensors: Tensor) -> None:
    for t in tensors:
        t.grad = None


def _record(op: str, out_data: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    """Wrap an op result, validating finiteness and recording on the graph."""
    global _ACTIVE_GRAPH
    _OP_COUNTS[op] += 1
    if not np.all(np.isfinite(out_data)):
        raise NonFiniteError(f"op '{op}' produced NaN or Inf")
    out = Tensor.__new__(Tensor)
    out.data = np.asarray(out_data, dtype=np.float64, order="C")
    out.grad = None
    out.node = None
    out.requires_grad = False
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        if _ACTIVE_GRAPH is None or _ACTIVE_GRAPH.consumed:
            _ACTIVE_GRAPH = Graph()
        node = _Node(_ACTIVE_GRAPH, out, parents, backward_fn, op)
        _ACTIVE_GRAPH.nodes.append(node)
        out.node = node
    return out


def backward(loss: Tensor) -> None:
    """Populate .grad on every requires_grad tensor reachable from ``loss``.

    Traverses the recorded graph in reverse insertion order exactly once,
    then frees it; a second call on the same graph is an error.
    """
    global _ACTIVE_GRAPH
    if loss.data.shape != ():
        raise ShapeError(f"backward requires a scalar loss, got shape {loss.shape}")
    if loss.node is None:
        raise NumericError("loss was not produced on the graph (no recorded ops)")
    graph = loss.node.graph
    if graph.consumed:
        raise GraphConsumedError(
            "backward already ran on this graph; zero gradients and run a fresh forward pass"
        )
    loss.grad = np.ones((), dtype=np.float64)
    for node in reversed(graph.nodes):
        g = node.out.grad
        if g is None:
            continue
        parent_grads = node.backward_fn(g)
        for parent, pg in zip(node.parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            if parent.grad is None:
                parent.grad = np.zeros_like(parent.data)
            parent.grad += pg
    graph.consumed = True
    graph.nodes.clear()
    if _ACTIVE_GRAPH is graph:
        _ACTIVE_GRAPH = None


def _reduce_to(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient over the leading axes it was broadcast across."""
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    return grad


def _check_elementwise(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape == b.shape:
        return
    k = len(b.shape)
    if k and k < len(a.shape) and a.shape[-k:] == b.shape:
        return
    raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} are incompatible")


# ---------------------------------------------------------------------------
# arithmetic
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_elementwise("add", a, b)
    return _record(
        "add",
        a.data + b.data,
        (a, b),
        lambda g: (g, _reduce_to(g, b.shape)),
    )


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_elementwise("sub", a, b)
    return _record(
        "sub",
        a.data - b.data,
        (a, b),
        lambda g: (g, -_reduce_to(g, b.shape)),
    )


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_elementwise("mul", a, b)
    with np.errstate(over="ignore", invalid="ignore"):
        out = a.data * b.data
    return _record(
        "mul",
        out,
        (a, b),
        lambda g: (g * b.data, _reduce_to(g * a.data, b.shape)),
    )


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _record("scale", a.data * c, (a,), lambda g: (g * c,))


def matmul(a: Tensor, b: Tensor, transpose_b: bool = False) -> Tensor:
    """Matrix product ``a @ b`` (or ``a @ b.T`` over the last two axes).

    ``b`` may be 2-D against a stacked ``a``; otherwise leading dimensions
    must match exactly.
    """
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(f"matmul requires 2-D operands, got {a.shape} x {b.shape}")
    bd = np.swapaxes(b.data, -1, -2) if transpose_b else b.data
    if a.data.shape[-1] != bd.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions differ for {a.shape} x {b.shape}"
                         + (" (transposed)" if transpose_b else ""))
    if b.data.ndim > 2 and a.data.shape[:-2] != b.data.shape[:-2]:
        raise ShapeError(f"matmul: leading dimensions differ for {a.shape} x {b.shape}")
    with np.errstate(over="ignore", invalid="ignore"):
        out = a.data @ bd

    def bwd(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        if transpose_b:
            gb = np.swapaxes(g, -1, -2) @ a.data
        else:
            gb = np.swapaxes(a.data, -1, -2) @ g
        gb = _reduce_to(gb, b.shape)
        return ga, gb

    return _record("matmul", out, (a, b), bwd)


# ---------------------------------------------------------------------------
# nonlinearities and reductions
# ---------------------------------------------------------------------------


def exp(a: Tensor) -> Tensor:
    # overflow/invalid become NonFiniteError in _record, not warnings
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return _record("exp", out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.log(a.data)
    return _record("log", out, (a,), lambda g: (g / a.data,))


def silu(a: Tensor) -> Tensor:
    s = 1.0 / (1.0 + np.exp(-a.data))
    out = a.data * s
    return _record("silu", out, (a,), lambda g: (g * (s * (1.0 + a.data * (1.0 - s))),))


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Stable softmax along ``axis`` (max-subtraction before exponentiation)."""
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - inner),)

    return _record("softmax", out, (a,), bwd)


def logsumexp(a: Tensor, axis: int = -1) -> Tensor:
    m = a.data.max(axis=axis, keepdims=True)
    e = np.exp(a.data - m)
    s = e.sum(axis=axis, keepdims=True)
    out = np.squeeze(m + np.log(s), axis=axis)

    def bwd(g):
        return (np.expand_dims(g, axis) * (e / s),)

    return _record("logsumexp", out, (a,), bwd)


def reduce_sum(a: Tensor, axis: int | None = None) -> Tensor:
    out = a.data.sum(axis=axis)

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

    return _record("sum", out, (a,), bwd)


def reduce_mean(a: Tensor, axis: int | None = None) -> Tensor:
    n = a.data.size if axis is None else a.data.shape[axis]
    out = a.data.mean(axis=axis)

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g / n, a.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis) / n, a.shape).copy(),)

    return _record("mean", out, (a,), bwd)


# ---------------------------------------------------------------------------
# structure
# ---------------------------------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    return _record("reshape", a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = np.argsort(axes)
    return _record(
        "transpose",
        a.data.transpose(axes),
        (a,),
        lambda g: (g.transpose(inv),),
    )


def concat(a: Tensor, b: Tensor, axis: int) -> Tensor:
    if a.data.ndim != b.data.ndim:
        raise ShapeError(f"concat: ranks differ, {a.shape} vs {b.shape}")
    split = a.data.shape[axis]
    out = np.concatenate([a.data, b.data], axis=axis)

    def bwd(g):
        ga, gb = np.split(g, [split], axis=axis)
        return ga, gb

    return _record("concat", out, (a, b), bwd)


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    """Contiguous slice along the first axis."""
    if not 0 <= start < stop <= a.data.shape[0]:
        raise ShapeError(f"slice_rows [{start}:{stop}] out of range for {a.shape}")
    out = a.data[start:stop]

    def bwd(g):
        ga = np.zeros_like(a.data)
        ga[start:stop] = g
        return (ga,)

    return _record("slice_rows", out, (a,), bwd)


def diagonal(a: Tensor) -> Tensor:
    if a.data.ndim != 2 or a.data.shape[0] != a.data.shape[1]:
        raise ShapeError(f"diagonal requires a square matrix, got {a.shape}")

    def bwd(g):
        ga = np.zeros_like(a.data)
        np.fill_diagonal(ga, g)
        return (ga,)

    return _record("diagonal", np.diagonal(a.data).copy(), (a,), bwd)


# ---------------------------------------------------------------------------
# fused model primitives
# ---------------------------------------------------------------------------


def normalize_rows(a: Tensor) -> Tensor:
    """L2-normalize each row of a [n, d] matrix; zero rows are a checked error."""
    if a.data.ndim != 2:
        raise ShapeError(f"normalize_rows requires a 2-D input, got {a.shape}")
    norms = np.linalg.norm(a.data, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise ZeroNormError("cannot normalize a zero-norm embedding")
    out = a.data / norms

    def bwd(g):
        dots = (a.data * g).sum(axis=1, keepdims=True)
        return (g / norms - a.data * (dots / norms**3),)

    return _record("normalize_rows", out, (a,), bwd)


def rms_norm(x: Tensor, gain: Tensor, eps: float = 1e-6) -> Tensor:
    """RMS normalization over the last axis, scaled by ``gain``."""
    d = x.data.shape[-1]
    if gain.shape != (d,):
        raise ShapeError(f"rms_norm gain shape {gain.shape} does not match last axis {d}")
    ms = (x.data * x.data).mean(axis=-1, keepdims=True) + eps
    inv = ms**-0.5
    normed = x.data * inv
    out = normed * gain.data

    def bwd(g):
        gu = g * gain.data
        proj = (x.data * gu).sum(axis=-1, keepdims=True)
        gx = inv * (gu - x.data * (proj * inv * inv / d))
        ggain = _reduce_to((g * normed).reshape(-1, d), (d,)) if x.data.ndim > 1 else g * normed
        return gx, ggain

    return _record("rms_norm", out, (x, gain), bwd)


def rope(x: Tensor, cos: np.ndarray, sin: np.ndarray) -> Tensor:
    """Rotary position embedding on [batch, heads, seq, head_dim].

    ``cos``/``sin`` are [seq, head_dim/2] constants; the head dimension is
    split in halves and rotated pairwise.
    """
    hd = x.data.shape[-1]
    half = hd // 2
    if hd % 2 or cos.shape != (x.data.shape[-2], half):
        raise ShapeError(f"rope: cos shape {cos.shape} incompatible with input {x.shape}")
    x1 = x.data[..., :half]
    x2 = x.data[..., half:]
    out = np.concatenate([x1 * cos - x2 * sin, x1 * sin + x2 * cos], axis=-1)

    def bwd(g):
        g1 = g[..., :half]
        g2 = g[..., half:]
        return (np.concatenate([g1 * cos + g2 * sin, -g1 * sin + g2 * cos], axis=-1),)

    return _record("rope", out, (x,), bwd)


def embedding_lookup(table: Tensor, ids: np.ndarray) -> Tensor:
    """Gather rows of ``table`` by integer ids (any leading shape)."""
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.data.shape[0]):
        raise ShapeError(f"token id out of range for table of {table.data.shape[0]} rows")
    out = table.data[ids]

    def bwd(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.data.shape[1]))
        return (gt,)

    return _record("embedding_lookup", out, (table,), bwd)


def weighted_sum_seq(hidden: Tensor, weights: np.ndarray) -> Tensor:
    """Contract [batch, seq, d] against constant [batch, seq] weights -> [batch, d]."""
    if hidden.data.ndim != 3 or weights.shape != hidden.data.shape[:2]:
        raise ShapeError(
            f"weighted_sum_seq: weights {weights.shape} do not match hidden {hidden.shape}"
        )
    out = np.einsum("bsd,bs->bd", hidden.data, weights)

    def bwd(g):
        return (weights[:, :, None] * g[:, None, :],)

    return _record("weighted_sum_seq", out, (hidden,), bwd)
