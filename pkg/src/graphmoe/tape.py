"""Dense reverse-mode autodiff on 2-D float64 arrays.

Every value is a (rows, cols) matrix; scalars are 1x1 and row vectors 1xc.
Ops build an implicit tape through parent links, and ``Tensor.backward``
replays it in reverse topological order, accumulating exact analytic
gradients (multiple uses of a tensor sum their path gradients).

The one deliberately inexact rule is :func:`sign_straight_through`, whose
backward passes the upstream gradient through unchanged; see its docstring.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import NumericalError, ShapeError

Array = np.ndarray


def _as_matrix(values) -> Array:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise ShapeError(f"tensors are 2-D, got ndim={arr.ndim}")
    return arr


class Tensor:
    """A 2-D float64 matrix participating in reverse-mode differentiation."""

    __slots__ = ("values", "requires_grad", "grad", "name", "_parents", "_backward")

    def __init__(self, values, requires_grad: bool = False, name: str = ""):
        self.values = _as_matrix(values)
        self.requires_grad = bool(requires_grad)
        self.grad: Array | None = None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[Array], None] | None = None

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape  # type: ignore[return-value]

    @property
    def needs_grad(self) -> bool:
        return self.requires_grad or self._backward is not None

    def item(self) -> float:
        if self.values.size != 1:
            raise ShapeError(f"item() on shape {self.shape}")
        return float(self.values[0, 0])

    def __repr__(self) -> str:
        tag = self.name or "tensor"
        return f"<{tag} {self.shape[0]}x{self.shape[1]} grad={self.requires_grad}>"

    # -- graph mechanics -----------------------------------------------
    def detach(self) -> "Tensor":
        return Tensor(self.values.copy(), requires_grad=False, name=self.name)

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: Array) -> None:
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad += g

    def backward(self) -> None:
        """Reverse-mode sweep from a 1x1 loss; accumulates into ``grad``."""
        if self.shape != (1, 1):
            raise ShapeError(f"backward() needs a scalar loss, got {self.shape}")
        order = _topo_order(self)
        self._accumulate(np.ones((1, 1)))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar --------------------------------------------------
    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return add_const(self, float(other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return add(self, scale(other, -1.0))
        return add_const(self, -float(other))

    def __rsub__(self, other):
        return add_const(scale(self, -1.0), float(other))

    def __neg__(self):
        return scale(self, -1.0)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return elementwise_mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)


def _topo_order(root: Tensor) -> list[Tensor]:
    """Deterministic iterative post-order over the tape."""
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
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def constant(values, name: str = "") -> Tensor:
    return Tensor(values, requires_grad=False, name=name)


def parameter(values, name: str = "") -> Tensor:
    return Tensor(values, requires_grad=True, name=name)


def _make(values: Array, parents: Sequence[Tensor], backward: Callable[[Array], None]) -> Tensor:
    out = Tensor(values)
    if any(p.needs_grad for p in parents):
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


# ---------------------------------------------------------------------------
# arithmetic
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "add")

    def backward(g: Array) -> None:
        if a.needs_grad:
            a._accumulate(g)
        if b.needs_grad:
            b._accumulate(g)

    return _make(a.values + b.values, (a, b), backward)


def add_const(a: Tensor, c: float) -> Tensor:
    def backward(g: Array) -> None:
        if a.needs_grad:
            a._accumulate(g)

    return _make(a.values + c, (a,), backward)


def scale(a: Tensor, c: float) -> Tensor:
    def backward(g: Array) -> None:
        if a.needs_grad:
            a._accumulate(g * c)

    return _make(a.values * c, (a,), backward)


def elementwise_mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "elementwise_mul")
    av, bv = a.values, b.values

    def backward(g: Array) -> None:
        if a.needs_grad:
            a._accumulate(g * bv)
        if b.needs_grad:
            b._accumulate(g * av)

    return _make(av * bv, (a, b), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dims {a.shape} @ {b.shape}")
    av, bv = a.values, b.values

    def backward(g: Array) -> None:
        if a.needs_grad:
            a._accumulate(g @ bv.T)
        if b.needs_grad:
            b._accumulate(av.T @ g)

    return _make(av @ bv, (a, b), backward)


def transpose(a: Tensor) -> Tensor:
    def backward(g: Array) -> None:
        if a.needs_grad:
            a._accumulate(g.T)

    return _make(a.values.T.copy(), (a,), backward)


def scale_by(a: Tensor, s: Tensor) -> Tensor:
    """Multiply every entry of ``a`` by the 1x1 tensor ``s``."""
    if s.shape != (1, 1):
        raise ShapeError(f"scale_by: scalar must be 1x1, got {s.shape}")
    av = a.values
    sv = float(s.values[0, 0])

    def backward(g: Array) -> None:
        if a.needs_grad:
            a._accumulate(g * sv)
        if s.needs_grad:
            s._accumulate(np.array([[np.sum(g * av)]]))

    return _make(av * sv, (a, s), backward)


def div_by_scalar(a: Tensor, s: Tensor, eps: float = 0.0) -> Tensor:
    """Entrywise a / (s + eps) for a 1x1 tensor ``s``."""
    if s.shape != (1, 1):
        raise ShapeError(f"div_by_scalar: scalar must be 1x1, got {s.shape}")
    denom = float(s.values[0, 0]) + eps
    av = a.values

    def backward(g: Array) -> None:
        if a.needs_grad:
            a._accumulate(g / denom)
        if s.needs_grad:
            s._accumulate(np.array([[-np.sum(g * av) / (denom * denom)]]))

    return _make(av / denom, (a, s), backward)


# ---------------------------------------------------------------------------
# row / column broadcasting
# ---------------------------------------------------------------------------

def _check_row(a: Tensor, r: Tensor, op: str) -> None:
    if r.shape != (1, a.shape[1]):
        raise ShapeError(f"{op}: row {r.shape} does not match {a.shape}")


def _check_col(a: Tensor, c: Tensor, op: str) -> None:
    if c.shape != (a.shape[0], 1):
        raise ShapeError(f"{op}: col {c.shape} does not match {a.shape}")


def add_row(a: Tensor, r: Tensor) -> Tensor:
    _check_row(a, r, "add_row")

    def backward(g: Array) -> None:
        if a.needs_grad:
            a._accumulate(g)
        if r.needs_grad:
            r._accumulate(g.sum(axis=0, keepdims=True))

    return _make(a.values + r.values, (a, r), backward)


def sub_row(a: Tensor, r: Tensor) -> Tensor:
    _check_row(a, r, "sub_row")

    def backward(g: Array) -> None:
        if a.needs_grad:
            a._accumulate(g)
        if r.needs_grad:
            r._accumulate(-g.sum(axis=0, keepdims=True))

    return _make(a.values - r.values, (a, r), backward)


def mul_row(a: Tensor, r: Tensor) -> Tensor:
    _check_row(a, r, "mul_row")
    av, rv = a.values, r.values

    def backward(g: Array) -> None:
        if a.needs_grad:
            a._accumulate(g * rv)
        if r.needs_grad:
            r._accumulate((g * av).sum(axis=0, keepdims=True))

    return _make(av * rv, (a, r), backward)


def div_row(a: Tensor, r: Tensor, eps: float = 0.0) -> Tensor:
    _check_row(a, r, "div_row")
    av = a.values
    denom = r.values + eps

    def backward(g: Array) -> None:
        if a.needs_grad:
            a._accumulate(g / denom)
        if r.needs_grad:
            r._accumulate(-(g * av / (denom * denom)).sum(axis=0, keepdims=True))

    return _make(av / denom, (a, r), backward)


def mul_col(a: Tensor, c: Tensor) -> Tensor:
    _check_col(a, c, "mul_col")
    av, cv = a.values, c.values

    def backward(g: Array) -> None:
        if a.needs_grad:
            a._accumulate(g * cv)
        if c.needs_grad:
            c._accumulate((g * av).sum(axis=1, keepdims=True))

    return _make(av * cv, (a, c), backward)


def div_col(a: Tensor, c: Tensor, eps: float = 0.0) -> Tensor:
    _check_col(a, c, "div_col")
    av = a.values
    denom = c.values + eps

    def backward(g: Array) -> None:
        if a.needs_grad:
            a._accumulate(g / denom)
        if c.needs_grad:
            c._accumulate(-(g * av / (denom * denom)).sum(axis=1, keepdims=True))

    return _make(av / denom, (a, c), backward)


def broadcast_row(r: Tensor, rows: int) -> Tensor:
    if r.shape[0] != 1:
        raise ShapeError(f"broadcast_row: expected 1xc, got {r.shape}")

    def backward(g: Array) -> None:
        if r.needs_grad:
            r._accumulate(g.sum(axis=0, keepdims=True))

    return _make(np.tile(r.values, (rows, 1)), (r,), backward)


# ---------------------------------------------------------------------------
# shape / selection
# ---------------------------------------------------------------------------

def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    if not parts:
        raise ShapeError("concat_cols: empty input")
    rows = parts[0].shape[0]
    for p in parts:
        if p.shape[0] != rows:
            raise ShapeError("concat_cols: row counts differ")
    widths = [p.shape[1] for p in parts]
    offsets = np.cumsum([0] + widths)
    parts = tuple(parts)

    def backward(g: Array) -> None:
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.needs_grad:
                p._accumulate(g[:, lo:hi])

    return _make(np.concatenate([p.values for p in parts], axis=1), parts, backward)


def gather_rows(a: Tensor, idx) -> Tensor:
    idx = np.asarray(idx, dtype=np.intp)
    n = a.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise ShapeError(f"gather_rows: index out of range for {n} rows")

    def backward(g: Array) -> None:
        if a.needs_grad:
            buf = np.zeros_like(a.values)
            np.add.at(buf, idx, g)
            a._accumulate(buf)

    return _make(a.values[idx, :], (a,), backward)


def gather_cols(a: Tensor, idx) -> Tensor:
    idx = np.asarray(idx, dtype=np.intp)
    m = a.shape[1]
    if idx.size and (idx.min() < 0 or idx.max() >= m):
        raise ShapeError(f"gather_cols: index out of range for {m} cols")

    def backward(g: Array) -> None:
        if a.needs_grad:
            buf = np.zeros_like(a.values)
            np.add.at(buf.T, idx, g.T)
            a._accumulate(buf)

    return _make(a.values[:, idx], (a,), backward)


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def sum_all(a: Tensor) -> Tensor:
    def backward(g: Array) -> None:
        if a.needs_grad:
            a._accumulate(np.full_like(a.values, float(g[0, 0])))

    return _make(np.array([[a.values.sum()]]), (a,), backward)


def mean_all(a: Tensor) -> Tensor:
    size = a.values.size

    def backward(g: Array) -> None:
        if a.needs_grad:
            a._accumulate(np.full_like(a.values, float(g[0, 0]) / size))

    return _make(np.array([[a.values.mean()]]), (a,), backward)


def sum_rows(a: Tensor) -> Tensor:
    """Column sums: (n, c) -> (1, c)."""
    rows = a.shape[0]

    def backward(g: Array) -> None:
        if a.needs_grad:
            a._accumulate(np.tile(g, (rows, 1)))

    return _make(a.values.sum(axis=0, keepdims=True), (a,), backward)


def sum_cols(a: Tensor) -> Tensor:
    """Row sums: (n, c) -> (n, 1)."""
    cols = a.shape[1]

    def backward(g: Array) -> None:
        if a.needs_grad:
            a._accumulate(np.tile(g, (1, cols)))

    return _make(a.values.sum(axis=1, keepdims=True), (a,), backward)


def mean_pool_rows(a: Tensor) -> Tensor:
    """Row-mean pooling: (n, c) -> (1, c)."""
    rows = a.shape[0]

    def backward(g: Array) -> None:
        if a.needs_grad:
            a._accumulate(np.tile(g / rows, (rows, 1)))

    return _make(a.values.mean(axis=0, keepdims=True), (a,), backward)


def segment_mean_rows(a: Tensor, segment_ids, n_segments: int) -> Tensor:
    """Per-segment row means; empty segments yield zero rows."""
    seg = np.asarray(segment_ids, dtype=np.intp)
    if seg.shape != (a.shape[0],):
        raise ShapeError("segment_mean_rows: one segment id per row required")
    counts = np.bincount(seg, minlength=n_segments).astype(np.float64)
    sums = np.zeros((n_segments, a.shape[1]))
    np.add.at(sums, seg, a.values)
    safe = np.maximum(counts, 1.0)
    out = sums / safe[:, None]

    def backward(g: Array) -> None:
        if a.needs_grad:
            a._accumulate(g[seg, :] / safe[seg, None])

    return _make(out, (a,), backward)


def frobenius_norm(a: Tensor) -> Tensor:
    norm = float(np.linalg.norm(a.values))
    av = a.values

    def backward(g: Array) -> None:
        if a.needs_grad:
            denom = norm if norm > 0.0 else 1.0
            a._accumulate(float(g[0, 0]) * av / denom)

    return _make(np.array([[norm]]), (a,), backward)


# ---------------------------------------------------------------------------
# nonlinearities
# ---------------------------------------------------------------------------

def sigmoid(a: Tensor) -> Tensor:
    x = a.values
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)

    def backward(g: Array) -> None:
        if a.needs_grad:
            a._accumulate(g * out * (1.0 - out))

    return _make(out, (a,), backward)


def relu(a: Tensor) -> Tensor:
    mask = a.values > 0

    def backward(g: Array) -> None:
        if a.needs_grad:
            a._accumulate(g * mask)

    return _make(np.where(mask, a.values, 0.0), (a,), backward)


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    mask = a.values > 0

    def backward(g: Array) -> None:
        if a.needs_grad:
            a._accumulate(g * np.where(mask, 1.0, slope))

    return _make(np.where(mask, a.values, slope * a.values), (a,), backward)


def elu(a: Tensor, alpha: float = 1.0) -> Tensor:
    x = a.values
    mask = x > 0
    neg = alpha * (np.exp(np.minimum(x, 0.0)) - 1.0)
    out = np.where(mask, x, neg)

    def backward(g: Array) -> None:
        if a.needs_grad:
            a._accumulate(g * np.where(mask, 1.0, neg + alpha))

    return _make(out, (a,), backward)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.values)

    def backward(g: Array) -> None:
        if a.needs_grad:
            a._accumulate(g * out)

    return _make(out, (a,), backward)


def log(a: Tensor) -> Tensor:
    if np.any(a.values <= 0):
        raise NumericalError("log: non-positive input")
    av = a.values

    def backward(g: Array) -> None:
        if a.needs_grad:
            a._accumulate(g / av)

    return _make(np.log(av), (a,), backward)


def sqrt(a: Tensor) -> Tensor:
    if np.any(a.values < 0):
        raise NumericalError("sqrt: negative input")
    out = np.sqrt(a.values)

    def backward(g: Array) -> None:
        if a.needs_grad:
            denom = np.maximum(out, 1e-300)
            a._accumulate(g / (2.0 * denom))

    return _make(out, (a,), backward)


def row_softmax(a: Tensor) -> Tensor:
    x = a.values
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=1, keepdims=True)

    def backward(g: Array) -> None:
        if a.needs_grad:
            dot = (g * out).sum(axis=1, keepdims=True)
            a._accumulate(out * (g - dot))

    return _make(out, (a,), backward)


def masked_row_softmax(a: Tensor, mask: Array) -> Tensor:
    """Row softmax restricted to entries where ``mask`` is truthy.

    Excluded entries get probability 0. Every row must keep at least one
    admissible entry.
    """
    m = np.asarray(mask, dtype=bool)
    if m.shape != a.shape:
        raise ShapeError(f"masked_row_softmax: mask {m.shape} vs {a.shape}")
    if not m.any(axis=1).all():
        raise NumericalError("masked_row_softmax: a row has no admissible entry")
    x = np.where(m, a.values, -np.inf)
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=1, keepdims=True)

    def backward(g: Array) -> None:
        if a.needs_grad:
            dot = (g * out).sum(axis=1, keepdims=True)
            a._accumulate(out * (g - dot))

    return _make(out, (a,), backward)


# ---------------------------------------------------------------------------
# sparse and stochastic ops
# ---------------------------------------------------------------------------

def spmm(matrix: sp.spmatrix, a: Tensor) -> Tensor:
    """Sparse constant (m, n) times dense tensor (n, c)."""
    m = matrix.tocsr()
    if m.shape[1] != a.shape[0]:
        raise ShapeError(f"spmm: {m.shape} @ {a.shape}")
    mt = m.T.tocsr()

    def backward(g: Array) -> None:
        if a.needs_grad:
            a._accumulate(mt @ g)

    return _make(np.asarray(m @ a.values), (a,), backward)


def dropout(a: Tensor, rate: float, rng: np.random.Generator, training: bool = True) -> Tensor:
    if not training or rate <= 0.0:
        return a
    if rate >= 1.0:
        raise ShapeError("dropout: rate must be < 1")
    keep = (rng.random(a.shape) >= rate) / (1.0 - rate)

    def backward(g: Array) -> None:
        if a.needs_grad:
            a._accumulate(g * keep)

    return _make(a.values * keep, (a,), backward)


def sign_straight_through(a: Tensor) -> Tensor:
    """Binarize positive entries to 1, everything else to 0.

    Forward is sign(max(x, 0)); backward uses the identity surrogate, so
    the upstream gradient lands on the input unchanged. The true function
    is piecewise constant, so no finite-difference check applies here by
    construction; the surrogate contract has its own unit test.
    """

    def backward(g: Array) -> None:
        if a.needs_grad:
            a._accumulate(g)

    return _make((a.values > 0).astype(np.float64), (a,), backward)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean cross-entropy of row-softmax(logits) against integer labels."""
    y = np.asarray(labels, dtype=np.intp)
    n, c = logits.shape
    if y.shape != (n,):
        raise ShapeError(f"softmax_cross_entropy: labels {y.shape} vs {n} rows")
    if y.size and (y.min() < 0 or y.max() >= c):
        raise ShapeError("softmax_cross_entropy: label outside class range")
    x = logits.values
    shifted = x - x.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(shifted).sum(axis=1)) + x.max(axis=1)
    loss = float(np.mean(logsumexp - x[np.arange(n), y]))
    probs = np.exp(shifted)
    probs /= probs.sum(axis=1, keepdims=True)

    def backward(g: Array) -> None:
        if logits.needs_grad:
            grad = probs.copy()
            grad[np.arange(n), y] -= 1.0
            logits._accumulate(float(g[0, 0]) * grad / n)

    return _make(np.array([[loss]]), (logits,), backward)


def bce_with_logits(logits: Tensor, targets) -> Tensor:
    """Mean binary cross-entropy with logits; targets in [0, 1]."""
    t = _as_matrix(targets)
    if t.shape != logits.shape:
        raise ShapeError(f"bce_with_logits: targets {t.shape} vs {logits.shape}")
    x = logits.values
    loss = float(np.mean(np.maximum(x, 0.0) - x * t + np.log1p(np.exp(-np.abs(x)))))
    sig = 1.0 / (1.0 + np.exp(-np.clip(x, -700, 700)))
    size = x.size

    def backward(g: Array) -> None:
        if logits.needs_grad:
            logits._accumulate(float(g[0, 0]) * (sig - t) / size)

    return _make(np.array([[loss]]), (logits,), backward)


def mse_loss(pred: Tensor, targets) -> Tensor:
    t = _as_matrix(targets)
    if t.shape != pred.shape:
        raise ShapeError(f"mse_loss: targets {t.shape} vs {pred.shape}")
    diff = pred.values - t
    size = diff.size

    def backward(g: Array) -> None:
        if pred.needs_grad:
            pred._accumulate(float(g[0, 0]) * 2.0 * diff / size)

    return _make(np.array([[float(np.mean(diff * diff))]]), (pred,), backward)
