"""Dense 2-D reverse-mode automatic differentiation.

Small on purpose: 64-bit row-major matrices, a flat tape, and exactly the
primitives the adaptation losses need. Every operation validates shapes,
checks its output for non-finite values, and registers a backward rule when
any input requires gradients.

Shape discipline: everything is (rows, cols). Vectors are explicit row
(1, n) or column (n, 1) matrices. Broadcasting is limited to adding or
subtracting a row/column vector against a matrix.
"""

from __future__ import annotations

import itertools
from typing import Callable

import numpy as np

from .errors import ContractError, GradCheckError, NumericError, ShapeError

_uid_counter = itertools.count()


class Tensor:
    """A 2-D float64 value, optionally tracked on a tape."""

    __slots__ = ("data", "requires_grad", "tape", "uid")

    def __init__(self, data: np.ndarray, requires_grad: bool = False, tape: "Tape | None" = None):
        self.data = data
        self.requires_grad = requires_grad
        self.tape = tape
        self.uid = next(_uid_counter)

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on non-scalar tensor of shape {self.shape}")
        return float(self.data[0, 0])

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return subtract(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__


class Tape:
    """Ordered record of primitive operations for one forward pass.

    The record order is the forward topological order; backward walks it in
    exact reverse. A tape is consumed by its first backward() call.
    """

    def __init__(self):
        self._records: list[tuple[int, Callable[[np.ndarray, dict], None]]] = []
        self._leaves: list[Tensor] = []
        self._consumed = False

    def leaf(self, data, requires_grad: bool = True) -> Tensor:
        t = Tensor(_as_matrix(data), requires_grad=requires_grad, tape=self if requires_grad else None)
        if requires_grad:
            self._leaves.append(t)
        return t

    def record(self, out_uid: int, backward_fn) -> None:
        self._records.append((out_uid, backward_fn))

    def backward(self, loss: Tensor) -> dict[int, np.ndarray]:
        """Reverse-accumulate gradients of a scalar loss.

        Returns a map from tensor uid to gradient array covering every node
        that received a gradient, plus a zero entry for every untouched leaf.
        """
        if self._consumed:
            raise ContractError("tape already consumed; rebuild the forward pass before calling backward again")
        if loss.data.shape != (1, 1):
            raise ContractError(f"backward requires a scalar loss, got shape {loss.data.shape}")
        if not self._records and not self._leaves:
            raise ContractError("backward on an empty tape")
        self._consumed = True

        grads: dict[int, np.ndarray] = {loss.uid: np.ones((1, 1))}
        for out_uid, backward_fn in reversed(self._records):
            g = grads.get(out_uid)
            if g is not None:
                backward_fn(g, grads)
        for leaf in self._leaves:
            if leaf.uid not in grads:
                grads[leaf.uid] = np.zeros_like(leaf.data)
        return grads


def constant(data) -> Tensor:
    return Tensor(_as_matrix(data))


def _as_matrix(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise ShapeError(f"expected at most 2 dimensions, got shape {arr.shape}")
    return arr


def _find_tape(*tensors: Tensor) -> Tape | None:
    tape = None
    for t in tensors:
        if t.tape is not None:
            if tape is not None and tape is not t.tape:
                raise ContractError("operands belong to different tapes")
            tape = t.tape
    return tape


def _make(data: np.ndarray, inputs: tuple[Tensor, ...], backward_fn) -> Tensor:
    """Finalize a primitive: finite-check, grad propagation, tape record."""
    if not np.isfinite(data).all():
        raise NumericError("operation produced a non-finite value")
    requires = any(t.requires_grad for t in inputs)
    tape = _find_tape(*inputs)
    out = Tensor(data, requires_grad=requires, tape=tape if requires else None)
    if requires and tape is not None:
        tape.record(out.uid, backward_fn(out))
    return out


def _accum(grads: dict, t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.uid in grads:
        grads[t.uid] = grads[t.uid] + g
    else:
        grads[t.uid] = g


def _broadcast_check(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape == b.shape:
        return
    if b.shape == (1, a.shape[1]) or b.shape == (a.shape[0], 1):
        return
    if a.shape == (1, b.shape[1]) or a.shape == (b.shape[0], 1):
        return
    raise ShapeError(f"incompatible shapes {a.shape} and {b.shape}")


def _reduce_to(g: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    if g.shape == shape:
        return g
    if shape[0] == 1 and g.shape[0] != 1:
        g = g.sum(axis=0, keepdims=True)
    if shape[1] == 1 and g.shape[1] != 1:
        g = g.sum(axis=1, keepdims=True)
    return g


def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_check(a.data, b.data)
    data = a.data + b.data

    def bwd(out):
        def fn(g, grads):
            _accum(grads, a, _reduce_to(g, a.data.shape))
            _accum(grads, b, _reduce_to(g, b.data.shape))
        return fn

    return _make(data, (a, b), bwd)


def subtract(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_check(a.data, b.data)
    data = a.data - b.data

    def bwd(out):
        def fn(g, grads):
            _accum(grads, a, _reduce_to(g, a.data.shape))
            _accum(grads, b, -_reduce_to(g, b.data.shape))
        return fn

    return _make(data, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"elementwise mul needs equal shapes, got {a.data.shape} and {b.data.shape}")
    data = a.data * b.data

    def bwd(out):
        def fn(g, grads):
            _accum(grads, a, g * b.data)
            _accum(grads, b, g * a.data)
        return fn

    return _make(data, (a, b), bwd)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    data = a.data * c

    def bwd(out):
        def fn(g, grads):
            _accum(grads, a, g * c)
        return fn

    return _make(data, (a,), bwd)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul inner dimensions differ: {a.data.shape} @ {b.data.shape}")
    data = a.data @ b.data

    def bwd(out):
        def fn(g, grads):
            _accum(grads, a, g @ b.data.T)
            _accum(grads, b, a.data.T @ g)
        return fn

    return _make(data, (a, b), bwd)


def transpose(a: Tensor) -> Tensor:
    data = a.data.T.copy()

    def bwd(out):
        def fn(g, grads):
            _accum(grads, a, g.T)
        return fn

    return _make(data, (a,), bwd)


def concat_rows(tensors: list[Tensor]) -> Tensor:
    if not tensors:
        raise ContractError("concat_rows of nothing")
    cols = tensors[0].data.shape[1]
    for t in tensors:
        if t.data.shape[1] != cols:
            raise ShapeError(f"concat_rows column mismatch: {t.data.shape[1]} vs {cols}")
    data = np.concatenate([t.data for t in tensors], axis=0)
    offsets = np.cumsum([0] + [t.data.shape[0] for t in tensors])

    def bwd(out):
        def fn(g, grads):
            for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
                _accum(grads, t, g[lo:hi])
        return fn

    return _make(data, tuple(tensors), bwd)


def concat_cols(tensors: list[Tensor]) -> Tensor:
    if not tensors:
        raise ContractError("concat_cols of nothing")
    rows = tensors[0].data.shape[0]
    for t in tensors:
        if t.data.shape[0] != rows:
            raise ShapeError(f"concat_cols row mismatch: {t.data.shape[0]} vs {rows}")
    data = np.concatenate([t.data for t in tensors], axis=1)
    offsets = np.cumsum([0] + [t.data.shape[1] for t in tensors])

    def bwd(out):
        def fn(g, grads):
            for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
                _accum(grads, t, g[:, lo:hi])
        return fn

    return _make(data, tuple(tensors), bwd)


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    if not (0 <= start <= stop <= a.data.shape[0]):
        raise ShapeError(f"row slice [{start}:{stop}] out of bounds for shape {a.data.shape}")
    data = a.data[start:stop].copy()

    def bwd(out):
        def fn(g, grads):
            full = np.zeros_like(a.data)
            full[start:stop] = g
            _accum(grads, a, full)
        return fn

    return _make(data, (a,), bwd)


def gather_rows(a: Tensor, indices) -> Tensor:
    idx = np.asarray(indices, dtype=np.intp)
    if idx.ndim != 1:
        raise ShapeError("gather_rows needs a flat index list")
    if idx.size and (idx.min() < 0 or idx.max() >= a.data.shape[0]):
        raise ShapeError(f"gather index out of range for {a.data.shape[0]} rows")
    data = a.data[idx].copy()

    def bwd(out):
        def fn(g, grads):
            full = np.zeros_like(a.data)
            np.add.at(full, idx, g)
            _accum(grads, a, full)
        return fn

    return _make(data, (a,), bwd)


def row_softmax(a: Tensor) -> Tensor:
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=1, keepdims=True)

    def bwd(out):
        y = out.data

        def fn(g, grads):
            dot = (g * y).sum(axis=1, keepdims=True)
            _accum(grads, a, y * (g - dot))
        return fn

    return _make(data, (a,), bwd)


def log(a: Tensor) -> Tensor:
    if (a.data <= 0).any():
        raise NumericError("log of a non-positive value")
    data = np.log(a.data)

    def bwd(out):
        def fn(g, grads):
            _accum(grads, a, g / a.data)
        return fn

    return _make(data, (a,), bwd)


def exp(a: Tensor) -> Tensor:
    data = np.exp(a.data)

    def bwd(out):
        def fn(g, grads):
            _accum(grads, a, g * out.data)
        return fn

    return _make(data, (a,), bwd)


def mean(a: Tensor) -> Tensor:
    data = np.array([[a.data.mean()]])
    size = a.data.size

    def bwd(out):
        def fn(g, grads):
            _accum(grads, a, np.full_like(a.data, g[0, 0] / size))
        return fn

    return _make(data, (a,), bwd)


def total_sum(a: Tensor) -> Tensor:
    data = np.array([[a.data.sum()]])

    def bwd(out):
        def fn(g, grads):
            _accum(grads, a, np.full_like(a.data, g[0, 0]))
        return fn

    return _make(data, (a,), bwd)


def row_sum(a: Tensor) -> Tensor:
    data = a.data.sum(axis=1, keepdims=True)

    def bwd(out):
        def fn(g, grads):
            _accum(grads, a, np.broadcast_to(g, a.data.shape).copy())
        return fn

    return _make(data, (a,), bwd)


def row_max(a: Tensor) -> Tensor:
    """Per-row maximum; the subgradient goes to the first argmax of each row."""
    idx = a.data.argmax(axis=1)
    data = a.data[np.arange(a.data.shape[0]), idx].reshape(-1, 1)

    def bwd(out):
        def fn(g, grads):
            full = np.zeros_like(a.data)
            full[np.arange(a.data.shape[0]), idx] = g[:, 0]
            _accum(grads, a, full)
        return fn

    return _make(data, (a,), bwd)


def l2_normalize_rows(a: Tensor) -> Tensor:
    norms = np.linalg.norm(a.data, axis=1, keepdims=True)
    if (norms == 0).any():
        raise NumericError("cannot L2-normalize a zero row")
    data = a.data / norms

    def bwd(out):
        y = out.data

        def fn(g, grads):
            dot = (g * y).sum(axis=1, keepdims=True)
            _accum(grads, a, (g - dot * y) / norms)
        return fn

    return _make(data, (a,), bwd)


def cosine_similarity_matrix(a: Tensor, b: Tensor) -> Tensor:
    """Pairwise cosine similarities, rows of a against rows of b."""
    if a.data.shape[1] != b.data.shape[1]:
        raise ShapeError(f"cosine similarity needs equal widths, got {a.data.shape} and {b.data.shape}")
    return matmul(l2_normalize_rows(a), transpose(l2_normalize_rows(b)))


def smooth_l1(pred: Tensor, target: Tensor) -> Tensor:
    """Elementwise smooth-L1 with the transition point at 1.0."""
    if pred.data.shape != target.data.shape:
        raise ShapeError(f"smooth_l1 needs equal shapes, got {pred.data.shape} and {target.data.shape}")
    d = pred.data - target.data
    absd = np.abs(d)
    data = np.where(absd < 1.0, 0.5 * d * d, absd - 0.5)
    ddiff = np.where(absd < 1.0, d, np.sign(d))

    def bwd(out):
        def fn(g, grads):
            _accum(grads, pred, g * ddiff)
            _accum(grads, target, -g * ddiff)
        return fn

    return _make(data, (pred, target), bwd)


def cross_entropy_with_logits(logits: Tensor, labels) -> Tensor:
    """Mean softmax cross-entropy over rows; labels are column indices."""
    lab = np.asarray(labels, dtype=np.intp)
    n, c = logits.data.shape
    if lab.shape != (n,):
        raise ShapeError(f"need {n} labels, got shape {lab.shape}")
    if lab.size and (lab.min() < 0 or lab.max() >= c):
        raise ContractError(f"label out of range for {c} outcomes")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1)) + logits.data.max(axis=1)
    data = np.array([[(lse - logits.data[np.arange(n), lab]).mean()]])
    probs = np.exp(shifted) / np.exp(shifted).sum(axis=1, keepdims=True)

    def bwd(out):
        def fn(g, grads):
            grad = probs.copy()
            grad[np.arange(n), lab] -= 1.0
            _accum(grads, logits, g[0, 0] * grad / n)
        return fn

    return _make(data, (logits,), bwd)


def grad_check(loss_fn, point: dict[str, np.ndarray], eps: float = 1e-5) -> float:
    """Compare analytic gradients against central finite differences.

    loss_fn takes a dict of named Tensors and returns a scalar Tensor; point
    maps the same names to 2-D float64 arrays. Returns the maximum over all
    parameter entries of |analytic - central| / max(1, |central|).
    """
    if eps <= 0:
        raise ContractError("eps must be positive")
    point = {k: _as_matrix(v) for k, v in point.items()}

    def evaluate(arrays: dict[str, np.ndarray]) -> float:
        return loss_fn({k: constant(v) for k, v in arrays.items()}).item()

    base1 = evaluate(point)
    base2 = evaluate(point)
    if base1 != base2:
        raise GradCheckError(f"loss_fn is non-deterministic: {base1!r} vs {base2!r}")

    tape = Tape()
    leaves = {k: tape.leaf(v.copy()) for k, v in point.items()}
    loss = loss_fn(leaves)
    grads = tape.backward(loss)

    worst = 0.0
    for name, arr in point.items():
        analytic = grads[leaves[name].uid]
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            probe = {k: v.copy() for k, v in point.items()}
            probe[name][idx] += eps
            up = evaluate(probe)
            probe[name][idx] -= 2 * eps
            down = evaluate(probe)
            central = (up - down) / (2 * eps)
            err = abs(analytic[idx] - central) / max(1.0, abs(central))
            worst = max(worst, err)
    return worst
