"""Dense tensors with reverse-mode autodiff recorded on an explicit tape.

Only the operations this project actually uses are implemented: matmul
(plain and batched), add/bias/scale/elementwise-mul, concat/slice/reshape/
transpose, stable softmax, layer normalization, GELU, embedding lookup,
cross-entropy, and the layer-weighted sums used by the fusion module.
There is no general broadcasting; the few broadcast cases that exist
(trailing bias, size-1 scalars) are handled by dedicated rules.

Gradient checking is done against :func:`finite_diff_grad`, an independent
central-difference oracle that never touches the tape.
"""

from __future__ import annotations

import itertools
import math
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, ShapeError

_FLOAT_DTYPES = (np.float32, np.float64)

# NaN/Inf detection at op boundaries. On by default (test mode); latency
# benchmarks switch it off because validation would be measured.
_CHECK_FINITE = True

_TAPE_STACK: list["Tape"] = []

_next_tid = itertools.count().__next__


def set_finite_checks(enabled: bool) -> None:
    global _CHECK_FINITE
    _CHECK_FINITE = bool(enabled)


def finite_checks_enabled() -> bool:
    return _CHECK_FINITE


@contextmanager
def finite_checks(enabled: bool):
    """Temporarily enable or disable NaN/Inf validation."""
    global _CHECK_FINITE
    old = _CHECK_FINITE
    _CHECK_FINITE = bool(enabled)
    try:
        yield
    finally:
        _CHECK_FINITE = old


class Tensor:
    """Immutable-by-convention dense array with a gradient-tracking flag.

    ``data`` is a row-major numpy array in float64 (gradient-check/test
    mode) or float32 (train/bench mode). Zero-sized extents are rejected;
    non-finite values are rejected while finite checks are on.
    """

    __slots__ = ("data", "requires_grad", "tid")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float64)
        arr = np.ascontiguousarray(arr)
        if any(n <= 0 for n in arr.shape):
            raise ShapeError(f"tensor extents must be positive, got shape {arr.shape}")
        if _CHECK_FINITE and not np.all(np.isfinite(arr)):
            raise ContractError("tensor contains NaN or Inf")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.tid = _next_tid()

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
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        grad = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{grad})"


class Tape:
    """Ordered record of operations for one forward pass.

    Nodes are appended in execution order, so the list is already a
    topological order; :func:`backward` walks it once, in reverse.
    Used as a context manager::

        with Tape() as tape:
            loss = ...
        grads = backward(tape, loss)
    """

    def __init__(self):
        self._nodes: list[tuple[int, tuple[Tensor, ...], Callable]] = []

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _TAPE_STACK.pop()

    def __len__(self) -> int:
        return len(self._nodes)

    def _record(self, out: Tensor, inputs: tuple[Tensor, ...], backward_fn: Callable) -> None:
        self._nodes.append((out.tid, inputs, backward_fn))


def _emit(data: np.ndarray, inputs: tuple[Tensor, ...], backward_fn: Callable) -> Tensor:
    """Wrap an op result, recording it on the active tape when grads are needed."""
    out = Tensor(data, requires_grad=any(t.requires_grad for t in inputs))
    if out.requires_grad and _TAPE_STACK:
        _TAPE_STACK[-1]._record(out, inputs, backward_fn)
    return out


def backward(tape: Tape, loss: Tensor) -> dict[int, Tensor]:
    """Reverse sweep over the tape from a scalar loss.

    Returns a map from tensor id to gradient for every requires_grad
    tensor reachable from the loss. Frozen tensors never appear in the
    map. Each tape node is visited exactly once.
    """
    if loss.size != 1:
        raise ContractError(f"loss must be a scalar, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {loss.tid: np.ones_like(loss.data)}
    for out_tid, inputs, backward_fn in reversed(tape._nodes):
        gout = grads.get(out_tid)
        if gout is None:
            continue
        gins = backward_fn(gout)
        for tensor, gin in zip(inputs, gins):
            if gin is None or not tensor.requires_grad:
                continue
            acc = grads.get(tensor.tid)
            grads[tensor.tid] = gin if acc is None else acc + gin
    return {tid: Tensor(g) for tid, g in grads.items()}


# ---------------------------------------------------------------------------
# elementwise and structural ops
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add requires equal shapes, got {a.shape} and {b.shape}")
    return _emit(a.data + b.data, (a, b), lambda g: (g, g))


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """x + b with b broadcast over the leading axes of x.

    b.shape must equal the trailing axes of x.shape (e.g. a per-feature
    bias for a matrix of rows, or a per-row table added to a batch).
    """
    if b.ndim >= x.ndim or x.shape[x.ndim - b.ndim:] != b.shape:
        raise ShapeError(f"bias shape {b.shape} does not match trailing axes of {x.shape}")
    lead = tuple(range(x.ndim - b.ndim))
    return _emit(x.data + b.data, (x, b), lambda g: (g, g.sum(axis=lead)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product; one operand may be a size-1 scalar."""
    if a.shape == b.shape:
        return _emit(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))
    if b.size == 1:
        return _emit(
            a.data * b.data.reshape(()),
            (a, b),
            lambda g: (g * b.data.reshape(()), (g * a.data).sum().reshape(b.shape)),
        )
    if a.size == 1:
        return _emit(
            b.data * a.data.reshape(()),
            (a, b),
            lambda g: ((g * b.data).sum().reshape(a.shape), g * a.data.reshape(())),
        )
    raise ShapeError(f"mul requires equal shapes or a scalar, got {a.shape} and {b.shape}")


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    return _emit(a.data * s, (a,), lambda g: (g * s,))


def sum_all(a: Tensor) -> Tensor:
    return _emit(a.data.sum().reshape(()), (a,), lambda g: (np.full_like(a.data, g.reshape(())),))


def concat(parts: Sequence[Tensor], axis: int) -> Tensor:
    if not parts:
        raise ContractError("concat of zero tensors")
    sizes = [t.shape[axis] for t in parts]
    offsets = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, offsets, axis=axis))

    return _emit(np.concatenate([t.data for t in parts], axis=axis), tuple(parts), bwd)


def slice_axis(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    if not (0 <= start < stop <= a.shape[axis]):
        raise ShapeError(f"slice [{start}:{stop}] out of range for axis {axis} of {a.shape}")
    key = tuple(slice(None) if i != axis else slice(start, stop) for i in range(a.ndim))

    def bwd(g):
        full = np.zeros_like(a.data)
        full[key] = g
        return (full,)

    return _emit(a.data[key].copy(), (a,), bwd)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    if int(np.prod(shape)) != a.size:
        raise ShapeError(f"cannot reshape {a.shape} to {shape}")
    return _emit(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes: tuple[int, ...]) -> Tensor:
    inv = tuple(np.argsort(axes))
    return _emit(np.ascontiguousarray(a.data.transpose(axes)), (a,), lambda g: (g.transpose(inv),))


def tile_leading(a: Tensor, n: int) -> Tensor:
    """Stack n copies of a along a new leading axis; gradient sums them."""
    if n < 1:
        raise ShapeError(f"tile count must be positive, got {n}")
    data = np.broadcast_to(a.data, (n,) + a.shape).copy()
    return _emit(data, (a,), lambda g: (g.sum(axis=0),))


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shapes do not agree: {a.shape} x {b.shape}")
    return _emit(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def bmm(a: Tensor, b: Tensor) -> Tensor:
    """Batched matmul over a shared leading axis: (B,m,k) @ (B,k,n)."""
    if a.ndim != 3 or b.ndim != 3 or a.shape[0] != b.shape[0] or a.shape[2] != b.shape[1]:
        raise ShapeError(f"bmm shapes do not agree: {a.shape} x {b.shape}")
    return _emit(
        np.matmul(a.data, b.data),
        (a, b),
        lambda g: (np.matmul(g, b.data.swapaxes(-1, -2)), np.matmul(a.data.swapaxes(-1, -2), g)),
    )


# ---------------------------------------------------------------------------
# nonlinearities and losses
# ---------------------------------------------------------------------------


def softmax(v: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax (max-subtraction) along one axis.

    The normalizer sums the exponentials in sorted order, which makes the
    result exactly permutation-equivariant (a permuted input yields the
    bitwise-permuted output).
    """
    if v.shape[axis] < 1:
        raise ShapeError(f"softmax over empty axis {axis} of {v.shape}")
    shifted = v.data - v.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    p = e / np.sort(e, axis=axis).sum(axis=axis, keepdims=True)

    def bwd(g):
        inner = (g * p).sum(axis=axis, keepdims=True)
        return (p * (g - inner),)

    return _emit(p, (v,), bwd)


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x: Tensor) -> Tensor:
    """GELU, tanh approximation (as used by GPT-2/BERT)."""
    xd = x.data
    u = _GELU_C * (xd + 0.044715 * xd**3)
    t = np.tanh(u)
    out = 0.5 * xd * (1.0 + t)

    def bwd(g):
        du = _GELU_C * (1.0 + 3 * 0.044715 * xd**2)
        return (g * (0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t**2) * du),)

    return _emit(out, (x,), bwd)


_LN_EPS = 1e-5


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale and shift."""
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm gain/bias must have shape ({d},), got {gain.shape}/{bias.shape}")
    mean = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + _LN_EPS)
    xhat = (x.data - mean) * inv
    out = xhat * gain.data + bias.data
    lead = tuple(range(x.ndim - 1))

    def bwd(g):
        gg = g * gain.data
        dx = inv * (gg - gg.mean(axis=-1, keepdims=True) - xhat * (gg * xhat).mean(axis=-1, keepdims=True))
        return (dx, (g * xhat).sum(axis=lead), g.sum(axis=lead))

    return _emit(out, (x, gain, bias), bwd)


def embedding(table: Tensor, ids: Sequence[int]) -> Tensor:
    """Row lookup table[ids]; gradient scatter-adds into the table."""
    ids = list(ids)
    if not ids:
        raise ContractError("embedding lookup of zero ids")
    n = table.shape[0]
    for i in ids:
        if not 0 <= i < n:
            raise IndexError(f"embedding id {i} out of range [0, {n})")
    idx = np.asarray(ids, dtype=np.intp)

    def bwd(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx, g)
        return (gt,)

    return _emit(table.data[idx], (table,), bwd)


def _log_softmax(data: np.ndarray) -> np.ndarray:
    shifted = data - data.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def cross_entropy(logits: Tensor, target: int) -> Tensor:
    """-log softmax(logits)[target] for a single logit vector."""
    if logits.ndim != 1:
        raise ShapeError(f"cross_entropy expects a vector of logits, got {logits.shape}")
    v = logits.shape[0]
    if not 0 <= target < v:
        raise IndexError(f"target {target} out of range [0, {v})")
    logp = _log_softmax(logits.data)
    p = np.exp(logp)

    def bwd(g):
        gi = p.copy()
        gi[target] -= 1.0
        return (gi * g.reshape(()),)

    return _emit((-logp[target]).reshape(()), (logits,), bwd)


def cross_entropy_rows(logits: Tensor, targets: Sequence[int]) -> Tensor:
    """Per-row cross-entropy for a [K x V] logit matrix against K target ids."""
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy_rows expects a matrix, got {logits.shape}")
    k, v = logits.shape
    targets = list(targets)
    if len(targets) != k:
        raise ShapeError(f"{k} logit rows but {len(targets)} targets")
    for t in targets:
        if not 0 <= t < v:
            raise IndexError(f"target {t} out of range [0, {v})")
    idx = np.asarray(targets, dtype=np.intp)
    logp = _log_softmax(logits.data)
    p = np.exp(logp)

    def bwd(g):
        gi = p.copy()
        gi[np.arange(k), idx] -= 1.0
        return (gi * g[:, None],)

    return _emit(-logp[np.arange(k), idx], (logits,), bwd)


def fuse_layers(stack: Tensor, alpha: Tensor) -> Tensor:
    """Weighted sum over the layer axis of a [T x L x d] stack.

    alpha is either a shared [L] weight vector or a per-token [T x L]
    matrix; the result is [T x d].
    """
    if stack.ndim != 3:
        raise ShapeError(f"layer stack must be [T x L x d], got {stack.shape}")
    t, l, _ = stack.shape
    if alpha.ndim == 1:
        if alpha.shape[0] != l:
            raise ShapeError(f"{l} layers but {alpha.shape[0]} weights")
        out = np.einsum("l,tld->td", alpha.data, stack.data)

        def bwd(g):
            return (
                np.einsum("l,td->tld", alpha.data, g),
                np.einsum("td,tld->l", g, stack.data),
            )

    elif alpha.ndim == 2:
        if alpha.shape != (t, l):
            raise ShapeError(f"per-token weights must be {(t, l)}, got {alpha.shape}")
        out = np.einsum("tl,tld->td", alpha.data, stack.data)

        def bwd(g):
            return (
                alpha.data[:, :, None] * g[:, None, :],
                np.einsum("td,tld->tl", g, stack.data),
            )

    else:
        raise ShapeError(f"weights must be [L] or [T x L], got {alpha.shape}")
    return _emit(out, (stack, alpha), bwd)


# ---------------------------------------------------------------------------
# finite-difference oracle
# ---------------------------------------------------------------------------


def finite_diff_grad(f: Callable[[Tensor], float], params: Tensor, eps: float = 1e-5) -> Tensor:
    """Central-difference gradient of a scalar function, one coordinate at a time.

    Independent of the tape machinery; this is the oracle that analytic
    gradients are accepted against. Perturbs ``params.data`` in place and
    restores it, so ``f`` must read the tensor it is handed.
    """
    if eps <= 0:
        raise ContractError(f"eps must be positive, got {eps}")
    flat = params.data.reshape(-1)
    grad = np.zeros(flat.shape, dtype=np.float64)
    for i in range(flat.size):
        saved = flat[i]
        flat[i] = saved + eps
        fp = float(f(params))
        flat[i] = saved - eps
        fm = float(f(params))
        flat[i] = saved
        grad[i] = (fp - fm) / (2.0 * eps)
    return Tensor(grad.reshape(params.shape))


def grad_rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Worst-case per-coordinate relative error with a unit floor.

    |a - n| / max(1, |a|, |n|), maximized over coordinates. The unit floor
    keeps noise-dominated tiny gradients from failing a relative check.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(n)))
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0
