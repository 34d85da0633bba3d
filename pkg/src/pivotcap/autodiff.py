"""Minimal reverse-mode automatic differentiation over float64 numpy arrays.

Operations run eagerly.  While a :class:`Tape` is active, every operation with
at least one differentiable input appends a node (inputs, outputs, backward
closure) to it; :meth:`Tape.backward` then walks the nodes in reverse.  A tape
can be consumed once: a second ``backward`` raises instead of doubling grads.

Outside a tape the same functions are plain numpy evaluation, which is what
decoding uses.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from . import kernels

_TAPES: list["Tape"] = []


class Tensor:
    """Dense float64 array with an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_tape")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._tape: Tape | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _not_scalar(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        label = f" {self.name}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, _lift(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __mul__(self, other):
        return mul(self, _lift(other))

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)


def _not_scalar(t: Tensor):
    raise ValueError(f"expected a single-element tensor, got shape {t.shape}")


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


class Tape:
    """Ordered record of the operations of one forward pass."""

    def __init__(self):
        self.nodes: list[tuple[tuple[Tensor, ...], Callable]] = []
        self.consumed = False

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.remove(self)

    def __len__(self) -> int:
        return len(self.nodes)

    def backward(self, loss: Tensor) -> None:
        if self.consumed:
            raise RuntimeError("backward already ran on this tape; record a new forward pass")
        if loss.data.size != 1:
            raise ValueError(f"backward needs a scalar, got shape {loss.shape}")
        if loss._tape is not self:
            raise ValueError("loss was not produced on this tape")
        self.consumed = True
        loss.grad = np.ones_like(loss.data)
        for outputs, fn in reversed(self.nodes):
            grads = [o.grad for o in outputs]
            if all(g is None for g in grads):
                continue
            fn(*[np.zeros_like(o.data) if g is None else g for o, g in zip(outputs, grads)])


def no_grad_active() -> bool:
    return not _TAPES


def _record(inputs: Sequence[Tensor], outputs: Sequence[Tensor], fn: Callable) -> bool:
    if not _TAPES or not any(t.requires_grad for t in inputs):
        return False
    tape = _TAPES[-1]
    for o in outputs:
        o.requires_grad = True
        o._tape = tape
    tape.nodes.append((tuple(outputs), fn))
    return True


def _acc(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad += g


def backward(loss: Tensor) -> None:
    """Back-propagate from a scalar produced on an active or finished tape."""
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar, got shape {loss.shape}")
    if loss._tape is None:
        raise ValueError("loss does not depend on any differentiable tensor recorded on a tape")
    loss._tape.backward(loss)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_same(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------------------
# Linear algebra
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: dimension mismatch between {a.shape} and {b.shape}")
    out = Tensor(a.data @ b.data)

    def bwd(g):
        _acc(a, g @ b.data.T)
        _acc(b, a.data.T @ g)

    _record((a, b), (out,), bwd)
    return out


def linear(x: Tensor, W: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ W.T + b`` for ``x[n, in]``, ``W[out, in]``, ``b[out]``."""
    if x.data.ndim != 2 or W.data.ndim != 2 or x.shape[1] != W.shape[1]:
        raise ValueError(f"linear: input {x.shape} does not match weight {W.shape}")
    y = x.data @ W.data.T
    if b is not None:
        y += b.data
    out = Tensor(y)
    inputs = (x, W) if b is None else (x, W, b)

    def bwd(g):
        _acc(x, g @ W.data)
        _acc(W, g.T @ x.data)
        if b is not None:
            _acc(b, g.sum(axis=0))

    _record(inputs, (out,), bwd)
    return out


# ---------------------------------------------------------------------------
# Pointwise
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same("add", a, b)
    out = Tensor(a.data + b.data)

    def bwd(g):
        _acc(a, _unbroadcast(g, a.shape))
        _acc(b, _unbroadcast(g, b.shape))

    _record((a, b), (out,), bwd)
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same("sub", a, b)
    out = Tensor(a.data - b.data)

    def bwd(g):
        _acc(a, _unbroadcast(g, a.shape))
        _acc(b, _unbroadcast(-g, b.shape))

    _record((a, b), (out,), bwd)
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same("mul", a, b)
    out = Tensor(a.data * b.data)

    def bwd(g):
        _acc(a, _unbroadcast(g * b.data, a.shape))
        _acc(b, _unbroadcast(g * a.data, b.shape))

    _record((a, b), (out,), bwd)
    return out


def scale(a: Tensor, c: float) -> Tensor:
    out = Tensor(a.data * c)
    _record((a,), (out,), lambda g: _acc(a, g * c))
    return out


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    out = Tensor(y)
    _record((a,), (out,), lambda g: _acc(a, g * (1.0 - y * y)))
    return out


def sigmoid(a: Tensor) -> Tensor:
    y = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    out = Tensor(y)
    _record((a,), (out,), lambda g: _acc(a, g * y * (1.0 - y)))
    return out


def sqrt(a: Tensor) -> Tensor:
    y = np.sqrt(a.data)
    out = Tensor(y)
    _record((a,), (out,), lambda g: _acc(a, g * 0.5 / y))
    return out


_ELEMENTWISE = {"add": add, "sub": sub, "mul": mul, "tanh": tanh, "sigmoid": sigmoid}


def elementwise(op: str, *inputs: Tensor) -> Tensor:
    """Dispatch ``add``/``sub``/``mul`` (binary) or ``tanh``/``sigmoid`` (unary)."""
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}") from None
    if op in ("add", "sub", "mul"):
        a, b = inputs
        if a.shape != b.shape:
            raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")
    return fn(*inputs)


# ---------------------------------------------------------------------------
# Reductions and shape manipulation
# ---------------------------------------------------------------------------

def sum(a: Tensor, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy
    out = Tensor(np.sum(a.data, axis=axis))

    def bwd(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        _acc(a, np.broadcast_to(g, a.shape))

    _record((a,), (out,), bwd)
    return out


def mean(a: Tensor) -> Tensor:
    n = max(a.data.size, 1)
    out = Tensor(np.mean(a.data) if a.data.size else 0.0)
    _record((a,), (out,), lambda g: _acc(a, np.broadcast_to(g / n, a.shape)))
    return out


def reshape(a: Tensor, shape) -> Tensor:
    out = Tensor(a.data.reshape(shape))
    _record((a,), (out,), lambda g: _acc(a, g.reshape(a.shape)))
    return out


def concat(ts: Sequence[Tensor], axis: int = -1) -> Tensor:
    out = Tensor(np.concatenate([t.data for t in ts], axis=axis))
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def bwd(g):
        for t, piece in zip(ts, np.split(g, bounds, axis=axis)):
            _acc(t, piece)

    _record(ts, (out,), bwd)
    return out


def stack(ts: Sequence[Tensor], axis: int = 0) -> Tensor:
    out = Tensor(np.stack([t.data for t in ts], axis=axis))

    def bwd(g):
        for k, t in enumerate(ts):
            _acc(t, np.take(g, k, axis=axis))

    _record(ts, (out,), bwd)
    return out


def getitem(a: Tensor, index) -> Tensor:
    out = Tensor(a.data[index])

    def bwd(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            np.add.at(full, index, g)
            _acc(a, full)

    _record((a,), (out,), bwd)
    return out


def detach(a: Tensor) -> Tensor:
    return Tensor(a.data)


# ---------------------------------------------------------------------------
# Embeddings, softmax, losses
# ---------------------------------------------------------------------------

def embedding_lookup(E: Tensor, ids) -> Tensor:
    """Gather rows of ``E[V, d]``; ``ids`` may have any integer shape."""
    ids = np.asarray(ids, dtype=np.int64)
    V = E.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= V):
        raise IndexError(f"embedding id out of range [0, {V}): {ids.min()}..{ids.max()}")
    out = Tensor(E.data[ids] if ids.size else np.zeros(ids.shape + (E.shape[1],)))

    def bwd(g):
        if E.requires_grad:
            flat = ids.reshape(-1)
            # one-hot product: much faster than np.add.at for small batches
            onehot = np.zeros((flat.size, E.shape[0]))
            onehot[np.arange(flat.size), flat] = 1.0
            _acc(E, onehot.T @ g.reshape(-1, E.shape[1]))

    _record((E,), (out,), bwd)
    return out


def log_softmax(x: Tensor) -> Tensor:
    """Row-wise log-softmax of a 2-D tensor with max subtraction."""
    if x.data.ndim != 2 or x.shape[1] < 1:
        raise ValueError(f"log_softmax expects [n, V>=1], got {x.shape}")
    y = x.data - kernels.logsumexp_rows(x.data)[:, None]
    out = Tensor(y)
    _record((x,), (out,), lambda g: _acc(x, g - np.exp(y) * g.sum(axis=1, keepdims=True)))
    return out


def cross_entropy(logits: Tensor, targets, mask=None) -> Tensor:
    """Mean of ``-log_softmax(logits)[n, targets[n]]`` over rows where ``mask`` holds."""
    targets = np.asarray(targets, dtype=np.int64).reshape(-1)
    if logits.data.ndim != 2 or logits.shape[0] != targets.size:
        raise ValueError(f"cross_entropy: logits {logits.shape} vs {targets.size} targets")
    if targets.size and (targets.min() < 0 or targets.max() >= logits.shape[1]):
        raise IndexError("cross_entropy: target id out of range")
    weights = np.ones(targets.size) if mask is None else np.asarray(mask, dtype=np.float64).reshape(-1)
    count = weights.sum()
    if count <= 0:
        raise ValueError("cross_entropy: every position is masked")
    weights = weights / count
    total, lse = kernels.xe_fwd(logits.data, targets, weights)
    out = Tensor(np.array(total))
    _record((logits,), (out,),
            lambda g: _acc(logits, kernels.xe_bwd(logits.data, targets, weights, lse, float(g))))
    return out


def row_l2_sum(A: Tensor, B: Tensor, rows_a, rows_b, eps: float = 0.0) -> Tensor:
    """``sum_k sqrt(||A[rows_a[k]] - B[rows_b[k]]||^2 + eps)``."""
    rows_a = np.asarray(rows_a, dtype=np.int64)
    rows_b = np.asarray(rows_b, dtype=np.int64)
    if rows_a.size == 0:
        return Tensor(np.array(0.0))
    diff = A.data[rows_a] - B.data[rows_b]
    norms = np.sqrt((diff * diff).sum(axis=1) + eps)
    out = Tensor(np.array(norms.sum()))

    def bwd(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            unit = np.where(norms[:, None] > 0, diff / norms[:, None], 0.0) * g
        if A.requires_grad:
            full = np.zeros_like(A.data)
            np.add.at(full, rows_a, unit)
            _acc(A, full)
        if B.requires_grad:
            full = np.zeros_like(B.data)
            np.add.at(full, rows_b, -unit)
            _acc(B, full)

    _record((A, B), (out,), bwd)
    return out


# ---------------------------------------------------------------------------
# Fused recurrent / attention ops
# ---------------------------------------------------------------------------

def lstm_cell(x: Tensor, h: Tensor, c: Tensor, W: Tensor, b: Tensor, mask=None):
    """One LSTM step on a batch; returns ``(h', c')``.

    ``W[4H, d+H]`` acts on ``[x; h]``; gate order i, f, o, g.  Rows where
    ``mask`` is false carry ``(h, c)`` through unchanged (padding).
    """
    B, H = h.shape
    if x.data.ndim != 2 or x.shape[0] != B or W.shape != (4 * H, x.shape[1] + H) or b.shape != (4 * H,):
        raise ValueError(f"lstm_cell: x {x.shape}, h {h.shape}, W {W.shape}, b {b.shape} do not agree")
    xh = np.concatenate([x.data, h.data], axis=1)
    gates = xh @ W.data.T + b.data
    h_new, c_new, acts, tc = kernels.lstm_pointwise_fwd(gates, c.data)
    if mask is not None:
        m = np.asarray(mask, dtype=np.float64).reshape(B, 1)
        h_new = m * h_new + (1.0 - m) * h.data
        c_new = m * c_new + (1.0 - m) * c.data
    out_h, out_c = Tensor(h_new), Tensor(c_new)
    d = x.shape[1]

    def bwd(gh, gc):
        if mask is not None:
            dh_cell, dc_cell = m * gh, m * gc
        else:
            dh_cell, dc_cell = gh, gc
        dgates, dc_prev = kernels.lstm_pointwise_bwd(dh_cell, dc_cell, acts, tc, c.data)
        dxh = dgates @ W.data
        _acc(W, dgates.T @ xh)
        _acc(b, dgates.sum(axis=0))
        _acc(x, dxh[:, :d])
        if mask is not None:
            _acc(h, dxh[:, d:] + (1.0 - m) * gh)
            _acc(c, dc_prev + (1.0 - m) * gc)
        else:
            _acc(h, dxh[:, d:])
            _acc(c, dc_prev)

    _record((x, h, c, W, b), (out_h, out_c), bwd)
    return out_h, out_c


def additive_attention(q: Tensor, keys: Tensor, v: Tensor, ann: Tensor, mask):
    """Masked additive attention; returns ``(context[B, K], weights[B, M])``.

    ``q[B, A]`` is the projected query, ``keys[B, M, A]`` the projected
    annotations, ``ann[B, M, K]`` the annotations themselves.
    """
    mask = np.asarray(mask, dtype=bool)
    if not mask.any(axis=1).all():
        raise ValueError("attention: every position of some row is masked")
    ctx, w, t = kernels.attention_fwd(q.data, keys.data, v.data, ann.data, mask)
    out_ctx, out_w = Tensor(ctx), Tensor(w)

    def bwd(gctx, gw):
        dq, dkeys, dv, dann = kernels.attention_bwd(gctx, gw, w, t, v.data, ann.data)
        _acc(q, dq)
        _acc(keys, dkeys)
        _acc(v, dv)
        _acc(ann, dann)

    _record((q, keys, v, ann), (out_ctx, out_w), bwd)
    return out_ctx, out_w


def dropout(x: Tensor, p: float, training: bool, rng=None) -> Tensor:
    """Inverted dropout: zero with probability ``p``, scale survivors by ``1/(1-p)``."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return mul(x, Tensor(keep))


# ---------------------------------------------------------------------------
# Finite-difference verification
# ---------------------------------------------------------------------------

def finite_diff_check(loss_fn: Callable[[], Tensor], params: Iterable[Tensor], h: float = 1e-5,
                      coords: int | None = None, rng=None) -> float:
    """Largest ``|a - n| / max(1e-8, |a| + |n|)`` between backprop and central differences.

    ``coords`` caps the number of coordinates probed per parameter (chosen with
    ``rng``); ``None`` probes every coordinate.
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    params = list(params)
    for p in params:
        p.grad = None
        if not p.data.flags.c_contiguous:
            p.data = np.ascontiguousarray(p.data)
    with Tape() as tape:
        loss = loss_fn()
    f0 = loss.item()
    if not np.isfinite(f0):
        raise FloatingPointError(f"non-finite loss {f0}")
    if loss._tape is tape:
        tape.backward(loss)
    worst = 0.0
    for p in params:
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if coords is not None and flat.size > coords:
            idx = np.sort(rng.permutation(flat.size)[:coords])
        for k in idx:
            keep = flat[k]
            flat[k] = keep + h
            fp = loss_fn().item()
            flat[k] = keep - h
            fm = loss_fn().item()
            flat[k] = keep
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise FloatingPointError("non-finite loss during finite differences")
            num = (fp - fm) / (2.0 * h)
            a = analytic.reshape(-1)[k]
            worst = max(worst, abs(a - num) / max(1e-8, abs(a) + abs(num)))
    for p in params:
        p.grad = None
    return worst
