"""Hot numeric kernels with a numba path and a pure-numpy path.

Every kernel exists twice with the same signature: ``<name>_np`` (vectorised
numpy) and ``_<name>_py`` (explicit loops, compiled with ``@njit`` when numba
imports).  ``NUMPY_KERNELS`` and ``NUMBA_KERNELS`` collect the two families and
the names without suffix are bound at import time to one of them.  Set
``PIVOTCAP_NUMBA=0`` in the environment to force the numpy path.

The xoshiro kernels are integer-only, so both backends emit bit-identical
streams.  The floating-point kernels agree to rounding (different ``exp``/``tanh``
implementations), so a run is reproducible bitwise only under a fixed backend.
"""

from __future__ import annotations

import os

import numpy as np

try:
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None
    HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA and os.environ.get("PIVOTCAP_NUMBA", "1") not in ("0", "false", "no")
BACKEND = "numba" if USE_NUMBA else "numpy"

_U64 = np.uint64


# ---------------------------------------------------------------------------
# xoshiro256** over independent lanes
# ---------------------------------------------------------------------------

def xoshiro_fill_np(state: np.ndarray, rounds: int) -> np.ndarray:
    """Advance all lanes ``rounds`` times; returns ``rounds * L`` words, lane-minor."""
    lanes = state.shape[1]
    out = np.empty((rounds, lanes), dtype=np.uint64)
    s0, s1, s2, s3 = state[0].copy(), state[1].copy(), state[2].copy(), state[3].copy()
    five, nine = _U64(5), _U64(9)
    k7, k57, k17, k45, k19 = _U64(7), _U64(57), _U64(17), _U64(45), _U64(19)
    for r in range(rounds):
        x = s1 * five
        out[r] = ((x << k7) | (x >> k57)) * nine
        t = s1 << k17
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = (s3 << k45) | (s3 >> k19)
    state[0], state[1], state[2], state[3] = s0, s1, s2, s3
    return out.reshape(-1)


def _xoshiro_fill_py(state, rounds):
    lanes = state.shape[1]
    out = np.empty(rounds * lanes, dtype=np.uint64)
    five = np.uint64(5)
    nine = np.uint64(9)
    k7 = np.uint64(7)
    k57 = np.uint64(57)
    k17 = np.uint64(17)
    k45 = np.uint64(45)
    k19 = np.uint64(19)
    for j in range(lanes):
        s0 = state[0, j]
        s1 = state[1, j]
        s2 = state[2, j]
        s3 = state[3, j]
        for r in range(rounds):
            x = s1 * five
            out[r * lanes + j] = ((x << k7) | (x >> k57)) * nine
            t = s1 << k17
            s2 ^= s0
            s3 ^= s1
            s1 ^= s2
            s0 ^= s3
            s2 ^= t
            s3 = (s3 << k45) | (s3 >> k19)
        state[0, j] = s0
        state[1, j] = s1
        state[2, j] = s2
        state[3, j] = s3
    return out


# ---------------------------------------------------------------------------
# LSTM pointwise gates.  Gate layout along the last axis: i, f, o, g.
# ---------------------------------------------------------------------------

def lstm_pointwise_fwd_np(gates, c_prev):
    H = c_prev.shape[1]
    acts = np.empty_like(gates)
    acts[:, : 3 * H] = 0.5 * (1.0 + np.tanh(0.5 * gates[:, : 3 * H]))
    acts[:, 3 * H:] = np.tanh(gates[:, 3 * H:])
    i, f, o, g = acts[:, :H], acts[:, H:2 * H], acts[:, 2 * H:3 * H], acts[:, 3 * H:]
    c = f * c_prev + i * g
    tc = np.tanh(c)
    h = o * tc
    return h, c, acts, tc


def lstm_pointwise_bwd_np(dh, dc, acts, tc, c_prev):
    H = c_prev.shape[1]
    i, f, o, g = acts[:, :H], acts[:, H:2 * H], acts[:, 2 * H:3 * H], acts[:, 3 * H:]
    dc_tot = dc + dh * o * (1.0 - tc * tc)
    dgates = np.empty_like(acts)
    dgates[:, :H] = dc_tot * g * i * (1.0 - i)
    dgates[:, H:2 * H] = dc_tot * c_prev * f * (1.0 - f)
    dgates[:, 2 * H:3 * H] = dh * tc * o * (1.0 - o)
    dgates[:, 3 * H:] = dc_tot * i * (1.0 - g * g)
    return dgates, dc_tot * f


def _lstm_pointwise_fwd_py(gates, c_prev):
    # scalar libm tanh is slow inside loops; exp-based forms are exact to rounding
    B, H = c_prev.shape
    acts = np.empty_like(gates)
    c = np.empty_like(c_prev)
    tc = np.empty_like(c_prev)
    h = np.empty_like(c_prev)
    for b in range(B):
        for j in range(3 * H):
            x = gates[b, j]
            if x >= 0.0:
                acts[b, j] = 1.0 / (1.0 + np.exp(-x))
            else:
                e = np.exp(x)
                acts[b, j] = e / (1.0 + e)
        for k in range(H):
            x = gates[b, 3 * H + k]
            e = np.exp(-2.0 * abs(x))
            g = (1.0 - e) / (1.0 + e)
            if x < 0.0:
                g = -g
            acts[b, 3 * H + k] = g
            cc = acts[b, H + k] * c_prev[b, k] + acts[b, k] * g
            e = np.exp(-2.0 * abs(cc))
            t = (1.0 - e) / (1.0 + e)
            if cc < 0.0:
                t = -t
            c[b, k] = cc
            tc[b, k] = t
            h[b, k] = acts[b, 2 * H + k] * t
    return h, c, acts, tc


def _lstm_pointwise_bwd_py(dh, dc, acts, tc, c_prev):
    B, H = c_prev.shape
    dgates = np.empty_like(acts)
    dc_prev = np.empty_like(c_prev)
    for b in range(B):
        for k in range(H):
            i = acts[b, k]
            f = acts[b, H + k]
            o = acts[b, 2 * H + k]
            g = acts[b, 3 * H + k]
            t = tc[b, k]
            dct = dc[b, k] + dh[b, k] * o * (1.0 - t * t)
            dgates[b, k] = dct * g * i * (1.0 - i)
            dgates[b, H + k] = dct * c_prev[b, k] * f * (1.0 - f)
            dgates[b, 2 * H + k] = dh[b, k] * t * o * (1.0 - o)
            dgates[b, 3 * H + k] = dct * i * (1.0 - g * g)
            dc_prev[b, k] = dct * f
    return dgates, dc_prev


# ---------------------------------------------------------------------------
# Row-wise log-sum-exp, log-softmax and masked cross-entropy
# ---------------------------------------------------------------------------

def logsumexp_rows_np(x):
    m = x.max(axis=1)
    return m + np.log(np.exp(x - m[:, None]).sum(axis=1))


def xe_fwd_np(logits, targets, weights):
    lse = logsumexp_rows_np(logits)
    picked = logits[np.arange(logits.shape[0]), targets]
    return float(np.dot(weights, lse - picked)), lse


def xe_bwd_np(logits, targets, weights, lse, g):
    d = np.exp(logits - lse[:, None])
    d[np.arange(logits.shape[0]), targets] -= 1.0
    d *= (g * weights)[:, None]
    return d


def _logsumexp_rows_py(x):
    N, V = x.shape
    out = np.empty(N)
    for n in range(N):
        m = x[n, 0]
        for v in range(1, V):
            if x[n, v] > m:
                m = x[n, v]
        s = 0.0
        for v in range(V):
            s += np.exp(x[n, v] - m)
        out[n] = m + np.log(s)
    return out


def _xe_fwd_py(logits, targets, weights):
    N, V = logits.shape
    lse = np.empty(N)
    total = 0.0
    for n in range(N):
        m = logits[n, 0]
        for v in range(1, V):
            if logits[n, v] > m:
                m = logits[n, v]
        s = 0.0
        for v in range(V):
            s += np.exp(logits[n, v] - m)
        lse[n] = m + np.log(s)
        if weights[n] != 0.0:
            total += weights[n] * (lse[n] - logits[n, targets[n]])
    return total, lse


def _xe_bwd_py(logits, targets, weights, lse, g):
    N, V = logits.shape
    d = np.empty_like(logits)
    for n in range(N):
        s = g * weights[n]
        for v in range(V):
            d[n, v] = s * np.exp(logits[n, v] - lse[n])
        d[n, targets[n]] -= s
    return d


# ---------------------------------------------------------------------------
# Additive attention over a masked set of annotations
# ---------------------------------------------------------------------------

def attention_fwd_np(q, kp, v, ann, mask):
    t = np.tanh(kp + q[:, None, :])
    e = t @ v
    e = np.where(mask, e, -np.inf)
    e -= e.max(axis=1, keepdims=True)
    w = np.exp(e)
    w /= w.sum(axis=1, keepdims=True)
    ctx = (w[:, None, :] @ ann)[:, 0, :]
    return ctx, w, t


def attention_bwd_np(dctx, dw, w, t, v, ann):
    dann = w[:, :, None] * dctx[:, None, :]
    dw_tot = (ann @ dctx[:, :, None])[:, :, 0] + dw
    de = w * (dw_tot - (w * dw_tot).sum(axis=1, keepdims=True))
    dpre = de[:, :, None] * v * (1.0 - t * t)
    dq = dpre.sum(axis=1)
    dv = np.einsum("bm,bma->a", de, t)
    return dq, dpre, dv, dann


def _attention_fwd_py(q, kp, v, ann, mask):
    B, M, A = kp.shape
    K = ann.shape[2]
    t = np.empty_like(kp)
    w = np.zeros((B, M))
    ctx = np.zeros((B, K))
    for b in range(B):
        emax = -np.inf
        for m in range(M):
            s = 0.0
            for a in range(A):
                x = kp[b, m, a] + q[b, a]
                e = np.exp(-2.0 * abs(x))
                z = (1.0 - e) / (1.0 + e)
                if x < 0.0:
                    z = -z
                t[b, m, a] = z
                s += z * v[a]
            w[b, m] = s
            if mask[b, m] and s > emax:
                emax = s
        tot = 0.0
        for m in range(M):
            if mask[b, m]:
                w[b, m] = np.exp(w[b, m] - emax)
                tot += w[b, m]
            else:
                w[b, m] = 0.0
        for m in range(M):
            w[b, m] /= tot
            for k in range(K):
                ctx[b, k] += w[b, m] * ann[b, m, k]
    return ctx, w, t


def _attention_bwd_py(dctx, dw, w, t, v, ann):
    B, M, A = t.shape
    K = ann.shape[2]
    dann = np.empty_like(ann)
    dpre = np.empty_like(t)
    dq = np.zeros((B, A))
    dv = np.zeros(A)
    dwt = np.empty(M)
    for b in range(B):
        acc = 0.0
        for m in range(M):
            s = dw[b, m]
            for k in range(K):
                s += ann[b, m, k] * dctx[b, k]
                dann[b, m, k] = w[b, m] * dctx[b, k]
            dwt[m] = s
            acc += w[b, m] * s
        for m in range(M):
            de = w[b, m] * (dwt[m] - acc)
            for a in range(A):
                z = t[b, m, a]
                dp = de * v[a] * (1.0 - z * z)
                dpre[b, m, a] = dp
                dq[b, a] += dp
                dv[a] += de * z
    return dq, dpre, dv, dann


NUMPY_KERNELS = {
    "xoshiro_fill": xoshiro_fill_np,
    "lstm_pointwise_fwd": lstm_pointwise_fwd_np,
    "lstm_pointwise_bwd": lstm_pointwise_bwd_np,
    "logsumexp_rows": logsumexp_rows_np,
    "xe_fwd": xe_fwd_np,
    "xe_bwd": xe_bwd_np,
    "attention_fwd": attention_fwd_np,
    "attention_bwd": attention_bwd_np,
}

_LOOP_SOURCES = {
    "xoshiro_fill": _xoshiro_fill_py,
    "lstm_pointwise_fwd": _lstm_pointwise_fwd_py,
    "lstm_pointwise_bwd": _lstm_pointwise_bwd_py,
    "logsumexp_rows": _logsumexp_rows_py,
    "xe_fwd": _xe_fwd_py,
    "xe_bwd": _xe_bwd_py,
    "attention_fwd": _attention_fwd_py,
    "attention_bwd": _attention_bwd_py,
}

if HAS_NUMBA:
    _njit = numba.njit(cache=True, nogil=True)
    NUMBA_KERNELS = {name: _njit(fn) for name, fn in _LOOP_SOURCES.items()}
    # exp-bound kernels: scalar libm exp in a compiled loop loses to numpy's
    # vectorised exp at training shapes (see benchmarks/), so they stay on numpy
    for _name in ("lstm_pointwise_fwd", "logsumexp_rows", "xe_fwd", "xe_bwd", "attention_fwd"):
        NUMBA_KERNELS[_name] = NUMPY_KERNELS[_name]
else:  # pragma: no cover
    NUMBA_KERNELS = {}


def kernel_family(backend: str | None = None) -> dict:
    """Return the kernel table for ``backend`` (``"numba"`` or ``"numpy"``)."""
    backend = backend or BACKEND
    if backend == "numba":
        if not HAS_NUMBA:
            raise RuntimeError("numba backend requested but numba is not importable")
        return NUMBA_KERNELS
    if backend == "numpy":
        return NUMPY_KERNELS
    raise ValueError(f"unknown kernel backend {backend!r}")


_active = kernel_family()
xoshiro_fill = _active["xoshiro_fill"]
lstm_pointwise_fwd = _active["lstm_pointwise_fwd"]
lstm_pointwise_bwd = _active["lstm_pointwise_bwd"]
logsumexp_rows = _active["logsumexp_rows"]
xe_fwd = _active["xe_fwd"]
xe_bwd = _active["xe_bwd"]
attention_fwd = _active["attention_fwd"]
attention_bwd = _active["attention_bwd"]
