"""Adam with decoupled weight decay, and global-norm gradient clipping."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor


@dataclass
class AdamState:
    lr: float = 4e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> tuple[dict[str, np.ndarray], float]:
    """Scale all grads by ``max_norm / norm`` when the global norm exceeds ``max_norm``.

    Returns the (possibly rescaled) grads and the pre-clip global norm.
    """
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    norm = float(np.sqrt(sum(float(np.vdot(g, g)) for g in grads.values())))
    if norm > max_norm:
        s = max_norm / norm
        return {k: g * s for k, g in grads.items()}, norm
    return grads, norm


def adam_step(state: AdamState, params: dict[str, Tensor], grads: dict[str, np.ndarray]) -> None:
    """One bias-corrected Adam update, in place on ``params`` and ``state``.

    Parameters without an entry in ``grads`` are left untouched (no decay either).
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}; step aborted")
    state.t += 1
    t = state.t
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, g in grads.items():
        p = params[name]
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        if state.weight_decay:
            p.data *= 1.0 - state.lr * state.weight_decay
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


class Adam:
    """Optimizer over a named parameter dict, with optional gradient clipping."""

    def __init__(self, params: dict[str, Tensor], lr: float = 4e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8, weight_decay: float = 0.0,
                 clip_norm: float | None = 5.0, frozen: frozenset[str] = frozenset()):
        self.params = params
        self.state = AdamState(lr, beta1, beta2, eps, weight_decay)
        self.clip_norm = clip_norm
        self.frozen = frozen

    def collect_grads(self) -> dict[str, np.ndarray]:
        return {k: (p.grad if p.grad is not None else np.zeros_like(p.data))
                for k, p in self.params.items() if k not in self.frozen}

    def step(self) -> float:
        """Apply one update from the accumulated ``.grad`` buffers; returns the pre-clip norm."""
        grads = self.collect_grads()
        norm = float("nan")
        if self.clip_norm is not None:
            grads, norm = clip_global_norm(grads, self.clip_norm)
        adam_step(self.state, self.params, grads)
        return norm

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None
