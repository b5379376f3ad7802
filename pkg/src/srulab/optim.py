"""Nesterov-momentum Adam (NAdam) and the step learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .tensor import Tensor


class NonFiniteGradientError(FloatingPointError):
    """An update was rejected because a gradient held NaN or inf."""


@dataclass
class NAdamState:
    lr: float = 2e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params: Sequence[Tensor], **kw) -> "NAdamState":
        state = cls(**kw)
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
        return state


def nadam_step(params: Sequence[Tensor], grads: Sequence[np.ndarray], state: NAdamState,
               names: Sequence[str] | None = None) -> None:
    """Apply one NAdam update in place.

    Uses Dozat's constant-momentum form::

        m = b1*m + (1-b1)*g ;  v = b2*v + (1-b2)*g^2
        m_hat = b1*m/(1-b1^(t+1)) + (1-b1)*g/(1-b1^t)
        p -= lr * m_hat / (sqrt(v/(1-b2^t)) + eps)

    The whole update is rejected (nothing mutated) if any gradient is
    non-finite.
    """
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    if not (len(params) == len(grads) == len(state.m)):
        raise ValueError(f"nadam_step: {len(params)} params, {len(grads)} grads, {len(state.m)} moment slots")
    bad = []
    for k, (p, g, m) in enumerate(zip(params, grads, state.m)):
        if p.shape != np.shape(g) or p.shape != m.shape:
            raise ValueError(f"nadam_step: param {k} shape {p.shape} vs grad {np.shape(g)} vs state {m.shape}")
        if not np.all(np.isfinite(g)):
            bad.append(names[k] if names else f"param[{k}] shape={p.shape}")
    if bad:
        raise NonFiniteGradientError("non-finite gradient in " + ", ".join(bad) + "; update rejected")

    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1_next = 1.0 - b1 ** (t + 1)
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = b1 * m / c1_next + (1.0 - b1) * g / c1
        p.data -= state.lr * m_hat / (np.sqrt(v / c2) + state.eps)


def lr_schedule(epoch: int, base: float = 2e-3, reduced: float = 4e-4, milestone: int = 800) -> float:
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    return base if epoch < milestone else reduced
