"""Adam with bias correction, and exponential moving averages of parameters."""

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state, lr):
    """Update ``params`` in place from ``grads``; tensors without a gradient are left alone."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            bad = int(np.sum(~np.isfinite(g)))
            raise FloatingPointError(
                f"non-finite gradient for {name!r} ({bad} entries) at optimizer step {state.step + 1}"
            )
        if name not in params:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        if params[name].shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {name!r} {params[name].shape}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1**state.step
    corr2 = 1.0 - b2**state.step
    for name, g in grads.items():
        g = np.asarray(g, dtype=np.float64)
        m = state.m.get(name, np.zeros_like(g))
        v = state.v.get(name, np.zeros_like(g))
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        state.m[name], state.v[name] = m, v
        update = lr * (m / corr1) / (np.sqrt(v / corr2) + state.eps)
        params[name] -= update.astype(params[name].dtype)
    return params, state


def ema_update(shadow, params, decay):
    for name, p in params.items():
        shadow[name] = (decay * shadow[name] + (1.0 - decay) * p).astype(p.dtype)
    return shadow
