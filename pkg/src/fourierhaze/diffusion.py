"""Noise schedules, closed-form forward noising and deterministic implicit steps."""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step variances and cumulative products.

    Arrays are indexed by time step with a leading entry for ``t = 0``:
    ``beta[0] = 0`` and ``alpha_bar[0] = 1``.
    """

    T: int
    beta: np.ndarray
    alpha_bar: np.ndarray

    def sqrt_ab(self, t):
        return np.sqrt(self.alpha_bar[t])

    def check_step(self, t, allow_zero=False):
        lo = 0 if allow_zero else 1
        t_arr = np.asarray(t)
        if np.any(t_arr < lo) or np.any(t_arr > self.T):
            raise ValueError(f"time step {t} outside [{lo}, {self.T}]")


@dataclass(frozen=True)
class StepPlan:
    T: int
    S: int
    pairs: tuple

    @property
    def timesteps(self):
        return [t for t, _ in self.pairs]


def build_schedule(T=1000, beta_start=1e-4, beta_end=0.02):
    """Linear variance schedule over ``T`` steps."""
    T = int(T)
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ValueError(
            f"need 0 < beta_start <= beta_end < 1, got beta_start={beta_start}, beta_end={beta_end}"
        )
    betas = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    beta = np.concatenate([[0.0], betas])
    alpha_bar = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
    return NoiseSchedule(T, beta, alpha_bar)


def posterior_variance(sched):
    """``sigma_t^2 = (1 - ab_{t-1}) / (1 - ab_t) * beta_t`` for t = 1..T (index 0 unused)."""
    ab = sched.alpha_bar
    var = np.zeros(sched.T + 1)
    var[1:] = (1.0 - ab[:-1]) / (1.0 - ab[1:]) * sched.beta[1:]
    return var


def _bcast(values, ndim):
    values = np.asarray(values, dtype=np.float64)
    return values.reshape(values.shape + (1,) * (ndim - values.ndim))


def forward_diffuse(x0, t, eps, sched):
    """``sqrt(ab_t) * x0 + sqrt(1 - ab_t) * eps``; ``t`` may be an array over the batch axis."""
    x0 = np.asarray(x0)
    eps = np.asarray(eps)
    if x0.shape != eps.shape:
        raise ValueError(f"x0 {x0.shape} and eps {eps.shape} differ in shape")
    sched.check_step(t, allow_zero=True)
    ab = _bcast(sched.alpha_bar[t], x0.ndim)
    return (np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps).astype(x0.dtype)


def predict_x0(x_t, eps_hat, t, sched):
    sched.check_step(t)
    x_t = np.asarray(x_t)
    ab = _bcast(sched.alpha_bar[t], x_t.ndim)
    return ((x_t - np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(ab)).astype(x_t.dtype)


def ddim_update(x_t, eps_hat, ab_t, ab_next, clip_x0=False):
    """Deterministic implicit update between two cumulative-product levels.

    ``clip_x0`` clamps the intermediate clean estimate to [-1, 1] (the usual
    "clip denoised" sampling option); the noise direction keeps ``eps_hat``.
    """
    x_t = np.asarray(x_t)
    x0_hat = (x_t - np.sqrt(1.0 - ab_t) * eps_hat) / np.sqrt(ab_t)
    if clip_x0:
        x0_hat = np.clip(x0_hat, -1.0, 1.0)
    return (np.sqrt(ab_next) * x0_hat + np.sqrt(1.0 - ab_next) * eps_hat).astype(x_t.dtype)


def ddim_step(x_t, eps_hat, t, t_next, sched, clip_x0=False):
    if not 0 <= t_next < t:
        raise ValueError(f"need 0 <= t_next < t, got t={t}, t_next={t_next}")
    sched.check_step(t)
    return ddim_update(x_t, eps_hat, sched.alpha_bar[t], sched.alpha_bar[t_next], clip_x0)


def ddim_eps_coefficient(t, t_next, sched):
    """d(ddim_step)/d(eps_hat), used when backpropagating through the last step."""
    ab_t, ab_n = sched.alpha_bar[t], sched.alpha_bar[t_next]
    return float(np.sqrt(1.0 - ab_n) - np.sqrt(ab_n) * np.sqrt(1.0 - ab_t) / np.sqrt(ab_t))


def ddim_eps_jacobian(x_t, eps_hat, t, t_next, sched, clip_x0=False):
    """Element-wise d(ddim_step)/d(eps_hat); clamped elements keep only the direction term."""
    coef = ddim_eps_coefficient(t, t_next, sched)
    if not clip_x0:
        return np.full(np.shape(x_t), coef)
    ab_t = sched.alpha_bar[t]
    x0_hat = (np.asarray(x_t, dtype=np.float64) - np.sqrt(1.0 - ab_t) * eps_hat) / np.sqrt(ab_t)
    inside = np.abs(x0_hat) <= 1.0
    return np.where(inside, coef, np.sqrt(1.0 - sched.alpha_bar[t_next]))


def implicit_timesteps(T, S):
    """Descending ``(t, t_next)`` pairs with ``t_j = (j - 1) * T / S + 1``."""
    T, S = int(T), int(S)
    if not 1 <= S <= T:
        raise ValueError(f"need 1 <= S <= T, got S={S}, T={T}")
    if T % S:
        divisors = [d for d in range(1, T + 1) if T % d == 0]
        near = sorted(divisors, key=lambda d: abs(d - S))[:3]
        raise ValueError(f"T={T} is not divisible by S={S}; try one of {sorted(near)}")
    stride = T // S
    ts = [(j - 1) * stride + 1 for j in range(S, 0, -1)]
    pairs = tuple(zip(ts, ts[1:] + [0]))
    return StepPlan(T, S, pairs)
