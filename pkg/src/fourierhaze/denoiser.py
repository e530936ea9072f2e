"""Conditional noise-prediction network with an exact hand-derived backward pass.

Layer stack::

    h1 = conv1([cond, x_t]) + time_proj(embed(t))     6 -> C, 3x3
    a1 = silu(h1)
    h2 = conv2(a1)                                    C -> C, 3x3
    a2 = silu(h2)
    eps_hat = conv3(a2)                               C -> 3, 3x3
"""

import numpy as np

from . import nn
from .core import make_rng

PARAM_NAMES = (
    "conv1.w",
    "conv1.b",
    "time_proj.w",
    "time_proj.b",
    "conv2.w",
    "conv2.b",
    "conv3.w",
    "conv3.b",
)


class StaleCacheError(ValueError):
    """The forward cache no longer matches the model parameters."""


def time_embedding(t, dim):
    """Sinusoidal embedding ``[sin(t w_k), cos(t w_k)]`` with ``w_k = 10000^(-2k/dim)``.

    ``t`` may be a scalar or a 1-D array; the result has shape ``(..., dim)``.
    """
    if dim % 2:
        raise ValueError(f"embedding dimension must be even, got {dim}")
    t = np.asarray(t, dtype=np.float64)
    if np.any(t < 0):
        raise ValueError("time steps must be non-negative")
    half = dim // 2
    freqs = 10000.0 ** (-2.0 * np.arange(half) / dim)
    angles = t[..., None] * freqs
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=-1)


class DenoiserModel:
    """Parameters, EMA shadow and forward/backward passes of the noise predictor."""

    in_channels = 6
    out_channels = 3

    def __init__(self, hidden=16, embed_dim=32, seed=0, dtype=np.float32):
        if embed_dim % 2:
            raise ValueError(f"embed_dim must be even, got {embed_dim}")
        self.hidden = int(hidden)
        self.embed_dim = int(embed_dim)
        self.dtype = np.dtype(dtype)
        rng = make_rng(seed)
        C, E = self.hidden, self.embed_dim
        self.params = {
            "conv1.w": nn.he_uniform(rng, (C, 6, 3, 3), 6 * 9, dtype),
            "conv1.b": np.zeros(C, dtype),
            "time_proj.w": nn.he_uniform(rng, (C, E), E, dtype),
            "time_proj.b": np.zeros(C, dtype),
            "conv2.w": nn.he_uniform(rng, (C, C, 3, 3), C * 9, dtype),
            "conv2.b": np.zeros(C, dtype),
            "conv3.w": nn.he_uniform(rng, (3, C, 3, 3), C * 9, dtype),
            "conv3.b": np.zeros(3, dtype),
        }
        self.ema = {k: v.copy() for k, v in self.params.items()}
        self.version = 0

    def mark_updated(self):
        self.version += 1

    def astype(self, dtype):
        self.dtype = np.dtype(dtype)
        self.params = {k: v.astype(dtype) for k, v in self.params.items()}
        self.ema = {k: v.astype(dtype) for k, v in self.ema.items()}
        self.mark_updated()
        return self

    def forward(self, x_t, cond, t, params=None):
        """Predict noise for a batch ``(N, 3, p, p)``; ``t`` is a scalar or length-N array.

        Returns ``(eps_hat, cache)``. Pass ``params=model.ema`` to evaluate the shadow.
        """
        p = self.params if params is None else params
        x_t = np.asarray(x_t, dtype=self.dtype)
        cond = np.asarray(cond, dtype=self.dtype)
        if x_t.ndim == 3:
            x_t, cond = x_t[None], cond[None]
        if x_t.shape != cond.shape or x_t.shape[1] != 3:
            raise ValueError(f"x_t {x_t.shape} and cond {cond.shape} must both be (N, 3, H, W)")
        n = x_t.shape[0]
        t_arr = np.broadcast_to(np.asarray(t), (n,))
        emb = time_embedding(t_arr, self.embed_dim).astype(self.dtype)
        tbias = emb @ p["time_proj.w"].T + p["time_proj.b"]
        inp = np.concatenate([cond, x_t], axis=1)
        h1, c1 = nn.conv2d(inp, p["conv1.w"], p["conv1.b"])
        h1 += tbias[:, :, None, None]
        a1 = nn.silu(h1)
        h2, c2 = nn.conv2d(a1, p["conv2.w"], p["conv2.b"])
        a2 = nn.silu(h2)
        out, c3 = nn.conv2d(a2, p["conv3.w"], p["conv3.b"])
        cache = {
            "emb": emb,
            "h1": h1,
            "h2": h2,
            "c1": c1,
            "c2": c2,
            "c3": c3,
            "shape": out.shape,
            "version": self.version if params is None else None,
        }
        return out, cache

    def predict(self, x_t, cond, t, use_ema=True):
        return self.forward(x_t, cond, t, params=self.ema if use_ema else None)[0]

    def backward(self, cache, d_eps, exclude=()):
        """Gradients of every (non-excluded) parameter for upstream gradient ``d_eps``."""
        if cache.get("version") != self.version:
            raise StaleCacheError("forward cache was produced with different parameters")
        d_eps = np.asarray(d_eps, dtype=self.dtype)
        if d_eps.ndim == 3:
            d_eps = d_eps[None]
        if d_eps.shape != cache["shape"]:
            raise StaleCacheError(f"d_eps shape {d_eps.shape} does not match forward output {cache['shape']}")
        grads = {}
        da2, grads["conv3.w"], grads["conv3.b"] = nn.conv2d_backward(cache["c3"], d_eps)
        dh2 = nn.silu_backward(cache["h2"], da2)
        da1, grads["conv2.w"], grads["conv2.b"] = nn.conv2d_backward(cache["c2"], dh2)
        dh1 = nn.silu_backward(cache["h1"], da1)
        dtb = dh1.sum(axis=(2, 3))
        grads["time_proj.w"] = dtb.T @ cache["emb"]
        grads["time_proj.b"] = dtb.sum(axis=0)
        _, grads["conv1.w"], grads["conv1.b"] = nn.conv2d_backward(cache["c1"], dh1)
        return {k: v.astype(self.dtype) for k, v in grads.items() if k not in exclude}


def oracle_denoiser(eps_true):
    """Test double that ignores its inputs and returns the known noise.

    ``eps_true`` may be a full image ``(3, H, W)``; the patch sampler passes patch
    corners so the matching crops are returned.
    """
    eps_true = np.asarray(eps_true)

    def predict(x_t, cond, t, corners=None):
        x_t = np.asarray(x_t)
        if corners is None or eps_true.shape[-2:] == x_t.shape[-2:]:
            return np.broadcast_to(eps_true, x_t.shape).astype(x_t.dtype)
        p_h, p_w = x_t.shape[-2:]
        return np.stack([eps_true[:, r : r + p_h, c : c + p_w] for r, c in corners]).astype(x_t.dtype)

    return predict
