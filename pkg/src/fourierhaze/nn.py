"""Array-level layers with hand-written backward passes.

Every op works on ``(N, C, H, W)`` batches and keeps the dtype of its inputs, so the
same code runs in float32 for training and float64 for gradient checks.
"""

import numpy as np


def conv2d(x, w, b=None):
    """Stride-1 convolution with 'same' zero padding (odd square kernels)."""
    n, c, h, wd = x.shape
    out_c, in_c, k, _ = w.shape
    if in_c != c:
        raise ValueError(f"conv expects {in_c} input channels, got {c}")
    pad = k // 2
    if k == 1:
        cols = x.transpose(0, 2, 3, 1).reshape(n * h * wd, c)
    else:
        xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
        cols = np.empty((n, h, wd, c, k, k), dtype=x.dtype)
        for i in range(k):
            for j in range(k):
                cols[..., i, j] = xp[:, :, i : i + h, j : j + wd].transpose(0, 2, 3, 1)
        cols = cols.reshape(n * h * wd, c * k * k)
    y = cols @ w.reshape(out_c, -1).T
    if b is not None:
        y += b
    y = y.reshape(n, h, wd, out_c).transpose(0, 3, 1, 2)
    return np.ascontiguousarray(y), (cols, x.shape, w)


def conv2d_backward(cache, dy):
    cols, xshape, w = cache
    n, c, h, wd = xshape
    out_c, _, k, _ = w.shape
    dy2 = dy.transpose(0, 2, 3, 1).reshape(n * h * wd, out_c)
    dw = (dy2.T @ cols).reshape(w.shape)
    db = dy2.sum(axis=0)
    dcols = dy2 @ w.reshape(out_c, -1)
    if k == 1:
        dx = dcols.reshape(n, h, wd, c).transpose(0, 3, 1, 2)
        return np.ascontiguousarray(dx), dw, db
    pad = k // 2
    dcols = dcols.reshape(n, h, wd, c, k, k)
    dxp = np.zeros((n, c, h + 2 * pad, wd + 2 * pad), dtype=dy.dtype)
    for i in range(k):
        for j in range(k):
            dxp[:, :, i : i + h, j : j + wd] += dcols[..., i, j].transpose(0, 3, 1, 2)
    return dxp[:, :, pad : pad + h, pad : pad + wd].copy(), dw, db


def sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def silu(x):
    return x * sigmoid(x)


def silu_backward(x, dy):
    s = sigmoid(x)
    return dy * (s * (1.0 + x * (1.0 - s)))


def avg_pool2(x):
    """2x2 average pooling; odd trailing rows/columns are dropped."""
    n, c, h, w = x.shape
    h2, w2 = h // 2, w // 2
    if h2 < 1 or w2 < 1:
        raise ValueError(f"cannot pool a {h}x{w} map")
    xc = x[:, :, : 2 * h2, : 2 * w2]
    return xc.reshape(n, c, h2, 2, w2, 2).mean(axis=(3, 5))


def avg_pool2_backward(dy, in_shape):
    n, c, h, w = in_shape
    h2, w2 = dy.shape[2:]
    dx = np.zeros(in_shape, dtype=dy.dtype)
    up = np.repeat(np.repeat(dy, 2, axis=2), 2, axis=3) * 0.25
    dx[:, :, : 2 * h2, : 2 * w2] = up
    return dx


def _nearest_index(out_len, in_len):
    return np.minimum(np.arange(out_len) // 2, in_len - 1)


def upsample_nearest(x, size):
    """Nearest-neighbour 2x upsampling to an explicit ``(H, W)``."""
    ri = _nearest_index(size[0], x.shape[2])
    ci = _nearest_index(size[1], x.shape[3])
    return x[:, :, ri][:, :, :, ci]


def upsample_nearest_backward(dy, in_shape):
    ri = _nearest_index(dy.shape[2], in_shape[2])
    ci = _nearest_index(dy.shape[3], in_shape[3])
    dx = np.zeros(in_shape, dtype=dy.dtype)
    tmp = np.zeros(dy.shape[:2] + (in_shape[2], dy.shape[3]), dtype=dy.dtype)
    np.add.at(tmp, (slice(None), slice(None), ri), dy)
    np.add.at(dx, (slice(None), slice(None), slice(None), ci), tmp)
    return dx


def he_uniform(rng, shape, fan_in, dtype=np.float32, gain=np.sqrt(2.0)):
    """Uniform init with variance ``gain**2 / fan_in``; use ``gain=1`` before linear outputs."""
    bound = gain * np.sqrt(3.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)
