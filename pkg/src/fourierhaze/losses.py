"""Training losses and their gradients: noise MSE, L1, SSIM / MS-SSIM, reconstruction.

SSIM statistics use an 11x11 Gaussian window (sigma 1.5) applied as a 'valid'
separable filter. Every ``*_grad`` function returns ``(value, d value / d x)``
with respect to its first argument.
"""

import warnings

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

C1 = 0.0001
C2 = 0.0009


def gaussian_window(size=11, sigma=1.5):
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(ax**2) / (2.0 * sigma**2))
    return g / g.sum()


def loss_noise(eps_true, eps_hat):
    eps_true = np.asarray(eps_true, dtype=np.float64)
    eps_hat = np.asarray(eps_hat, dtype=np.float64)
    if eps_true.shape != eps_hat.shape:
        raise ValueError(f"shape mismatch: {eps_true.shape} vs {eps_hat.shape}")
    return float(np.mean((eps_hat - eps_true) ** 2))


def loss_noise_grad(eps_hat, eps_true):
    diff = np.asarray(eps_hat, dtype=np.float64) - np.asarray(eps_true, dtype=np.float64)
    return float(np.mean(diff**2)), 2.0 * diff / diff.size


def loss_l1(x, y):
    return float(np.mean(np.abs(np.asarray(x, dtype=np.float64) - np.asarray(y, dtype=np.float64))))


def loss_l1_grad(x, y):
    diff = np.asarray(x, dtype=np.float64) - np.asarray(y, dtype=np.float64)
    return float(np.mean(np.abs(diff))), np.sign(diff) / diff.size


def _filter(img, g):
    """Valid separable filtering over the last two axes."""
    k = len(g)
    rows = sliding_window_view(img, k, axis=-2) @ g
    return sliding_window_view(rows, k, axis=-1) @ g


def _filter_adjoint(grad, g, shape):
    """Adjoint of :func:`_filter`: scatter a valid-size map back to ``shape``."""
    k = len(g)
    pad = [(0, 0)] * (grad.ndim - 2) + [(0, 0), (k - 1, k - 1)]
    cols = sliding_window_view(np.pad(grad, pad), k, axis=-1) @ g[::-1]
    pad = [(0, 0)] * (grad.ndim - 2) + [(k - 1, k - 1), (0, 0)]
    out = sliding_window_view(np.pad(cols, pad), k, axis=-2) @ g[::-1]
    assert out.shape[-2:] == shape[-2:]
    return out


def _ssim_maps(x, y, g):
    mx, my = _filter(x, g), _filter(y, g)
    exx, eyy, exy = _filter(x * x, g), _filter(y * y, g), _filter(x * y, g)
    a1 = 2.0 * mx * my + C1
    b1 = mx * mx + my * my + C1
    a2 = 2.0 * (exy - mx * my) + C2
    b2 = (exx - mx * mx) + (eyy - my * my) + C2
    return mx, my, a1, b1, a2, b2


def _check_pair(x, y, g):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    if min(x.shape[-2:]) < len(g):
        raise ValueError(f"images of size {x.shape[-2:]} are smaller than the {len(g)}x{len(g)} window")
    return x, y


def ssim(x, y, window=None, reduce=True):
    """Mean SSIM over all window positions and channels (per image if ``reduce=False``)."""
    g = gaussian_window() if window is None else np.asarray(window, dtype=np.float64)
    x, y = _check_pair(x, y, g)
    _, _, a1, b1, a2, b2 = _ssim_maps(x, y, g)
    smap = (a1 * a2) / (b1 * b2)
    if reduce or smap.ndim <= 3:
        return float(smap.mean())
    return smap.reshape(smap.shape[0], -1).mean(axis=1)


def _scale_factor_grad(x, y, g, form):
    """Per-scale factor (mean of l*cs, or of cs alone) and its gradient wrt x."""
    mx, my, a1, b1, a2, b2 = _ssim_maps(x, y, g)
    if form == "cs":
        smap = a2 / b2
        g_mu = -2.0 * my / b2 + 2.0 * mx * smap / b2
        g_exx = -smap / b2
        g_exy = 2.0 / b2
    else:
        smap = (a1 * a2) / (b1 * b2)
        g_mu = 2.0 * my * (a2 - a1) / (b1 * b2) + 2.0 * mx * smap * (1.0 / b2 - 1.0 / b1)
        g_exx = -smap / b2
        g_exy = 2.0 * a1 / (b1 * b2)
    w = 1.0 / smap.size
    grad = (
        _filter_adjoint(g_mu * w, g, x.shape)
        + 2.0 * x * _filter_adjoint(g_exx * w, g, x.shape)
        + y * _filter_adjoint(g_exy * w, g, x.shape)
    )
    return float(smap.mean()), grad


def _pool(x):
    h2, w2 = x.shape[-2] // 2, x.shape[-1] // 2
    xc = x[..., : 2 * h2, : 2 * w2]
    return xc.reshape(x.shape[:-2] + (h2, 2, w2, 2)).mean(axis=(-3, -1))


def _unpool(grad, shape):
    h2, w2 = grad.shape[-2:]
    out = np.zeros(shape, dtype=grad.dtype)
    out[..., : 2 * h2, : 2 * w2] = np.repeat(np.repeat(grad, 2, axis=-2), 2, axis=-1) * 0.25
    return out


def max_scales(height, width, window_size=11):
    """Largest pyramid depth whose coarsest level still fits the window."""
    n, h, w = 0, height, width
    while min(h, w) >= window_size:
        n += 1
        h, w = h // 2, w // 2
    return n


def resolve_scales(shape, scales, window_size=11, auto_cap=False):
    feasible = max_scales(shape[-2], shape[-1], window_size)
    if scales <= feasible:
        return scales
    if not auto_cap or feasible < 1:
        raise ValueError(
            f"{shape[-2]}x{shape[-1]} images support at most {feasible} MS-SSIM scales, {scales} requested"
        )
    warnings.warn(f"MS-SSIM scales capped from {scales} to {feasible} for {shape[-2]}x{shape[-1]} inputs")
    return feasible


def _msssim_single(x, y, g, scales, form):
    factors, grads, shapes = [], [], []
    cur_x, cur_y = x, y
    for m in range(scales):
        kind = "cs" if (form == "canonical" and m < scales - 1) else "lcs"
        val, grad = _scale_factor_grad(cur_x, cur_y, g, kind)
        factors.append(val)
        grads.append(grad)
        shapes.append(cur_x.shape)
        if m < scales - 1:
            cur_x, cur_y = _pool(cur_x), _pool(cur_y)
    prod = float(np.prod(factors))
    total = np.zeros_like(cur_x)
    for m in range(scales - 1, -1, -1):
        others = float(np.prod([f for k, f in enumerate(factors) if k != m]))
        total = total + (-others) * grads[m]
        if m > 0:
            total = _unpool(total, shapes[m - 1])
    return 1.0 - prod, total


def msssim_loss_grad(x, y, scales=5, window=None, form="as_written", auto_cap=False):
    """``1 - prod_m factor_m`` and its gradient wrt ``x``.

    ``form="as_written"`` multiplies luminance and contrast-structure at every scale;
    ``form="canonical"`` keeps luminance only at the coarsest scale. Batches
    ``(N, C, H, W)`` are scored per image and averaged.
    """
    if form not in ("as_written", "canonical"):
        raise ValueError(f"unknown MS-SSIM form {form!r}")
    g = gaussian_window() if window is None else np.asarray(window, dtype=np.float64)
    x, y = _check_pair(x, y, g)
    scales = resolve_scales(x.shape, scales, len(g), auto_cap)
    if x.ndim == 4:
        n = x.shape[0]
        vals, grads = zip(*(_msssim_single(x[i], y[i], g, scales, form) for i in range(n)))
        return float(np.mean(vals)), np.stack(grads) / n
    return _msssim_single(x, y, g, scales, form)


def msssim_loss(x, y, scales=5, window=None, form="as_written", auto_cap=False):
    return msssim_loss_grad(x, y, scales, window, form, auto_cap)[0]


def loss_rec_grad(x0_hat, x0, scales=5, form="as_written", auto_cap=True):
    """L1 + MS-SSIM reconstruction loss and its gradient wrt ``x0_hat``."""
    l1, g1 = loss_l1_grad(x0_hat, x0)
    ms, g2 = msssim_loss_grad(x0_hat, x0, scales=scales, form=form, auto_cap=auto_cap)
    return l1 + ms, g1 + g2


def loss_rec(x0_hat, x0, scales=5, form="as_written", auto_cap=True):
    return loss_rec_grad(x0_hat, x0, scales, form, auto_cap)[0]
