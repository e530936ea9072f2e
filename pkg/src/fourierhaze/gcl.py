"""Global compensation branch: Fast Fourier Blocks in a two-level encoder/decoder,
plus the pixel/channel attention fusion of local and global outputs.

Parameters live in one flat dict (``gcl.*`` and ``fuse.*`` keys) so they share the
checkpoint format and optimizer used by the denoiser.
"""

import numpy as np

from . import nn
from .core import make_rng
from .optim import AdamState, adam_step

FFB_NAMES = ("enc0", "enc1", "mid0", "mid1", "dec0", "dec1")


def _fft(x):
    return np.fft.fft2(x, norm="ortho")


def _ifft(z):
    return np.fft.ifft2(z, norm="ortho")


def init_ffb(rng, prefix, channels, dtype=np.float32):
    C = channels
    return {
        f"{prefix}.fourier.w": nn.he_uniform(rng, (2 * C, 2 * C, 1, 1), 2 * C, dtype, gain=1.0),
        f"{prefix}.fourier.b": np.zeros(2 * C, dtype),
        f"{prefix}.spatial1.w": nn.he_uniform(rng, (C, C, 3, 3), 9 * C, dtype),
        f"{prefix}.spatial1.b": np.zeros(C, dtype),
        f"{prefix}.spatial2.w": nn.he_uniform(rng, (C, C, 3, 3), 9 * C, dtype, gain=0.5),
        f"{prefix}.spatial2.b": np.zeros(C, dtype),
        f"{prefix}.merge.w": nn.he_uniform(rng, (C, 2 * C, 3, 3), 18 * C, dtype, gain=1.0),
        f"{prefix}.merge.b": np.zeros(C, dtype),
    }


def ffb_forward(params, x, prefix="ffb"):
    """Fourier branch (1x1 conv on stacked real/imag spectra) beside a spatial residual
    block, concatenated and merged by a 3x3 conv. ``x`` is ``(N, C, H, W)``."""
    p = lambda name: params[f"{prefix}.{name}"]  # noqa: E731
    C = x.shape[1]
    z = _fft(x.astype(np.float64))
    stacked = np.concatenate([z.real, z.imag], axis=1).astype(x.dtype)
    mixed, cf = nn.conv2d(stacked, p("fourier.w"), p("fourier.b"))
    zc = mixed[:, :C].astype(np.float64) + 1j * mixed[:, C:].astype(np.float64)
    fourier_out = np.real(_ifft(zc)).astype(x.dtype)
    h, cs1 = nn.conv2d(x, p("spatial1.w"), p("spatial1.b"))
    a = nn.silu(h)
    r, cs2 = nn.conv2d(a, p("spatial2.w"), p("spatial2.b"))
    spatial_out = x + r
    out, cm = nn.conv2d(np.concatenate([fourier_out, spatial_out], axis=1), p("merge.w"), p("merge.b"))
    return out, (prefix, C, cf, h, cs1, cs2, cm)


def ffb_backward(cache, dout, grads):
    prefix, C, cf, h, cs1, cs2, cm = cache
    dcat, grads[f"{prefix}.merge.w"], grads[f"{prefix}.merge.b"] = nn.conv2d_backward(cm, dout)
    d_four, d_spat = dcat[:, :C], dcat[:, C:]
    dx = d_spat.copy()
    da, grads[f"{prefix}.spatial2.w"], grads[f"{prefix}.spatial2.b"] = nn.conv2d_backward(cs2, d_spat)
    dh = nn.silu_backward(h, da)
    dx1, grads[f"{prefix}.spatial1.w"], grads[f"{prefix}.spatial1.b"] = nn.conv2d_backward(cs1, dh)
    dx += dx1
    gz = _fft(d_four.astype(np.float64))
    dmixed = np.concatenate([gz.real, gz.imag], axis=1).astype(dout.dtype)
    dstack, grads[f"{prefix}.fourier.w"], grads[f"{prefix}.fourier.b"] = nn.conv2d_backward(cf, dmixed)
    gx = dstack[:, :C].astype(np.float64) + 1j * dstack[:, C:].astype(np.float64)
    dx += np.real(_ifft(gx)).astype(dout.dtype)
    return dx


def init_gcl(rng, channels, dtype=np.float32):
    C = channels
    params = {
        "gcl.lift.w": nn.he_uniform(rng, (C, 3, 3, 3), 27, dtype, gain=1.0),
        "gcl.lift.b": np.zeros(C, dtype),
    }
    for name in FFB_NAMES:
        params.update(init_ffb(rng, f"gcl.{name}", C, dtype))
    params["gcl.proj.w"] = nn.he_uniform(rng, (3, C, 3, 3), 9 * C, dtype, gain=1.0)
    params["gcl.proj.b"] = np.zeros(3, dtype)
    return params


def gcl_forward(params, hazy):
    """Whole-image global branch; ``hazy`` is ``(N, 3, H, W)`` with H, W >= 2."""
    if hazy.ndim == 3:
        hazy = hazy[None]
    H, W = hazy.shape[2:]
    if H < 2 or W < 2:
        raise ValueError(f"global branch needs at least 2x2 inputs for one pooling level, got {H}x{W}")
    caches = {}
    h, caches["lift"] = nn.conv2d(hazy, params["gcl.lift.w"], params["gcl.lift.b"])
    for name in ("enc0", "enc1"):
        h, caches[name] = ffb_forward(params, h, f"gcl.{name}")
    skip = h
    d = nn.avg_pool2(skip)
    for name in ("mid0", "mid1"):
        d, caches[name] = ffb_forward(params, d, f"gcl.{name}")
    u = nn.upsample_nearest(d, skip.shape[2:]) + skip
    caches["up"] = (d.shape, skip.shape)
    for name in ("dec0", "dec1"):
        u, caches[name] = ffb_forward(params, u, f"gcl.{name}")
    out, caches["proj"] = nn.conv2d(u, params["gcl.proj.w"], params["gcl.proj.b"])
    return out, caches


def gcl_backward(caches, dout, grads):
    d, grads["gcl.proj.w"], grads["gcl.proj.b"] = nn.conv2d_backward(caches["proj"], dout)
    for name in ("dec1", "dec0"):
        d = ffb_backward(caches[name], d, grads)
    mid_shape, skip_shape = caches["up"]
    dm = nn.upsample_nearest_backward(d, mid_shape)
    for name in ("mid1", "mid0"):
        dm = ffb_backward(caches[name], dm, grads)
    d_skip = d + nn.avg_pool2_backward(dm, skip_shape)
    for name in ("enc1", "enc0"):
        d_skip = ffb_backward(caches[name], d_skip, grads)
    dx, grads["gcl.lift.w"], grads["gcl.lift.b"] = nn.conv2d_backward(caches["lift"], d_skip)
    return dx


def init_fusion(rng, channels, dtype=np.float32):
    F = channels
    R = max(F // 4, 1)
    return {
        "fuse.local.w": nn.he_uniform(rng, (F, 3, 3, 3), 27, dtype),
        "fuse.local.b": np.zeros(F, dtype),
        "fuse.global.w": nn.he_uniform(rng, (F, 3, 3, 3), 27, dtype),
        "fuse.global.b": np.zeros(F, dtype),
        "fuse.cat.w": nn.he_uniform(rng, (F, 2 * F, 1, 1), 2 * F, dtype),
        "fuse.cat.b": np.zeros(F, dtype),
        "fuse.ca1.w": nn.he_uniform(rng, (R, F, 1, 1), F, dtype),
        "fuse.ca1.b": np.zeros(R, dtype),
        "fuse.ca2.w": nn.he_uniform(rng, (F, R, 1, 1), R, dtype),
        "fuse.ca2.b": np.zeros(F, dtype),
        "fuse.pa1.w": nn.he_uniform(rng, (R, F, 1, 1), F, dtype),
        "fuse.pa1.b": np.zeros(R, dtype),
        "fuse.pa2.w": nn.he_uniform(rng, (1, R, 1, 1), R, dtype),
        "fuse.pa2.b": np.zeros(1, dtype),
        "fuse.out.w": nn.he_uniform(rng, (3, F, 3, 3), 9 * F, dtype),
        "fuse.out.b": np.zeros(3, dtype),
    }


def fuse(params, f1, f2, return_maps=False):
    """``out = conv(CA(conv_cat([conv(f1), conv(f2)])) + PA(conv(f1) + conv(f2)))``.

    The channel map has shape ``(N, F, 1, 1)``, the pixel map ``(N, 1, H, W)``; each
    multiplies the features it was computed from.
    """
    if f1.ndim == 3:
        f1, f2 = f1[None], f2[None]
    if f1.shape != f2.shape:
        raise ValueError(f"local {f1.shape} and global {f2.shape} outputs differ in shape")
    a, c_a = nn.conv2d(f1, params["fuse.local.w"], params["fuse.local.b"])
    b, c_b = nn.conv2d(f2, params["fuse.global.w"], params["fuse.global.b"])
    k, c_k = nn.conv2d(np.concatenate([a, b], axis=1), params["fuse.cat.w"], params["fuse.cat.b"])
    pooled = k.mean(axis=(2, 3), keepdims=True)
    z1, c_z1 = nn.conv2d(pooled, params["fuse.ca1.w"], params["fuse.ca1.b"])
    z2, c_z2 = nn.conv2d(nn.silu(z1), params["fuse.ca2.w"], params["fuse.ca2.b"])
    ca = nn.sigmoid(z2)
    s = a + b
    q1, c_q1 = nn.conv2d(s, params["fuse.pa1.w"], params["fuse.pa1.b"])
    q2, c_q2 = nn.conv2d(nn.silu(q1), params["fuse.pa2.w"], params["fuse.pa2.b"])
    pa = nn.sigmoid(q2)
    mix = k * ca + s * pa
    out, c_out = nn.conv2d(mix, params["fuse.out.w"], params["fuse.out.b"])
    cache = (c_a, c_b, c_k, k, c_z1, z1, c_z2, ca, s, c_q1, q1, c_q2, pa, c_out)
    if return_maps:
        return out, cache, {"channel": ca, "pixel": pa}
    return out, cache


def fuse_backward(cache, dout, grads):
    c_a, c_b, c_k, k, c_z1, z1, c_z2, ca, s, c_q1, q1, c_q2, pa, c_out = cache
    dmix, grads["fuse.out.w"], grads["fuse.out.b"] = nn.conv2d_backward(c_out, dout)
    dk = dmix * ca
    dca = (dmix * k).sum(axis=(2, 3), keepdims=True)
    ds = dmix * pa
    dpa = (dmix * s).sum(axis=1, keepdims=True)
    dq2 = dpa * pa * (1.0 - pa)
    dr1, grads["fuse.pa2.w"], grads["fuse.pa2.b"] = nn.conv2d_backward(c_q2, dq2)
    dq1 = nn.silu_backward(q1, dr1)
    ds1, grads["fuse.pa1.w"], grads["fuse.pa1.b"] = nn.conv2d_backward(c_q1, dq1)
    ds = ds + ds1
    dz2 = dca * ca * (1.0 - ca)
    ds_1, grads["fuse.ca2.w"], grads["fuse.ca2.b"] = nn.conv2d_backward(c_z2, dz2)
    dz1 = nn.silu_backward(z1, ds_1)
    dpooled, grads["fuse.ca1.w"], grads["fuse.ca1.b"] = nn.conv2d_backward(c_z1, dz1)
    H, W = k.shape[2:]
    dk = dk + np.broadcast_to(dpooled / (H * W), k.shape)
    dcat, grads["fuse.cat.w"], grads["fuse.cat.b"] = nn.conv2d_backward(c_k, dk)
    F = dk.shape[1]
    da = dcat[:, :F] + ds
    db = dcat[:, F:] + ds
    df1, grads["fuse.local.w"], grads["fuse.local.b"] = nn.conv2d_backward(c_a, da)
    df2, grads["fuse.global.w"], grads["fuse.global.b"] = nn.conv2d_backward(c_b, db)
    return df1, df2


class GlobalCompensationModel:
    """Global branch and fusion parameters with a joint forward/backward."""

    def __init__(self, channels=8, fusion_channels=16, seed=0, dtype=np.float32):
        self.channels = int(channels)
        self.fusion_channels = int(fusion_channels)
        self.dtype = np.dtype(dtype)
        rng = make_rng(seed)
        self.params = {**init_gcl(rng, self.channels, dtype), **init_fusion(rng, self.fusion_channels, dtype)}

    def astype(self, dtype):
        self.dtype = np.dtype(dtype)
        self.params = {k: v.astype(dtype) for k, v in self.params.items()}
        return self

    def forward(self, hazy, f1):
        hazy = np.asarray(hazy, dtype=self.dtype)
        f1 = np.asarray(f1, dtype=self.dtype)
        if hazy.ndim == 3:
            hazy, f1 = hazy[None], f1[None]
        f2, gcache = gcl_forward(self.params, hazy)
        out, fcache = fuse(self.params, f1, f2)
        return out, (gcache, fcache)

    def backward(self, cache, dout):
        gcache, fcache = cache
        grads = {}
        _, df2 = fuse_backward(fcache, np.asarray(dout, dtype=self.dtype), grads)
        gcl_backward(gcache, df2, grads)
        return {k: v.astype(self.dtype) for k, v in grads.items()}


def train_gcl_step(model, batch, opt, lr):
    """One L1 step on ``(hazy, f1, ground_truth)`` unit-range batches; updates all
    global-branch and fusion parameters. The diffusion model is not touched."""
    hazy, f1, gt = batch
    out, cache = model.forward(hazy, f1)
    diff = out.astype(np.float64) - np.asarray(gt, dtype=np.float64)
    loss = float(np.mean(np.abs(diff)))
    grads = model.backward(cache, np.sign(diff) / diff.size)
    adam_step(model.params, grads, opt, lr)
    return loss


def new_gcl_optimizer():
    return AdamState()
