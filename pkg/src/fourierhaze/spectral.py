"""2-D Fourier transforms, amplitude/phase split, low-frequency masks and FIR fusion.

All transforms act on the last two axes and use the unitary ``1/sqrt(H*W)`` scaling
in both directions. Spectra are kept unshifted: frequency (0, 0) sits at index (0, 0).
"""

from dataclasses import dataclass
import math

import numpy as np


@dataclass(frozen=True)
class Spectrum:
    real: np.ndarray
    imag: np.ndarray

    def __post_init__(self):
        if self.real.shape != self.imag.shape:
            raise ValueError(f"real/imag shape mismatch: {self.real.shape} vs {self.imag.shape}")

    @property
    def shape(self):
        return self.real.shape

    def to_complex(self):
        return self.real.astype(np.float64) + 1j * self.imag.astype(np.float64)

    @classmethod
    def from_complex(cls, z, dtype=np.float32):
        return cls(np.real(z).astype(dtype), np.imag(z).astype(dtype))


@dataclass(frozen=True)
class FreqMask:
    height: int
    width: int
    beta: float
    values: np.ndarray


def _fft(x):
    return np.fft.fft2(np.asarray(x, dtype=np.float64), norm="ortho")


def _ifft(z):
    return np.fft.ifft2(z, norm="ortho")


def fft2(img):
    """Per-channel unitary 2-D DFT of a real image."""
    img = np.asarray(img)
    if img.ndim < 2 or img.shape[-1] < 1 or img.shape[-2] < 1:
        raise ValueError(f"need at least a (H, W) array, got shape {img.shape}")
    return Spectrum.from_complex(_fft(img), dtype=img.dtype if img.dtype.kind == "f" else np.float32)


def ifft2(spec, return_residual=False):
    """Inverse of :func:`fft2`; the imaginary part of the result is dropped.

    With ``return_residual=True`` also returns the largest discarded imaginary magnitude.
    """
    z = _ifft(spec.to_complex())
    out = np.real(z).astype(spec.real.dtype)
    if return_residual:
        return out, float(np.max(np.abs(np.imag(z)))) if z.size else 0.0
    return out


def amp_phase(spec):
    """Return ``(amplitude, phase)`` with phase in (-pi, pi] and 0 on empty bins."""
    re = spec.real.astype(np.float64)
    im = spec.imag.astype(np.float64)
    amp = np.hypot(re, im)
    phase = np.arctan2(im, re)
    phase[phase == -np.pi] = np.pi
    phase[amp == 0] = 0.0
    return amp.astype(spec.real.dtype), phase.astype(spec.real.dtype)


def recombine(amplitude, phase):
    amplitude = np.asarray(amplitude, dtype=np.float64)
    phase = np.asarray(phase, dtype=np.float64)
    return Spectrum.from_complex(amplitude * np.exp(1j * phase))


def _axis_distance(n):
    idx = np.arange(n)
    return np.minimum(idx, n - idx)


def make_mask(height, width, beta):
    """Binary low-frequency box around bin (0, 0), measured with circular distance.

    A bin (m, n) is inside when its circular distance along each axis is at most
    ``floor(beta * H)`` / ``floor(beta * W)``. ``beta == 0`` gives the empty mask.
    """
    if height < 1 or width < 1:
        raise ValueError(f"mask size must be positive, got {height}x{width}")
    beta = float(beta)
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must lie in [0, 1], got {beta}")
    if beta == 0.0:
        values = np.zeros((height, width), dtype=np.float32)
    else:
        # small epsilon keeps e.g. 0.7 * 10 from flooring to 6
        bh = math.floor(beta * height + 1e-9)
        bw = math.floor(beta * width + 1e-9)
        rows = _axis_distance(height) <= bh
        cols = _axis_distance(width) <= bw
        values = (rows[:, None] & cols[None, :]).astype(np.float32)
    return FreqMask(int(height), int(width), beta, values)


def fir_refine(x_fwd, x_rev, mask, return_cache=False):
    """Fuse a sampled state with the forward-process state in Fourier space.

    The phase comes from ``x_fwd``. Inside the mask the amplitude comes from
    ``x_rev``; outside it comes from ``x_fwd``. Works on any leading batch axes.
    """
    x_fwd = np.asarray(x_fwd)
    x_rev = np.asarray(x_rev)
    if x_fwd.shape != x_rev.shape:
        raise ValueError(f"shape mismatch: {x_fwd.shape} vs {x_rev.shape}")
    if x_fwd.shape[-2:] != (mask.height, mask.width):
        raise ValueError(f"mask is {mask.height}x{mask.width}, images are {x_fwd.shape[-2:]}")
    phi = mask.values.astype(np.float64)
    z_fwd = _fft(x_fwd)
    z_rev = _fft(x_rev)
    a_rev = np.abs(z_rev)
    amp = phi * a_rev + (1.0 - phi) * np.abs(z_fwd)
    # unit phasor of the forward spectrum; empty bins get phase 0
    a_fwd = np.abs(z_fwd)
    phasor = np.where(a_fwd > 0, z_fwd / np.where(a_fwd > 0, a_fwd, 1.0), 1.0)
    out = np.real(_ifft(amp * phasor)).astype(x_rev.dtype)
    if return_cache:
        return out, (phi, z_rev, a_rev, phasor)
    return out


def fir_refine_backward(cache, grad_out):
    """Gradient of :func:`fir_refine` with respect to ``x_rev``."""
    phi, z_rev, a_rev, phasor = cache
    g = _fft(grad_out)
    g_amp = np.real(g * np.conj(phasor)) * phi
    unit = np.where(a_rev > 0, z_rev / np.where(a_rev > 0, a_rev, 1.0), 0.0)
    return np.real(_ifft(g_amp * unit)).astype(np.asarray(grad_out).dtype)
