"""Image quality metrics: PSNR, SSIM, CIEDE2000 and the spectral angle mapper."""

import csv
from dataclasses import dataclass, field

import numpy as np

from .core import check_image
from .losses import ssim as _ssim

PSNR_CAP_DB = 100.0

# sRGB (D65) -> XYZ
_RGB_TO_XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)
_WHITE_D65 = np.array([0.95047, 1.0, 1.08883])


def _pair(x, y):
    x = check_image(x, "unit", name="x", dtype=np.float64)
    y = check_image(y, "unit", name="y", dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    return x, y


def psnr(x, y, cap=PSNR_CAP_DB):
    x, y = _pair(x, y)
    mse = float(np.mean((x - y) ** 2))
    if mse == 0.0:
        return cap
    return min(cap, 10.0 * np.log10(1.0 / mse))


def ssim(x, y):
    x, y = _pair(x, y)
    return _ssim(x, y)


def srgb_to_lab(img):
    """Convert a unit-range ``(3, H, W)`` sRGB image to CIE L*a*b* (D65)."""
    img = check_image(img, "unit", name="img", dtype=np.float64)
    if img.shape[0] != 3:
        raise ValueError(f"expected 3 channels, got {img.shape[0]}")
    linear = np.where(img <= 0.04045, img / 12.92, ((img + 0.055) / 1.055) ** 2.4)
    xyz = np.tensordot(_RGB_TO_XYZ, linear, axes=1) / _WHITE_D65[:, None, None]
    delta = 6.0 / 29.0
    f = np.where(xyz > delta**3, np.cbrt(xyz), xyz / (3 * delta**2) + 4.0 / 29.0)
    L = 116.0 * f[1] - 16.0
    a = 500.0 * (f[0] - f[1])
    b = 200.0 * (f[1] - f[2])
    return np.stack([L, a, b])


def delta_e_2000(lab1, lab2, kL=1.0, kC=1.0, kH=1.0):
    """Element-wise CIEDE2000 between Lab arrays whose first axis holds (L, a, b)."""
    L1, a1, b1 = (np.asarray(v, dtype=np.float64) for v in lab1)
    L2, a2, b2 = (np.asarray(v, dtype=np.float64) for v in lab2)
    C1 = np.hypot(a1, b1)
    C2 = np.hypot(a2, b2)
    Cbar7 = ((C1 + C2) / 2.0) ** 7
    G = 0.5 * (1.0 - np.sqrt(Cbar7 / (Cbar7 + 25.0**7)))
    a1p, a2p = (1.0 + G) * a1, (1.0 + G) * a2
    C1p, C2p = np.hypot(a1p, b1), np.hypot(a2p, b2)
    h1p = np.degrees(np.arctan2(b1, a1p)) % 360.0
    h2p = np.degrees(np.arctan2(b2, a2p)) % 360.0
    h1p = np.where((a1p == 0) & (b1 == 0), 0.0, h1p)
    h2p = np.where((a2p == 0) & (b2 == 0), 0.0, h2p)

    dLp = L2 - L1
    dCp = C2p - C1p
    prod = C1p * C2p
    dh = h2p - h1p
    dh = np.where(dh > 180.0, dh - 360.0, np.where(dh < -180.0, dh + 360.0, dh))
    dh = np.where(prod == 0, 0.0, dh)
    dHp = 2.0 * np.sqrt(prod) * np.sin(np.radians(dh) / 2.0)

    Lbar = (L1 + L2) / 2.0
    Cbarp = (C1p + C2p) / 2.0
    hsum = h1p + h2p
    hbar = np.where(
        prod == 0,
        hsum,
        np.where(
            np.abs(h1p - h2p) <= 180.0,
            hsum / 2.0,
            np.where(hsum < 360.0, (hsum + 360.0) / 2.0, (hsum - 360.0) / 2.0),
        ),
    )
    T = (
        1.0
        - 0.17 * np.cos(np.radians(hbar - 30.0))
        + 0.24 * np.cos(np.radians(2.0 * hbar))
        + 0.32 * np.cos(np.radians(3.0 * hbar + 6.0))
        - 0.20 * np.cos(np.radians(4.0 * hbar - 63.0))
    )
    d_theta = 30.0 * np.exp(-(((hbar - 275.0) / 25.0) ** 2))
    Cbarp7 = Cbarp**7
    RC = 2.0 * np.sqrt(Cbarp7 / (Cbarp7 + 25.0**7))
    SL = 1.0 + 0.015 * (Lbar - 50.0) ** 2 / np.sqrt(20.0 + (Lbar - 50.0) ** 2)
    SC = 1.0 + 0.045 * Cbarp
    SH = 1.0 + 0.015 * Cbarp * T
    RT = -np.sin(np.radians(2.0 * d_theta)) * RC
    tL = dLp / (kL * SL)
    tC = dCp / (kC * SC)
    tH = dHp / (kH * SH)
    return np.sqrt(tL**2 + tC**2 + tH**2 + RT * tC * tH)


def ciede2000(x, y):
    """Mean per-pixel CIEDE2000 between two unit-range sRGB images."""
    x, y = _pair(x, y)
    return float(np.mean(delta_e_2000(srgb_to_lab(x), srgb_to_lab(y))))


def sam(x, y, return_excluded=False):
    """Mean spectral angle (radians) between per-pixel channel vectors.

    Pixels where either vector is zero are skipped; ``return_excluded`` also returns
    how many were skipped.
    """
    x = check_image(x, "unbounded", name="x", dtype=np.float64)
    y = check_image(y, "unbounded", name="y", dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    nx = np.sqrt(np.sum(x * x, axis=0))
    ny = np.sqrt(np.sum(y * y, axis=0))
    valid = (nx > 0) & (ny > 0)
    excluded = int(valid.size - valid.sum())
    if not valid.any():
        raise ValueError("every pixel has a zero band vector; spectral angle undefined")
    cos = np.sum(x * y, axis=0)[valid] / (nx[valid] * ny[valid])
    angle = float(np.mean(np.arccos(np.clip(cos, -1.0, 1.0))))
    if return_excluded:
        return angle, excluded
    return angle


@dataclass
class MetricsReport:
    rows: list = field(default_factory=list)
    excluded_pixels: int = 0

    FIELDS = ("image_id", "psnr_db", "ssim", "ciede2000", "sam_rad")

    def add(self, image_id, pred, gt):
        angle, excluded = sam(pred, gt, return_excluded=True)
        self.excluded_pixels += excluded
        row = {
            "image_id": image_id,
            "psnr_db": psnr(pred, gt),
            "ssim": ssim(pred, gt),
            "ciede2000": ciede2000(pred, gt),
            "sam_rad": angle,
        }
        self.rows.append(row)
        return row

    @property
    def count(self):
        return len(self.rows)

    def mean(self):
        if not self.rows:
            raise ValueError("empty report")
        return {k: float(np.mean([r[k] for r in self.rows])) for k in self.FIELDS[1:]}

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.FIELDS)
            for r in self.rows:
                writer.writerow([r["image_id"]] + [f"{r[k]:.6f}" for k in self.FIELDS[1:]])
            means = self.mean()
            writer.writerow(["mean"] + [f"{means[k]:.6f}" for k in self.FIELDS[1:]])
