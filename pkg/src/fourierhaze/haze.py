"""Synthetic haze via the atmospheric scattering model ``I = J * t + A * (1 - t)``."""

from dataclasses import dataclass
import json
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter, zoom
from sklearn.base import BaseEstimator, TransformerMixin

from .core import check_image, check_image_batch, load_image, make_rng, save_image

AIRLIGHT_RANGE = (0.7, 1.0)
TRANSMISSION_FLOOR = 0.05


@dataclass
class HazeParams:
    airlight: float
    transmission: np.ndarray

    def __post_init__(self):
        lo, hi = AIRLIGHT_RANGE
        if not lo <= self.airlight <= hi:
            raise ValueError(f"ambient light {self.airlight} outside [{lo}, {hi}]")
        t = np.asarray(self.transmission, dtype=np.float32)
        if t.ndim != 2:
            raise ValueError(f"transmission must be a 2-D map, got shape {t.shape}")
        self.transmission = np.clip(t, TRANSMISSION_FLOOR, 1.0)


def _smooth_field(rng, height, width, grid=4, sigma=None):
    """Low-resolution uniform noise, bilinearly upsampled and blurred; values in [0, 1]."""
    coarse = rng.uniform(0.0, 1.0, size=(grid, grid))
    field = zoom(coarse, (height / grid, width / grid), order=1, mode="nearest", grid_mode=True)
    field = field[:height, :width]
    sigma = max(height, width) / 16.0 if sigma is None else sigma
    field = gaussian_filter(field, sigma, mode="nearest")
    lo, hi = field.min(), field.max()
    return (field - lo) / (hi - lo) if hi > lo else np.full_like(field, 0.5)


def sample_haze_params(shape, rng, t_range=(0.3, 0.8), uniform=False):
    """Draw ambient light in [0.7, 1] and a smooth (or constant) transmission map."""
    height, width = shape
    airlight = float(rng.uniform(*AIRLIGHT_RANGE))
    lo, hi = t_range
    if uniform:
        t = np.full((height, width), rng.uniform(lo, hi))
    else:
        t = lo + (hi - lo) * _smooth_field(rng, height, width)
    return HazeParams(airlight, t.astype(np.float32))


def synthesize_haze(clean, params):
    clean = check_image(clean, "unit", name="clean")
    t = params.transmission[None].astype(np.float64)
    hazy = clean.astype(np.float64) * t + params.airlight * (1.0 - t)
    return np.clip(hazy, 0.0, 1.0).astype(np.float32)


def procedural_texture(rng, size=64):
    """Colourful multi-scale texture with a few hard edges, in [0, 1]."""
    h = w = size
    img = np.zeros((3, h, w))
    base = rng.uniform(0.15, 0.85, size=3)
    for c in range(3):
        img[c] = base[c]
    for grid, amp in ((3, 0.35), (8, 0.2), (16, 0.1)):
        field = np.stack([_smooth_field(rng, h, w, grid=grid, sigma=size / (2.0 * grid)) for _ in range(3)])
        img += amp * (field - 0.5)
    yy, xx = np.mgrid[0:h, 0:w]
    for _ in range(int(rng.integers(2, 5))):
        r0, c0 = rng.integers(0, h, 2)
        rh, rw = rng.integers(size // 8, size // 2, 2)
        region = (yy >= r0) & (yy < r0 + rh) & (xx >= c0) & (xx < c0 + rw)
        img[:, region] += rng.uniform(-0.3, 0.3, size=3)[:, None]
    freq = rng.uniform(0.1, 0.5)
    angle = rng.uniform(0, np.pi)
    stripes = np.sin(freq * (np.cos(angle) * xx + np.sin(angle) * yy))
    img += rng.uniform(0.02, 0.08) * stripes[None]
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def make_pair(index, seed, size=64, source=None, t_range=(0.3, 0.8), uniform=False):
    """Deterministic (clean, hazy, params) triple for one dataset index."""
    rng = make_rng(seed, index)
    clean = procedural_texture(rng, size) if source is None else check_image(source, "unit", name="source")
    params = sample_haze_params(clean.shape[1:], rng, t_range, uniform)
    return clean, synthesize_haze(clean, params), params


def generate_dataset(n, seed=0, size=64, sources=None, t_range=(0.3, 0.8), uniform=False):
    """Return ``(pairs, manifest)``; each pair is ``(clean, hazy)``.

    ``sources`` optionally supplies clean images; otherwise procedural textures are used.
    """
    n = int(n)
    if n < 1:
        raise ValueError(f"need at least one pair, got n={n}")
    if sources is not None and len(sources) < n:
        raise ValueError(f"{len(sources)} source images for {n} pairs")
    pairs, entries = [], []
    for i in range(n):
        clean, hazy, params = make_pair(i, seed, size, None if sources is None else sources[i], t_range, uniform)
        pairs.append((clean, hazy))
        entries.append({
            "index": i,
            "name": f"{i:05d}.png",
            "airlight": params.airlight,
            "t_min": float(params.transmission.min()),
            "t_max": float(params.transmission.max()),
        })
    manifest = {
        "seed": int(seed),
        "n": n,
        "size": int(size),
        "t_range": [float(t_range[0]), float(t_range[1])],
        "uniform": bool(uniform),
        "procedural": sources is None,
        "pairs": entries,
    }
    return pairs, manifest


def regenerate_from_manifest(manifest, sources=None):
    pairs, _ = generate_dataset(
        manifest["n"], manifest["seed"], manifest["size"], sources,
        tuple(manifest["t_range"]), manifest["uniform"],
    )
    return pairs


def write_dataset(pairs, manifest, out_dir):
    out = Path(out_dir)
    (out / "clean").mkdir(parents=True, exist_ok=True)
    (out / "hazy").mkdir(parents=True, exist_ok=True)
    for (clean, hazy), entry in zip(pairs, manifest["pairs"]):
        save_image(clean, out / "clean" / entry["name"])
        save_image(hazy, out / "hazy" / entry["name"])
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def read_dataset(data_dir):
    """Load ``(names, clean, hazy)`` lists from a directory written by :func:`write_dataset`."""
    root = Path(data_dir)
    if not (root / "clean").is_dir() or not (root / "hazy").is_dir():
        raise FileNotFoundError(f"{root} has no clean/ and hazy/ subdirectories")
    names = sorted(p.name for p in (root / "hazy").glob("*.png"))
    names = [n for n in names if (root / "clean" / n).exists()]
    if not names:
        raise FileNotFoundError(f"no paired PNGs under {root}")
    clean = [load_image(root / "clean" / n) for n in names]
    hazy = [load_image(root / "hazy" / n) for n in names]
    return names, clean, hazy


class HazeSynthesizer(TransformerMixin, BaseEstimator):
    """Add seeded synthetic haze to unit-range images.

    Image ``i`` of a ``transform`` call draws its haze from stream ``(random_state, i)``,
    so results are reproducible and independent of batch composition order.
    """

    def __init__(self, t_range=(0.3, 0.8), uniform=False, random_state=0):
        self.t_range = t_range
        self.uniform = uniform
        self.random_state = random_state

    def fit(self, X, y=None):
        check_image_batch(X, "unit")
        lo, hi = self.t_range
        if not 0.0 <= lo <= hi <= 1.0:
            raise ValueError(f"t_range must satisfy 0 <= lo <= hi <= 1, got {self.t_range}")
        self.n_features_in_ = 3
        return self

    def transform(self, X):
        images = check_image_batch(X, "unit")
        out = []
        self.params_ = []
        for i, img in enumerate(images):
            params = sample_haze_params(img.shape[1:], make_rng(self.random_state, i), self.t_range, self.uniform)
            self.params_.append(params)
            out.append(synthesize_haze(img, params))
        return np.stack(out) if len({im.shape for im in out}) == 1 else out
