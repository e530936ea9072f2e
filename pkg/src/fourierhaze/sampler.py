"""Patch-grid planning, overlap merging and full-image implicit sampling."""

from dataclasses import dataclass

import numpy as np

from .core import check_image, make_rng, sample_gaussian, to_unit
from .diffusion import ddim_step


@dataclass(frozen=True)
class PatchGrid:
    height: int
    width: int
    patch: int
    stride: int
    locations: tuple
    coverage: np.ndarray

    @property
    def n_patches(self):
        return len(self.locations)


def _axis_starts(length, patch, stride):
    starts = list(range(0, length - patch + 1, stride))
    if starts[-1] != length - patch:
        starts.append(length - patch)
    return starts


def plan_patch_grid(height, width, patch, stride=None):
    """Top-left corners on a stride lattice, with the last row/column snapped to the border."""
    stride = patch // 2 if stride is None else stride
    if not 1 <= patch <= min(height, width):
        raise ValueError(f"patch size {patch} does not fit a {height}x{width} image")
    if not 1 <= stride <= patch:
        raise ValueError(f"stride must lie in [1, {patch}], got {stride}")
    rows = _axis_starts(height, patch, stride)
    cols = _axis_starts(width, patch, stride)
    locations = tuple((r, c) for r in rows for c in cols)
    coverage = np.zeros((height, width), dtype=np.int32)
    for r, c in locations:
        coverage[r : r + patch, c : c + patch] += 1
    if coverage.min() < 1:
        raise AssertionError("patch grid leaves pixels uncovered")
    return PatchGrid(int(height), int(width), int(patch), int(stride), locations, coverage)


def crop_patches(img, grid, corners=None):
    corners = grid.locations if corners is None else corners
    p = grid.patch
    return np.stack([img[:, r : r + p, c : c + p] for r, c in corners])


def merge_noise_estimates(estimates, grid):
    """Average overlapping patch estimates: accumulate, count coverage, divide.

    Accumulation runs in float64 in the grid's canonical corner order, so the result
    does not depend on the order of ``estimates``.
    """
    by_corner = {}
    for corner, est in estimates:
        corner = tuple(int(v) for v in corner)
        if corner in by_corner:
            raise ValueError(f"duplicate estimate for corner {corner}")
        by_corner[corner] = est
    expected = set(grid.locations)
    if set(by_corner) != expected:
        missing = sorted(expected - set(by_corner))
        extra = sorted(set(by_corner) - expected)
        raise ValueError(f"estimates do not match the grid (missing={missing}, extra={extra})")
    p = grid.patch
    first = np.asarray(next(iter(by_corner.values())))
    canvas = np.zeros((first.shape[0], grid.height, grid.width), dtype=np.float64)
    count = np.zeros((grid.height, grid.width), dtype=np.float64)
    for r, c in grid.locations:
        est = np.asarray(by_corner[(r, c)], dtype=np.float64)
        if est.shape != (first.shape[0], p, p):
            raise ValueError(f"estimate at {(r, c)} has shape {est.shape}, expected {(first.shape[0], p, p)}")
        canvas[:, r : r + p, c : c + p] += est
        count[r : r + p, c : c + p] += 1.0
    return (canvas / count).astype(first.dtype if first.dtype.kind == "f" else np.float32)


def _as_noise_fn(denoiser, use_ema):
    if hasattr(denoiser, "forward") and hasattr(denoiser, "ema"):
        def fn(x_t, cond, t, corners=None):
            return denoiser.predict(x_t, cond, t, use_ema=use_ema)
        return fn
    return denoiser


def estimate_noise(y, cond, t, noise_fn, grid, patch_batch=32):
    """Evaluate the denoiser on every grid patch and merge the estimates."""
    estimates = []
    locs = grid.locations
    for start in range(0, len(locs), patch_batch):
        corners = locs[start : start + patch_batch]
        eps = noise_fn(crop_patches(y, grid, corners), crop_patches(cond, grid, corners), t, corners=corners)
        estimates.extend(zip(corners, eps))
    return merge_noise_estimates(estimates, grid)


def sample_restored(cond, denoiser, sched, plan, grid, rng=None, y_init=None, use_ema=True,
                    return_signed=False, patch_batch=32, clip_x0=False):
    """Restore a full image from its signed-range condition by patchwise implicit sampling.

    ``denoiser`` is a :class:`DenoiserModel` or any callable
    ``fn(x_t, cond, t, corners=...)`` returning noise for a batch of patches.
    Returns the unit-range restoration (or the raw signed ``y_0`` with ``return_signed``).
    ``clip_x0`` clamps each step's clean estimate to [-1, 1] before stepping.
    """
    cond = check_image(cond, "signed", name="cond")
    if cond.shape[1:] != (grid.height, grid.width):
        raise ValueError(f"grid planned for {grid.height}x{grid.width}, condition is {cond.shape[1:]}")
    if y_init is None:
        rng = make_rng(0) if rng is None else rng
        y = sample_gaussian(cond.shape, rng)
    else:
        y = np.array(y_init, dtype=np.float32)
    noise_fn = _as_noise_fn(denoiser, use_ema)
    for t, t_next in plan.pairs:
        omega = estimate_noise(y, cond, t, noise_fn, grid, patch_batch)
        y = ddim_step(y, omega, t, t_next, sched, clip_x0)
    if return_signed:
        return y
    return to_unit(y)
