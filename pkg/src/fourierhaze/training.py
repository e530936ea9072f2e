"""Phased training of the conditional denoiser.

Phase 1 fits the noise predictor with the noise-estimation loss. Phase 2 runs the
short implicit sampling chain on training crops, fuses each intermediate state with
the ground-truth forward state in Fourier space, and fits the final restoration
with an L1 + MS-SSIM reconstruction loss.
"""

from dataclasses import asdict, dataclass
import logging

import numpy as np

from .core import make_rng, sample_gaussian
from .diffusion import (
    build_schedule,
    ddim_eps_jacobian,
    ddim_step,
    forward_diffuse,
    implicit_timesteps,
)
from .losses import loss_noise_grad, loss_rec_grad
from .optim import AdamState, adam_step, ema_update
from .spectral import fir_refine, fir_refine_backward, make_mask

logger = logging.getLogger(__name__)


class PhaseOrderError(RuntimeError):
    """Reconstruction training requested before the noise-estimation phase finished."""


@dataclass
class TrainConfig:
    T: int = 1000
    S: int = 10
    beta_start: float = 1e-4
    beta_end: float = 0.02
    transitional_iterations: int = 2000
    phase2_iterations: int = 500
    batch_size: int = 4
    learning_rate: float = 2e-5
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    ema_decay: float = 0.999
    patch_size: int = 64
    crops_per_image: int = 16
    fir_beta: float = 0.1
    use_fir: bool = True
    fir_max_t: int | None = None
    msssim_scales: int = 5
    msssim_form: str = "as_written"
    clip_x0: bool = False
    seed: int = 0

    def as_dict(self):
        return asdict(self)


def train_phase1_step(model, batch, sched, rng, opt, lr, ema_decay=0.999):
    """One noise-estimation step on a batch ``(x0, cond)`` of signed-range crops."""
    x0, cond = batch
    n = x0.shape[0]
    t = rng.integers(1, sched.T + 1, size=n)
    eps = sample_gaussian(x0.shape, rng)
    x_t = forward_diffuse(x0, t, eps, sched)
    eps_hat, cache = model.forward(x_t, cond, t)
    loss, d_eps = loss_noise_grad(eps_hat, eps)
    grads = model.backward(cache, d_eps)
    adam_step(model.params, grads, opt, lr)
    ema_update(model.ema, model.params, ema_decay)
    model.mark_updated()
    return loss


def run_training_chain(model, x0, cond, sched, plan, mask, rng, use_fir=True, fir_max_t=None,
                       keep_cache=False, clip_x0=False):
    """Implicit sampling on training crops with optional Fourier-aware refinement.

    Returns the final signed-range state; with ``keep_cache`` also the caches needed
    to backpropagate through the last denoiser call.
    """
    x_hat = sample_gaussian(x0.shape, rng)
    last = len(plan.pairs) - 1
    cache = fir_cache = None
    for i, (t, t_next) in enumerate(plan.pairs):
        eps_hat, fwd_cache = model.forward(x_hat, cond, t)
        x_prev = x_hat
        x_hat = ddim_step(x_hat, eps_hat, t, t_next, sched, clip_x0)
        fir_cache = None
        if use_fir and (fir_max_t is None or t_next <= fir_max_t):
            x_fwd = forward_diffuse(x0, t_next, sample_gaussian(x0.shape, rng), sched)
            x_hat, fir_cache = fir_refine(x_fwd, x_hat, mask, return_cache=True)
        if i == last:
            jac = ddim_eps_jacobian(x_prev, eps_hat, t, t_next, sched, clip_x0)
            cache = (fwd_cache, fir_cache, jac)
    if keep_cache:
        return x_hat, cache
    return x_hat


def train_phase2_step(model, batch, sched, plan, mask, rng, opt, lr, ema_decay=0.999,
                      transitional_iterations=0, use_fir=True, fir_max_t=None,
                      msssim_scales=5, msssim_form="as_written", clip_x0=False):
    """One reconstruction step; gradients flow through the final denoiser call only."""
    if opt.step < transitional_iterations:
        raise PhaseOrderError(
            f"reconstruction training needs {transitional_iterations} noise-estimation "
            f"iterations first, only {opt.step} done"
        )
    x0, cond = batch
    x_hat, (fwd_cache, fir_cache, jac) = run_training_chain(
        model, x0, cond, sched, plan, mask, rng, use_fir, fir_max_t, keep_cache=True, clip_x0=clip_x0
    )
    unit_hat = (x_hat.astype(np.float64) + 1.0) * 0.5
    unit_ref = (x0.astype(np.float64) + 1.0) * 0.5
    loss, g_unit = loss_rec_grad(unit_hat, unit_ref, scales=msssim_scales, form=msssim_form)
    g = 0.5 * g_unit
    if fir_cache is not None:
        g = fir_refine_backward(fir_cache, g)
    d_eps = jac * g
    grads = model.backward(fwd_cache, d_eps.astype(model.dtype))
    adam_step(model.params, grads, opt, lr)
    ema_update(model.ema, model.params, ema_decay)
    model.mark_updated()
    return loss


def crop_pool(shapes, patch, per_image, seed):
    """Fixed random crop corners for each training image."""
    pool = []
    for idx, (h, w) in enumerate(shapes):
        if patch > min(h, w):
            raise ValueError(f"image {idx} ({h}x{w}) is smaller than the {patch} crop")
        rng = make_rng(seed, 1, idx)
        rows = rng.integers(0, h - patch + 1, size=per_image)
        cols = rng.integers(0, w - patch + 1, size=per_image)
        pool.append(list(zip(rows.tolist(), cols.tolist())))
    return pool


class PhasedTrainer:
    """Owns the model, optimizer state and iteration counter across both phases."""

    def __init__(self, model, config, opt=None, iteration=0):
        self.model = model
        self.config = config
        self.sched = build_schedule(config.T, config.beta_start, config.beta_end)
        self.plan = implicit_timesteps(config.T, config.S)
        self.mask = make_mask(config.patch_size, config.patch_size, config.fir_beta)
        self.opt = opt or AdamState(config.adam_beta1, config.adam_beta2, config.adam_eps)
        self.iteration = iteration
        self.log = []

    @property
    def total_iterations(self):
        return self.config.transitional_iterations + self.config.phase2_iterations

    def _batch(self, clean, hazy, pool, rng):
        cfg = self.config
        p = cfg.patch_size
        picks = rng.integers(0, len(clean), size=cfg.batch_size)
        x0, cond = [], []
        for i in picks.tolist():
            r, c = pool[i][int(rng.integers(0, len(pool[i])))]
            x0.append(clean[i][:, r : r + p, c : c + p])
            cond.append(hazy[i][:, r : r + p, c : c + p])
        return np.stack(x0).astype(np.float32), np.stack(cond).astype(np.float32)

    def run(self, clean, hazy, until=None, callback=None):
        """Train on signed-range image lists up to iteration ``until`` (default: all)."""
        cfg = self.config
        until = self.total_iterations if until is None else min(until, self.total_iterations)
        pool = crop_pool([im.shape[1:] for im in clean], cfg.patch_size, cfg.crops_per_image, cfg.seed)
        while self.iteration < until:
            rng = make_rng(cfg.seed, 2, self.iteration)
            batch = self._batch(clean, hazy, pool, rng)
            if self.iteration < cfg.transitional_iterations:
                phase = 1
                loss = train_phase1_step(self.model, batch, self.sched, rng, self.opt,
                                         cfg.learning_rate, cfg.ema_decay)
            else:
                phase = 2
                if self.iteration == cfg.transitional_iterations:
                    self.log.append({"iteration": self.iteration, "phase": "transition",
                                     "loss": None, "lr": cfg.learning_rate})
                    logger.info("phase transition at iteration %d", self.iteration)
                loss = train_phase2_step(
                    self.model, batch, self.sched, self.plan, self.mask, rng, self.opt,
                    cfg.learning_rate, cfg.ema_decay, cfg.transitional_iterations,
                    cfg.use_fir, cfg.fir_max_t, cfg.msssim_scales, cfg.msssim_form, cfg.clip_x0,
                )
            self.iteration += 1
            record = {"iteration": self.iteration, "phase": phase, "loss": loss, "lr": cfg.learning_rate}
            self.log.append(record)
            if callback is not None:
                callback(record)
        return self
