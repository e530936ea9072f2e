"""scikit-learn style estimators wrapping the diffusion and global branches."""

import logging

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .core import (
    check_image_batch,
    config_hash,
    load_checkpoint,
    make_rng,
    save_checkpoint,
    to_signed,
)
from .denoiser import PARAM_NAMES, DenoiserModel
from .diffusion import build_schedule, implicit_timesteps
from .gcl import GlobalCompensationModel, gcl_forward, train_gcl_step
from .metrics import psnr
from .optim import AdamState
from .sampler import plan_patch_grid, sample_restored
from .training import PhasedTrainer, TrainConfig

logger = logging.getLogger(__name__)


def _stack_or_list(images):
    return np.stack(images) if len({im.shape for im in images}) == 1 else images


def _check_pairs(X, y):
    hazy = check_image_batch(X, "unit", name="X")
    clean = check_image_batch(y, "unit", name="y")
    if len(hazy) != len(clean):
        raise ValueError(f"{len(hazy)} hazy images but {len(clean)} clean ones")
    for i, (a, b) in enumerate(zip(hazy, clean)):
        if a.shape != b.shape or a.shape[0] != 3:
            raise ValueError(f"pair {i}: shapes {a.shape} and {b.shape} must match and have 3 channels")
    return hazy, clean


class FourierDiffusionDehazer(BaseEstimator):
    """Conditional diffusion dehazer trained in two phases and sampled patchwise.

    ``fit(X, y)`` takes hazy images ``X`` and clean targets ``y`` (unit range,
    ``(N, 3, H, W)`` or a list of ``(3, H, W)``). ``predict(X)`` returns restored
    unit-range images of the same sizes.

    With ``warm_start=True`` a second ``fit`` continues from the current iteration,
    e.g. to add reconstruction iterations to a model fitted with
    ``phase2_iterations=0``.
    """

    def __init__(
        self,
        timesteps=1000,
        sampling_steps=10,
        beta_start=1e-4,
        beta_end=0.02,
        hidden_channels=16,
        embed_dim=32,
        transitional_iterations=2000,
        phase2_iterations=500,
        batch_size=4,
        learning_rate=2e-5,
        ema_decay=0.999,
        patch_size=64,
        stride=None,
        crops_per_image=16,
        fir_beta=0.1,
        use_fir=True,
        fir_max_t=None,
        msssim_form="as_written",
        clip_denoised=True,
        use_ema=True,
        warm_start=False,
        random_state=0,
    ):
        self.timesteps = timesteps
        self.sampling_steps = sampling_steps
        self.beta_start = beta_start
        self.beta_end = beta_end
        self.hidden_channels = hidden_channels
        self.embed_dim = embed_dim
        self.transitional_iterations = transitional_iterations
        self.phase2_iterations = phase2_iterations
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.ema_decay = ema_decay
        self.patch_size = patch_size
        self.stride = stride
        self.crops_per_image = crops_per_image
        self.fir_beta = fir_beta
        self.use_fir = use_fir
        self.fir_max_t = fir_max_t
        self.msssim_form = msssim_form
        self.clip_denoised = clip_denoised
        self.use_ema = use_ema
        self.warm_start = warm_start
        self.random_state = random_state

    def _train_config(self):
        return TrainConfig(
            T=self.timesteps,
            S=self.sampling_steps,
            beta_start=self.beta_start,
            beta_end=self.beta_end,
            transitional_iterations=self.transitional_iterations,
            phase2_iterations=self.phase2_iterations,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            ema_decay=self.ema_decay,
            patch_size=self.patch_size,
            crops_per_image=self.crops_per_image,
            fir_beta=self.fir_beta,
            use_fir=self.use_fir,
            fir_max_t=self.fir_max_t,
            msssim_form=self.msssim_form,
            clip_x0=self.clip_denoised,
            seed=self.random_state,
        )

    def _validate_params(self):
        implicit_timesteps(self.timesteps, self.sampling_steps)
        build_schedule(self.timesteps, self.beta_start, self.beta_end)
        if not 0.0 <= self.fir_beta <= 1.0:
            raise ValueError(f"fir_beta must lie in [0, 1], got {self.fir_beta}")
        if self.batch_size < 1 or self.patch_size < 1 or self.crops_per_image < 1:
            raise ValueError("batch_size, patch_size and crops_per_image must be positive")
        if self.transitional_iterations < 0 or self.phase2_iterations < 0:
            raise ValueError("iteration counts must be non-negative")
        if not 0.0 <= self.ema_decay <= 1.0:
            raise ValueError(f"ema_decay must lie in [0, 1], got {self.ema_decay}")

    @property
    def geometry(self):
        return {
            "T": self.timesteps,
            "patch_size": self.patch_size,
            "hidden_channels": self.hidden_channels,
            "embed_dim": self.embed_dim,
        }

    def fit(self, X, y, callback=None, until=None):
        """Train; ``until`` stops early at that global iteration (resume with ``warm_start``)."""
        self._validate_params()
        hazy, clean = _check_pairs(X, y)
        config = self._train_config()
        if self.warm_start and hasattr(self, "model_"):
            trainer = PhasedTrainer(self.model_, config, opt=self.optimizer_, iteration=self.n_iter_)
        else:
            model = DenoiserModel(self.hidden_channels, self.embed_dim, seed=self.random_state)
            trainer = PhasedTrainer(model, config)
            self.log_ = []
        trainer.run([to_signed(c) for c in clean], [to_signed(h) for h in hazy], until=until, callback=callback)
        self.model_ = trainer.model
        self.optimizer_ = trainer.opt
        self.n_iter_ = trainer.iteration
        self.log_ = list(getattr(self, "log_", [])) + trainer.log
        self.n_features_in_ = 3
        return self

    def restore(self, hazy, index=0, random_state=None):
        """Restore one ``(3, H, W)`` image; ``index`` selects its noise stream."""
        check_is_fitted(self, "model_")
        seed = self.random_state if random_state is None else random_state
        sched = build_schedule(self.timesteps, self.beta_start, self.beta_end)
        plan = implicit_timesteps(self.timesteps, self.sampling_steps)
        grid = plan_patch_grid(hazy.shape[1], hazy.shape[2], self.patch_size, self.stride)
        return sample_restored(to_signed(hazy), self.model_, sched, plan, grid,
                               rng=make_rng(seed, 3, index), use_ema=self.use_ema,
                               clip_x0=self.clip_denoised)

    def predict(self, X, random_state=None):
        images = check_image_batch(X, "unit", name="X")
        return _stack_or_list([self.restore(im, i, random_state) for i, im in enumerate(images)])

    def score(self, X, y):
        """Mean PSNR (dB) of the restorations against ``y``."""
        pred = self.predict(X)
        return float(np.mean([psnr(p, c) for p, c in zip(pred, check_image_batch(y, "unit"))]))

    def save(self, path):
        check_is_fitted(self, "model_")
        tensors = {}
        for name in PARAM_NAMES:
            tensors[f"params/{name}"] = self.model_.params[name]
            tensors[f"ema/{name}"] = self.model_.ema[name]
            if name in self.optimizer_.m:
                tensors[f"adam.m/{name}"] = self.optimizer_.m[name]
                tensors[f"adam.v/{name}"] = self.optimizer_.v[name]
        metadata = {
            "kind": "denoiser",
            "estimator_params": self.get_params(),
            "config_hash": config_hash(self.geometry),
            "geometry": self.geometry,
            "iteration": int(self.n_iter_),
            "optimizer_step": int(self.optimizer_.step),
            "has_ema": True,
            "forward_branch_fresh_noise": True,
        }
        save_checkpoint(path, tensors, metadata)

    @classmethod
    def load(cls, path, **overrides):
        tensors, meta = load_checkpoint(path)
        if meta.get("kind") != "denoiser":
            raise ValueError(f"{path} is not a denoiser checkpoint")
        est = cls(**{**meta["estimator_params"], **overrides})
        model = DenoiserModel(est.hidden_channels, est.embed_dim, seed=est.random_state)
        for name in PARAM_NAMES:
            model.params[name] = tensors[f"params/{name}"]
            model.ema[name] = tensors[f"ema/{name}"]
        opt = AdamState(step=meta["optimizer_step"])
        for name in PARAM_NAMES:
            if f"adam.m/{name}" in tensors:
                opt.m[name] = tensors[f"adam.m/{name}"].astype(np.float64)
                opt.v[name] = tensors[f"adam.v/{name}"].astype(np.float64)
        est.model_, est.optimizer_, est.n_iter_ = model, opt, meta["iteration"]
        est.log_ = []
        est.n_features_in_ = 3
        return est


class GlobalCompensator(BaseEstimator):
    """Global Fourier branch plus attention fusion, trained with an L1 loss.

    ``fit(X, y, local=f1)`` takes hazy inputs ``X``, clean targets ``y`` and the
    diffusion branch outputs ``f1`` (all unit range, equal shapes).
    """

    def __init__(self, channels=8, fusion_channels=16, n_iterations=2000, batch_size=8,
                 learning_rate=1e-3, warm_start=False, random_state=0):
        self.channels = channels
        self.fusion_channels = fusion_channels
        self.n_iterations = n_iterations
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.warm_start = warm_start
        self.random_state = random_state

    def fit(self, X, y, local, callback=None):
        hazy, clean = _check_pairs(X, y)
        f1 = check_image_batch(local, "unit", name="local")
        if len(f1) != len(hazy) or any(a.shape != b.shape for a, b in zip(f1, hazy)):
            raise ValueError("local outputs must match the hazy inputs one-to-one")
        if not (self.warm_start and hasattr(self, "model_")):
            self.model_ = GlobalCompensationModel(self.channels, self.fusion_channels, seed=self.random_state)
            self.optimizer_ = AdamState()
            self.n_iter_ = 0
            self.log_ = []
        shapes = {im.shape for im in hazy}
        if len(shapes) != 1:
            raise ValueError("global branch training needs equally sized images")
        hz, f1s, gt = np.stack(hazy), np.stack(f1), np.stack(clean)
        target = self.n_iter_ + self.n_iterations
        while self.n_iter_ < target:
            rng = make_rng(self.random_state, 4, self.n_iter_)
            idx = rng.integers(0, len(hz), size=min(self.batch_size, len(hz)))
            loss = train_gcl_step(self.model_, (hz[idx], f1s[idx], gt[idx]), self.optimizer_, self.learning_rate)
            self.n_iter_ += 1
            record = {"iteration": self.n_iter_, "phase": "gcl", "loss": loss, "lr": self.learning_rate}
            self.log_.append(record)
            if callback is not None:
                callback(record)
        self.n_features_in_ = 3
        return self

    def predict_global(self, X):
        check_is_fitted(self, "model_")
        images = check_image_batch(X, "unit", name="X")
        return _stack_or_list([gcl_forward(self.model_.params, im[None])[0][0] for im in images])

    def predict(self, X, local):
        """Fused output, clipped to the unit range."""
        check_is_fitted(self, "model_")
        images = check_image_batch(X, "unit", name="X")
        f1 = check_image_batch(local, "unit", name="local")
        out = [np.clip(self.model_.forward(h, f)[0][0], 0.0, 1.0) for h, f in zip(images, f1)]
        return _stack_or_list(out)

    def save(self, path, diffusion_hash=None):
        check_is_fitted(self, "model_")
        metadata = {
            "kind": "gcl",
            "estimator_params": self.get_params(),
            "iteration": int(self.n_iter_),
            "diffusion_config_hash": diffusion_hash,
            "has_ema": False,
        }
        save_checkpoint(path, self.model_.params, metadata)

    @classmethod
    def load(cls, path):
        tensors, meta = load_checkpoint(path)
        if meta.get("kind") != "gcl":
            raise ValueError(f"{path} is not a global-branch checkpoint")
        est = cls(**meta["estimator_params"])
        model = GlobalCompensationModel(est.channels, est.fusion_channels, seed=est.random_state)
        missing = set(model.params) - set(tensors)
        if missing:
            raise ValueError(f"{path} lacks tensors {sorted(missing)}")
        model.params = {k: tensors[k] for k in model.params}
        est.model_, est.optimizer_, est.n_iter_, est.log_ = model, AdamState(), meta["iteration"], []
        est.diffusion_config_hash_ = meta.get("diffusion_config_hash")
        est.n_features_in_ = 3
        return est
