"""Fourier-aware conditional diffusion dehazing in plain numpy."""

from .core import load_image, make_rng, save_image
from .estimators import FourierDiffusionDehazer, GlobalCompensator
from .haze import HazeSynthesizer, generate_dataset
from .metrics import MetricsReport, ciede2000, psnr, sam, ssim

__version__ = "0.1.0"

__all__ = [
    "FourierDiffusionDehazer",
    "GlobalCompensator",
    "HazeSynthesizer",
    "MetricsReport",
    "ciede2000",
    "generate_dataset",
    "load_image",
    "make_rng",
    "psnr",
    "sam",
    "save_image",
    "ssim",
]
