"""Adversarial makeup transfer with deterministic DDIM editing.

A two-stage pipeline for protecting face images from unauthorized
recognition: a text-guided makeup removal stage learns the direction
between makeup and clean domains from a reference image, then an
image-guided transfer stage fine-tunes a diffusion denoiser so that
edited faces carry the reference makeup while their embeddings drift
toward a chosen target identity across an ensemble of surrogate face
models. Ships with toy encoders/denoisers for desk-scale runs, an
evaluation harness (FAR-calibrated ASR, PSNR, SSIM, FID), and a
face-compare API client with an in-process mock service.
"""

from .config import ExperimentConfig, RunManifest, load_config
from .ddim import Denoiser, ddim_invert, ddim_sample, ddim_step, forward_sample, predict_x0
from .encoders import EncoderBundle
from .losses import LossWeights
from .metrics import attack_success_rate, calibrate_threshold, fid, psnr, ssim
from .pipeline import (
    FineTuneConfig,
    StageArtifacts,
    protect,
    run_adversarial_transfer,
    run_makeup_removal,
)
from .regions import RegionMasks, histogram_match_region, hm_image, load_label_map
from .schedule import NoiseSchedule, TimestepSequence, discretize, make_linear_schedule

__all__ = [
    "Denoiser",
    "EncoderBundle",
    "ExperimentConfig",
    "FineTuneConfig",
    "LossWeights",
    "NoiseSchedule",
    "RegionMasks",
    "RunManifest",
    "StageArtifacts",
    "TimestepSequence",
    "attack_success_rate",
    "calibrate_threshold",
    "ddim_invert",
    "ddim_sample",
    "ddim_step",
    "discretize",
    "fid",
    "forward_sample",
    "histogram_match_region",
    "hm_image",
    "load_config",
    "load_label_map",
    "make_linear_schedule",
    "predict_x0",
    "protect",
    "psnr",
    "run_adversarial_transfer",
    "run_makeup_removal",
    "ssim",
]

__version__ = "0.1.0"
