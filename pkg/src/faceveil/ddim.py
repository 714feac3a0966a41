"""Deterministic DDIM sampling and inversion over an abstract denoiser.

Images are unbatched float tensors of shape (3, H, W) in the [-1, 1]
range convention. Every update here is the sigma=0 (deterministic) rule

    x_{t'} = sqrt(abar_{t'}) * f(x_t, t) + sqrt(1 - abar_{t'}) * eps(x_t, t)

with f the predicted clean image, applied upward in t for inversion and
downward for sampling. All operations are differentiable with respect
to both the image and the denoiser parameters; ``ddim_sample`` is the
fine-tuning path and keeps the autograd graph through every step.
"""
from __future__ import annotations

import copy
import math

import torch
from torch import Tensor, nn

from .schedule import NoiseSchedule, TimestepSequence

ImageBuffer = Tensor  # (3, H, W), values conventionally in [-1, 1]


class Denoiser(nn.Module):
    """Noise-prediction model eps(x_t, t) -> same-shape tensor.

    Subclasses implement ``forward(x, t)`` with t an integer timestep.
    ``clone()`` yields an independent copy whose parameters can be
    fine-tuned while the original stays frozen; ``parameters()`` is the
    optimizer entry point, inherited from nn.Module.
    """

    def forward(self, x: Tensor, t: int) -> Tensor:  # pragma: no cover
        raise NotImplementedError

    def clone(self) -> "Denoiser":
        return copy.deepcopy(self)

    def param_checksum(self) -> float:
        """Cheap fingerprint used to assert a model was left untouched."""
        total = 0.0
        for p in self.parameters():
            total += float(p.detach().double().sum())
        return total


def _check_shapes(a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def forward_sample(x0: ImageBuffer, t: int, eps: ImageBuffer, sched: NoiseSchedule) -> ImageBuffer:
    """Noise x0 directly to timestep t: sqrt(abar_t)*x0 + sqrt(1-abar_t)*eps."""
    _check_shapes(x0, eps)
    abar = sched.alpha_bar(t)
    return math.sqrt(abar) * x0 + math.sqrt(1.0 - abar) * eps


def predict_x0(x_t: ImageBuffer, t: int, eps_pred: ImageBuffer, sched: NoiseSchedule) -> ImageBuffer:
    """Predicted clean image: (x_t - sqrt(1-abar_t)*eps_pred) / sqrt(abar_t)."""
    _check_shapes(x_t, eps_pred)
    abar = sched.alpha_bar(t)
    return (x_t - math.sqrt(1.0 - abar) * eps_pred) / math.sqrt(abar)


def ddim_step(
    x_t: ImageBuffer, t: int, t_to: int, denoiser: Denoiser, sched: NoiseSchedule
) -> ImageBuffer:
    """One deterministic step from timestep t to t_to.

    t_to < t is a sampling step, t_to > t an inversion step; t_to == t
    is rejected. The same update rule serves both directions.
    """
    if t_to == t:
        raise ValueError("ddim_step requires t_to != t")
    if not (0 <= t_to <= sched.t_full and 0 <= t <= sched.t_full):
        raise ValueError(f"timesteps ({t}, {t_to}) outside [0, {sched.t_full}]")
    eps = denoiser(x_t, t)
    x0_pred = predict_x0(x_t, t, eps, sched)
    abar_to = sched.alpha_bar(t_to)
    return math.sqrt(abar_to) * x0_pred + math.sqrt(1.0 - abar_to) * eps


def ddim_invert(
    x0: ImageBuffer, denoiser: Denoiser, sched: NoiseSchedule, ts: TimestepSequence
) -> ImageBuffer:
    """Map an image to its latent x_{t0} by folding ddim_step upward.

    The walk starts at t=0 (where the predicted-x0 rule degenerates to
    the identity) and visits each timestep in ts in order.
    """
    x = x0
    t_from = 0
    for t in ts:
        x = ddim_step(x, t_from, t, denoiser, sched)
        t_from = t
    return x


def ddim_sample(
    latent: ImageBuffer, denoiser: Denoiser, sched: NoiseSchedule, ts: TimestepSequence
) -> ImageBuffer:
    """Generate from a latent x_{t0} by folding ddim_step downward to t=0.

    Gradients flow through the whole chain to the denoiser parameters;
    with the small step counts used for fine-tuning the stored graph is
    cheap, so no recomputation strategy is needed.
    """
    steps = list(ts)
    x = latent
    for t, t_to in zip(reversed(steps), reversed([0] + steps[:-1])):
        x = ddim_step(x, t, t_to, denoiser, sched)
    return x
