"""Toy denoisers: small, seeded, fully differentiable noise predictors.

These stand in for the pretrained diffusion backbones at desk scale.
Real backbones plug in through the same ``Denoiser`` interface via the
registry; nothing in the pipeline knows the difference.
"""
from __future__ import annotations

import torch
from torch import Tensor, nn

from . import seeding
from .ddim import Denoiser, forward_sample
from .registry import DENOISERS
from .schedule import NoiseSchedule


class ZeroDenoiser(Denoiser):
    """Predicts zero noise everywhere; closed-form DDIM behavior."""

    def forward(self, x: Tensor, t: int) -> Tensor:
        return torch.zeros_like(x)


class ConstantDenoiser(Denoiser):
    """Predicts a constant noise value, independent of x and t."""

    def __init__(self, value: float):
        super().__init__()
        self.value = value

    def forward(self, x: Tensor, t: int) -> Tensor:
        return torch.full_like(x, self.value)


class TwoParamDenoiser(Denoiser):
    """eps(x, t) = a*x + b, the minimal trainable denoiser.

    Used for finite-difference gradient checks through the sampling
    chain: exactly two scalar parameters.
    """

    def __init__(self, a: float = 0.1, b: float = 0.0):
        super().__init__()
        self.a = nn.Parameter(torch.tensor(float(a), dtype=torch.float64))
        self.b = nn.Parameter(torch.tensor(float(b), dtype=torch.float64))

    def forward(self, x: Tensor, t: int) -> Tensor:
        return self.a.to(x.dtype) * x + self.b.to(x.dtype)


@DENOISERS.register("toy-conv")
class TinyConvDenoiser(Denoiser):
    """A small conv net conditioned on t through a constant extra channel."""

    def __init__(self, hidden: int = 8, t_full: int = 1000, seed: int = 0, size: int | None = None):
        if size is not None:  # registry passes the name's size as hidden width
            hidden = size
        super().__init__()
        self.t_full = t_full
        self.net = nn.Sequential(
            nn.Conv2d(4, hidden, 3, padding=1),
            nn.SiLU(),
            nn.Conv2d(hidden, hidden, 3, padding=1),
            nn.SiLU(),
            nn.Conv2d(hidden, 3, 3, padding=1),
        )
        gen = seeding.generator(seed, f"tiny-conv-denoiser-{hidden}")
        with torch.no_grad():
            for p in self.net.parameters():
                p.copy_(torch.randn(p.shape, generator=gen) * 0.1)

    def forward(self, x: Tensor, t: int) -> Tensor:
        t_chan = torch.full_like(x[:1], t / self.t_full)
        inp = torch.cat([x, t_chan], dim=0).unsqueeze(0)
        return self.net(inp).squeeze(0)


def pretrain_denoiser(
    denoiser: Denoiser,
    images: list[Tensor],
    sched: NoiseSchedule,
    steps: int = 300,
    lr: float = 1e-3,
    seed: int = 0,
) -> list[float]:
    """Fit a denoiser to the standard noise-prediction objective.

    Draws (image, t, eps) uniformly and minimizes ||eps - eps_pred||^2
    with Adam. Deterministic given the seed; returns the loss history.
    Desk-scale substitute for a pretrained backbone.
    """
    gen = seeding.generator(seed, "pretrain-denoiser")
    opt = torch.optim.Adam(denoiser.parameters(), lr=lr)
    history = []
    for _ in range(steps):
        idx = int(torch.randint(len(images), (1,), generator=gen))
        t = int(torch.randint(1, sched.t_full + 1, (1,), generator=gen))
        x0 = images[idx]
        eps = torch.randn(x0.shape, generator=gen, dtype=x0.dtype)
        x_t = forward_sample(x0, t, eps, sched)
        loss = ((denoiser(x_t, t) - eps) ** 2).mean()
        opt.zero_grad()
        loss.backward()
        opt.step()
        history.append(loss.item())
    return history
