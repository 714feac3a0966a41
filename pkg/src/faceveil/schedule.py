"""Diffusion noise schedule and timestep discretization.

The schedule stores the per-step variances beta_t and the cumulative
signal coefficients alpha_bar_t = prod_{s<=t}(1 - beta_s), indexed so
that ``alpha_bars[0] == 1`` (the clean image) and ``alpha_bars[t]``
corresponds to timestep t in 1..t_full. All coefficients are kept in
float64; image arithmetic casts as needed.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import torch


@dataclass(frozen=True)
class NoiseSchedule:
    """Variance schedule of the forward diffusion process.

    betas[i] is the variance of step t = i + 1; alpha_bars has length
    t_full + 1 with alpha_bars[0] = 1 and
    alpha_bars[t] = alpha_bars[t-1] * (1 - betas[t-1]).
    """

    betas: torch.Tensor
    alpha_bars: torch.Tensor = field(init=False)

    def __post_init__(self) -> None:
        betas = torch.as_tensor(self.betas, dtype=torch.float64)
        if betas.ndim != 1 or betas.numel() < 1:
            raise ValueError("betas must be a non-empty 1-D vector")
        if not bool(((betas > 0.0) & (betas < 1.0)).all()):
            raise ValueError("betas must lie strictly inside (0, 1)")
        alpha_bars = torch.cat(
            [torch.ones(1, dtype=torch.float64), torch.cumprod(1.0 - betas, dim=0)]
        )
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "alpha_bars", alpha_bars)

    @property
    def t_full(self) -> int:
        return int(self.betas.numel())

    def alpha_bar(self, t: int) -> float:
        """alpha_bar_t as a python float; t in 0..t_full."""
        if not 0 <= t <= self.t_full:
            raise ValueError(f"timestep {t} outside [0, {self.t_full}]")
        return float(self.alpha_bars[t])


@dataclass(frozen=True)
class TimestepSequence:
    """Strictly increasing timesteps ending at the return step t0."""

    t0: int
    steps: tuple[int, ...]

    def __post_init__(self) -> None:
        steps = tuple(int(s) for s in self.steps)
        if not steps or steps[-1] != self.t0:
            raise ValueError("steps must be non-empty and end at t0")
        if any(b <= a for a, b in zip(steps, steps[1:])):
            raise ValueError("steps must be strictly increasing")
        if steps[0] < 1:
            raise ValueError("steps must lie in [1, t0]")
        object.__setattr__(self, "steps", steps)

    def __len__(self) -> int:
        return len(self.steps)

    def __iter__(self):
        return iter(self.steps)


def make_linear_schedule(
    t_full: int, beta_start: float = 1e-4, beta_end: float = 0.02
) -> NoiseSchedule:
    """Linearly interpolated beta schedule (the standard DDPM default)."""
    if t_full < 1:
        raise ValueError(f"t_full must be >= 1, got {t_full}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError(
            f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"
        )
    betas = torch.linspace(beta_start, beta_end, t_full, dtype=torch.float64)
    return NoiseSchedule(betas=betas)


def discretize(t0: int, s: int, t_full: int | None = None) -> TimestepSequence:
    """s timesteps uniformly spaced over (0, t0]: round(t0*i/s) for i=1..s.

    Rounding collisions are deduplicated (keeping t0), so the sequence
    may be shorter than s. A zero produced by rounding is dropped.
    """
    if s < 1 or s > t0:
        raise ValueError(f"need 1 <= s <= t0, got s={s}, t0={t0}")
    if t_full is not None and t0 > t_full:
        raise ValueError(f"t0={t0} exceeds schedule length {t_full}")
    steps: list[int] = []
    for i in range(1, s + 1):
        t = round(t0 * i / s)
        if t >= 1 and (not steps or t > steps[-1]):
            steps.append(t)
    return TimestepSequence(t0=t0, steps=tuple(steps))
