"""The two fine-tuning stages and the protect entry point.

Stage 1 (makeup removal) inverts each reference image to its latent
with the frozen denoiser, then fine-tunes a trainable copy so the
sampled reconstruction moves along the text direction from the makeup
prompt to the clean prompt. Stage 2 (adversarial transfer) reuses the
resulting (reference, clean) pair as an image-space makeup direction
and fine-tunes a second copy so sampled sources gain the reference
makeup while their face embeddings drift toward the target identity
across the surrogate ensemble.

Latents are computed once with the frozen model and never recomputed
during fine-tuning; only the sampling pass is optimized. Runs are fully
deterministic given config and inputs; per-iteration records capture
the learning rate, each loss term, and per-embedder cosines.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import torch

from .ddim import Denoiser, ImageBuffer, ddim_invert, ddim_sample
from .encoders import EncoderBundle, FaceEmbedder, embed_image, face_embed
from .losses import (
    LossWeights,
    direction_loss,
    ensemble_attack_loss,
    identity_loss,
    makeup_removal_loss,
    perceptual_distance,
    pixel_makeup_loss,
    reference_direction,
    stage1_total,
    stage2_total,
    visual_loss,
)
from .regions import RegionMasks
from .schedule import NoiseSchedule, discretize, make_linear_schedule

logger = logging.getLogger(__name__)


class NonFiniteLossError(RuntimeError):
    """The objective became non-finite; carries the iteration index."""

    def __init__(self, iteration: int, value: float):
        super().__init__(f"non-finite loss {value!r} at iteration {iteration}")
        self.iteration = iteration


class ArtifactMismatchError(ValueError):
    """protect() was called with a config the artifacts were not trained for."""


@dataclass(frozen=True)
class FineTuneConfig:
    """Hyperparameters shared by both stages.

    The return step t0 selects how deep inversion goes within the full
    t_full-step schedule: smaller t0 preserves more coarse content.
    The learning rate starts at base_lr and grows by lr_slope of the
    base per lr_step iterations (set lr_mode="multiplicative" for a
    compounding reading). norm_eps stabilizes directional losses at the
    start of training, where the edit is still nearly zero; it is not
    used outside the training loops.
    """

    t0: int = 60
    s_inv: int = 20
    s_sam: int = 6
    epochs: int = 6
    base_lr: float = 4e-6
    lr_step: int = 50
    lr_slope: float = 0.2
    lr_mode: str = "additive"
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    prompt_clean: str = "face without makeup"
    prompt_makeup: str = "face with makeup"
    t_full: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    norm_eps: float = 1e-8
    hm_detach_target: bool = True

    def __post_init__(self) -> None:
        if not (1 <= self.s_inv <= self.t0 and 1 <= self.s_sam <= self.t0):
            raise ValueError("s_inv and s_sam must lie in [1, t0]")
        if self.t0 > self.t_full:
            raise ValueError(f"t0={self.t0} exceeds t_full={self.t_full}")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.base_lr <= 0:
            raise ValueError("base_lr must be positive")
        if self.lr_mode not in ("additive", "multiplicative"):
            raise ValueError(f"unknown lr_mode {self.lr_mode!r}")

    def schedule(self) -> NoiseSchedule:
        return make_linear_schedule(self.t_full, self.beta_start, self.beta_end)


@dataclass
class StageArtifacts:
    """Everything a stage produced: tuned parameters, cached latents,
    final outputs, and the per-iteration loss log. Stage 1 additionally
    carries the (reference, clean) pairs and their cached embedding
    directions."""

    stage: str
    config: FineTuneConfig
    frozen: Denoiser
    tuned: Denoiser
    latents: list[ImageBuffer]
    outputs: list[ImageBuffer]
    log: list[dict]
    pairs: list[tuple[ImageBuffer, ImageBuffer]] | None = None
    reference_directions: list[torch.Tensor] | None = None


def lr_at(iteration: int, cfg: FineTuneConfig) -> float:
    """Learning rate at a 0-based iteration index."""
    if iteration < 0:
        raise ValueError("iteration must be >= 0")
    blocks = iteration // cfg.lr_step
    if cfg.lr_mode == "additive":
        return cfg.base_lr * (1.0 + cfg.lr_slope * blocks)
    return cfg.base_lr * (1.0 + cfg.lr_slope) ** blocks


def _invert_all(
    images: list[ImageBuffer], denoiser: Denoiser, sched: NoiseSchedule, cfg: FineTuneConfig
) -> list[ImageBuffer]:
    ts_inv = discretize(cfg.t0, cfg.s_inv, sched.t_full)
    with torch.no_grad():
        return [ddim_invert(x, denoiser, sched, ts_inv) for x in images]


def _optimizer(tuned: Denoiser, cfg: FineTuneConfig) -> torch.optim.Adam | None:
    """Adam over the trainable copy; None for parameter-free denoisers."""
    params = list(tuned.parameters())
    return torch.optim.Adam(params, lr=cfg.base_lr) if params else None


def _check_finite(total: torch.Tensor, iteration: int) -> None:
    value = float(total.detach())
    if not torch.isfinite(total.detach()):
        raise NonFiniteLossError(iteration, value)


def run_makeup_removal(
    refs: list[ImageBuffer],
    denoiser: Denoiser,
    encs: EncoderBundle,
    cfg: FineTuneConfig,
) -> StageArtifacts:
    """Fine-tune a copy of the denoiser to strip makeup from the refs.

    The frozen input model computes the latents once; the copy is then
    optimized on the sampled reconstructions. Zero-weight terms are
    skipped entirely, so an all-zero objective leaves the parameters
    bit-identical to the frozen ones.
    """
    if not refs:
        raise ValueError("refs must be non-empty")
    if not cfg.prompt_clean or not cfg.prompt_makeup:
        raise ValueError("both prompts must be set")
    sched = cfg.schedule()
    ts_sam = discretize(cfg.t0, cfg.s_sam, sched.t_full)
    latents = _invert_all(refs, denoiser, sched, cfg)

    tuned = denoiser.clone()
    opt = _optimizer(tuned, cfg)
    w = cfg.weights
    log: list[dict] = []
    iteration = 0
    for _ in range(cfg.epochs):
        for y, latent in zip(refs, latents):
            lr = lr_at(iteration, cfg)
            if opt is not None:
                for group in opt.param_groups:
                    group["lr"] = lr
            y_hat = ddim_sample(latent, tuned, sched, ts_sam)
            zero = y_hat.new_zeros(())
            removal = (
                makeup_removal_loss(
                    y, y_hat, encs.image, encs.text, cfg.prompt_clean,
                    cfg.prompt_makeup, norm_eps=cfg.norm_eps,
                )
                if w.removal
                else zero
            )
            ident = (
                identity_loss(y_hat, y, encs.identity, norm_eps=cfg.norm_eps)
                if w.identity
                else zero
            )
            percep = perceptual_distance(y_hat, y, encs.perceptual) if w.perceptual else zero
            total, breakdown = stage1_total(removal, ident, percep, w)
            _check_finite(total, iteration)
            if total.requires_grad and opt is not None:
                opt.zero_grad()
                total.backward()
                opt.step()
            log.append({"stage": "removal", "iter": iteration, "lr": lr, **breakdown})
            iteration += 1

    with torch.no_grad():
        outputs = [ddim_sample(latent, tuned, sched, ts_sam) for latent in latents]
        directions = [
            reference_direction(y, y_hat, encs.image) for y, y_hat in zip(refs, outputs)
        ]
    return StageArtifacts(
        stage="removal",
        config=cfg,
        frozen=denoiser,
        tuned=tuned,
        latents=latents,
        outputs=outputs,
        log=log,
        pairs=list(zip(refs, outputs)),
        reference_directions=directions,
    )


def run_adversarial_transfer(
    sources: list[ImageBuffer],
    masks: list[RegionMasks],
    ref: ImageBuffer,
    ref_clean: ImageBuffer,
    target: ImageBuffer,
    ensemble: list[FaceEmbedder],
    denoiser: Denoiser,
    encs: EncoderBundle,
    cfg: FineTuneConfig,
    ref_masks: RegionMasks | None = None,
) -> StageArtifacts:
    """Fine-tune a copy of the denoiser to protect the source images.

    Needs the stage-1 pair (ref, ref_clean) for the makeup direction
    and ref_masks for the pixel-level makeup target whenever the pixel
    weight is active. Sources are visited in list order, one optimizer
    step each, for cfg.epochs passes.
    """
    if not sources:
        raise ValueError("sources must be non-empty")
    if not ensemble:
        raise ValueError("need at least one surrogate face embedder")
    if len(masks) != len(sources):
        raise ValueError(f"got {len(masks)} masks for {len(sources)} sources")
    w = cfg.weights
    use_pixel = bool(w.makeup and w.pixel)
    if use_pixel and ref_masks is None:
        raise ValueError("ref_masks required when the pixel makeup weight is active")

    sched = cfg.schedule()
    ts_sam = discretize(cfg.t0, cfg.s_sam, sched.t_full)
    latents = _invert_all(sources, denoiser, sched, cfg)

    with torch.no_grad():
        delta_ref = reference_direction(ref, ref_clean, encs.image)
        target_embs = [face_embed(m, target) for m in ensemble]
        source_embs = [embed_image(encs.image, x) for x in sources]

    tuned = denoiser.clone()
    opt = _optimizer(tuned, cfg)
    log: list[dict] = []
    iteration = 0
    for _ in range(cfg.epochs):
        for x, mask_x, latent, x_emb in zip(sources, masks, latents, source_embs):
            lr = lr_at(iteration, cfg)
            if opt is not None:
                for group in opt.param_groups:
                    group["lr"] = lr
            x_prime = ddim_sample(latent, tuned, sched, ts_sam)
            zero = x_prime.new_zeros(())
            direction = (
                direction_loss(
                    embed_image(encs.image, x_prime) - x_emb, delta_ref,
                    norm_eps=cfg.norm_eps,
                )
                if w.makeup and w.direction
                else zero
            )
            pixel = (
                pixel_makeup_loss(
                    x_prime, ref, mask_x, ref_masks, detach_target=cfg.hm_detach_target
                )
                if use_pixel
                else zero
            )
            attack = (
                ensemble_attack_loss(
                    x_prime, target, ensemble, norm_eps=cfg.norm_eps,
                    target_embeddings=target_embs,
                )
                if w.attack
                else zero
            )
            visual = visual_loss(x_prime, x, encs.perceptual, w.l1) if w.visual else zero
            total, breakdown = stage2_total(direction, pixel, attack, visual, w)
            _check_finite(total, iteration)
            if total.requires_grad and opt is not None:
                opt.zero_grad()
                total.backward()
                opt.step()
            with torch.no_grad():
                cosines = [
                    float(
                        torch.nn.functional.cosine_similarity(
                            face_embed(m, x_prime.detach()), tgt, dim=0
                        )
                    )
                    for m, tgt in zip(ensemble, target_embs)
                ]
            log.append(
                {
                    "stage": "transfer",
                    "iter": iteration,
                    "lr": lr,
                    **breakdown,
                    "target_cosines": cosines,
                }
            )
            iteration += 1

    with torch.no_grad():
        outputs = [ddim_sample(latent, tuned, sched, ts_sam) for latent in latents]
    return StageArtifacts(
        stage="transfer",
        config=cfg,
        frozen=denoiser,
        tuned=tuned,
        latents=latents,
        outputs=outputs,
        log=log,
    )


def protect(x: ImageBuffer, artifacts: StageArtifacts, cfg: FineTuneConfig) -> ImageBuffer:
    """Protect a new image with trained artifacts: invert with the
    frozen model, sample with the tuned one, clamp to [-1, 1]."""
    trained = artifacts.config
    for name in ("t0", "s_inv", "s_sam", "t_full", "beta_start", "beta_end"):
        if getattr(cfg, name) != getattr(trained, name):
            raise ArtifactMismatchError(
                f"{name}={getattr(cfg, name)} differs from trained value "
                f"{getattr(trained, name)}"
            )
    sched = cfg.schedule()
    ts_inv = discretize(cfg.t0, cfg.s_inv, sched.t_full)
    ts_sam = discretize(cfg.t0, cfg.s_sam, sched.t_full)
    with torch.no_grad():
        latent = ddim_invert(x, artifacts.frozen, sched, ts_inv)
        out = ddim_sample(latent, artifacts.tuned, sched, ts_sam)
    clamped = int((out.abs() > 1.0).sum())
    if clamped:
        logger.info("protect: clamped %d out-of-range values", clamped)
    return out.clamp(-1.0, 1.0)
