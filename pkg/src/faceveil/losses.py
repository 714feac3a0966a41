"""Training objectives, as pure differentiable functions.

Every loss is nonnegative, zero on its identity case, and returns a
0-dim tensor so gradients flow to images and upstream model parameters.
Directional losses raise DegenerateDirectionError on an exactly zero
difference vector rather than silently returning a value; training
loops pass a small ``norm_eps`` instead to stay stable near the start,
where the edited image barely differs from its source.
"""
from __future__ import annotations

from dataclasses import dataclass, fields

import torch
from torch import Tensor

from .ddim import ImageBuffer
from .encoders import (
    EmbeddingVector,
    FaceEmbedder,
    ImageEncoder,
    PerceptualExtractor,
    TextEncoder,
    embed_image,
    embed_text,
    face_embed,
)
from .regions import RegionMasks, hm_image

_FEATURE_NORM_EPS = 1e-10


class DegenerateDirectionError(ValueError):
    """A direction vector had exactly zero norm."""


@dataclass(frozen=True)
class LossWeights:
    """Nonnegative weights for both fine-tuning stages.

    Stage 1: removal, identity, perceptual. Stage 2: makeup (outer),
    direction and pixel (inner), attack, visual, l1 (inside the visual
    term). The outer/inner nesting of the makeup weights is kept as is,
    redundant though it looks, so ablations toggle one knob.
    """

    removal: float = 3.0
    identity: float = 1.0
    perceptual: float = 1.0
    makeup: float = 1.0
    direction: float = 1.0
    pixel: float = 0.1
    attack: float = 1.0
    visual: float = 1.0
    l1: float = 1.0

    def __post_init__(self) -> None:
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"negative loss weight {f.name}")


def _cosine(a: Tensor, b: Tensor, norm_eps: float) -> Tensor:
    na, nb = a.norm(), b.norm()
    if norm_eps == 0.0 and (na.detach().item() == 0.0 or nb.detach().item() == 0.0):
        raise DegenerateDirectionError("zero-norm vector in cosine")
    return (a * b).sum() / ((na + norm_eps) * (nb + norm_eps))


def _cosine_distance(a: Tensor, b: Tensor, norm_eps: float) -> Tensor:
    # clamp shaves the ~1e-16 float noise that would push the distance
    # outside its [0, 2] contract when the vectors are exactly (anti)parallel
    return torch.clamp(1.0 - _cosine(a, b, norm_eps), min=0.0, max=2.0)


def direction_loss(
    delta_a: EmbeddingVector, delta_b: EmbeddingVector, *, norm_eps: float = 0.0
) -> Tensor:
    """1 - cos(delta_a, delta_b); 0 iff parallel, 2 iff anti-parallel."""
    return _cosine_distance(delta_a, delta_b, norm_eps)


def makeup_removal_loss(
    y: ImageBuffer,
    y_hat: ImageBuffer,
    enc_i: ImageEncoder,
    enc_t: TextEncoder,
    t_clean: str,
    t_makeup: str,
    *,
    norm_eps: float = 0.0,
) -> Tensor:
    """Align the edit direction in embedding space with the text direction
    from the makeup prompt to the clean prompt."""
    delta_img = embed_image(enc_i, y_hat) - embed_image(enc_i, y)
    delta_text = embed_text(enc_t, t_clean) - embed_text(enc_t, t_makeup)
    return direction_loss(delta_img, delta_text, norm_eps=norm_eps)


def reference_direction(y: ImageBuffer, y_hat: ImageBuffer, enc_i: ImageEncoder) -> EmbeddingVector:
    """Makeup direction learned from the removal stage: E(y) - E(y_hat).

    Precomputable once per reference and cached by the transfer stage.
    """
    return embed_image(enc_i, y) - embed_image(enc_i, y_hat)


def makeup_direction_loss(
    x: ImageBuffer,
    x_prime: ImageBuffer,
    y: ImageBuffer,
    y_hat: ImageBuffer,
    enc_i: ImageEncoder,
    *,
    norm_eps: float = 0.0,
) -> Tensor:
    """Align the source edit direction with the reference makeup direction."""
    delta_x = embed_image(enc_i, x_prime) - embed_image(enc_i, x)
    return direction_loss(delta_x, reference_direction(y, y_hat, enc_i), norm_eps=norm_eps)


def pixel_makeup_loss(
    x_prime: ImageBuffer,
    y: ImageBuffer,
    masks_x: RegionMasks,
    masks_y: RegionMasks,
    *,
    detach_target: bool = True,
) -> Tensor:
    """Mean absolute deviation of x' from its histogram-matched target.

    Background pixels contribute zero by construction. The matched
    target is treated as a constant by default (detach_target), the
    usual histogram-loss practice.
    """
    target = hm_image(x_prime, y, masks_x, masks_y)
    if detach_target:
        target = target.detach()
    return (x_prime - target).abs().mean()


def ensemble_attack_loss(
    x_prime: ImageBuffer,
    x_star: ImageBuffer,
    embedders: list[FaceEmbedder],
    *,
    norm_eps: float = 0.0,
    target_embeddings: list[EmbeddingVector] | None = None,
) -> Tensor:
    """Mean cosine distance to the target identity over K surrogate
    face models; target embeddings may be precomputed and cached."""
    if not embedders:
        raise ValueError("need at least one face embedder")
    if target_embeddings is None:
        target_embeddings = [face_embed(m, x_star) for m in embedders]
    total = x_prime.new_zeros(())
    for emb, tgt in zip(embedders, target_embeddings, strict=True):
        total = total + _cosine_distance(face_embed(emb, x_prime), tgt, norm_eps)
    return total / len(embedders)


def perceptual_distance(a: ImageBuffer, b: ImageBuffer, perc: PerceptualExtractor) -> Tensor:
    """Mean-squared distance between channel-unit-normalized feature
    maps, summed over the extractor's layers."""
    total = a.new_zeros(())
    for fa, fb in zip(perc(a), perc(b)):
        ua = fa / torch.sqrt((fa * fa).sum(dim=0, keepdim=True) + _FEATURE_NORM_EPS)
        ub = fb / torch.sqrt((fb * fb).sum(dim=0, keepdim=True) + _FEATURE_NORM_EPS)
        total = total + ((ua - ub) ** 2).mean()
    return total


def visual_loss(
    x_prime: ImageBuffer, x: ImageBuffer, perc: PerceptualExtractor, lambda_l1: float
) -> Tensor:
    """Perceptual distance plus an L1 pixel term, both size-normalized."""
    if x_prime.shape != x.shape:
        raise ValueError("shape mismatch")
    return perceptual_distance(x_prime, x, perc) + lambda_l1 * (x_prime - x).abs().mean()


def identity_loss(
    a: ImageBuffer, b: ImageBuffer, emb: FaceEmbedder, *, norm_eps: float = 0.0
) -> Tensor:
    """Cosine distance between face embeddings of the two images."""
    return _cosine_distance(face_embed(emb, a), face_embed(emb, b), norm_eps)


def _combine(parts: dict[str, tuple[float, Tensor]]) -> tuple[Tensor, dict[str, float]]:
    total = None
    breakdown: dict[str, float] = {}
    for name, (weight, value) in parts.items():
        breakdown[name] = float(value.detach())
        term = weight * value
        total = term if total is None else total + term
    assert total is not None
    breakdown["total"] = float(total.detach())
    return total, breakdown


def stage1_total(
    removal: Tensor, identity: Tensor, perceptual: Tensor, w: LossWeights
) -> tuple[Tensor, dict[str, float]]:
    """Weighted removal-stage objective with per-term breakdown."""
    return _combine(
        {
            "removal": (w.removal, removal),
            "identity": (w.identity, identity),
            "perceptual": (w.perceptual, perceptual),
        }
    )


def stage2_total(
    direction: Tensor, pixel: Tensor, attack: Tensor, visual: Tensor, w: LossWeights
) -> tuple[Tensor, dict[str, float]]:
    """Weighted transfer-stage objective with per-term breakdown.

    The makeup weight multiplies the nested direction/pixel pair;
    setting the direction weight to zero is the ablation knob.
    """
    makeup = w.direction * direction + w.pixel * pixel
    total, breakdown = _combine(
        {
            "makeup": (w.makeup, makeup),
            "attack": (w.attack, attack),
            "visual": (w.visual, visual),
        }
    )
    breakdown["direction"] = float(direction.detach())
    breakdown["pixel"] = float(pixel.detach())
    return total, breakdown
