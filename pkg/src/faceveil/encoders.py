"""Feature extractor interfaces and their toy implementations.

Four extractor roles drive the losses: a joint image/text encoder pair
(the directional losses), face embedders (identity and attack losses),
and a multi-scale perceptual extractor. Each adapter owns its input
preprocessing (resizing, normalization), mirroring how heterogeneous
pretrained models expect different input sizes.

The toy implementations are seeded linear/conv maps: deterministic
across platforms, differentiable, and fast enough for CI. Real CLIP/FR
backbones would register adapters under new registry family names; the
repo deliberately ships none, so nothing ever downloads weights.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from . import seeding
from .ddim import ImageBuffer
from .registry import (
    FACE_EMBEDDERS,
    IMAGE_ENCODERS,
    PERCEPTUAL_EXTRACTORS,
    TEXT_ENCODERS,
)

EmbeddingVector = Tensor  # 1-D, fixed dimension per encoder


class ImageEncoder(nn.Module):
    """Differentiable map image -> joint-space embedding."""

    dim: int

    def forward(self, img: ImageBuffer) -> EmbeddingVector:  # pragma: no cover
        raise NotImplementedError


class TextEncoder:
    """Map prompt string -> joint-space embedding (no gradients needed)."""

    dim: int

    def encode(self, text: str) -> EmbeddingVector:  # pragma: no cover
        raise NotImplementedError


class FaceEmbedder(nn.Module):
    """Identity-discriminative map image -> embedding; cosine similarity
    between two embeddings is the verification score."""

    dim: int

    def forward(self, img: ImageBuffer) -> EmbeddingVector:  # pragma: no cover
        raise NotImplementedError


class PerceptualExtractor(nn.Module):
    """Map image -> list of feature maps at multiple scales."""

    def forward(self, img: ImageBuffer) -> list[Tensor]:  # pragma: no cover
        raise NotImplementedError


def _check_finite(t: Tensor, what: str) -> None:
    if not bool(torch.isfinite(t).all()):
        raise ValueError(f"non-finite values in {what}")


def embed_image(enc: ImageEncoder, img: ImageBuffer) -> EmbeddingVector:
    _check_finite(img, "image")
    out = enc(img)
    _check_finite(out, "image embedding")
    return out


def embed_text(enc: TextEncoder, text: str) -> EmbeddingVector:
    if not text:
        raise ValueError("empty prompt")
    out = enc.encode(text)
    _check_finite(out, "text embedding")
    return out


def face_embed(emb: FaceEmbedder, img: ImageBuffer) -> EmbeddingVector:
    _check_finite(img, "image")
    out = emb(img)
    _check_finite(out, "face embedding")
    return out


@dataclass
class EncoderBundle:
    """The extractors a fine-tuning stage needs, dimension-checked."""

    image: ImageEncoder
    text: TextEncoder
    perceptual: PerceptualExtractor
    identity: FaceEmbedder

    def __post_init__(self) -> None:
        if self.image.dim != self.text.dim:
            raise ValueError(
                f"joint-space mismatch: image dim {self.image.dim} "
                f"vs text dim {self.text.dim}"
            )


# --- toy implementations ---------------------------------------------------


@IMAGE_ENCODERS.register("toy-image")
class ToyImageEncoder(ImageEncoder):
    """Bilinear resize to 16x16, flatten, fixed random projection.

    Linear and bias-free, so a zero image maps to the zero vector and
    tests can verify outputs against a direct matrix product.
    """

    def __init__(self, size: int, seed: int = 0, input_size: int = 16):
        super().__init__()
        self.dim = size
        self.input_size = input_size
        n_in = 3 * input_size * input_size
        gen = seeding.generator(seed, "toy-image-encoder")
        w = torch.randn(size, n_in, generator=gen) / n_in**0.5
        self.weight = nn.Parameter(w, requires_grad=False)

    def forward(self, img: ImageBuffer) -> EmbeddingVector:
        x = F.interpolate(
            img.unsqueeze(0), size=(self.input_size, self.input_size), mode="bilinear",
            align_corners=False,
        )
        return self.weight @ x.reshape(-1)


@TEXT_ENCODERS.register("toy-text")
class ToyTextEncoder(TextEncoder):
    """Hashed bag-of-positioned-tokens.

    Each (position, token) pair increments two stably hashed buckets,
    so prompts differing in any token map to distinct vectors and the
    embedding is identical across platforms and processes.
    """

    def __init__(self, size: int, seed: int = 0):
        self.dim = size
        self.seed = seed

    def encode(self, text: str) -> EmbeddingVector:
        vec = torch.zeros(self.dim)
        for i, tok in enumerate(text.lower().split()):
            for salt in (1, 2):
                h = zlib.crc32(f"{self.seed}|{salt}|{i}|{tok}".encode())
                vec[h % self.dim] += 1.0
        return vec


@FACE_EMBEDDERS.register("toy-face")
class ToyFaceEmbedder(FaceEmbedder):
    """Average-pool to a coarse grid, then a fixed random projection."""

    def __init__(self, size: int, seed: int = 0, pool: int = 8):
        super().__init__()
        self.dim = size
        self.pool = pool
        n_in = 3 * pool * pool
        gen = seeding.generator(seed, "toy-face-embedder")
        w = torch.randn(size, n_in, generator=gen) / n_in**0.5
        self.weight = nn.Parameter(w, requires_grad=False)

    def forward(self, img: ImageBuffer) -> EmbeddingVector:
        x = F.adaptive_avg_pool2d(img.unsqueeze(0), self.pool)
        return self.weight @ x.reshape(-1)


@PERCEPTUAL_EXTRACTORS.register("toy-perc")
class ToyPerceptualExtractor(PerceptualExtractor):
    """Two frozen random conv layers; random-feature perceptual metrics
    are an accepted stand-in, but the distances are not calibrated
    against any trained perceptual network."""

    def __init__(self, size: int, seed: int = 0):
        super().__init__()
        gen = seeding.generator(seed, "toy-perceptual")
        self.conv1 = nn.Conv2d(3, size, 3, stride=2, padding=1, bias=False)
        self.conv2 = nn.Conv2d(size, size, 3, stride=2, padding=1, bias=False)
        with torch.no_grad():
            for p in self.parameters():
                p.copy_(torch.randn(p.shape, generator=gen) * 0.2)
                p.requires_grad_(False)

    def forward(self, img: ImageBuffer) -> list[Tensor]:
        f1 = torch.tanh(self.conv1(img.unsqueeze(0)))
        f2 = torch.tanh(self.conv2(f1))
        return [f1.squeeze(0), f2.squeeze(0)]
