"""Synthetic face-like images with region labels, for desk-scale runs.

Each identity is a seeded parameter vector (face geometry, skin tone,
eye and lip placement/colors) rendered as smooth ellipses. The makeup
knob blends saturated lip color and an eyeshadow halo on top of the
clean face, and the renderer emits the matching region label map
(0 background, 1 skin, 2 lips, 3 eyes), so pipelines, masks and
identity datasets all come from one deterministic source.
"""
from __future__ import annotations

import torch
from torch import Tensor

from . import seeding

BACKGROUND, SKIN, LIPS, EYES = 0, 1, 2, 3


def _ellipse(yy: Tensor, xx: Tensor, cy, cx, ry, rx, soft: float = 12.0) -> Tensor:
    d = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2
    return torch.sigmoid((1.0 - d) * soft)


def toy_face(
    identity: int,
    *,
    size: int = 32,
    makeup: float = 0.0,
    variation: int = 0,
    seed: int = 0,
) -> tuple[Tensor, Tensor]:
    """Render one face; returns (image (3,H,W) in [-1,1], label map (H,W)).

    identity fixes the geometry and base colors; variation adds small
    photo-to-photo jitter around the same identity; makeup in [0, 1]
    controls lip/eyeshadow intensity.
    """
    gen = seeding.generator(seed, f"face-id-{identity}")
    vgen = seeding.generator(seed, f"face-id-{identity}-var-{variation}")

    def u(g, lo, hi):
        return lo + (hi - lo) * float(torch.rand(1, generator=g))

    def color(g, base, spread):
        return torch.tensor([u(g, b - spread, b + spread) for b in base])

    cy = u(gen, 0.46, 0.54) + u(vgen, -0.01, 0.01)
    cx = u(gen, 0.46, 0.54) + u(vgen, -0.01, 0.01)
    face_ry, face_rx = u(gen, 0.36, 0.44), u(gen, 0.28, 0.34)
    eye_dx = u(gen, 0.11, 0.15)
    eye_dy = u(gen, -0.14, -0.08)
    eye_r = u(gen, 0.035, 0.05)
    lip_dy = u(gen, 0.16, 0.22)
    lip_rx, lip_ry = u(gen, 0.08, 0.12), u(gen, 0.035, 0.05)

    bg = color(gen, (0.16, 0.18, 0.22), 0.10) + 0.02 * torch.randn(3, generator=vgen)
    skin = color(gen, (0.72, 0.55, 0.45), 0.12) + 0.01 * torch.randn(3, generator=vgen)
    eye = color(gen, (0.15, 0.12, 0.12), 0.08)
    lip_clean = color(gen, (0.62, 0.35, 0.33), 0.06)
    lip_makeup = torch.tensor([0.88, 0.08, 0.22])
    shadow = torch.tensor([0.42, 0.18, 0.58])

    ys = torch.linspace(0.0, 1.0, size)
    xs = torch.linspace(0.0, 1.0, size)
    yy, xx = torch.meshgrid(ys, xs, indexing="ij")

    w_face = _ellipse(yy, xx, cy, cx, face_ry, face_rx)
    w_eye_l = _ellipse(yy, xx, cy + eye_dy, cx - eye_dx, eye_r, eye_r * 1.3)
    w_eye_r = _ellipse(yy, xx, cy + eye_dy, cx + eye_dx, eye_r, eye_r * 1.3)
    w_shadow_l = _ellipse(yy, xx, cy + eye_dy, cx - eye_dx, eye_r * 2.3, eye_r * 2.6)
    w_shadow_r = _ellipse(yy, xx, cy + eye_dy, cx + eye_dx, eye_r * 2.3, eye_r * 2.6)
    w_lips = _ellipse(yy, xx, cy + lip_dy, cx, lip_ry, lip_rx)

    def paint(img, w, col):
        return img * (1 - w) + col.view(3, 1, 1) * w

    img = bg.view(3, 1, 1).expand(3, size, size).clone()
    img = paint(img, w_face, skin)
    if makeup > 0:
        img = paint(img, (w_shadow_l + w_shadow_r).clamp(max=1.0) * 0.6 * makeup, shadow)
    lip_col = lip_clean * (1 - makeup) + lip_makeup * makeup
    img = paint(img, w_lips, lip_col)
    img = paint(img, w_eye_l, eye)
    img = paint(img, w_eye_r, eye)

    labels = torch.full((size, size), BACKGROUND, dtype=torch.long)
    labels[w_face > 0.5] = SKIN
    eye_zone = ((w_shadow_l > 0.5) | (w_shadow_r > 0.5)) & (w_face > 0.5)
    labels[eye_zone] = EYES
    labels[(w_lips > 0.5) & (w_face > 0.5)] = LIPS

    return (img * 2.0 - 1.0).clamp(-1.0, 1.0).float(), labels


def toy_dataset(
    n: int,
    *,
    size: int = 32,
    makeup: float = 0.0,
    seed: int = 0,
    first_identity: int = 0,
    variation: int = 0,
) -> list[tuple[Tensor, Tensor]]:
    """n distinct-identity faces as (image, label map) pairs."""
    return [
        toy_face(first_identity + i, size=size, makeup=makeup, variation=variation, seed=seed)
        for i in range(n)
    ]


def write_toy_dataset(
    root,
    n_identities: int,
    *,
    photos_per_identity: int = 1,
    size: int = 32,
    makeup: float = 0.0,
    seed: int = 0,
    first_identity: int = 0,
) -> None:
    """Materialize a dataset directory: images/, masks/, identities.tsv."""
    from pathlib import Path

    from .data import save_image
    from .regions import RegionMasks, save_label_map

    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(exist_ok=True)
    lines = []
    for i in range(n_identities):
        ident = first_identity + i
        for var in range(photos_per_identity):
            img, labels = toy_face(ident, size=size, makeup=makeup, variation=var, seed=seed)
            stem = f"face{ident:03d}_v{var}"
            save_image(img, root / "images" / f"{stem}.png")
            save_label_map(RegionMasks(labels), root / "masks" / f"{stem}.mask.png")
            lines.append(f"{stem}\tperson{ident:03d}")
    (root / "identities.tsv").write_text("\n".join(lines) + "\n")
