"""Image files and dataset layout.

Images are 8-bit RGB PNGs mapped linearly to [-1, 1] (p/127.5 - 1);
saving inverts with round-half-away-from-zero and clamping, so a
load/save round trip is lossless. A dataset directory looks like

    <root>/images/*.png
    <root>/masks/<stem>.mask.png     (8-bit single-channel labels)
    <root>/identities.tsv            (stem <TAB> identity label)
"""
from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image, UnidentifiedImageError

from .ddim import ImageBuffer
from .regions import RegionMasks, load_label_map


def load_image(path: str | Path) -> ImageBuffer:
    """Load an 8-bit RGB PNG into a (3, H, W) float tensor in [-1, 1]."""
    try:
        with Image.open(path) as im:
            if im.format != "PNG":
                raise ValueError(f"{path}: unsupported format {im.format!r}, want PNG")
            return _from_pil(im, what=str(path))
    except UnidentifiedImageError as exc:
        raise ValueError(f"{path}: corrupt or unreadable image") from exc


def decode_png(data: bytes) -> ImageBuffer:
    """Decode in-memory PNG bytes (the wire format of the compare API)."""
    try:
        with Image.open(io.BytesIO(data)) as im:
            return _from_pil(im, what="png payload")
    except UnidentifiedImageError as exc:
        raise ValueError("corrupt png payload") from exc


def _from_pil(im: Image.Image, what: str) -> ImageBuffer:
    if im.mode != "RGB":
        raise ValueError(f"{what}: expected 8-bit RGB, got mode {im.mode!r}")
    arr = np.asarray(im, dtype=np.float64)
    return torch.from_numpy((arr / 127.5 - 1.0).transpose(2, 0, 1)).float()


def _to_pil(img: ImageBuffer) -> Image.Image:
    arr = img.detach().cpu().numpy().astype(np.float64)
    # values are nonnegative after the shift, so floor(x + 0.5) rounds
    # half away from zero; clamp handles out-of-range inputs
    pixels = np.floor((arr + 1.0) * 127.5 + 0.5)
    pixels = np.clip(pixels, 0, 255).astype(np.uint8).transpose(1, 2, 0)
    return Image.fromarray(pixels, mode="RGB")


def save_image(img: ImageBuffer, path: str | Path) -> None:
    """Write a [-1, 1] image as 8-bit RGB PNG, rounding half away from zero."""
    _to_pil(img).save(path, format="PNG")


def encode_png(img: ImageBuffer) -> bytes:
    buf = io.BytesIO()
    _to_pil(img).save(buf, format="PNG")
    return buf.getvalue()


def mask_path_for(image_path: Path, masks_dir: Path) -> Path:
    return masks_dir / f"{image_path.stem}.mask.png"


@dataclass
class Dataset:
    """Images plus optional masks and identity labels from one root dir."""

    root: Path
    image_paths: list[Path]
    identities: dict[str, str]

    @classmethod
    def open(cls, root: str | Path) -> "Dataset":
        root = Path(root)
        images_dir = root / "images"
        if not images_dir.is_dir():
            raise FileNotFoundError(f"{images_dir} does not exist")
        image_paths = sorted(images_dir.glob("*.png"))
        if not image_paths:
            raise FileNotFoundError(f"no PNG images under {images_dir}")
        identities: dict[str, str] = {}
        tsv = root / "identities.tsv"
        if tsv.exists():
            for line in tsv.read_text().splitlines():
                if not line.strip():
                    continue
                stem, _, label = line.partition("\t")
                identities[stem] = label.strip()
        return cls(root=root, image_paths=image_paths, identities=identities)

    def load_images(self) -> list[ImageBuffer]:
        return [load_image(p) for p in self.image_paths]

    def load_masks(self) -> list[RegionMasks]:
        masks = []
        for p in self.image_paths:
            mp = mask_path_for(p, self.root / "masks")
            if not mp.exists():
                raise FileNotFoundError(f"missing mask file {mp}")
            img_shape = load_image(p).shape[1:]
            masks.append(load_label_map(mp, expected_shape=tuple(img_shape)))
        return masks

    def identity_of(self, path: Path) -> str:
        return self.identities.get(path.stem, path.stem)


def impostor_scores(
    dataset: Dataset,
    embedder,
    *,
    max_pairs: int = 1000,
    seed: int = 0,
) -> np.ndarray:
    """Cosine scores of cross-identity image pairs, for FAR calibration.

    Exhaustive cross-identity pairing, subsampled deterministically when
    it exceeds max_pairs.
    """
    from .encoders import face_embed  # local import to avoid a cycle

    embs = []
    labels = []
    with torch.no_grad():
        for p in dataset.image_paths:
            e = face_embed(embedder, load_image(p))
            embs.append(e / e.norm())
            labels.append(dataset.identity_of(p))
    pairs = [
        (i, j)
        for i in range(len(embs))
        for j in range(i + 1, len(embs))
        if labels[i] != labels[j]
    ]
    if not pairs:
        raise ValueError("no cross-identity pairs in the dataset")
    if len(pairs) > max_pairs:
        gen = torch.Generator().manual_seed(seed)
        keep = torch.randperm(len(pairs), generator=gen)[:max_pairs].tolist()
        pairs = [pairs[k] for k in sorted(keep)]
    return np.array([float((embs[i] * embs[j]).sum()) for i, j in pairs])
