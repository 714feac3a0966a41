"""Facial region masks and region-wise histogram matching.

Masks are external inputs (precomputed face parsing), stored as label
maps over {0 background, 1 skin, 2 lips, 3 eyes}. Histogram matching is
rank-based with linear quantile interpolation when the source and
reference regions have different pixel counts, which makes the matched
target differentiable almost everywhere with respect to the reference.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image
from torch import Tensor

from .ddim import ImageBuffer

LABELS = {0: "background", 1: "skin", 2: "lips", 3: "eyes"}
MAKEUP_REGIONS = (1, 2, 3)


class EmptyRegionWarning(UserWarning):
    """A facial region had no pixels on one side and was skipped."""


@dataclass(frozen=True)
class RegionMasks:
    """Per-pixel facial region labels aligned to an image."""

    labels: Tensor  # (H, W), long, values in LABELS

    def __post_init__(self) -> None:
        labels = torch.as_tensor(self.labels, dtype=torch.long)
        if labels.ndim != 2:
            raise ValueError("label map must be 2-D (H, W)")
        bad = set(torch.unique(labels).tolist()) - set(LABELS)
        if bad:
            raise ValueError(f"label values outside {{0,1,2,3}}: {sorted(bad)}")
        object.__setattr__(self, "labels", labels)

    @property
    def shape(self) -> tuple[int, int]:
        return tuple(self.labels.shape)

    def region(self, label: int) -> Tensor:
        return self.labels == label


def load_label_map(path: str | Path, expected_shape: tuple[int, int] | None = None) -> RegionMasks:
    """Load a mask file: 8-bit single-channel PNG with values {0,1,2,3}."""
    with Image.open(path) as im:
        if im.mode != "L":
            raise ValueError(f"{path}: expected 8-bit single-channel mask, got mode {im.mode!r}")
        arr = np.asarray(im)
    if expected_shape is not None and tuple(arr.shape) != tuple(expected_shape):
        raise ValueError(f"{path}: mask shape {arr.shape} != expected {tuple(expected_shape)}")
    bad = sorted(set(np.unique(arr).tolist()) - set(LABELS))
    if bad:
        raise ValueError(f"{path}: label values outside {{0,1,2,3}}: {bad}")
    return RegionMasks(labels=torch.from_numpy(arr.astype(np.int64)))


def save_label_map(masks: RegionMasks, path: str | Path) -> None:
    arr = masks.labels.numpy().astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path, format="PNG")


def histogram_match_region(src_vals: Tensor, ref_vals: Tensor) -> Tensor:
    """Remap src values onto the reference distribution, rank by rank.

    output[i] is the reference quantile at src's rank i/(n-1), linearly
    interpolated when the two regions differ in size; source ordering is
    preserved and ties are broken by original index (stable).
    """
    if src_vals.numel() == 0 or ref_vals.numel() == 0:
        raise ValueError("histogram matching needs non-empty value vectors")
    src = src_vals.reshape(-1)
    ref_sorted = torch.sort(ref_vals.reshape(-1)).values
    n, m = src.numel(), ref_sorted.numel()

    order = torch.argsort(src, stable=True)
    ranks = torch.empty(n, dtype=torch.float64)
    ranks[order] = torch.arange(n, dtype=torch.float64)
    if n == 1:
        pos = torch.full((1,), 0.5 * (m - 1), dtype=torch.float64)
    else:
        pos = ranks / (n - 1) * (m - 1)

    lo = pos.floor().long().clamp(max=m - 1)
    hi = (lo + 1).clamp(max=m - 1)
    frac = (pos - lo.double()).to(ref_sorted.dtype)
    return ref_sorted[lo] * (1 - frac) + ref_sorted[hi] * frac


def hm_image(
    x_prime: ImageBuffer,
    y: ImageBuffer,
    masks_x: RegionMasks,
    masks_y: RegionMasks,
) -> ImageBuffer:
    """Histogram-match x' against y per facial region and channel.

    Background pixels are copied from x' unchanged; a region empty on
    either side is skipped with an EmptyRegionWarning.
    """
    if tuple(x_prime.shape[1:]) != masks_x.shape:
        raise ValueError("masks_x not aligned to x_prime")
    if tuple(y.shape[1:]) != masks_y.shape:
        raise ValueError("masks_y not aligned to y")
    out = x_prime.clone()
    for label in MAKEUP_REGIONS:
        sel_x = masks_x.region(label)
        sel_y = masks_y.region(label)
        if not bool(sel_x.any()) or not bool(sel_y.any()):
            warnings.warn(
                f"region {LABELS[label]!r} empty on one side; copied unchanged",
                EmptyRegionWarning,
                stacklevel=2,
            )
            continue
        for c in range(x_prime.shape[0]):
            out[c][sel_x] = histogram_match_region(x_prime[c][sel_x], y[c][sel_y])
    return out
