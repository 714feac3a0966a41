"""Attack-effectiveness and image-quality metrics.

The verification threshold is calibrated from impostor scores at a
fixed false-acceptance rate; attack success is the fraction of
protected images whose similarity to the target identity clears that
threshold. PSNR/SSIM/FID follow their standard definitions on [-1, 1]
images (value range 2.0); FID's trace term uses a symmetric
eigendecomposition square root with negative eigenvalues clipped to 0.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
import torch
from scipy import linalg, signal

from .ddim import ImageBuffer
from .encoders import FaceEmbedder, face_embed

TIE_EPSILON = 1e-9
VALUE_RANGE = 2.0  # images live in [-1, 1]


@dataclass(frozen=True)
class VerificationThreshold:
    tau: float
    far: float
    n_impostor_pairs: int


def calibrate_threshold(impostor_scores, far: float) -> VerificationThreshold:
    """Smallest score tau with fraction(scores >= tau) <= far.

    Ties are resolved by construction: if no score qualifies (all-equal
    saturation, or far too small for N), tau sits just above the max so
    nothing is accepted; the under-resolved-far case warns.
    """
    scores = np.asarray(impostor_scores, dtype=np.float64).reshape(-1)
    if scores.size == 0:
        raise ValueError("need at least one impostor score")
    if not 0.0 < far < 1.0:
        raise ValueError(f"far must be in (0, 1), got {far}")
    n = scores.size
    if n * far < 1.0:
        warnings.warn(
            f"far={far} resolves to no acceptances with only {n} impostor pairs",
            stacklevel=2,
        )
    ordered = np.sort(scores)
    tau = None
    for v in np.unique(ordered):
        count_ge = n - np.searchsorted(ordered, v, side="left")
        if count_ge <= far * n:
            tau = float(v)
            break
    if tau is None:
        tau = float(ordered[-1]) + TIE_EPSILON
    return VerificationThreshold(tau=tau, far=far, n_impostor_pairs=n)


def attack_success_rate(
    protected: list[ImageBuffer],
    target: ImageBuffer,
    emb: FaceEmbedder,
    threshold: VerificationThreshold,
) -> tuple[float, list[float]]:
    """Fraction of protected images verified as the target identity.

    Returns (asr, per-image cosine scores); a score counts as success
    when strictly above the calibrated threshold.
    """
    if not protected:
        raise ValueError("empty protected-image list")
    with torch.no_grad():
        tgt = face_embed(emb, target)
        tgt = tgt / tgt.norm()
        scores = []
        for img in protected:
            e = face_embed(emb, img)
            scores.append(float((e / e.norm() * tgt).sum()))
    asr = sum(s > threshold.tau for s in scores) / len(scores)
    return asr, scores


def _to_numpy(img: ImageBuffer) -> np.ndarray:
    return np.asarray(img.detach().cpu().numpy(), dtype=np.float64)


def psnr(a: ImageBuffer, b: ImageBuffer) -> float:
    """Peak signal-to-noise ratio in dB; identical images give +inf."""
    if a.shape != b.shape:
        raise ValueError("shape mismatch")
    mse = float(np.mean((_to_numpy(a) - _to_numpy(b)) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(VALUE_RANGE**2 / mse)


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    half = (size - 1) / 2
    g = np.exp(-((np.arange(size) - half) ** 2) / (2 * sigma**2))
    g /= g.sum()
    return np.outer(g, g)


def ssim(a: ImageBuffer, b: ImageBuffer, *, window: int = 11, sigma: float = 1.5) -> float:
    """Single-scale structural similarity, channel-averaged.

    Gaussian window, K1=0.01, K2=0.03, statistics over the valid
    (fully-windowed) interior.
    """
    if a.shape != b.shape:
        raise ValueError("shape mismatch")
    if a.shape[-2] < window or a.shape[-1] < window:
        raise ValueError(f"images smaller than the {window}x{window} window")
    win = _gaussian_window(window, sigma)
    c1 = (0.01 * VALUE_RANGE) ** 2
    c2 = (0.03 * VALUE_RANGE) ** 2
    xs, ys = _to_numpy(a), _to_numpy(b)
    vals = []
    for c in range(xs.shape[0]):
        x, y = xs[c], ys[c]
        mu_x = signal.convolve2d(x, win, mode="valid")
        mu_y = signal.convolve2d(y, win, mode="valid")
        var_x = signal.convolve2d(x * x, win, mode="valid") - mu_x**2
        var_y = signal.convolve2d(y * y, win, mode="valid") - mu_y**2
        cov = signal.convolve2d(x * y, win, mode="valid") - mu_x * mu_y
        s = ((2 * mu_x * mu_y + c1) * (2 * cov + c2)) / (
            (mu_x**2 + mu_y**2 + c1) * (var_x + var_y + c2)
        )
        vals.append(float(s.mean()))
    return float(np.mean(vals))


def _sym_sqrt(mat: np.ndarray) -> np.ndarray:
    """Square root of a symmetric PSD matrix; negative eigenvalues
    (numerical noise) are clipped to zero."""
    vals, vecs = linalg.eigh(mat)
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def fid(feats_a, feats_b) -> float:
    """Frechet distance between Gaussians fitted to two feature sets.

    ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2}), with the
    cross term evaluated through the symmetric form
    sqrt(S_a)·S_b·sqrt(S_a). Covariances get a small ridge when a set
    is too small to be full rank.
    """
    a = np.asarray(feats_a, dtype=np.float64)
    b = np.asarray(feats_b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ValueError("feature sets must be 2-D with a common dimension")
    if a.shape[0] < 2 or b.shape[0] < 2:
        raise ValueError("need at least 2 samples per set")
    mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
    cov_a = np.cov(a, rowvar=False)
    cov_b = np.cov(b, rowvar=False)
    dim = a.shape[1]
    if min(a.shape[0], b.shape[0]) <= dim:
        ridge = 1e-6 * np.eye(dim)
        cov_a = cov_a + ridge
        cov_b = cov_b + ridge
    root_a = _sym_sqrt(cov_a)
    cross = _sym_sqrt(root_a @ cov_b @ root_a)
    diff = mu_a - mu_b
    return float(diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * np.trace(cross))
