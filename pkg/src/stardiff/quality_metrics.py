"""Pixel-level image quality metrics (SSIM, PSNR) and the BCI-challenge
composite quality ranking (0.6 * SSIM rank + 0.4 * PSNR rank)."""

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import convolve
from scipy.stats import rankdata

# ITU-R 601 luma weights.
_LUMA = np.array([0.299, 0.587, 0.114])


@dataclass
class QualityResult:
    ssim: float
    psnr_db: float
    n_pairs: int = 1


@dataclass
class MethodRanking:
    """Per-method ranks and the composite score (smaller is better)."""

    ssim_rank: dict
    psnr_rank: dict
    composite: dict
    final_rank: dict = field(default_factory=dict)

    def ordered(self):
        return sorted(self.composite, key=lambda m: (self.composite[m], m))


def _to_luma(img):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3 and img.shape[0] == 3:
        return np.tensordot(_LUMA, img, axes=1)
    if img.ndim == 2:
        return img
    raise ValueError(f"expected (3, H, W) or (H, W) image, got shape {img.shape}")


def _gaussian_window(size=11, sigma=1.5):
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(ax ** 2) / (2.0 * sigma ** 2))
    w = np.outer(g, g)
    return w / w.sum()


def ssim(a, b, window_size=11, sigma=1.5, k1=0.01, k2=0.03, data_range=1.0):
    """Mean local SSIM on the luminance channel, Gaussian-weighted windows.

    Inputs are images in [0, 1], shape (3, H, W) or (H, W).  Symmetric in
    (a, b); returns exactly 1.0 for identical inputs.
    """
    if np.asarray(a).shape != np.asarray(b).shape:
        raise ValueError(f"shape mismatch: {np.asarray(a).shape} vs {np.asarray(b).shape}")
    x = _to_luma(a)
    y = _to_luma(b)
    win = _gaussian_window(window_size, sigma)
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2

    filt = lambda z: convolve(z, win, mode="reflect")
    mu_x, mu_y = filt(x), filt(y)
    var_x = filt(x * x) - mu_x ** 2
    var_y = filt(y * y) - mu_y ** 2
    cov = filt(x * y) - mu_x * mu_y

    num = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
    den = (mu_x ** 2 + mu_y ** 2 + c1) * (var_x + var_y + c2)
    return float(np.mean(num / den))


def psnr(a, b, data_range=1.0):
    """Peak signal-to-noise ratio in dB over all channels; +inf when MSE=0."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(data_range ** 2 / mse))


def evaluate_pairs(pairs):
    """Mean SSIM / PSNR over an iterable of (a, b) image pairs."""
    ssims, psnrs = [], []
    for a, b in pairs:
        ssims.append(ssim(a, b))
        psnrs.append(psnr(a, b))
    if not ssims:
        raise ValueError("no image pairs supplied")
    return QualityResult(
        ssim=float(np.mean(ssims)),
        psnr_db=float(np.mean(psnrs)),
        n_pairs=len(ssims),
    )


def quality_rank(methods):
    """BCI composite ranking over a {name: QualityResult} map.

    Each metric is ranked independently, best (largest) = rank 1, ties share
    the mean rank; composite = 0.6 * ssim_rank + 0.4 * psnr_rank, ordered
    ascending.
    """
    if len(methods) < 2:
        raise ValueError("quality_rank needs at least 2 methods")
    names = sorted(methods)
    ssim_vals = np.array([methods[m].ssim for m in names])
    psnr_vals = np.array([methods[m].psnr_db for m in names])
    s_rank = rankdata(-ssim_vals, method="average")
    p_rank = rankdata(-psnr_vals, method="average")
    composite = 0.6 * s_rank + 0.4 * p_rank
    ranking = MethodRanking(
        ssim_rank={m: float(r) for m, r in zip(names, s_rank)},
        psnr_rank={m: float(r) for m, r in zip(names, p_rank)},
        composite={m: float(c) for m, c in zip(names, composite)},
    )
    for pos, m in enumerate(ranking.ordered(), start=1):
        ranking.final_rank[m] = pos
    return ranking
