"""Objective image metrics and regression-agreement statistics."""

from __future__ import annotations

import math
from typing import NamedTuple, Sequence

import numpy as np
from scipy.signal import fftconvolve
from scipy.stats import rankdata

from .imagedata import RasterImage

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _pixels(img) -> np.ndarray:
    return img.pixels if isinstance(img, RasterImage) else np.asarray(img, dtype=np.float64)


def mse(a, b) -> float:
    pa, pb = _pixels(a), _pixels(b)
    if pa.shape != pb.shape:
        raise ValueError(f"shape mismatch: {pa.shape} vs {pb.shape}")
    return float(np.mean((pa - pb) ** 2))


def psnr(a, b) -> float:
    """PSNR in dB with peak 1.0; ``math.inf`` for identical inputs."""
    err = mse(a, b)
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / err)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r ** 2) / (2.0 * sigma ** 2))
    w = np.outer(g, g)
    return w / w.sum()


def ssim(a, b) -> float:
    """Mean SSIM over all fully-covered 11x11 Gaussian windows (sigma 1.5)."""
    x, y = _pixels(a), _pixels(b)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    if min(x.shape) < SSIM_WINDOW:
        raise ValueError(f"images must be at least {SSIM_WINDOW}x{SSIM_WINDOW} for SSIM")
    w = gaussian_window()

    def filt(z):
        return fftconvolve(z, w, mode="valid")

    c1 = (SSIM_K1 * 1.0) ** 2
    c2 = (SSIM_K2 * 1.0) ** 2
    mx, my = filt(x), filt(y)
    sxx = filt(x * x) - mx * mx
    syy = filt(y * y) - my * my
    sxy = filt(x * y) - mx * my
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


def finite_mean(values: Sequence[float]):
    """Mean over finite values; returns ``(mean, n_excluded)``.

    Infinite PSNR sentinels are excluded and counted instead.
    """
    vals = [v for v in values if math.isfinite(v)]
    excluded = len(values) - len(vals)
    return (float(np.mean(vals)) if vals else math.inf), excluded


# -- regression agreement --------------------------------------------------


class RegressionMetrics(NamedTuple):
    mae: float
    spearman: float
    pearson: float


def _check_pair(labels, preds):
    y = np.asarray(labels, dtype=np.float64).ravel()
    p = np.asarray(preds, dtype=np.float64).ravel()
    if y.shape != p.shape:
        raise ValueError("labels and predictions differ in length")
    return y, p


def mean_absolute_error(labels, preds) -> float:
    y, p = _check_pair(labels, preds)
    if y.size == 0:
        raise ValueError("MAE of an empty set")
    return float(np.mean(np.abs(y - p)))


def pearson(labels, preds) -> float:
    """Linear correlation. Constant labels raise; constant predictions carry
    no ordering information and give 0."""
    y, p = _check_pair(labels, preds)
    if y.size < 2:
        raise ValueError("correlation needs at least 2 points")
    # test spread on the raw values: mean subtraction leaves rounding residue
    if np.ptp(y) == 0.0:
        raise ValueError("correlation undefined: labels have zero variance")
    if np.ptp(p) == 0.0:
        return 0.0
    yc, pc = y - y.mean(), p - p.mean()
    sy, sp = math.sqrt(float(yc @ yc)), math.sqrt(float(pc @ pc))
    return float(np.clip((yc @ pc) / (sy * sp), -1.0, 1.0))


def spearman(labels, preds) -> float:
    """Rank correlation, ties resolved with average ranks."""
    y, p = _check_pair(labels, preds)
    return pearson(rankdata(y), rankdata(p))


def regression_metrics(labels, preds) -> RegressionMetrics:
    return RegressionMetrics(
        mean_absolute_error(labels, preds), spearman(labels, preds), pearson(labels, preds)
    )
