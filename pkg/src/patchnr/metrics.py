"""Image quality metrics: PSNR, SSIM, blur effect, patch-NLL statistics.

PSNR uses the standard 10 log10(range^2 / MSE) form; "adaptive" range mode
takes max-min of the reference image instead of a unit range, which avoids
flattering values on low-dynamic-range content such as CT slices. SSIM
follows the uniform 7x7-window formulation; blur effect is the classic
gradient-attenuation measure (box blur, compare absolute gradients).
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .flow import nll

__all__ = [
    "psnr",
    "ssim",
    "blur_effect",
    "nll_histogram",
    "nll_separation",
    "MetricReport",
    "metric_report",
]

PSNR_CAP_DB = 100.0


def psnr(x, ref, range_mode="unit"):
    """Peak signal-to-noise ratio in dB, capped at 100 for identical inputs.

    ``range_mode`` is "unit" (range 1) or "adaptive" (range = max - min of
    the reference; asymmetric in the arguments by design).
    """
    x = np.asarray(x, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if x.shape != ref.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {ref.shape}")
    if range_mode == "unit":
        rng = 1.0
    elif range_mode == "adaptive":
        rng = float(ref.max() - ref.min())
        if rng == 0:
            raise ValueError("adaptive range undefined for a constant reference")
    else:
        raise ValueError(f"unknown range_mode {range_mode!r}")
    mse = float(np.mean((x - ref) ** 2))
    if mse == 0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * math.log10(rng * rng / mse))


def ssim(x, y, window=7, k1=0.01, k2=0.03, data_range=1.0):
    """Mean structural similarity over all fully interior windows.

    Uniform (box) window statistics with unbiased variances; the constants
    C1 = (k1 L)^2, C2 = (k2 L)^2 stabilize degenerate windows.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    if min(x.shape) < window:
        raise ValueError("image smaller than the window")
    n = window * window
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    half = window // 2

    def box(a):
        f = ndimage.uniform_filter(a, size=window)
        return f[half:a.shape[0] - half, half:a.shape[1] - half]

    mx = box(x)
    my = box(y)
    # unbiased (co)variances from raw box moments
    corr = n / (n - 1)
    vx = (box(x * x) - mx * mx) * corr
    vy = (box(y * y) - my * my) * corr
    cxy = (box(x * y) - mx * my) * corr
    num = (2 * mx * my + c1) * (2 * cxy + c2)
    den = (mx * mx + my * my + c1) * (vx + vy + c2)
    return float(np.mean(num / den))


def blur_effect(x, h_size=9):
    """Perceptual blur in [0, 1]; higher means blurrier.

    Blurs the image with a length-``h_size`` box kernel per axis and
    measures how much the absolute neighbor differences shrink; a constant
    image has no gradient energy and reports 1 by convention.
    """
    x = np.asarray(x, dtype=np.float64)
    vals = []
    for axis in (0, 1):
        blurred = ndimage.uniform_filter1d(x, h_size, axis=axis, mode="nearest")
        d_sharp = np.abs(np.diff(x, axis=axis))
        d_blur = np.abs(np.diff(blurred, axis=axis))
        s_sharp = d_sharp.sum()
        if s_sharp == 0:
            vals.append(1.0)
            continue
        s_kept = np.maximum(0.0, d_sharp - d_blur).sum()
        vals.append(1.0 - s_kept / s_sharp)
    return float(np.clip(max(vals), 0.0, 1.0))


def nll_histogram(flow, patches, bins=50, value_range=None):
    """Histogram of per-patch normalized nll values.

    Returns (counts, bin edges, values).
    """
    values = np.atleast_1d(nll(flow, patches))
    counts, edges = np.histogram(values, bins=bins, range=value_range)
    return counts, edges, values


def nll_separation(flow, clean_patches, degraded_patches):
    """How well the flow separates clean from degraded patches.

    Returns (mean difference degraded - clean, Welch t-statistic); both are
    positive when the flow assigns clean patches higher likelihood.
    """
    a = np.atleast_1d(nll(flow, clean_patches))
    b = np.atleast_1d(nll(flow, degraded_patches))
    var_term = a.var(ddof=1) / a.size + b.var(ddof=1) / b.size
    t = (b.mean() - a.mean()) / math.sqrt(var_term)
    return float(b.mean() - a.mean()), float(t)


@dataclass(frozen=True)
class MetricReport:
    psnr: float
    ssim: float
    blur_effect: float
    crop: int


def metric_report(x, ref, crop=0, range_mode="unit", data_range=None):
    """All scalar metrics after the experiment's boundary crop."""
    x = np.asarray(x, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if crop > 0:
        x = x[crop:-crop, crop:-crop]
        ref = ref[crop:-crop, crop:-crop]
    if x.size == 0:
        raise ValueError("crop removed the whole image")
    if data_range is None:
        data_range = 1.0 if range_mode == "unit" else float(ref.max() - ref.min())
    return MetricReport(
        psnr=psnr(x, ref, range_mode=range_mode),
        ssim=ssim(x, ref, data_range=data_range),
        blur_effect=blur_effect(x),
        crop=crop,
    )
