"""Synthetic test data: textures, CT phantoms, blur kernels.

Everything is deterministic under a seed so the full pipeline runs without
external datasets.
"""

import math

import numpy as np
from scipy import ndimage

__all__ = ["make_texture", "make_phantom", "make_motion_kernel"]


def make_texture(shape, seed, n_waves=3, freq_range=(0.07, 0.13)):
    """Quasi-periodic striped texture with gentle warp and grain.

    Superposes a few oriented gratings whose phase is distorted by a smooth
    random field, plus low-amplitude filtered noise; rescaled to [0, 1].
    Patches from different crops share statistics, which is what the patch
    priors assume.
    """
    rng = np.random.default_rng(seed)
    n1, n2 = shape
    yy, xx = np.mgrid[0:n1, 0:n2].astype(np.float64)
    warp = ndimage.gaussian_filter(rng.standard_normal(shape), sigma=12.0)
    warp *= 6.0 / max(warp.std(), 1e-12)
    img = np.zeros(shape)
    for _ in range(n_waves):
        theta = rng.uniform(0.0, math.pi)
        freq = rng.uniform(*freq_range)
        phase = rng.uniform(0.0, 2.0 * math.pi)
        amp = rng.uniform(0.6, 1.0)
        carrier = xx * math.cos(theta) + yy * math.sin(theta) + warp
        img += amp * np.sin(2.0 * math.pi * freq * carrier + phase)
    img += 0.15 * ndimage.gaussian_filter(rng.standard_normal(shape), 1.0)
    img -= img.min()
    img /= max(img.max(), 1e-12)
    return img


# ellipse table (value, half-axes a, b, center x0, y0, rotation in degrees);
# the widely used head-phantom layout with rebalanced intensities
_ELLIPSES = [
    (1.00, 0.6900, 0.9200, 0.00, 0.0000, 0.0),
    (-0.80, 0.6624, 0.8740, 0.00, -0.0184, 0.0),
    (-0.20, 0.1100, 0.3100, 0.22, 0.0000, -18.0),
    (-0.20, 0.1600, 0.4100, -0.22, 0.0000, 18.0),
    (0.10, 0.2100, 0.2500, 0.00, 0.3500, 0.0),
    (0.10, 0.0460, 0.0460, 0.00, 0.1000, 0.0),
    (0.10, 0.0460, 0.0460, 0.00, -0.1000, 0.0),
    (0.10, 0.0460, 0.0230, -0.08, -0.6050, 0.0),
    (0.10, 0.0230, 0.0230, 0.00, -0.6060, 0.0),
    (0.10, 0.0230, 0.0460, 0.06, -0.6050, 0.0),
]


def make_phantom(shape, kind="head", radius=0.6, value=1.0, soft_edge=0.0):
    """Piecewise-constant CT phantom on [-1, 1]^2.

    ``kind`` is "head" for the classic ellipse phantom or "disk" for a
    centered disk of the given relative radius and value. ``soft_edge``
    (pixels) smooths the disk boundary with a cubic ramp; a smooth radial
    profile is rotationally symmetric even after pixelization, which the
    projector symmetry checks rely on.
    """
    n1, n2 = shape
    y = (np.arange(n1) - (n1 - 1) / 2.0) / (n1 / 2.0)
    x = (np.arange(n2) - (n2 - 1) / 2.0) / (n2 / 2.0)
    xx, yy = np.meshgrid(x, y)
    img = np.zeros(shape)
    if kind == "disk":
        if soft_edge > 0:
            r = np.sqrt(xx ** 2 + yy ** 2)
            w = soft_edge * 2.0 / min(n1, n2)
            t = np.clip((radius - r) / w + 0.5, 0.0, 1.0)
            return value * t * t * (3.0 - 2.0 * t)
        img[xx ** 2 + yy ** 2 <= radius ** 2] = value
        return img
    if kind != "head":
        raise ValueError(f"unknown phantom kind {kind!r}")
    for val, a, b, x0, y0, deg in _ELLIPSES:
        phi = math.radians(deg)
        xr = (xx - x0) * math.cos(phi) + (yy - y0) * math.sin(phi)
        yr = -(xx - x0) * math.sin(phi) + (yy - y0) * math.cos(phi)
        img[(xr / a) ** 2 + (yr / b) ** 2 <= 1.0] += val
    return np.clip(img, 0.0, None)


def make_motion_kernel(size=19, seed=0, n_steps=400, smooth=0.8):
    """Motion-blur style kernel: rasterized random walk, lightly smoothed.

    Normalized to sum one. Mimics the irregular hand-shake trajectories of
    standard deblurring benchmarks.
    """
    rng = np.random.default_rng(seed)
    pos = np.zeros(2)
    vel = rng.standard_normal(2) * 0.4
    k = np.zeros((size, size))
    c = (size - 1) / 2.0
    lim = size / 2.0 - 1.5
    for _ in range(n_steps):
        vel += 0.25 * rng.standard_normal(2)
        vel *= 0.9
        pos = np.clip(pos + vel, -lim, lim)
        r, col = int(round(pos[0] + c)), int(round(pos[1] + c))
        k[r, col] += 1.0
    k = ndimage.gaussian_filter(k, smooth)
    return k / k.sum()
