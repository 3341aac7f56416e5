"""Linear forward operators and their exact adjoints.

Covers the three degradation models used by the reconstruction tasks:
Gaussian blur + stride-4 downsampling (superresolution), same-size
convolution (deblurring), and a discretized parallel-beam Radon transform
(computed tomography) with Hann-filtered backprojection as the classical
inverse. Every operator satisfies <A x, q> = <x, A^T q> to rounding; the
Radon adjoint reuses the forward pass's sample coordinates and bilinear
weights, so adjointness holds by construction.
"""

import math

import numpy as np

from .diffcore import conv2d_forward, conv2d_input_grad

__all__ = [
    "gaussian_kernel",
    "BlurDownsampleOp",
    "ConvolutionOp",
    "IdentityOp",
    "RadonGeometry",
    "RadonOp",
    "sr_apply",
    "sr_adjoint",
    "conv_apply",
    "conv_adjoint",
    "radon_apply",
    "radon_adjoint",
    "fbp",
    "simulate_observation",
]


def gaussian_kernel(size, sigma):
    """Normalized 2-D Gaussian kernel centered at (size-1)/2."""
    if size < 1 or sigma <= 0:
        raise ValueError("kernel size and sigma must be positive")
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(ax ** 2) / (2.0 * sigma ** 2))
    k = np.outer(g, g)
    return k / k.sum()


def _split_pad(total):
    return total // 2, total - total // 2


class BlurDownsampleOp:
    """Gaussian blur followed by strided sampling, zero-padded.

    Padding is chosen so the output extents are ceil(input/stride).
    """

    def __init__(self, in_shape, kernel_size=16, sigma=2.0, stride=4):
        d1, d2 = in_shape
        if d1 < kernel_size or d2 < kernel_size:
            raise ValueError("image extents must be >= kernel extents")
        self.in_shape = (d1, d2)
        self.stride = stride
        self.kernel = gaussian_kernel(kernel_size, sigma)
        self.out_shape = (math.ceil(d1 / stride), math.ceil(d2 / stride))
        k = kernel_size
        pad1 = (self.out_shape[0] - 1) * stride + k - d1
        pad2 = (self.out_shape[1] - 1) * stride + k - d2
        if pad1 < 0 or pad2 < 0:
            raise ValueError("kernel too small for the requested stride")
        self.pad = _split_pad(pad1) + _split_pad(pad2)

    def apply(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape != self.in_shape:
            raise ValueError(f"expected shape {self.in_shape}, got {x.shape}")
        return conv2d_forward(x, self.kernel, stride=self.stride, pad=self.pad)

    def adjoint(self, q):
        q = np.asarray(q, dtype=np.float64)
        if q.shape != self.out_shape:
            raise ValueError(f"expected shape {self.out_shape}, got {q.shape}")
        return conv2d_input_grad(q, self.kernel, self.in_shape,
                                 stride=self.stride, pad=self.pad)


class ConvolutionOp:
    """Same-size convolution with an arbitrary kernel, zero-padded."""

    def __init__(self, in_shape, kernel):
        self.in_shape = tuple(in_shape)
        self.kernel = np.asarray(kernel, dtype=np.float64)
        k1, k2 = self.kernel.shape
        if self.in_shape[0] < k1 or self.in_shape[1] < k2:
            raise ValueError("image extents must be >= kernel extents")
        self.out_shape = self.in_shape
        self.pad = _split_pad(k1 - 1) + _split_pad(k2 - 1)

    def apply(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape != self.in_shape:
            raise ValueError(f"expected shape {self.in_shape}, got {x.shape}")
        return conv2d_forward(x, self.kernel, stride=1, pad=self.pad)

    def adjoint(self, q):
        q = np.asarray(q, dtype=np.float64)
        if q.shape != self.out_shape:
            raise ValueError(f"expected shape {self.out_shape}, got {q.shape}")
        return conv2d_input_grad(q, self.kernel, self.in_shape,
                                 stride=1, pad=self.pad)


class IdentityOp:
    """Identity forward operator (denoising / solver tests)."""

    def __init__(self, in_shape):
        self.in_shape = tuple(in_shape)
        self.out_shape = self.in_shape

    def apply(self, x):
        return np.asarray(x, dtype=np.float64)

    def adjoint(self, q):
        return np.asarray(q, dtype=np.float64)


def sr_apply(op, image):
    return op.apply(image)


def sr_adjoint(op, q):
    return op.adjoint(q)


def conv_apply(op, image):
    return op.apply(image)


def conv_adjoint(op, q):
    return op.adjoint(q)


# ---------------------------------------------------------------------------
# parallel-beam Radon transform

class RadonGeometry:
    """Parallel-beam geometry on a centered physical domain.

    The detector spans the domain diagonal with ``n_bins`` equispaced bins;
    rays are sampled every half pixel with bilinear interpolation. Angles
    must be strictly increasing in [0, pi).
    """

    def __init__(self, shape, domain, n_bins, angles=None, n_angles=1000):
        self.shape = tuple(shape)
        self.domain = (float(domain[0]), float(domain[1]))
        if n_bins <= 0:
            raise ValueError("n_bins must be positive")
        self.n_bins = int(n_bins)
        if angles is None:
            angles = np.arange(n_angles) * math.pi / n_angles
        self.angles = np.asarray(angles, dtype=np.float64)
        if self.angles.size < 1:
            raise ValueError("need at least one angle")
        if np.any(np.diff(self.angles) <= 0):
            raise ValueError("angles must be strictly increasing")
        if self.angles[0] < 0 or self.angles[-1] >= math.pi:
            raise ValueError("angles must lie in [0, pi)")
        # pixel sizes (rows, cols) and detector sampling
        self.h1 = self.domain[0] / self.shape[0]
        self.h2 = self.domain[1] / self.shape[1]
        self.diag = math.hypot(*self.domain)
        self.dt = self.diag / self.n_bins
        self.step = 0.5 * min(self.h1, self.h2)
        self.n_steps = int(math.ceil(self.diag / self.step))

    def limited(self, drop=100):
        """Geometry with the first and last ``drop`` angles removed."""
        if 2 * drop >= self.angles.size:
            raise ValueError("drop removes all angles")
        return RadonGeometry(self.shape, self.domain, self.n_bins,
                             angles=self.angles[drop:-drop])

    @property
    def sino_shape(self):
        return (self.angles.size, self.n_bins)

    def _ray_grid(self, angle):
        """Bilinear sample stencil for one angle.

        Returns corner indices (4, n_bins*n_steps) into the flat image and
        matching weights; out-of-domain samples carry zero weight.
        """
        n1, n2 = self.shape
        t = (np.arange(self.n_bins) - (self.n_bins - 1) / 2.0) * self.dt
        tau = (np.arange(self.n_steps) - (self.n_steps - 1) / 2.0) * self.step
        # ray: r = t * normal + tau * direction, in centered physical coords
        cs, sn = math.cos(angle), math.sin(angle)
        u = t[:, None] * cs - tau[None, :] * sn   # horizontal (columns)
        v = t[:, None] * sn + tau[None, :] * cs   # vertical (rows)
        col = (u + self.domain[1] / 2.0) / self.h2 - 0.5
        row = (v + self.domain[0] / 2.0) / self.h1 - 0.5
        r0 = np.floor(row).astype(np.int64)
        c0 = np.floor(col).astype(np.int64)
        fr = row - r0
        fc = col - c0
        idx = []
        wts = []
        for dr, dc, w in ((0, 0, (1 - fr) * (1 - fc)),
                          (0, 1, (1 - fr) * fc),
                          (1, 0, fr * (1 - fc)),
                          (1, 1, fr * fc)):
            rr = r0 + dr
            cc = c0 + dc
            ok = (rr >= 0) & (rr < n1) & (cc >= 0) & (cc < n2)
            idx.append(np.where(ok, rr * n2 + cc, 0).ravel())
            wts.append(np.where(ok, w, 0.0).ravel())
        return np.stack(idx), np.stack(wts)


def radon_apply(geometry, image):
    """Line integrals of the image over all (angle, bin) rays."""
    image = np.asarray(image, dtype=np.float64)
    if image.shape != geometry.shape:
        raise ValueError(f"expected shape {geometry.shape}, got {image.shape}")
    flat = image.ravel()
    sino = np.empty(geometry.sino_shape)
    for a, angle in enumerate(geometry.angles):
        idx, wts = geometry._ray_grid(angle)
        vals = (flat[idx] * wts).sum(axis=0)
        sino[a] = vals.reshape(geometry.n_bins, geometry.n_steps).sum(axis=1)
    return sino * geometry.step


def radon_adjoint(geometry, sino):
    """Exact transpose of ``radon_apply`` (unfiltered backprojection)."""
    sino = np.asarray(sino, dtype=np.float64)
    if sino.shape != geometry.sino_shape:
        raise ValueError(
            f"expected shape {geometry.sino_shape}, got {sino.shape}")
    n1, n2 = geometry.shape
    out = np.zeros(n1 * n2)
    for a, angle in enumerate(geometry.angles):
        idx, wts = geometry._ray_grid(angle)
        ray_vals = np.repeat(sino[a], geometry.n_steps)
        for k in range(4):
            out += np.bincount(idx[k], weights=wts[k] * ray_vals,
                               minlength=n1 * n2)
    return out.reshape(n1, n2) * geometry.step


class RadonOp:
    """Radon transform bound to a geometry, with apply/adjoint methods."""

    def __init__(self, geometry):
        self.geometry = geometry
        self.in_shape = geometry.shape
        self.out_shape = geometry.sino_shape

    def apply(self, x):
        return radon_apply(self.geometry, x)

    def adjoint(self, q):
        return radon_adjoint(self.geometry, q)


def fbp(geometry, sino, filter="Hann", frequency_scaling=0.641):
    """Filtered backprojection: ramp+window filtering, then scaled adjoint.

    The ramp |nu| is windowed up to the scaled Nyquist cutoff; "Hann" uses
    0.5 (1 + cos(pi nu / nu_c)), "Ram-Lak" a hard cutoff. The adjoint is
    converted to a true backprojection by the sample-density weight
    dt * dtheta / pixel_area with dtheta = pi / n_angles.
    """
    sino = np.asarray(sino, dtype=np.float64)
    if sino.shape != geometry.sino_shape:
        raise ValueError(
            f"expected shape {geometry.sino_shape}, got {sino.shape}")
    n_angles = geometry.angles.size
    if n_angles < 2:
        raise ValueError("need at least two angles")
    n_fft = 1 << int(math.ceil(math.log2(2 * geometry.n_bins)))
    freqs = np.fft.rfftfreq(n_fft, d=geometry.dt)
    nu_c = frequency_scaling * 0.5 / geometry.dt
    ramp = np.abs(freqs)
    if filter == "Hann":
        window = np.where(freqs <= nu_c,
                          0.5 * (1.0 + np.cos(math.pi * freqs / nu_c)), 0.0)
    elif filter == "Ram-Lak":
        window = (freqs <= nu_c).astype(np.float64)
    else:
        raise ValueError(f"unknown filter {filter!r}")
    h = ramp * window
    padded = np.zeros((n_angles, n_fft))
    padded[:, :geometry.n_bins] = sino
    filtered = np.fft.irfft(np.fft.rfft(padded, axis=1) * h, axis=1)
    filtered = filtered[:, :geometry.n_bins]
    dtheta = math.pi / n_angles
    scale = geometry.dt * dtheta / (geometry.h1 * geometry.h2)
    return radon_adjoint(geometry, filtered) * scale


def simulate_observation(op, image, noise_model, seed):
    """Apply the forward operator and the named noise model.

    ``noise_model`` is ("gaussian", sigma) for additive Gaussian noise or
    ("poisson_ct", n0) for the CT photon-count model
    y = -log(N1 / n0), N1 ~ Pois(n0 exp(-f(x))) clamped to >= 1 count.
    """
    kind, param = noise_model
    fx = op.apply(image)
    rng = np.random.default_rng(seed)
    if kind == "gaussian":
        sigma = float(param)
        if sigma < 0:
            raise ValueError("sigma must be >= 0")
        if sigma == 0:
            return fx
        return fx + sigma * rng.standard_normal(fx.shape)
    if kind == "poisson_ct":
        n0 = float(param)
        if n0 <= 0:
            raise ValueError("n0 must be positive")
        counts = rng.poisson(n0 * np.exp(-fx)).astype(np.float64)
        return -np.log(np.maximum(counts, 1.0) / n0)
    raise ValueError(f"unknown noise model {kind!r}")
