"""Data-fidelity terms D(f(x), y) with gradients w.r.t. f(x).

The image-space gradient is obtained by composing with the forward
operator's adjoint; the solver does that wiring.
"""

import math

import numpy as np

__all__ = ["gaussian_fidelity", "poisson_fidelity"]


def gaussian_fidelity(fx, y, sigma=None):
    """Squared-error fidelity ||fx - y||^2 and its gradient 2(fx - y).

    The default form absorbs the noise level into the regularization
    weight. Passing ``sigma`` switches to the explicit Gaussian negative
    log-likelihood scaling ||fx - y||^2 / (2 sigma^2).
    """
    fx = np.asarray(fx, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if fx.shape != y.shape:
        raise ValueError(f"shape mismatch: {fx.shape} vs {y.shape}")
    r = fx - y
    if sigma is None:
        return float(np.sum(r * r)), 2.0 * r
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    w = 1.0 / (2.0 * sigma * sigma)
    return float(w * np.sum(r * r)), (2.0 * w) * r


def poisson_fidelity(fx, y, n0):
    """Poisson transmission log-likelihood misfit for CT data.

    value = sum_i n0 e^{-fx_i} - n0 e^{-y_i} (-fx_i + log n0)
    grad_i = n0 (e^{-y_i} - e^{-fx_i})

    The value may be negative; only differences matter to the solver.
    """
    fx = np.asarray(fx, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if fx.shape != y.shape:
        raise ValueError(f"shape mismatch: {fx.shape} vs {y.shape}")
    if n0 <= 0:
        raise ValueError("n0 must be positive")
    with np.errstate(over="ignore"):
        efx = np.exp(-fx)
        ey = np.exp(-y)
    for name, arr in (("fx", efx), ("y", ey)):
        if not np.all(np.isfinite(arr)):
            idx = np.unravel_index(int(np.argmin(np.isfinite(arr))), arr.shape)
            raise OverflowError(f"exp(-{name}) overflowed at index {idx}")
    value = float(np.sum(n0 * efx - n0 * ey * (-fx + math.log(n0))))
    grad = n0 * (ey - efx)
    return value, grad
