"""Variational reconstruction: minimize D(f(x), y) + lam * R(x) with Adam.

The prior term is evaluated on a fresh random patch subset every iteration.
Prior adapters produced by the ``make_*_prior`` factories already carry the
patch-count normalization (s / n_subset for the flow priors, none for the
GMM baseline, whose value is a mean already), so the objective is exactly

    J(x) = fidelity(f(x), y) + lam * prior(x)

with ``lam`` interpreted on the scale the task presets use.
"""

import sys
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .diffcore import ParamSet, adam_step, init_adam
from .operators import fbp
from .patchops import sample_patch_indices
from .priors import cpatchnr, epll, patchnr

__all__ = [
    "ReconstructConfig",
    "reconstruct",
    "default_init",
    "make_patchnr_prior",
    "make_cpatchnr_prior",
    "make_epll_prior",
]


@dataclass(frozen=True)
class ReconstructConfig:
    iterations: int = 500
    lr: float = 0.03
    lam: float = 0.15
    n_subset: int = 40000
    seed: int = 0
    init: str = "observation"   # observation | bicubic | fbp | zeros
    clamp_final: bool = False   # clip to [0,1] after the last iteration
    log_every: int = 50         # 0 silences progress lines

    def __post_init__(self):
        if self.iterations <= 0 or self.n_subset <= 0:
            raise ValueError("iterations and n_subset must be positive")
        if self.lr <= 0 or self.lam < 0:
            raise ValueError("need lr > 0 and lam >= 0")


def make_patchnr_prior(flow, geometry, n_subset, full=False):
    """Flow prior adapter with the s/n_subset preset normalization baked in.

    ``full=True`` evaluates every patch deterministically instead of
    sampling (used where a closed-form objective is compared against).
    """
    def prior(x, rng):
        if full:
            subset = np.arange(geometry.n_patches)
        else:
            subset = sample_patch_indices(geometry, n_subset, rng)
        value, grad = patchnr(x, flow, geometry, subset)
        w = geometry.patch_dim / subset.size
        return w * value, w * grad
    return prior


def make_cpatchnr_prior(cflow, cond_image, geometry, n_subset, full=False):
    """Conditional flow prior adapter; conditions are fixed up front."""
    cond_image = np.asarray(cond_image, dtype=np.float64)

    def prior(x, rng):
        if full:
            subset = np.arange(geometry.n_patches)
        else:
            subset = sample_patch_indices(geometry, n_subset, rng)
        value, grad = cpatchnr(x, cond_image, cflow, geometry, subset)
        w = geometry.patch_dim / subset.size
        return w * value, w * grad
    return prior


def make_epll_prior(gmm, geometry, n_subset, full=False):
    """GMM baseline adapter; the value is already a per-patch mean."""
    def prior(x, rng):
        if full:
            subset = np.arange(geometry.n_patches)
        else:
            subset = sample_patch_indices(geometry, n_subset, rng)
        return epll(x, gmm, geometry, subset)
    return prior


def default_init(y, operator, policy):
    """Initial iterate from the task's naive reconstruction."""
    y = np.asarray(y, dtype=np.float64)
    if policy == "observation":
        if operator.in_shape != operator.out_shape:
            raise ValueError("'observation' init needs matching shapes")
        return y.copy()
    if policy == "zeros":
        return np.zeros(operator.in_shape)
    if policy == "bicubic":
        factors = (operator.in_shape[0] / y.shape[0],
                   operator.in_shape[1] / y.shape[1])
        x0 = ndimage.zoom(y, factors, order=3, mode="nearest", grid_mode=True)
        if x0.shape != operator.in_shape:
            raise ValueError("bicubic upsampling produced a shape mismatch")
        return x0
    if policy == "fbp":
        return fbp(operator.geometry, y)
    raise ValueError(f"unknown init policy {policy!r}")


def reconstruct(y, operator, fidelity, prior, config, x0=None):
    """Adam descent on the image; returns (x, trace).

    ``fidelity(fx, y) -> (value, grad)``; ``prior(x, rng) -> (value, grad)``
    or None for pure least squares. The trace has one row per iteration:
    (fidelity, prior, objective). A non-finite objective aborts and returns
    the last finite iterate with a diagnostic on stderr.
    """
    y = np.asarray(y, dtype=np.float64)
    x = np.asarray(x0, dtype=np.float64).copy() if x0 is not None \
        else default_init(y, operator, config.init)
    rng = np.random.default_rng(config.seed)
    params = ParamSet({"x": x})
    state = init_adam(params, lr=config.lr)
    trace = np.zeros((config.iterations, 3))
    last_good = x.copy()
    for it in range(config.iterations):
        fx = operator.apply(x)
        fval, fgrad = fidelity(fx, y)
        if prior is not None and config.lam > 0:
            pval, pgrad = prior(x, rng)
        else:
            pval, pgrad = 0.0, 0.0
        obj = fval + config.lam * pval
        if not np.isfinite(obj):
            print(f"reconstruct: non-finite objective at iteration {it}, "
                  "returning last finite iterate", file=sys.stderr)
            return last_good, trace[:it]
        trace[it] = (fval, pval, obj)
        last_good = x
        if config.log_every and it % config.log_every == 0:
            print(f"{it}, {fval:.6g}, {pval:.6g}, {obj:.6g}",
                  file=sys.stderr)
        grad = operator.adjoint(fgrad)
        if prior is not None and config.lam > 0:
            grad = grad + config.lam * pgrad
        params, state = adam_step(params, ParamSet({"x": grad}), state)
        x = params["x"]
    if config.clamp_final:
        x = np.clip(x, 0.0, 1.0)
    return x, trace
