"""Patch-based regularizers: flow prior, its conditional variant, and a
Gaussian-mixture baseline (expected patch log likelihood).

The flow prior sums the constant-free patch negative log-likelihood over a
patch subset, scaled by 1/s (s = patch dimension); the GMM baseline uses
the mean negative patch log-density instead. Gradients flow back to the
image through the patch-extraction adjoint.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.special import logsumexp

from .flow import nll_grad
from .patchops import condition_patches, extract_patches, insert_adjoint

__all__ = [
    "patchnr",
    "cpatchnr",
    "PatchGMM",
    "EMConfig",
    "gmm_fit",
    "gmm_logpdf",
    "epll",
]


def patchnr(image, flow, geometry, subset):
    """Flow regularizer value and image-space gradient on a patch subset.

    value = (1/s) sum_i [ 0.5 ||T^{-1}(P_i x)||^2 - log|det grad T^{-1}| ]
    """
    subset = np.asarray(subset)
    if subset.size == 0:
        raise ValueError("subset must be nonempty")
    patches = extract_patches(image, geometry, subset)
    if patches.shape[1] != flow.dim:
        raise ValueError("patch dimension does not match the flow")
    vals, grads = nll_grad(flow, patches)
    s = geometry.patch_dim
    return float(vals.sum() / s), insert_adjoint(grads / s, subset, geometry)


def cpatchnr(image, cond_image, cflow, geometry, subset):
    """Conditional flow regularizer; conditions come from the co-located
    windows of a naive reconstruction and are treated as constants."""
    subset = np.asarray(subset)
    if subset.size == 0:
        raise ValueError("subset must be nonempty")
    patches = extract_patches(image, geometry, subset)
    conds = condition_patches(cond_image, geometry, subset)
    vals, grads = nll_grad(cflow, patches, cond=conds)
    s = geometry.patch_dim
    return float(vals.sum() / s), insert_adjoint(grads / s, subset, geometry)


# ---------------------------------------------------------------------------
# Gaussian mixture baseline

class PatchGMM:
    """Full-covariance Gaussian mixture over patch vectors.

    Caches Cholesky factors of the covariances; weights live on the
    simplex. Construction fails if any covariance is not SPD.
    """

    def __init__(self, weights, means, covs):
        self.weights = np.asarray(weights, dtype=np.float64)
        self.means = np.asarray(means, dtype=np.float64)
        self.covs = np.asarray(covs, dtype=np.float64)
        k, s = self.means.shape
        if self.weights.shape != (k,) or self.covs.shape != (k, s, s):
            raise ValueError("inconsistent GMM field shapes")
        if abs(self.weights.sum() - 1.0) > 1e-8 or np.any(self.weights <= 0):
            raise ValueError("weights must be positive and sum to one")
        self.k = k
        self.dim = s
        # lower Cholesky factors and the component log-normalizers
        self.chols = np.empty_like(self.covs)
        self.log_norms = np.empty(k)
        for j in range(k):
            self.chols[j] = cholesky(self.covs[j], lower=True)
            self.log_norms[j] = -(0.5 * s * math.log(2.0 * math.pi)
                                  + np.sum(np.log(np.diag(self.chols[j]))))

    def component_logpdf(self, p):
        """(B, K) per-component log densities, weights excluded."""
        p = np.atleast_2d(np.asarray(p, dtype=np.float64))
        out = np.empty((p.shape[0], self.k))
        for j in range(self.k):
            d = solve_triangular(self.chols[j], (p - self.means[j]).T,
                                 lower=True)
            out[:, j] = self.log_norms[j] - 0.5 * np.sum(d * d, axis=0)
        return out


def gmm_logpdf(gmm, p):
    """Mixture log-density log sum_k w_k N(p | mu_k, Sigma_k), with its
    gradient w.r.t. p. Accepts a single vector or a batch of rows."""
    single = np.asarray(p).ndim == 1
    p = np.atleast_2d(np.asarray(p, dtype=np.float64))
    comp = gmm.component_logpdf(p) + np.log(gmm.weights)
    lp = logsumexp(comp, axis=1)
    resp = np.exp(comp - lp[:, None])
    grad = np.zeros_like(p)
    for j in range(gmm.k):
        sol = cho_solve((gmm.chols[j], True), (p - gmm.means[j]).T).T
        grad -= resp[:, j:j + 1] * sol
    if single:
        return float(lp[0]), grad[0]
    return lp, grad


@dataclass(frozen=True)
class EMConfig:
    max_iter: int = 100
    cov_floor: float = 1e-6
    seed: int = 0
    tol: float = 1e-7


def _kmeanspp_init(patches, k, rng):
    n = patches.shape[0]
    centers = [patches[rng.integers(n)]]
    d2 = np.sum((patches - centers[0]) ** 2, axis=1)
    for _ in range(1, k):
        probs = d2 / d2.sum() if d2.sum() > 0 else np.full(n, 1.0 / n)
        centers.append(patches[rng.choice(n, p=probs)])
        d2 = np.minimum(d2, np.sum((patches - centers[-1]) ** 2, axis=1))
    return np.array(centers)


def gmm_fit(patches, k, config=EMConfig()):
    """Fit a full-covariance GMM with EM; k-means++ style initialization.

    Returns (PatchGMM, log-likelihood trace). The trace is the mean data
    log-likelihood before each M-step and is non-decreasing up to
    floating-point slack. Components that lose all responsibility are
    reseeded from the point the model currently explains worst.
    """
    patches = np.asarray(patches, dtype=np.float64)
    n, s = patches.shape
    if n < k:
        raise ValueError("need at least k patches")
    rng = np.random.default_rng(config.seed)
    means = _kmeanspp_init(patches, k, rng)
    base_cov = np.cov(patches.T).reshape(s, s) + config.cov_floor * np.eye(s)
    covs = np.repeat(base_cov[None], k, axis=0)
    weights = np.full(k, 1.0 / k)
    gmm = PatchGMM(weights, means, covs)
    trace = []
    for _ in range(config.max_iter):
        comp = gmm.component_logpdf(patches) + np.log(gmm.weights)
        lp = logsumexp(comp, axis=1)
        trace.append(float(lp.mean()))
        resp = np.exp(comp - lp[:, None])
        nk = resp.sum(axis=0)
        for j in range(k):
            if nk[j] < 1e-10:
                # dead component: reseed at the worst-explained point
                far = int(np.argmin(lp))
                means[j] = patches[far]
                covs[j] = base_cov
                weights[j] = 1.0 / n
                continue
            means[j] = resp[:, j] @ patches / nk[j]
            d = patches - means[j]
            covs[j] = (resp[:, j] * d.T) @ d / nk[j]
            covs[j] += config.cov_floor * np.eye(s)
            weights[j] = nk[j] / n
        weights = weights / weights.sum()
        gmm = PatchGMM(weights, means, covs)
        if len(trace) > 1 and abs(trace[-1] - trace[-2]) < config.tol:
            break
    return gmm, np.array(trace)


def epll(image, gmm, geometry, subset):
    """Mean negative patch log-density over the subset, with gradient."""
    subset = np.asarray(subset)
    if subset.size == 0:
        raise ValueError("subset must be nonempty")
    patches = extract_patches(image, geometry, subset)
    if patches.shape[1] != gmm.dim:
        raise ValueError("patch dimension does not match the GMM")
    lp, grad = gmm_logpdf(gmm, patches)
    if not np.all(np.isfinite(lp)):
        raise FloatingPointError("non-finite patch log-density")
    n = subset.size
    return float(-lp.sum() / n), insert_adjoint(-grad / n, subset, geometry)
