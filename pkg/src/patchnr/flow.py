"""Invertible patch flow built from affine coupling blocks and permutations.

The map T sends latent vectors z ~ N(0, I_s) to patch vectors p = T(z).
Each coupling block transforms the two halves of its input in sequence; a
3-layer fully connected ReLU subnetwork computes per-coordinate log-scales
and shifts for one half from the other half (plus an optional condition
vector). Log-scales are soft-clamped, so every block has a bounded Jacobian
and an exact analytic inverse and log-determinant.

Training minimizes the empirical negative log-likelihood in the normalizing
direction p -> z, so backpropagation runs through the inverse pass. The
backward pass here is hand-derived; ``diffcore.grad_check`` validates it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .diffcore import (
    AdamState,
    ParamSet,
    adam_step,
    check_finite,
    init_adam,
    linear_backward,
    linear_forward,
    relu_backward,
    relu_forward,
)

__all__ = [
    "FlowConfig",
    "TrainConfig",
    "PatchFlow",
    "ConditionalPatchFlow",
    "forward_map",
    "inverse_map",
    "nll",
    "nll_constfree",
    "cnll",
    "cnll_constfree",
    "sample",
    "train_flow",
    "train_cflow",
    "make_affine_flow",
    "nll_grad",
]

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class FlowConfig:
    """Architecture of the patch flow.

    ``patch_dim`` must be even. ``cond_dim`` = 0 gives the unconditional
    flow. ``seed`` fixes both the permutations and the subnet init.
    """

    patch_dim: int = 36
    n_blocks: int = 5
    hidden: int = 512
    clamp: float = 1.9
    cond_dim: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.patch_dim < 2 or self.patch_dim % 2 != 0:
            raise ValueError("patch_dim must be even and >= 2")
        if self.n_blocks < 1 or self.hidden < 1:
            raise ValueError("n_blocks and hidden must be positive")
        if self.clamp <= 0:
            raise ValueError("clamp must be positive")
        if self.cond_dim < 0:
            raise ValueError("cond_dim must be >= 0")


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings for flow training."""

    lr: float = 1e-4
    batch_size: int = 32
    steps: int = 1000
    seed: int = 0
    precision: str = "f64"

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size <= 0 or self.steps <= 0:
            raise ValueError("lr, batch_size and steps must be positive")
        if self.precision not in ("f32", "f64"):
            raise ValueError("precision must be 'f32' or 'f64'")

    @property
    def dtype(self):
        return np.float32 if self.precision == "f32" else np.float64


def _soft_clamp(raw, clamp):
    # bounded log-scale: clamp * (2/pi) * atan(raw / clamp)
    return clamp * (2.0 / math.pi) * np.arctan(raw / clamp)


def _soft_clamp_deriv(raw, clamp):
    return (2.0 / math.pi) / (1.0 + (raw / clamp) ** 2)


class _Subnet:
    """3-layer fully connected ReLU net: (half + cond) -> (log-scales, shifts)."""

    def __init__(self, n_in, n_hidden, n_out, rng, dtype):
        self.w1 = (rng.standard_normal((n_in, n_hidden)) *
                   math.sqrt(2.0 / n_in)).astype(dtype)
        self.b1 = np.zeros(n_hidden, dtype=dtype)
        self.w2 = (rng.standard_normal((n_hidden, n_hidden)) *
                   math.sqrt(2.0 / n_hidden)).astype(dtype)
        self.b2 = np.zeros(n_hidden, dtype=dtype)
        # zero-initialized final layer: the fresh flow is a permutation of
        # the identity, which keeps early training stable
        self.w3 = np.zeros((n_hidden, n_out), dtype=dtype)
        self.b3 = np.zeros(n_out, dtype=dtype)

    _FIELDS = ("w1", "b1", "w2", "b2", "w3", "b3")

    def forward(self, x):
        h1p = linear_forward(x, self.w1, self.b1)
        h1 = relu_forward(h1p)
        h2p = linear_forward(h1, self.w2, self.b2)
        h2 = relu_forward(h2p)
        y = linear_forward(h2, self.w3, self.b3)
        return y, (x, h1p, h1, h2p, h2)

    def backward(self, cache, gy, grads, prefix):
        x, h1p, h1, h2p, h2 = cache
        gh2, gw3, gb3 = linear_backward(h2, self.w3, gy)
        gh2p = relu_backward(h2p, gh2)
        gh1, gw2, gb2 = linear_backward(h1, self.w2, gh2p)
        gh1p = relu_backward(h1p, gh1)
        gx, gw1, gb1 = linear_backward(x, self.w1, gh1p)
        if grads is not None:
            for name, g in zip(self._FIELDS, (gw1, gb1, gw2, gb2, gw3, gb3)):
                grads[prefix + name] = grads[prefix + name] + g
        return gx


class _CouplingBlock:
    """Affine coupling acting on both halves in sequence (Glow style).

    Forward direction z -> p with halves (z1, z2):
        v1 = z1 * exp(c(s2(z2))) + t2(z2)
        v2 = z2 * exp(c(s1(v1))) + t1(v1)
    where c is the soft clamp and each subnet emits (raw log-scales, shifts).
    """

    def __init__(self, dim, hidden, clamp, cond_dim, rng, dtype):
        self.h = dim // 2
        self.clamp = clamp
        self.cond_dim = cond_dim
        n_in = self.h + cond_dim
        n_out = 2 * self.h
        self.net1 = _Subnet(n_in, hidden, n_out, rng, dtype)
        self.net2 = _Subnet(n_in, hidden, n_out, rng, dtype)

    def _cat(self, half, cond):
        if self.cond_dim == 0:
            return half
        return np.concatenate([half, cond], axis=1)

    def _split_out(self, y):
        return y[:, :self.h], y[:, self.h:]

    def forward(self, z, cond):
        z1, z2 = z[:, :self.h], z[:, self.h:]
        raw2, t2 = self._split_out(self.net2.forward(self._cat(z2, cond))[0])
        s2 = _soft_clamp(raw2, self.clamp)
        v1 = z1 * np.exp(s2) + t2
        raw1, t1 = self._split_out(self.net1.forward(self._cat(v1, cond))[0])
        s1 = _soft_clamp(raw1, self.clamp)
        v2 = z2 * np.exp(s1) + t1
        logdet = s1.sum(axis=1) + s2.sum(axis=1)
        return np.concatenate([v1, v2], axis=1), logdet

    def inverse(self, p, cond):
        p1, p2 = p[:, :self.h], p[:, self.h:]
        raw1, t1 = self._split_out(self.net1.forward(self._cat(p1, cond))[0])
        s1 = _soft_clamp(raw1, self.clamp)
        z2 = (p2 - t1) * np.exp(-s1)
        raw2, t2 = self._split_out(self.net2.forward(self._cat(z2, cond))[0])
        s2 = _soft_clamp(raw2, self.clamp)
        z1 = (p1 - t2) * np.exp(-s2)
        logdet_inv = -(s1.sum(axis=1) + s2.sum(axis=1))
        return np.concatenate([z1, z2], axis=1), logdet_inv

    def inverse_cached(self, p, cond):
        p1, p2 = p[:, :self.h], p[:, self.h:]
        out1, c1 = self.net1.forward(self._cat(p1, cond))
        raw1, t1 = self._split_out(out1)
        s1 = _soft_clamp(raw1, self.clamp)
        z2 = (p2 - t1) * np.exp(-s1)
        out2, c2 = self.net2.forward(self._cat(z2, cond))
        raw2, t2 = self._split_out(out2)
        s2 = _soft_clamp(raw2, self.clamp)
        z1 = (p1 - t2) * np.exp(-s2)
        logdet_inv = -(s1.sum(axis=1) + s2.sum(axis=1))
        z = np.concatenate([z1, z2], axis=1)
        cache = (c1, c2, raw1, raw2, p1, z1, z2, s1, s2)
        return z, logdet_inv, cache

    def backward_inverse(self, cache, gz, gld, grads, prefix):
        """Backprop through ``inverse``.

        ``gz`` is the upstream gradient on (z1, z2); ``gld`` (one value per
        sample) multiplies this block's logdet_inv contribution. Returns the
        gradient on the block input p. Parameter gradients accumulate into
        ``grads`` (skipped when grads is None).
        """
        c1, c2, raw1, raw2, p1, z1, z2, s1, s2 = cache
        gz1, gz2 = gz[:, :self.h], gz[:, self.h:]
        gld = gld[:, None]

        # z1 = (p1 - t2) * exp(-s2), logdet_inv += -sum(s2)
        e2 = np.exp(-s2)
        gp1 = gz1 * e2
        gt2 = -gz1 * e2
        gs2 = -gz1 * z1 - gld
        graw2 = gs2 * _soft_clamp_deriv(raw2, self.clamp)
        gin2 = self.net2.backward(c2, np.concatenate([graw2, gt2], axis=1),
                                  grads, prefix + "net2.")
        gz2_total = gz2 + gin2[:, :self.h]

        # z2 = (p2 - t1) * exp(-s1), logdet_inv += -sum(s1)
        e1 = np.exp(-s1)
        gp2 = gz2_total * e1
        gt1 = -gz2_total * e1
        gs1 = -gz2_total * z2 - gld
        graw1 = gs1 * _soft_clamp_deriv(raw1, self.clamp)
        gin1 = self.net1.backward(c1, np.concatenate([graw1, gt1], axis=1),
                                  grads, prefix + "net1.")
        gp1 = gp1 + gin1[:, :self.h]
        return np.concatenate([gp1, gp2], axis=1)


class _Permutation:
    """Fixed random permutation; log-determinant contribution is zero."""

    def __init__(self, dim, rng):
        self.perm = rng.permutation(dim)
        self.inv_perm = np.argsort(self.perm)

    def forward(self, z, cond):
        return z[:, self.perm], np.zeros(z.shape[0], dtype=z.dtype)

    def inverse(self, p, cond):
        return p[:, self.inv_perm], np.zeros(p.shape[0], dtype=p.dtype)

    def inverse_cached(self, p, cond):
        z, ld = self.inverse(p, cond)
        return z, ld, None

    def backward_inverse(self, cache, gz, gld, grads, prefix):
        gp = np.empty_like(gz)
        gp[:, self.inv_perm] = gz
        return gp


class PatchFlow:
    """Invertible map T on patch vectors with tracked log-determinant."""

    def __init__(self, config: FlowConfig, dtype=np.float64):
        self.config = config
        self.dim = config.patch_dim
        self.cond_dim = config.cond_dim
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(config.seed)
        self.layers = []
        for k in range(config.n_blocks):
            self.layers.append(_CouplingBlock(
                self.dim, config.hidden, config.clamp, config.cond_dim,
                rng, self.dtype))
            self.layers.append(_Permutation(self.dim, rng))

    # -- parameter plumbing -------------------------------------------------

    def _blocks(self):
        for k, layer in enumerate(self.layers):
            if isinstance(layer, _CouplingBlock):
                yield f"b{k // 2}.", layer

    def params(self) -> ParamSet:
        out = {}
        for prefix, block in self._blocks():
            for net_name, net in (("net1.", block.net1), ("net2.", block.net2)):
                for field in _Subnet._FIELDS:
                    out[prefix + net_name + field] = getattr(net, field)
        return ParamSet(out)

    def set_params(self, ps: ParamSet):
        for prefix, block in self._blocks():
            for net_name, net in (("net1.", block.net1), ("net2.", block.net2)):
                for field in _Subnet._FIELDS:
                    setattr(net, field, np.asarray(ps[prefix + net_name + field],
                                                   dtype=self.dtype))

    # -- evaluation ----------------------------------------------------------

    def _prep(self, x, cond):
        x = np.atleast_2d(np.asarray(x, dtype=self.dtype))
        if x.shape[1] != self.dim:
            raise ValueError(f"expected vectors of dimension {self.dim}, "
                             f"got {x.shape[1]}")
        if self.cond_dim == 0:
            if cond is not None:
                raise ValueError("flow is unconditional, no condition expected")
            return x, None
        if cond is None:
            raise ValueError("conditional flow requires a condition")
        cond = np.atleast_2d(np.asarray(cond, dtype=self.dtype))
        if cond.shape[1] != self.cond_dim:
            raise ValueError(f"expected conditions of dimension {self.cond_dim}, "
                             f"got {cond.shape[1]}")
        if cond.shape[0] == 1 and x.shape[0] > 1:
            cond = np.broadcast_to(cond, (x.shape[0], self.cond_dim))
        if cond.shape[0] != x.shape[0]:
            raise ValueError("patch/condition batches are not aligned")
        return x, cond

    def forward(self, z, cond=None):
        """T(z) with log|det dT|, batched over rows."""
        z, cond = self._prep(z, cond)
        logdet = np.zeros(z.shape[0], dtype=self.dtype)
        for layer in self.layers:
            z, ld = layer.forward(z, cond)
            logdet = logdet + ld
        return z, logdet

    def inverse(self, p, cond=None):
        """T^{-1}(p) with log|det dT^{-1}|, batched over rows."""
        p, cond = self._prep(p, cond)
        logdet_inv = np.zeros(p.shape[0], dtype=self.dtype)
        for layer in reversed(self.layers):
            p, ld = layer.inverse(p, cond)
            logdet_inv = logdet_inv + ld
        return p, logdet_inv

    def inverse_cached(self, p, cond=None):
        p, cond = self._prep(p, cond)
        logdet_inv = np.zeros(p.shape[0], dtype=self.dtype)
        caches = []
        for layer in reversed(self.layers):
            p, ld, cache = layer.inverse_cached(p, cond)
            logdet_inv = logdet_inv + ld
            caches.append(cache)
        return p, logdet_inv, caches

    def backward_inverse(self, caches, gz, gld, grads=None):
        """Backprop through the inverse pass.

        ``gz``: upstream gradient on z = T^{-1}(p); ``gld``: per-sample
        coefficient on logdet_inv. Returns the gradient on p; parameter
        gradients accumulate into ``grads`` when given.
        """
        n = len(self.layers)
        for pos, layer in enumerate(self.layers):
            prefix = f"b{pos // 2}."
            cache = caches[n - 1 - pos]
            gz = layer.backward_inverse(cache, gz, gld, grads, prefix)
        return gz


class ConditionalPatchFlow(PatchFlow):
    """Patch flow whose subnets also receive a condition vector."""

    def __init__(self, config: FlowConfig, dtype=np.float64):
        if config.cond_dim < 1:
            raise ValueError("ConditionalPatchFlow requires cond_dim >= 1")
        super().__init__(config, dtype=dtype)


# ---------------------------------------------------------------------------
# functional surface

def forward_map(flow, z, cond=None):
    """p = T(z) and log|det dT(z)| for a single patch vector."""
    p, logdet = flow.forward(np.asarray(z)[None, :], cond=_one(cond))
    return p[0], float(logdet[0])


def inverse_map(flow, p, cond=None):
    """z = T^{-1}(p) and log|det dT^{-1}(p)| for a single patch vector."""
    z, logdet_inv = flow.inverse(np.asarray(p)[None, :], cond=_one(cond))
    return z[0], float(logdet_inv[0])


def _one(cond):
    return None if cond is None else np.asarray(cond)[None, :]


def nll_constfree(flow, p, cond=None):
    """Per-sample 0.5*||T^{-1}(p)||^2 - log|det dT^{-1}(p)| (no constant)."""
    p = np.atleast_2d(np.asarray(p))
    z, logdet_inv = flow.inverse(p, cond=cond)
    vals = 0.5 * np.sum(z * z, axis=1) - logdet_inv
    check_finite("nll", vals)
    return vals


def nll(flow, p):
    """Normalized negative log density, including the (s/2) log(2 pi) term.

    exp(-nll) integrates to one; the regularizers use the constant-free
    form, which differs only by this additive constant.
    """
    vals = nll_constfree(flow, p) + 0.5 * flow.dim * LOG_2PI
    return vals if vals.size > 1 else float(vals[0])


def cnll_constfree(cflow, c, p):
    c = np.asarray(c)
    p = np.asarray(p)
    if p.ndim == 1:
        c = c[None, :]
        p = p[None, :]
    return nll_constfree(cflow, p, cond=c)


def cnll(cflow, c, p):
    """Conditional negative log density at condition c, normalized."""
    vals = cnll_constfree(cflow, c, p) + 0.5 * cflow.dim * LOG_2PI
    return vals if vals.size > 1 else float(vals[0])


def nll_grad(flow, p, cond=None):
    """Per-sample constant-free nll values and their gradients w.r.t. p."""
    p = np.atleast_2d(np.asarray(p))
    z, logdet_inv, caches = flow.inverse_cached(p, cond=cond)
    vals = 0.5 * np.sum(z * z, axis=1) - logdet_inv
    check_finite("nll", vals)
    gld = -np.ones(p.shape[0], dtype=z.dtype)
    gp = flow.backward_inverse(caches, z.copy(), gld, grads=None)
    return vals, gp


def sample(flow, n, seed, cond=None):
    """n draws T(z_i), z_i ~ N(0, I); reproducible under the seed."""
    if n <= 0:
        raise ValueError("n must be positive")
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n, flow.dim))
    p, _ = flow.forward(z, cond=cond)
    return p


# ---------------------------------------------------------------------------
# training

def loss_and_param_grads(flow, batch, cond=None):
    """Mean constant-free nll over the batch and its parameter gradients."""
    z, logdet_inv, caches = flow.inverse_cached(batch, cond=cond)
    n = batch.shape[0]
    loss = float(np.mean(0.5 * np.sum(z * z, axis=1) - logdet_inv))
    grads = flow.params().zeros_like()
    gz = z / n
    gld = np.full(n, -1.0 / n, dtype=z.dtype)
    flow.backward_inverse(caches, gz, gld, grads=grads)
    return loss, grads


def _train(flow, patches, conds, config):
    patches = np.asarray(patches, dtype=config.dtype)
    n = patches.shape[0]
    if n < config.batch_size:
        raise ValueError("need at least batch_size training patches")
    params = flow.params()
    state = init_adam(params, lr=config.lr)
    rng = np.random.default_rng(config.seed)
    trace = np.empty(config.steps)
    for step in range(config.steps):
        idx = rng.integers(0, n, size=config.batch_size)
        batch = patches[idx]
        batch_cond = None if conds is None else conds[idx]
        loss, grads = loss_and_param_grads(flow, batch, cond=batch_cond)
        if not np.isfinite(loss):
            raise FloatingPointError(f"non-finite training loss at step {step}")
        params, state = adam_step(params, grads, state)
        flow.set_params(params)
        trace[step] = loss
    return flow, trace


def train_flow(patches, config: TrainConfig, flow_config: FlowConfig = None):
    """Fit a patch flow by minimizing the empirical nll with Adam.

    Returns (flow, loss trace). The loss trace holds the minibatch
    constant-free nll at every step.
    """
    patches = np.asarray(patches)
    if flow_config is None:
        flow_config = FlowConfig(patch_dim=patches.shape[1], seed=config.seed)
    flow = PatchFlow(flow_config, dtype=config.dtype)
    return _train(flow, patches, None, config)


def train_cflow(patches, conds, config: TrainConfig,
                flow_config: FlowConfig = None):
    """Fit a conditional patch flow on aligned (patch, condition) pairs."""
    patches = np.asarray(patches)
    conds = np.asarray(conds, dtype=config.dtype)
    if conds.shape[0] != patches.shape[0]:
        raise ValueError("patches and conditions are not aligned")
    if flow_config is None:
        flow_config = FlowConfig(patch_dim=patches.shape[1],
                                 cond_dim=conds.shape[1], seed=config.seed)
    if flow_config.cond_dim != conds.shape[1]:
        raise ValueError("flow_config.cond_dim does not match the conditions")
    flow = ConditionalPatchFlow(flow_config, dtype=config.dtype)
    return _train(flow, patches, conds, config)


# ---------------------------------------------------------------------------
# constructed flows with known Lipschitz constants

def _unclamp(s, clamp):
    # inverse of the soft clamp; requires |s| < clamp
    s = np.asarray(s, dtype=np.float64)
    if np.any(np.abs(s) >= clamp):
        raise ValueError("target log-scale exceeds the clamp range")
    return clamp * np.tan(s * math.pi / (2.0 * clamp))


def make_affine_flow(scales, shifts, cond_dim=0, cond_shift=None, clamp=1.9):
    """Single-block flow realizing T(z) = scales * z + shifts exactly.

    With ``cond_shift`` (an (s, cond_dim) matrix M) the conditional variant
    T(c; z) = scales * z + shifts + M c is built instead; the ReLU identity
    relu(x) - relu(-x) = x threads the condition linearly through the
    subnets. Scales must be positive with |log scale| < clamp.

    Returns (flow, K, L) with the exact Lipschitz constants K = max(scales)
    and L = max(1/scales).
    """
    scales = np.asarray(scales, dtype=np.float64)
    shifts = np.asarray(shifts, dtype=np.float64)
    s = scales.size
    if shifts.size != s:
        raise ValueError("scales and shifts must have equal length")
    if np.any(scales <= 0):
        raise ValueError("scales must be positive")
    h = s // 2
    hidden = max(1, 2 * cond_dim)
    config = FlowConfig(patch_dim=s, n_blocks=1, hidden=hidden, clamp=clamp,
                        cond_dim=cond_dim, seed=0)
    flow = (ConditionalPatchFlow if cond_dim else PatchFlow)(config)
    block = flow.layers[0]
    perm = flow.layers[1]
    perm.perm = np.arange(s)
    perm.inv_perm = np.arange(s)

    raw = _unclamp(np.log(scales), clamp)
    for net, lo, hi in ((block.net2, 0, h), (block.net1, h, s)):
        net.w1[:] = 0.0
        net.b1[:] = 0.0
        net.w2[:] = 0.0
        net.b2[:] = 0.0
        net.w3[:] = 0.0
        net.b3[:h] = raw[lo:hi]
        net.b3[h:] = shifts[lo:hi]
        if cond_dim and cond_shift is not None:
            m = np.asarray(cond_shift, dtype=np.float64)[lo:hi]  # (h, c)
            # hidden pair (relu(c), relu(-c)) reassembles c at the last
            # layer; the middle layer must pass it through unchanged
            net.w1[h:, :cond_dim] = np.eye(cond_dim)
            net.w1[h:, cond_dim:2 * cond_dim] = -np.eye(cond_dim)
            net.w2[:] = np.eye(hidden)
            net.w3[:cond_dim, h:] = m.T
            net.w3[cond_dim:2 * cond_dim, h:] = -m.T
    k = float(np.max(scales))
    lip_inv = float(np.max(1.0 / scales))
    return flow, k, lip_inv
