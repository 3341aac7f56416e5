"""Minimal differentiable-computation substrate.

Dense real arrays (plain numpy) plus the handful of primitives the coupling
flows and data fidelities need: affine maps, elementwise exp/tanh/ReLU,
reductions and strided zero-padded convolution. Every primitive ships with
its analytically derived gradient; ``grad_check`` validates them against
central differences. The Adam optimizer lives here as well.

All reductions rely on numpy's fixed (pairwise) summation order, so repeated
runs on identical inputs are bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "ParamSet",
    "AdamState",
    "init_adam",
    "adam_step",
    "params_to_vector",
    "vector_to_params",
    "grad_check",
    "check_finite",
    "linear_forward",
    "linear_backward",
    "relu_forward",
    "relu_backward",
    "tanh_forward",
    "tanh_backward",
    "exp_forward",
    "exp_backward",
    "conv2d_forward",
    "conv2d_input_grad",
]


def check_finite(name, arr):
    """Reject NaN/Inf at module boundaries."""
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"non-finite values in {name}")
    return arr


class ParamSet:
    """Named list of parameter blocks with deterministic iteration order.

    Names are unique and shapes are frozen at creation; assignment only
    replaces values of matching shape.
    """

    def __init__(self, items):
        self._data = {}
        for name, arr in dict(items).items():
            if name in self._data:
                raise ValueError(f"duplicate parameter name {name!r}")
            self._data[name] = np.asarray(arr)

    @property
    def names(self):
        return list(self._data)

    def __getitem__(self, name):
        return self._data[name]

    def __setitem__(self, name, value):
        value = np.asarray(value)
        if name not in self._data:
            raise KeyError(name)
        if value.shape != self._data[name].shape:
            raise ValueError(
                f"shape mismatch for {name!r}: "
                f"{value.shape} vs {self._data[name].shape}"
            )
        self._data[name] = value

    def __len__(self):
        return len(self._data)

    def __iter__(self):
        return iter(self._data)

    def items(self):
        return self._data.items()

    def copy(self):
        return ParamSet({k: v.copy() for k, v in self._data.items()})

    def zeros_like(self):
        return ParamSet({k: np.zeros_like(v) for k, v in self._data.items()})

    def aligned_with(self, other):
        return self.names == other.names and all(
            self._data[k].shape == other._data[k].shape for k in self._data
        )


@dataclass
class AdamState:
    """First/second moment estimates plus step counter and hyperparameters."""

    m: ParamSet
    v: ParamSet
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def init_adam(params: ParamSet, lr: float = 1e-3, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    return AdamState(m=params.zeros_like(), v=params.zeros_like(),
                     t=0, lr=lr, beta1=beta1, beta2=beta2, eps=eps)


def adam_step(params: ParamSet, grads: ParamSet, state: AdamState):
    """One bias-corrected Adam update. Returns (new_params, new_state)."""
    if not params.aligned_with(grads) or not params.aligned_with(state.m):
        raise ValueError("parameter/gradient/state shapes are not aligned")
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    new_p, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = grads[name]
        m = b1 * state.m[name] + (1.0 - b1) * g
        v = b2 * state.v[name] + (1.0 - b2) * g * g
        mhat = m / bc1
        vhat = v / bc2
        new_p[name] = p - state.lr * mhat / (np.sqrt(vhat) + state.eps)
        new_m[name] = m
        new_v[name] = v
    new_state = AdamState(m=ParamSet(new_m), v=ParamSet(new_v), t=t,
                          lr=state.lr, beta1=b1, beta2=b2, eps=state.eps)
    return ParamSet(new_p), new_state


# ---------------------------------------------------------------------------
# primitives with analytic gradients
#
# Each *_forward returns the output; the matching *_backward maps the
# upstream gradient back through the op (vector-Jacobian product).

def linear_forward(x, w, b):
    """x @ w + b for batched rows x of shape (B, n_in)."""
    return x @ w + b


def linear_backward(x, w, gy):
    """Gradients of a linear layer: returns (gx, gw, gb)."""
    return gy @ w.T, x.T @ gy, gy.sum(axis=0)


def relu_forward(x):
    return np.maximum(x, 0.0)


def relu_backward(x, gy):
    # subgradient at 0 is 0
    return gy * (x > 0.0)


def tanh_forward(x):
    return np.tanh(x)


def tanh_backward(y, gy):
    """Backward from the cached output y = tanh(x)."""
    return gy * (1.0 - y * y)


def exp_forward(x):
    return np.exp(x)


def exp_backward(y, gy):
    """Backward from the cached output y = exp(x)."""
    return gy * y


def conv2d_forward(x, kernel, stride=1, pad=(0, 0, 0, 0)):
    """Zero-padded 2-D correlation with stride.

    ``pad`` is (top, bottom, left, right). Output extents are
    ((H + pt + pb - kh) // stride + 1, likewise for width).
    """
    kh, kw = kernel.shape
    pt, pb, pl, pr = pad
    xp = np.pad(x, ((pt, pb), (pl, pr)))
    hh, ww = xp.shape
    oh = (hh - kh) // stride + 1
    ow = (ww - kw) // stride + 1
    if oh <= 0 or ow <= 0:
        raise ValueError("kernel larger than padded input")
    sh, sw = xp.strides
    windows = np.lib.stride_tricks.as_strided(
        xp, shape=(oh, ow, kh, kw),
        strides=(sh * stride, sw * stride, sh, sw), writeable=False)
    return np.einsum("mnij,ij->mn", windows, kernel)


def conv2d_input_grad(gy, kernel, x_shape, stride=1, pad=(0, 0, 0, 0)):
    """Exact adjoint of ``conv2d_forward`` w.r.t. the input image."""
    kh, kw = kernel.shape
    pt, pb, pl, pr = pad
    hh = x_shape[0] + pt + pb
    ww = x_shape[1] + pl + pr
    oh, ow = gy.shape
    gxp = np.zeros((hh, ww), dtype=np.result_type(gy, kernel))
    for i in range(kh):
        for j in range(kw):
            gxp[i:i + oh * stride:stride, j:j + ow * stride:stride] += kernel[i, j] * gy
    return gxp[pt:hh - pb, pl:ww - pr]


def params_to_vector(params: ParamSet):
    """Concatenate all parameter blocks into one flat float64 vector."""
    return np.concatenate([np.asarray(v, dtype=np.float64).ravel()
                           for _, v in params.items()])


def vector_to_params(template: ParamSet, vec):
    """Inverse of ``params_to_vector`` relative to a shape template."""
    vec = np.asarray(vec)
    out = {}
    pos = 0
    for name, arr in template.items():
        n = arr.size
        out[name] = vec[pos:pos + n].reshape(arr.shape).astype(arr.dtype)
        pos += n
    if pos != vec.size:
        raise ValueError("vector length does not match the parameter set")
    return ParamSet(out)


def grad_check(fn, point, step=1e-6):
    """Max relative deviation between analytic and central-difference gradient.

    ``fn(x)`` must return ``(value, grad)`` with a scalar value. The error is
    max over coordinates of |analytic - numeric| / max(1, |analytic|).
    """
    if step <= 0:
        raise ValueError("step must be positive")
    point = np.asarray(point, dtype=np.float64)
    value, grad = fn(point)
    if not np.isfinite(value):
        raise ValueError("non-finite evaluation")
    grad = np.asarray(grad, dtype=np.float64)
    worst = 0.0
    flat = point.ravel()
    for k in range(flat.size):
        shifted = flat.copy()
        shifted[k] += step
        up, _ = fn(shifted.reshape(point.shape))
        shifted[k] -= 2.0 * step
        down, _ = fn(shifted.reshape(point.shape))
        if not (np.isfinite(up) and np.isfinite(down)):
            raise ValueError("non-finite evaluation")
        numeric = (up - down) / (2.0 * step)
        analytic = grad.ravel()[k]
        err = abs(analytic - numeric) / max(1.0, abs(analytic))
        worst = max(worst, err)
    return worst
