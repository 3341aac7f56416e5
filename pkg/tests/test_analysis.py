import math

import numpy as np
import pytest

from patchnr.analysis import (
    TinyInstance,
    density_sandwich_check,
    induced_patch_density,
    induced_patch_density_check,
    tail_decay_check,
)
from patchnr.flow import make_affine_flow
from patchnr.patchops import PatchGeometry


def _std_normal_2d(p):
    p = np.atleast_2d(p)
    return np.exp(-0.5 * np.sum(p * p, axis=1)) / (2.0 * math.pi)


def test_induced_density_standard_normal_marginals():
    # 1x3 standard-normal image, 1x2 windows: every window marginal is the
    # standard bivariate normal, so the induced density is exactly N(0, I2)
    inst = TinyInstance((1, 3), PatchGeometry(1, 3, 1, 2))
    pts = np.random.default_rng(0).standard_normal((50, 2))
    got = np.asarray(induced_patch_density(inst, pts))
    assert np.max(np.abs(got - _std_normal_2d(pts))) < 1e-6


def test_induced_density_shifted_mean_mixture():
    # mean (0, 1, 2): the two windows see means (0,1) and (1,2), so the
    # induced density is the half-half mixture of those two Gaussians
    inst = TinyInstance((1, 3), PatchGeometry(1, 3, 1, 2),
                        components=[(1.0, np.array([0.0, 1.0, 2.0]),
                                     np.ones(3))])
    pts = np.random.default_rng(1).standard_normal((50, 2)) + 1.0
    mix = 0.5 * _std_normal_2d(pts - np.array([0.0, 1.0])) \
        + 0.5 * _std_normal_2d(pts - np.array([1.0, 2.0]))
    got = np.asarray(induced_patch_density(inst, pts))
    assert np.max(np.abs(got - mix)) < 1e-6


def test_induced_density_matches_sampling():
    inst = TinyInstance((1, 3), PatchGeometry(1, 3, 1, 2))
    dev = induced_patch_density_check(inst, n_samples=1_000_000, seed=2)
    assert dev < 0.01


def test_induced_density_validation():
    with pytest.raises(ValueError):
        TinyInstance((3, 3), PatchGeometry(3, 3, 2, 2))  # 9 pixels > 6
    with pytest.raises(ValueError):
        TinyInstance((1, 3), PatchGeometry(1, 3, 1, 2),
                     components=[(0.5, np.zeros(3), np.ones(3))])
    inst = TinyInstance((1, 3), PatchGeometry(1, 3, 1, 2))
    with pytest.raises(ValueError):
        induced_patch_density(inst, np.zeros(3))
    with pytest.raises(ValueError):
        induced_patch_density_check(
            TinyInstance((2, 2), PatchGeometry(2, 2, 2, 2)), 100)


def test_sandwich_identity_flow_collapses_to_equality():
    flow, k, lip = make_affine_flow(np.ones(4), np.zeros(4))
    slack = density_sandwich_check(flow, k, lip, n_points=2000, seed=3)
    assert abs(slack) < 1e-10


def test_sandwich_uniform_scaling_tight():
    flow, k, lip = make_affine_flow(np.full(2, 2.0), np.zeros(2))
    assert (k, lip) == (2.0, 0.5)
    slack = density_sandwich_check(flow, k, lip, n_points=2000, seed=4)
    assert slack >= -1e-10
    assert abs(slack) < 1e-10  # (KL)^s = 1: both envelopes meet the density


def test_sandwich_random_diagonal_no_violations():
    rng = np.random.default_rng(5)
    scales = rng.uniform(0.5, 2.0, size=4)
    flow, k, lip = make_affine_flow(scales, rng.normal(size=4) * 0.2)
    slack = density_sandwich_check(flow, k, lip, n_points=10_000, seed=6)
    assert slack >= -1e-10
    assert slack > 0.0  # non-uniform scaling keeps both bounds strict


def test_tail_decay_identity_flow_closed_form_slope():
    flow, k, lip = make_affine_flow(np.ones(4), np.zeros(4))
    geom = PatchGeometry(2, 2, 2, 2)  # single window, d = s = 4
    res = tail_decay_check(flow, geom, rho=4.0,
                           radii=np.array([2.0, 3.0, 4.0, 6.0]),
                           k_lip=k, l_lip=lip, n_dirs=16,
                           n_box_samples=200_000, seed=7)
    # phi = exp(-rho/(2 s) r^2): slope on log-vs-r^2 axes is -rho/(2s) = -0.5
    assert res["slope"] < 0.0
    assert abs(res["slope"] - (-0.5)) / 0.5 < 0.05


def test_tail_decay_affine_slope_in_lipschitz_bracket():
    flow, k, lip = make_affine_flow(np.full(4, 2.0), np.ones(4))
    geom = PatchGeometry(2, 2, 2, 2)
    res = tail_decay_check(flow, geom, rho=4.0,
                           radii=np.array([60.0, 80.0, 110.0, 160.0]),
                           k_lip=k, l_lip=lip, n_dirs=16,
                           n_box_samples=10_000, seed=8)
    rho, s = 4.0, 4.0
    lo = -rho * lip ** 2 * 2 ** 2 / (2 * s)  # envelope bracket collapses
    hi = -rho / (2 * s * k ** 2)
    assert lo - 0.01 <= res["slope"] <= hi + 0.01
    assert abs(res["slope"] - (-0.125)) / 0.125 < 0.05


def test_tail_decay_box_integral_stabilizes():
    flow, k, lip = make_affine_flow(np.ones(4), np.full(4, 0.3))
    geom = PatchGeometry(2, 2, 2, 2)
    res = tail_decay_check(flow, geom, rho=4.0,
                           radii=np.array([2.0, 3.0, 4.0, 6.0]),
                           k_lip=k, l_lip=lip, n_dirs=16,
                           n_box_samples=500_000, seed=9)
    assert res["box_small"] > 0.0
    assert res["box_big"] >= res["box_small"]
    assert res["box_rel_change"] < 0.01


def test_tail_decay_requires_certificates_and_tiny_dim():
    flow, k, lip = make_affine_flow(np.ones(4), np.zeros(4))
    geom = PatchGeometry(2, 2, 2, 2)
    with pytest.raises(ValueError):
        tail_decay_check(flow, geom, rho=4.0, radii=np.array([2.0, 4.0]))
    big = PatchGeometry(8, 8, 2, 2)
    with pytest.raises(ValueError):
        tail_decay_check(flow, big, rho=4.0, radii=np.array([2.0, 4.0]),
                         k_lip=k, l_lip=lip)
