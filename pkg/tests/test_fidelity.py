import numpy as np
import pytest

from patchnr.fidelity import gaussian_fidelity, poisson_fidelity

from conftest import fd_grad


def test_gaussian_zero_at_match():
    y = np.random.default_rng(0).standard_normal((5, 5))
    val, grad = gaussian_fidelity(y.copy(), y)
    assert val == 0.0
    assert np.all(grad == 0.0)


def test_gaussian_uniform_offset_value():
    val, grad = gaussian_fidelity(np.full(100, 0.1), np.zeros(100))
    assert abs(val - 1.0) < 1e-12
    assert np.max(np.abs(grad - 0.2)) < 1e-12


def test_gaussian_sigma_scaling():
    fx = np.full(100, 0.1)
    y = np.zeros(100)
    val, grad = gaussian_fidelity(fx, y, sigma=0.5)
    # value/grad divided by 2 sigma^2
    assert abs(val - 2.0) < 1e-12
    assert np.max(np.abs(grad - 0.4)) < 1e-12


def test_gaussian_grad_matches_finite_differences():
    rng = np.random.default_rng(1)
    y = rng.standard_normal(30)
    fx = rng.standard_normal(30)
    _, grad = gaussian_fidelity(fx, y)
    num = fd_grad(lambda v: gaussian_fidelity(v, y)[0], fx)
    assert np.max(np.abs(grad - num)) < 1e-8


def test_gaussian_shape_mismatch():
    with pytest.raises(ValueError):
        gaussian_fidelity(np.zeros(3), np.zeros(4))


def test_poisson_stationary_at_match():
    rng = np.random.default_rng(2)
    y = rng.uniform(0.0, 3.0, size=(6, 7))
    _, grad = poisson_fidelity(y.copy(), y, 4096.0)
    assert np.max(np.abs(grad)) < 1e-9


def test_poisson_scalar_value_frozen():
    # direct evaluation of N0(e^{-t} - e^{-y}(-t + log N0)) at t = y = 0:
    # 4096 (1 - log 4096) = -29973.5702...
    val, _ = poisson_fidelity(np.zeros(1), np.zeros(1), 4096.0)
    assert abs(val - (-29973.57021888243)) < 1e-6
    assert abs(val - 4096.0 * (1.0 - np.log(4096.0))) < 1e-9


def test_poisson_grad_formula_and_finite_differences():
    rng = np.random.default_rng(3)
    y = rng.uniform(0.0, 2.0, size=25)
    fx = y + rng.normal(0.0, 0.2, size=25)
    _, grad = poisson_fidelity(fx, y, 4096.0)
    assert np.max(np.abs(grad - 4096.0 * (np.exp(-y) - np.exp(-fx)))) < 1e-9
    num = fd_grad(lambda v: poisson_fidelity(v, y, 4096.0)[0], fx, step=1e-7)
    assert np.max(np.abs(grad - num)) < 1e-6 * max(1.0, np.max(np.abs(grad)))


def test_poisson_overflow_names_location():
    fx = np.array([0.0, -800.0, 1.0])
    with pytest.raises(OverflowError, match="index"):
        poisson_fidelity(fx, np.zeros(3), 4096.0)


def test_poisson_rejects_bad_n0_and_shapes():
    with pytest.raises(ValueError):
        poisson_fidelity(np.zeros(3), np.zeros(3), 0.0)
    with pytest.raises(ValueError):
        poisson_fidelity(np.zeros(3), np.zeros(4), 4096.0)


def test_poisson_value_decreases_toward_match():
    # moving fx toward y from either side lowers the objective
    y = np.full(10, 1.0)
    far, _ = poisson_fidelity(np.full(10, 2.0), y, 4096.0)
    near, _ = poisson_fidelity(np.full(10, 1.2), y, 4096.0)
    at, _ = poisson_fidelity(y, y, 4096.0)
    assert far > near > at
    far_lo, _ = poisson_fidelity(np.full(10, 0.2), y, 4096.0)
    assert far_lo > at
