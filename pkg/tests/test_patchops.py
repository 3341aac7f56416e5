import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from patchnr.patchops import (
    PatchGeometry,
    condition_patch,
    condition_patches,
    extract_patch,
    extract_patches,
    insert_adjoint,
    sample_patch_indices,
)


def test_geometry_counts_and_corners():
    g = PatchGeometry(3, 3, 2, 2)
    assert g.n_patches == 4
    assert g.patch_dim == 4
    assert [g.corner(i) for i in range(4)] == [(0, 0), (0, 1), (1, 0), (1, 1)]


def test_geometry_rejects_oversized_patches():
    with pytest.raises(ValueError):
        PatchGeometry(3, 3, 4, 2)


def test_extract_patch_3x3_enumeration():
    img = np.arange(1.0, 10.0).reshape(3, 3)
    g = PatchGeometry(3, 3, 2, 2)
    assert np.array_equal(extract_patch(img, g, 0), [1, 2, 4, 5])
    assert np.array_equal(extract_patch(img, g, 3), [5, 6, 8, 9])


def test_constant_image_gives_constant_patches():
    g = PatchGeometry(5, 4, 3, 2)
    patches = extract_patches(np.full((5, 4), 2.5), g, np.arange(g.n_patches))
    assert np.all(patches == 2.5)


def test_extract_out_of_range_index():
    g = PatchGeometry(3, 3, 2, 2)
    with pytest.raises(IndexError):
        extract_patch(np.zeros((3, 3)), g, 4)
    with pytest.raises(IndexError):
        extract_patches(np.zeros((3, 3)), g, [0, -1])


def test_insert_adjoint_single_corner_patch():
    g = PatchGeometry(3, 3, 2, 2)
    out = insert_adjoint(np.ones(4), 0, g)
    expected = np.array([[1, 1, 0], [1, 1, 0], [0, 0, 0]], dtype=float)
    assert np.array_equal(out, expected)


def test_insert_adjoint_overlap_accumulates():
    g = PatchGeometry(3, 3, 2, 2)
    out = insert_adjoint(np.ones((2, 4)), [0, 1], g)
    assert out[0, 1] == 2.0 and out[1, 1] == 2.0
    assert out[0, 0] == 1.0 and out[0, 2] == 1.0


@settings(max_examples=30, deadline=None)
@given(
    d1=st.integers(2, 7), d2=st.integers(2, 7),
    s1=st.integers(1, 4), s2=st.integers(1, 4),
    seed=st.integers(0, 10_000),
)
def test_extract_insert_adjoint_identity(d1, d2, s1, s2, seed):
    s1, s2 = min(s1, d1), min(s2, d2)
    g = PatchGeometry(d1, d2, s1, s2)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((d1, d2))
    idx = rng.integers(0, g.n_patches, size=5)
    q = rng.standard_normal((5, g.patch_dim))
    lhs = float(np.sum(extract_patches(x, g, idx) * q))
    rhs = float(np.sum(x * insert_adjoint(q, idx, g)))
    assert abs(lhs - rhs) < 1e-10 * max(1.0, abs(lhs))


def test_every_pixel_covered():
    g = PatchGeometry(8, 8, 3, 3)
    cover = insert_adjoint(np.ones((g.n_patches, g.patch_dim)),
                           np.arange(g.n_patches), g)
    assert np.all(cover >= 1.0)


def test_sample_indices_reproducible_and_in_range():
    g = PatchGeometry(10, 10, 3, 3)
    a = sample_patch_indices(g, 1000, np.random.default_rng(5))
    b = sample_patch_indices(g, 1000, np.random.default_rng(5))
    assert np.array_equal(a, b)
    assert a.min() >= 0 and a.max() < g.n_patches


def test_sample_indices_single_patch_geometry():
    g = PatchGeometry(2, 2, 2, 2)
    idx = sample_patch_indices(g, 50, np.random.default_rng(0))
    assert np.all(idx == 0)


def test_sample_indices_uniform_within_multinomial_bounds():
    g = PatchGeometry(4, 4, 3, 3)  # 4 corners
    n = g.n_patches * 2500
    idx = sample_patch_indices(g, n, np.random.default_rng(7))
    counts = np.bincount(idx, minlength=g.n_patches)
    p = 1.0 / g.n_patches
    sigma = np.sqrt(n * p * (1 - p))
    assert np.all(np.abs(counts - n * p) < 3.5 * sigma)


def test_sample_indices_rejects_nonpositive():
    g = PatchGeometry(4, 4, 2, 2)
    with pytest.raises(ValueError):
        sample_patch_indices(g, 0, np.random.default_rng(0))


def test_condition_patch_matches_extract():
    g = PatchGeometry(5, 5, 2, 3)
    rng = np.random.default_rng(2)
    cond = rng.standard_normal((5, 5))
    for i in (0, 3, g.n_patches - 1):
        assert np.array_equal(condition_patch(cond, g, i), extract_patch(cond, g, i))
    idx = np.arange(g.n_patches)
    assert np.array_equal(condition_patches(cond, g, idx),
                          extract_patches(cond, g, idx))
