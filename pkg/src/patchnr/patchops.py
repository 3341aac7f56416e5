"""Patch extraction and its adjoint.

A dense stride-1 grid of s1 x s2 windows over a d1 x d2 image. Patch index
``i`` in ``range(n_patches)`` maps row-major to the window's top-left corner.
``insert_adjoint`` is the exact transpose of extraction (scatter-add), which
routes per-patch gradients back to the image.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "PatchGeometry",
    "extract_patch",
    "extract_patches",
    "insert_adjoint",
    "sample_patch_indices",
    "condition_patch",
    "condition_patches",
]


@dataclass(frozen=True)
class PatchGeometry:
    """Image extents (d1, d2) and patch extents (s1, s2)."""

    d1: int
    d2: int
    s1: int
    s2: int

    def __post_init__(self):
        if not (1 <= self.s1 <= self.d1 and 1 <= self.s2 <= self.d2):
            raise ValueError("patch extents must satisfy 1 <= s_i <= d_i")

    @property
    def patch_dim(self):
        return self.s1 * self.s2

    @property
    def n_patches(self):
        return (self.d1 - self.s1 + 1) * (self.d2 - self.s2 + 1)

    @property
    def grid_shape(self):
        return (self.d1 - self.s1 + 1, self.d2 - self.s2 + 1)

    def corner(self, i):
        """Top-left corner (row, col) of patch i."""
        rows, cols = self.grid_shape
        i = int(i)
        if not 0 <= i < rows * cols:
            raise IndexError(f"patch index {i} out of range [0, {rows * cols})")
        return divmod(i, cols)


def _check_image(image, geom):
    image = np.asarray(image)
    if image.shape != (geom.d1, geom.d2):
        raise ValueError(f"image shape {image.shape} does not match geometry "
                         f"({geom.d1}, {geom.d2})")
    return image


def extract_patch(image, geom, i):
    """Row-major vectorization of the window at corner(i)."""
    image = _check_image(image, geom)
    r, c = geom.corner(i)
    return image[r:r + geom.s1, c:c + geom.s2].reshape(-1).copy()


def extract_patches(image, geom, indices):
    """Batch form: (len(indices), s1*s2) array of vectorized windows."""
    image = _check_image(image, geom)
    indices = np.asarray(indices, dtype=np.int64)
    rows, cols = geom.grid_shape
    if indices.size and (indices.min() < 0 or indices.max() >= rows * cols):
        raise IndexError("patch index out of range")
    windows = np.lib.stride_tricks.sliding_window_view(image, (geom.s1, geom.s2))
    flat = windows.reshape(rows * cols, geom.patch_dim)
    return flat[indices].copy()


def insert_adjoint(patch_grads, indices, geom):
    """Scatter-add vectorized patch gradients into an image-shaped grid.

    Equals sum_i P_i^T g_i for the extraction operators P_i. Exact adjoint:
    <extract(x), g> == <x, insert_adjoint(g)>.
    """
    patch_grads = np.asarray(patch_grads)
    indices = np.asarray(indices, dtype=np.int64)
    if patch_grads.ndim == 1:
        patch_grads = patch_grads[None, :]
        indices = np.atleast_1d(indices)
    if patch_grads.shape != (indices.size, geom.patch_dim):
        raise ValueError("patch gradients and indices are not aligned")
    rows, cols = geom.grid_shape
    if indices.size and (indices.min() < 0 or indices.max() >= rows * cols):
        raise IndexError("patch index out of range")

    # flat-image offsets of each pixel of a patch anchored at (0, 0)
    rr, cc = np.meshgrid(np.arange(geom.s1), np.arange(geom.s2), indexing="ij")
    window = (rr * geom.d2 + cc).reshape(-1)
    corners = (indices // cols) * geom.d2 + (indices % cols)
    flat_idx = (corners[:, None] + window[None, :]).reshape(-1)
    out = np.bincount(flat_idx, weights=patch_grads.reshape(-1).astype(np.float64),
                      minlength=geom.d1 * geom.d2)
    return out.reshape(geom.d1, geom.d2).astype(patch_grads.dtype, copy=False)


def sample_patch_indices(geom, n, rng):
    """n indices drawn uniformly with replacement from the patch grid."""
    if n <= 0:
        raise ValueError("n must be positive")
    return rng.integers(0, geom.n_patches, size=n, dtype=np.int64)


def condition_patch(cond_image, geom, i):
    """Window extraction applied to the conditioning image.

    The conditioning image is a naive reconstruction living on the same grid
    as the unknown image, so condition windows share corners with the patch
    windows.
    """
    return extract_patch(cond_image, geom, i)


def condition_patches(cond_image, geom, indices):
    return extract_patches(cond_image, geom, indices)
