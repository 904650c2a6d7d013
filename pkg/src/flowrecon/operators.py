"""Finite-difference operators, forward models, and sparse-operator plumbing.

Grid convention: an image is a 2D array indexed ``u[j, i]`` with ``i`` the
horizontal axis (0..n_x, n_x = width-1) and ``j`` the vertical axis
(0..n_y, n_y = height-1). Flattened vectors are row-major, so pixel (i, j)
sits at flat index ``j * width + i``.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
import scipy.sparse as sp

from .interpolation import gaussian_kernel1d


class GradientField(NamedTuple):
    """Forward-difference derivatives; gx has a zero last column, gy a zero last row."""

    gx: np.ndarray
    gy: np.ndarray


class SparseOperator:
    """Row-compressed sparse matrix with an exact transpose application.

    The transpose is materialized once at construction, so apply_transpose
    is the exact algebraic adjoint of apply. Instances are immutable and
    safe to share between concurrent solves.
    """

    def __init__(self, matrix):
        m = sp.csr_matrix(matrix, dtype=np.float64)
        m.sum_duplicates()
        m.eliminate_zeros()
        m.sort_indices()
        self._mat = m
        self._mat_t = m.transpose().tocsr()
        self._mat_t.sort_indices()

    @property
    def rows(self) -> int:
        return self._mat.shape[0]

    @property
    def cols(self) -> int:
        return self._mat.shape[1]

    @property
    def nnz(self) -> int:
        return self._mat.nnz

    @property
    def matrix(self) -> sp.csr_matrix:
        """Underlying CSR storage (row pointers, sorted column indices, values)."""
        return self._mat

    def apply(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64).ravel()
        if x.size != self.cols:
            raise ValueError(f"operator is {self.rows}x{self.cols}, got vector of length {x.size}")
        return self._mat @ x

    def apply_transpose(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=np.float64).ravel()
        if y.size != self.rows:
            raise ValueError(f"operator is {self.rows}x{self.cols}, got dual vector of length {y.size}")
        return self._mat_t @ y

    def to_dense(self) -> np.ndarray:
        return self._mat.toarray()

    def __repr__(self):
        return f"SparseOperator({self.rows}x{self.cols}, nnz={self.nnz})"


def row_abs_sums(op: SparseOperator) -> np.ndarray:
    """Per-row sum of absolute entries, used for diagonal dual step sizes."""
    return np.asarray(abs(op.matrix).sum(axis=1)).ravel()


def col_abs_sums(op: SparseOperator) -> np.ndarray:
    """Per-column sum of absolute entries, used for diagonal primal step sizes."""
    return np.asarray(abs(op.matrix).sum(axis=0)).ravel()


def gradient(u) -> GradientField:
    """Forward differences with Neumann boundary (zero difference past the last index).

    Works on any array shaped (..., H, W); derivatives are taken over the
    trailing two axes.
    """
    u = np.asarray(u, dtype=np.float64)
    gx = np.zeros_like(u)
    gy = np.zeros_like(u)
    gx[..., :, :-1] = u[..., :, 1:] - u[..., :, :-1]
    gy[..., :-1, :] = u[..., 1:, :] - u[..., :-1, :]
    return GradientField(gx, gy)


def divergence(field) -> np.ndarray:
    """Backward differences with Dirichlet boundary; the exact negated adjoint of gradient.

    Only entries y1[..., :, :-1] and y2[..., :-1, :] enter, mirroring the
    structurally-zero rows of the forward-difference stencil.
    """
    y1, y2 = field
    y1 = np.asarray(y1, dtype=np.float64)
    y2 = np.asarray(y2, dtype=np.float64)
    out = np.zeros_like(y1)
    out[..., :, :-1] += y1[..., :, :-1]
    out[..., :, 1:] -= y1[..., :, :-1]
    out[..., :-1, :] += y2[..., :-1, :]
    out[..., 1:, :] -= y2[..., :-1, :]
    return out


def gradient_transpose(field) -> np.ndarray:
    """Adjoint of gradient, i.e. minus the divergence."""
    return -divergence(field)


def centered_gradient(u) -> GradientField:
    """Central differences, zero on the outermost rows and columns.

    Used for the derivative images of the flow linearization: unlike the
    one-sided stencil, the central difference at pixel i carries no noise
    contribution from pixel i itself, so the linearized data term stays
    unbiased on noisy frames.
    """
    u = np.asarray(u, dtype=np.float64)
    gx = np.zeros_like(u)
    gy = np.zeros_like(u)
    gx[..., :, 1:-1] = 0.5 * (u[..., :, 2:] - u[..., :, :-2])
    gy[..., 1:-1, :] = 0.5 * (u[..., 2:, :] - u[..., :-2, :])
    return GradientField(gx, gy)


def dx_matrix(width: int, height: int) -> sp.csr_matrix:
    """N x N forward-difference matrix along the horizontal axis."""
    n = width * height
    flat = np.arange(n, dtype=np.int64)
    sel = flat[flat % width < width - 1]
    rows = np.repeat(sel, 2)
    cols = np.stack([sel, sel + 1], axis=1).ravel()
    data = np.tile([-1.0, 1.0], sel.size)
    return sp.csr_matrix((data, (rows, cols)), shape=(n, n))


def dy_matrix(width: int, height: int) -> sp.csr_matrix:
    """N x N forward-difference matrix along the vertical axis."""
    n = width * height
    flat = np.arange(n, dtype=np.int64)
    sel = flat[flat < n - width]
    rows = np.repeat(sel, 2)
    cols = np.stack([sel, sel + width], axis=1).ravel()
    data = np.tile([-1.0, 1.0], sel.size)
    return sp.csr_matrix((data, (rows, cols)), shape=(n, n))


def build_gradient_matrix(width: int, height: int) -> SparseOperator:
    """2N x N sparse matrix whose application equals gradient() on flattened images.

    Rows 0..N-1 hold the horizontal differences, rows N..2N-1 the vertical ones.
    """
    if width < 1 or height < 1:
        raise ValueError("dimensions must be at least 1")
    return SparseOperator(sp.vstack([dx_matrix(width, height), dy_matrix(width, height)]))


def _conv1d_matrix(n: int, kernel: np.ndarray) -> sp.csr_matrix:
    """1D convolution matrix with replicate (edge-clamped) boundary handling."""
    radius = (kernel.size - 1) // 2
    idx = np.arange(n, dtype=np.int64)
    rows = []
    cols = []
    data = []
    for t in range(-radius, radius + 1):
        rows.append(idx)
        cols.append(np.clip(idx + t, 0, n - 1))
        data.append(np.full(n, kernel[t + radius]))
    m = sp.csr_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )
    m.sum_duplicates()
    return m


def _decimation_matrix(n: int, step: int) -> sp.csr_matrix:
    idx = np.arange(0, n, step, dtype=np.int64)
    data = np.ones(idx.size)
    return sp.csr_matrix((data, (np.arange(idx.size), idx)), shape=(idx.size, n))


def build_forward_operator(kind: str, shape, *, mask=None, factor=None, sigma=None) -> SparseOperator:
    """Assemble the measurement operator A for one frame.

    kind:
        identity    pass-through (denoising)
        mask        keep only pixels where ``mask`` is True; rows for pixels
                    outside the mask are removed, not zeroed
        subsample   Gaussian presmooth (sigma defaults to factor/2) followed
                    by decimation with the given integer factor
        blur        Gaussian convolution with the given sigma, replicate boundary
    """
    height, width = shape
    n = width * height
    if kind == "identity":
        return SparseOperator(sp.identity(n, format="csr"))
    if kind == "mask":
        if mask is None:
            raise ValueError("mask operator requires a boolean bitmap")
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (height, width):
            raise ValueError(f"mask shape {mask.shape} does not match image shape {(height, width)}")
        keep = np.flatnonzero(mask.ravel())
        if keep.size == 0:
            raise ValueError("mask keeps no pixels")
        data = np.ones(keep.size)
        return SparseOperator(
            sp.csr_matrix((data, (np.arange(keep.size), keep)), shape=(keep.size, n))
        )
    if kind == "subsample":
        if factor is None or int(factor) != factor or factor < 1:
            raise ValueError(f"subsample factor must be a positive integer, got {factor!r}")
        factor = int(factor)
        if sigma is None:
            sigma = factor / 2.0
        if sigma < 0:
            raise ValueError("presmoothing sigma must be nonnegative")
        kx = _conv1d_matrix(width, gaussian_kernel1d(sigma))
        ky = _conv1d_matrix(height, gaussian_kernel1d(sigma))
        op_x = _decimation_matrix(width, factor) @ kx
        op_y = _decimation_matrix(height, factor) @ ky
        return SparseOperator(sp.kron(op_y, op_x, format="csr"))
    if kind == "blur":
        if sigma is None or sigma <= 0:
            raise ValueError(f"blur requires a positive sigma, got {sigma!r}")
        kx = _conv1d_matrix(width, gaussian_kernel1d(sigma))
        ky = _conv1d_matrix(height, gaussian_kernel1d(sigma))
        return SparseOperator(sp.kron(ky, kx, format="csr"))
    raise ValueError(f"unknown operator kind {kind!r}")
