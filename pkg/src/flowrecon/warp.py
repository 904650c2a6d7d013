"""Sparse bicubic warping operators and the small-displacement coupling operator.

A warp matrix row holds the 16 bicubic weights that evaluate a frame at its
flow-shifted position, so ``W @ u.ravel()`` approximates ``u(x + v(x))``.
Rows whose interpolation stencil leaves the grid are zero.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

import numpy as np
import scipy.sparse as sp

from .interpolation import cubic_weights
from .operators import SparseOperator, dx_matrix, dy_matrix

if TYPE_CHECKING:
    from .model import FlowField

# weights below this magnitude are numerical noise and dropped from the structure
_WEIGHT_FLOOR = 1e-14


@dataclass(frozen=True)
class WarpMatrix:
    """N x N bicubic warp built from one flow field.

    ``valid`` marks the rows that carry interpolation weights; the others
    were zeroed because their 16-point stencil left the grid.
    """

    op: SparseOperator
    flow: "FlowField"
    valid: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.valid.shape


def build_warp_matrix(flow: "FlowField", shape) -> WarpMatrix:
    """Assemble the sparse bicubic warping matrix for one flow field."""
    height, width = shape
    if flow.shape != (height, width):
        raise ValueError(f"flow shape {flow.shape} does not match image shape {(height, width)}")
    n = width * height

    jj, ii = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
    xs = ii + flow.v1
    ys = jj + flow.v2
    ix = np.floor(xs).astype(np.int64)
    iy = np.floor(ys).astype(np.int64)
    valid = (ix >= 1) & (iy >= 1) & (ix <= width - 3) & (iy <= height - 3)

    ixs = np.where(valid, ix, 1).ravel()
    iys = np.where(valid, iy, 1).ravel()
    wx = np.stack(cubic_weights((xs - ix).ravel()))
    wy = np.stack(cubic_weights((ys - iy).ravel()))

    # 16 weights per pixel: outer product of the two 1D weight vectors
    weights = wx[:, None, :] * wy[None, :, :]
    cols = (iys[None, None, :] - 1 + np.arange(4)[None, :, None]) * width + (
        ixs[None, None, :] - 1 + np.arange(4)[:, None, None]
    )
    rows = np.broadcast_to(np.arange(n)[None, None, :], weights.shape)

    keep = np.broadcast_to(valid.ravel()[None, None, :], weights.shape) & (
        np.abs(weights) > _WEIGHT_FLOOR
    )
    matrix = sp.csr_matrix(
        (weights[keep], (rows[keep], cols[keep])), shape=(n, n)
    )
    return WarpMatrix(SparseOperator(matrix), flow, valid)


def build_block_warp(flows: Sequence["FlowField"], shape) -> SparseOperator:
    """Block-bidiagonal coupling operator: row i holds [-I at frame i, W at frame i+1].

    Where a warp row was zeroed at the boundary, the paired -I entry is
    zeroed as well, so the flow term never penalizes raw intensities there.
    """
    flows = list(flows)
    if not flows:
        raise ValueError("need at least one flow field")
    n_frames = len(flows) + 1
    blocks = [[None] * n_frames for _ in range(n_frames - 1)]
    for b, flow in enumerate(flows):
        wm = build_warp_matrix(flow, shape)
        blocks[b][b] = sp.diags(np.where(wm.valid.ravel(), -1.0, 0.0), format="csr")
        blocks[b][b + 1] = wm.op.matrix
    return SparseOperator(sp.bmat(blocks, format="csr"))


def build_time_continuous_k(flow: "FlowField", shape) -> SparseOperator:
    """N x 2N small-displacement coupling acting on a stacked frame pair.

    K (u1, u2)^T = -u1 + v1 * dx(u2) + v2 * dy(u2) + u2 with the
    forward-difference stencils.
    """
    height, width = shape
    if flow.shape != (height, width):
        raise ValueError(f"flow shape {flow.shape} does not match image shape {(height, width)}")
    n = width * height
    right = (
        sp.diags(flow.v1.ravel()) @ dx_matrix(width, height)
        + sp.diags(flow.v2.ravel()) @ dy_matrix(width, height)
        + sp.identity(n)
    )
    return SparseOperator(sp.hstack([-sp.identity(n, format="csr"), right.tocsr()]))


def build_block_time_continuous(flows: Sequence["FlowField"], shape) -> SparseOperator:
    """Block operator substituting K for every [-I, W] pair of the warping coupling."""
    flows = list(flows)
    if not flows:
        raise ValueError("need at least one flow field")
    height, width = shape
    n = width * height
    gx = dx_matrix(width, height)
    gy = dy_matrix(width, height)
    eye = sp.identity(n, format="csr")
    n_frames = len(flows) + 1
    blocks = [[None] * n_frames for _ in range(n_frames - 1)]
    for b, flow in enumerate(flows):
        if flow.shape != (height, width):
            raise ValueError(f"flow {b} shape {flow.shape} does not match image shape {(height, width)}")
        blocks[b][b] = -eye
        blocks[b][b + 1] = (sp.diags(flow.v1.ravel()) @ gx + sp.diags(flow.v2.ravel()) @ gy + eye).tocsr()
    return SparseOperator(sp.bmat(blocks, format="csr"))
