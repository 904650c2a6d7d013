"""Primal-dual solver for the space-time image reconstruction subproblem.

Solves 1/2 ||A u - f||^2 + alpha ||grad u||_{1,2} + gamma |C u|_1 over the
whole stacked sequence, where C couples consecutive frames through the
sparse warping operator (or its small-displacement substitute). The same
core scheme also runs the two initializations: per-frame ROF (gamma = 0)
and the variant with a quadratic temporal-smoothness term.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .model import FlowField, _forward_op_list
from .operators import (
    GradientField,
    SparseOperator,
    col_abs_sums,
    gradient,
    gradient_transpose,
    row_abs_sums,
)
from .warp import build_block_time_continuous, build_block_warp

_log = logging.getLogger(__name__)

IMAGE_ITER_CAP = 20000
_GUARD = 1e-9


@dataclass
class ImageDualState:
    """Dual variables of the image subproblem plus the extrapolated primal."""

    y1: list  # per frame, dual of the data term, length = rows(A_i)
    y2: np.ndarray  # (n, 2, H, W) gradient dual, per-pixel norm <= alpha
    y3: Optional[np.ndarray]  # coupling dual, |y3| <= gamma (None without coupling)
    ubar: np.ndarray


@dataclass(frozen=True)
class ImageStepSizes:
    sigma1: list  # per frame
    sigma2: float
    sigma3: Optional[np.ndarray]
    tau: np.ndarray  # (n, H, W)


@dataclass(frozen=True)
class SolveInfo:
    iterations: int
    residual: float
    converged: bool


def temporal_difference_operator(n_frames: int, n_pixels: int) -> SparseOperator:
    """Forward temporal differences on a stacked sequence: row i is u_{i+1} - u_i."""
    if n_frames < 2:
        raise ValueError("need at least two frames")
    d = sp.diags([-np.ones(n_frames - 1), np.ones(n_frames - 1)], [0, 1],
                 shape=(n_frames - 1, n_frames))
    return SparseOperator(sp.kron(d, sp.identity(n_pixels), format="csr"))


def image_step_sizes(a_ops: Sequence[SparseOperator], coupling: Optional[SparseOperator],
                     shape, n_frames: int) -> ImageStepSizes:
    """Diagonal-preconditioned steps: duals from row sums, primal from column sums.

    Zero rows of the coupling operator get sigma3 = 0; their dual stays
    inert at zero. The gradient contribution to tau is the stencil bound 4.
    """
    height, width = shape
    sigma1 = [1.0 / (row_abs_sums(a) + _GUARD) for a in a_ops]
    col_a = np.stack([col_abs_sums(a).reshape(height, width) for a in a_ops])
    if coupling is not None:
        rows_c = row_abs_sums(coupling)
        sigma3 = np.where(rows_c > 0, 1.0 / np.maximum(rows_c, _GUARD), 0.0)
        col_c = col_abs_sums(coupling).reshape(n_frames, height, width)
    else:
        sigma3 = None
        col_c = 0.0
    tau = 1.0 / (col_a + 4.0 + col_c + _GUARD)
    return ImageStepSizes(sigma1=sigma1, sigma2=0.5, sigma3=sigma3, tau=tau)


def image_residual(
    prev_u: np.ndarray,
    prev_dual: ImageDualState,
    curr_u: np.ndarray,
    curr_dual: ImageDualState,
    a_ops: Sequence[SparseOperator],
    coupling: Optional[SparseOperator],
    steps: ImageStepSizes,
) -> float:
    """Primal-dual residual of one image iteration, normalized per unknown.

    Terms follow the printed scheme: one primal term plus one dual term per
    operator block. Coupling rows with sigma3 = 0 contribute zero by
    construction. Exactly zero at a fixed point.
    """
    n = prev_u.shape[0]
    du = prev_u - curr_u
    dy2 = prev_dual.y2 - curr_dual.y2

    adj = np.zeros_like(du)
    d1_terms = []
    for i in range(n):
        dy1 = prev_dual.y1[i] - curr_dual.y1[i]
        adj[i] += a_ops[i].apply_transpose(dy1).reshape(du.shape[1:])
        d1_terms.append(np.abs(dy1 / steps.sigma1[i] - a_ops[i].apply(du[i])))
    adj += gradient_transpose(GradientField(dy2[:, 0], dy2[:, 1]))
    if coupling is not None:
        dy3 = prev_dual.y3 - curr_dual.y3
        adj += coupling.apply_transpose(dy3).reshape(du.shape)
        # rows with sigma3 = 0 hold an inert dual; 0/0 reads as 0 there
        sigma3_safe = np.where(steps.sigma3 > 0, steps.sigma3, 1.0)
        d3 = np.abs(np.where(steps.sigma3 > 0, dy3 / sigma3_safe, 0.0) - coupling.apply(du.ravel()))
    else:
        d3 = None

    p = np.abs(du / steps.tau - adj).mean()
    d1 = np.concatenate(d1_terms).mean() if d1_terms else 0.0
    g = gradient(du)
    d2 = np.abs(dy2 / steps.sigma2 - np.stack([g.gx, g.gy], axis=1)).mean()
    total = p + d1 + d2
    if d3 is not None:
        total += d3.mean()
    return float(total)


def _core_energy(u, f_list, a_ops, alpha, coupling, coupling_kind, coupling_weight) -> float:
    """Objective value of the subproblem being solved, for iteration logs."""
    total = 0.0
    for i, a in enumerate(a_ops):
        r = a.apply(u[i]) - f_list[i]
        total += 0.5 * float(r @ r)
    g = gradient(u)
    total += alpha * float(np.sqrt(g.gx ** 2 + g.gy ** 2).sum())
    if coupling is not None:
        z = coupling.apply(u.ravel())
        if coupling_kind == "l1":
            total += coupling_weight * float(np.abs(z).sum())
        else:
            total += 0.5 * coupling_weight * float(z @ z)
    return total


def _solve_core(
    f_list: list,
    a_ops: Sequence[SparseOperator],
    shape,
    alpha: float,
    coupling: Optional[SparseOperator],
    coupling_kind: str,
    coupling_weight: float,
    eps: float,
    n_res: int,
    iter_cap: int,
    init_u,
    callback,
) -> tuple[np.ndarray, SolveInfo]:
    height, width = shape
    n = len(f_list)
    steps = image_step_sizes(a_ops, coupling, shape, n)

    if init_u is None:
        u = np.zeros((n, height, width))
    else:
        u = np.asarray(init_u, dtype=np.float64).reshape(n, height, width).copy()
    ubar = u.copy()
    y1 = [np.zeros(a.rows) for a in a_ops]
    y2 = np.zeros((n, 2, height, width))
    y3 = np.zeros(coupling.rows) if coupling is not None else None

    residual = np.inf
    converged = False
    it = 0
    while it < iter_cap:
        check = (it + 1) % n_res == 0 or (it + 1) == iter_cap
        if check:
            snap_u = u.copy()
            snap_dual = ImageDualState(
                y1=[y.copy() for y in y1], y2=y2.copy(),
                y3=None if y3 is None else y3.copy(), ubar=ubar,
            )

        adj = np.zeros_like(u)
        for i in range(n):
            au = a_ops[i].apply(ubar[i])
            y1[i] = (y1[i] + steps.sigma1[i] * (au - f_list[i])) / (1.0 + steps.sigma1[i])
            adj[i] = a_ops[i].apply_transpose(y1[i]).reshape(height, width)

        g = gradient(ubar)
        y2 = y2 + steps.sigma2 * np.stack([g.gx, g.gy], axis=1)
        norm = np.sqrt(y2[:, 0] ** 2 + y2[:, 1] ** 2)
        y2 = y2 / np.maximum(1.0, norm / alpha)[:, None]
        adj += gradient_transpose(GradientField(y2[:, 0], y2[:, 1]))

        if coupling is not None:
            z = y3 + steps.sigma3 * coupling.apply(ubar.ravel())
            if coupling_kind == "l1":
                y3 = np.clip(z, -coupling_weight, coupling_weight)
            else:
                y3 = z / (1.0 + steps.sigma3 / coupling_weight)
            adj += coupling.apply_transpose(y3).reshape(u.shape)

        u_new = u - steps.tau * adj
        ubar = 2.0 * u_new - u
        u = u_new
        it += 1

        if check:
            if not np.isfinite(u).all():
                raise RuntimeError(f"image iterate became non-finite at iteration {it}")
            curr_dual = ImageDualState(y1=y1, y2=y2, y3=y3, ubar=ubar)
            residual = image_residual(snap_u, snap_dual, u, curr_dual, a_ops, coupling, steps)
            if callback is not None:
                callback(it, residual,
                         _core_energy(u, f_list, a_ops, alpha, coupling,
                                      coupling_kind, coupling_weight))
            if residual <= eps:
                converged = True
                break

    if not converged:
        _log.warning("image solve hit the %d-iteration cap (residual %.3e)", iter_cap, residual)
    return u, SolveInfo(iterations=it, residual=float(residual), converged=converged)


def _prepare_data(f, a_ops, shape):
    f = np.asarray(f, dtype=np.float64)
    if f.ndim < 2:
        raise ValueError("data must hold one vector or frame per image")
    n = f.shape[0]
    f_list = [f[i].ravel() for i in range(n)]
    for i, (fi, a) in enumerate(zip(f_list, a_ops)):
        if fi.size != a.rows:
            raise ValueError(f"frame {i}: data length {fi.size} does not match operator rows {a.rows}")
        if a.cols != shape[0] * shape[1]:
            raise ValueError(f"operator columns {a.cols} do not match image shape {shape}")
    return f_list


def _resolve_shape(f, forward_op, shape):
    if shape is not None:
        return tuple(shape)
    f = np.asarray(f)
    if f.ndim == 3:
        n_pixels = f.shape[1] * f.shape[2]
        ops = forward_op if isinstance(forward_op, SparseOperator) else None
        if ops is None or ops.cols == n_pixels:
            return f.shape[1:]
    raise ValueError("cannot infer the reconstruction shape; pass shape=(H, W)")


def solve_images(
    f,
    flows: Sequence[FlowField],
    forward_op,
    alpha: float,
    gamma: float,
    eps: float = 1e-6,
    n_res: int = 100,
    *,
    shape=None,
    coupling: Optional[SparseOperator] = None,
    time_continuous: bool = False,
    init_u=None,
    iter_cap: int = IMAGE_ITER_CAP,
    callback: Optional[Callable[[int, float, float], None]] = None,
) -> tuple[np.ndarray, SolveInfo]:
    """Solve the coupled reconstruction problem for the whole sequence.

    With gamma = 0 the flow term is dropped and the frames decouple into
    independent ROF problems. Otherwise the coupling operator is built from
    the flows (or taken from ``coupling`` when the caller already holds it).
    ``forward_op`` is one SparseOperator shared by all frames or a list with
    one per frame; ``f`` lives in the operator's data space.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    shape = _resolve_shape(f, forward_op, shape)
    f = np.asarray(f, dtype=np.float64)
    n = f.shape[0]
    a_ops = _forward_op_list(forward_op, n)
    if a_ops is None:
        raise ValueError("forward_op is required (use build_forward_operator('identity', ...))")
    f_list = _prepare_data(f, a_ops, shape)

    if gamma > 0:
        if coupling is None:
            flows = list(flows)
            if len(flows) != n - 1:
                raise ValueError(f"expected {n - 1} flow fields, got {len(flows)}")
            if time_continuous:
                coupling = build_block_time_continuous(flows, shape)
            else:
                coupling = build_block_warp(flows, shape)
        return _solve_core(f_list, a_ops, shape, alpha, coupling, "l1", gamma,
                           eps, n_res, iter_cap, init_u, callback)
    return _solve_core(f_list, a_ops, shape, alpha, None, "l1", 0.0,
                       eps, n_res, iter_cap, init_u, callback)


def init_rof(
    f,
    forward_op,
    alpha: float,
    eps: float = 1e-6,
    n_res: int = 100,
    *,
    shape=None,
    init_u=None,
    iter_cap: int = IMAGE_ITER_CAP,
    callback=None,
) -> tuple[np.ndarray, SolveInfo]:
    """Frame-wise ROF initialization: the coupled problem with gamma = 0."""
    return solve_images(f, [], forward_op, alpha, 0.0, eps, n_res,
                        shape=shape, init_u=init_u, iter_cap=iter_cap, callback=callback)


def init_smooth_time(
    f,
    forward_op,
    alpha: float,
    epsilon_t: float,
    eps: float = 1e-6,
    n_res: int = 100,
    *,
    shape=None,
    init_u=None,
    iter_cap: int = IMAGE_ITER_CAP,
    callback=None,
) -> tuple[np.ndarray, SolveInfo]:
    """Initialization with a quadratic penalty epsilon_t/2 ||u_t||^2 on temporal differences."""
    if epsilon_t <= 0:
        raise ValueError("epsilon_t must be positive")
    shape = _resolve_shape(f, forward_op, shape)
    f = np.asarray(f, dtype=np.float64)
    n = f.shape[0]
    a_ops = _forward_op_list(forward_op, n)
    f_list = _prepare_data(f, a_ops, shape)
    coupling = temporal_difference_operator(n, shape[0] * shape[1])
    return _solve_core(f_list, a_ops, shape, alpha, coupling, "quadratic", epsilon_t,
                       eps, n_res, iter_cap, init_u, callback)
