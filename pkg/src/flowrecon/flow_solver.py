"""Primal-dual TV-L1 optical flow inside a coarse-to-fine warping pyramid.

One call to :func:`solve_flow_pyramid` estimates the displacement field
between a single frame pair. Each pyramid level re-linearizes the warped
brightness-constancy term ``n_warps`` times around the current flow and
solves the resulting convex problem with an extrapolated primal-dual
scheme, stopping on the normalized primal-dual residual.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from numba import njit

from .interpolation import (
    bicubic_sample_grid,
    build_pyramid_sizes,
    gaussian_smooth,
    median_filter,
    resample_bicubic,
)
from .model import FlowField, SolveConfig, zero_flow
from .operators import GradientField, centered_gradient, gradient, gradient_transpose

_log = logging.getLogger(__name__)

# Cap raised from 10000: residuals on the acceptance instances sit at
# 1e-6..3e-6 after 10000 iterations and need the extra headroom to reach
# the 1e-6 stopping tolerance.
FLOW_ITER_CAP = 20000
_GUARD = 1e-9


@dataclass(frozen=True)
class WarpLinearization:
    """Brightness-constancy linearization around a known flow.

    utilde   second frame sampled at the shifted positions x + vtilde
    gx, gy   its spatial derivatives, sampled the same way
    ut       constant part -vtilde . grad(utilde) + utilde - u1
    valid    pixels whose bicubic stencil stayed inside the grid; the
             arrays are zero (and excluded from the data term) elsewhere
    """

    utilde: np.ndarray
    gx: np.ndarray
    gy: np.ndarray
    ut: np.ndarray
    valid: np.ndarray


@dataclass
class FlowDualState:
    """Dual variables of the flow subproblem plus the extrapolated primal."""

    y1: np.ndarray  # (2, H, W) dual of TV(v1)
    y2: np.ndarray  # (2, H, W) dual of TV(v2)
    y3: np.ndarray  # (H, W) dual of the data term, clamped to [-1, 1]
    vbar: FlowField


@dataclass(frozen=True)
class FlowStepSizes:
    """Diagonal-preconditioned step sizes of the flow scheme."""

    sigma1: float
    sigma2: float
    sigma3: np.ndarray
    tau1: np.ndarray
    tau2: np.ndarray


@dataclass(frozen=True)
class LevelInfo:
    iterations: int
    residual: float
    converged: bool


def zero_flow_dual(shape) -> FlowDualState:
    return FlowDualState(
        y1=np.zeros((2,) + tuple(shape)),
        y2=np.zeros((2,) + tuple(shape)),
        y3=np.zeros(shape),
        vbar=zero_flow(shape),
    )


def linearize(u1, u2, vtilde: FlowField) -> WarpLinearization:
    """Warp the second frame and its derivatives to build the linearized data term.

    The derivative images use central differences: a one-sided stencil
    shares the noise of the pixel it is anchored at with the constancy
    residual, which biases the estimated flow on noisy inputs.
    """
    u1 = np.asarray(u1, dtype=np.float64)
    u2 = np.asarray(u2, dtype=np.float64)
    if u1.shape != u2.shape or u1.shape != vtilde.shape:
        raise ValueError(
            f"shape mismatch: frames {u1.shape}/{u2.shape}, flow {vtilde.shape}"
        )
    height, width = u1.shape
    du = centered_gradient(u2)
    jj, ii = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
    xs = ii + vtilde.v1
    ys = jj + vtilde.v2
    utilde, valid = bicubic_sample_grid(u2, xs, ys)
    gx, _ = bicubic_sample_grid(du.gx, xs, ys)
    gy, _ = bicubic_sample_grid(du.gy, xs, ys)
    ut = np.where(valid, -(vtilde.v1 * gx + vtilde.v2 * gy) + utilde - u1, 0.0)
    return WarpLinearization(utilde=utilde, gx=gx, gy=gy, ut=ut, valid=valid)


def flow_step_sizes(lin: WarpLinearization) -> FlowStepSizes:
    ax = np.abs(lin.gx)
    ay = np.abs(lin.gy)
    return FlowStepSizes(
        sigma1=0.5,
        sigma2=0.5,
        sigma3=1.0 / (ax + ay + _GUARD),
        tau1=1.0 / (4.0 + ax + _GUARD),
        tau2=1.0 / (4.0 + ay + _GUARD),
    )


def _project_ball(y: np.ndarray, radius: float) -> np.ndarray:
    """Per-pixel projection of a 2-vector field onto the ball of given radius."""
    norm = np.sqrt(y[0] ** 2 + y[1] ** 2)
    return y / np.maximum(1.0, norm / radius)


@njit(cache=True)
def _pd_block(v1, v2, y1x, y1y, y2x, y2y, y3, vb1, vb2,
              gx, gy, ut, sigma3, tau1, tau2, weight, iters):  # pragma: no cover
    """Run ``iters`` primal-dual iterations in place on the flow state.

    Fused per-pixel form of the printed scheme: dual ascent with ball
    projection and clamp, primal descent through the gradient adjoint,
    overrelaxation vbar = 2 v_new - v_old.
    """
    height, width = v1.shape
    for _ in range(iters):
        for j in range(height):
            for i in range(width):
                gvx = vb1[j, i + 1] - vb1[j, i] if i < width - 1 else 0.0
                gvy = vb1[j + 1, i] - vb1[j, i] if j < height - 1 else 0.0
                a = y1x[j, i] + 0.5 * gvx
                b = y1y[j, i] + 0.5 * gvy
                s = math.sqrt(a * a + b * b) / weight
                if s > 1.0:
                    a /= s
                    b /= s
                y1x[j, i] = a
                y1y[j, i] = b

                gvx = vb2[j, i + 1] - vb2[j, i] if i < width - 1 else 0.0
                gvy = vb2[j + 1, i] - vb2[j, i] if j < height - 1 else 0.0
                a = y2x[j, i] + 0.5 * gvx
                b = y2y[j, i] + 0.5 * gvy
                s = math.sqrt(a * a + b * b) / weight
                if s > 1.0:
                    a /= s
                    b /= s
                y2x[j, i] = a
                y2y[j, i] = b

                z = y3[j, i] + sigma3[j, i] * (
                    gx[j, i] * vb1[j, i] + gy[j, i] * vb2[j, i] + ut[j, i]
                )
                if z > 1.0:
                    z = 1.0
                elif z < -1.0:
                    z = -1.0
                y3[j, i] = z

        for j in range(height):
            for i in range(width):
                if width > 1:
                    if i == 0:
                        tx = -y1x[j, 0]
                    elif i < width - 1:
                        tx = y1x[j, i - 1] - y1x[j, i]
                    else:
                        tx = y1x[j, width - 2]
                else:
                    tx = 0.0
                if height > 1:
                    if j == 0:
                        ty = -y1y[0, i]
                    elif j < height - 1:
                        ty = y1y[j - 1, i] - y1y[j, i]
                    else:
                        ty = y1y[height - 2, i]
                else:
                    ty = 0.0
                nv = v1[j, i] - tau1[j, i] * (tx + ty + gx[j, i] * y3[j, i])
                vb1[j, i] = 2.0 * nv - v1[j, i]
                v1[j, i] = nv

                if width > 1:
                    if i == 0:
                        tx = -y2x[j, 0]
                    elif i < width - 1:
                        tx = y2x[j, i - 1] - y2x[j, i]
                    else:
                        tx = y2x[j, width - 2]
                else:
                    tx = 0.0
                if height > 1:
                    if j == 0:
                        ty = -y2y[0, i]
                    elif j < height - 1:
                        ty = y2y[j - 1, i] - y2y[j, i]
                    else:
                        ty = y2y[height - 2, i]
                else:
                    ty = 0.0
                nv = v2[j, i] - tau2[j, i] * (tx + ty + gy[j, i] * y3[j, i])
                vb2[j, i] = 2.0 * nv - v2[j, i]
                v2[j, i] = nv


def flow_energy(lin: WarpLinearization, flow: FlowField, weight: float) -> float:
    """Linearized flow energy: |grad(utilde) . v + ut|_1 + weight * TV(v)."""
    data = np.abs(lin.gx * flow.v1 + lin.gy * flow.v2 + lin.ut)[lin.valid].sum()
    g1 = gradient(flow.v1)
    g2 = gradient(flow.v2)
    tv = np.sqrt(g1.gx ** 2 + g1.gy ** 2).sum() + np.sqrt(g2.gx ** 2 + g2.gy ** 2).sum()
    return float(data + weight * tv)


def flow_residual(
    prev_flow: FlowField,
    prev_dual: FlowDualState,
    curr_flow: FlowField,
    curr_dual: FlowDualState,
    lin: WarpLinearization,
    steps: FlowStepSizes,
) -> float:
    """Primal-dual residual of one flow iteration, normalized per unknown.

    Each of the five terms is the mean absolute value over the entries it
    sums, so the stopping tolerance is resolution independent. At a fixed
    point (identical consecutive iterates) the residual is exactly zero.
    """
    dv1 = prev_flow.v1 - curr_flow.v1
    dv2 = prev_flow.v2 - curr_flow.v2
    dy1 = prev_dual.y1 - curr_dual.y1
    dy2 = prev_dual.y2 - curr_dual.y2
    dy3 = prev_dual.y3 - curr_dual.y3

    p1 = np.abs(dv1 / steps.tau1 + gradient_transpose(GradientField(dy1[0], dy1[1])) + lin.gx * dy3)
    p2 = np.abs(dv2 / steps.tau2 + gradient_transpose(GradientField(dy2[0], dy2[1])) + lin.gy * dy3)
    g1 = gradient(dv1)
    g2 = gradient(dv2)
    d1 = np.abs(dy1 / steps.sigma1 - np.stack(g1))
    d2 = np.abs(dy2 / steps.sigma2 - np.stack(g2))
    d3 = np.abs(dy3 / steps.sigma3 - (lin.gx * dv1 + lin.gy * dv2))
    return float(p1.mean() + p2.mean() + d1.mean() + d2.mean() + d3.mean())


def solve_flow_level(
    lin: WarpLinearization,
    flow: FlowField,
    dual: FlowDualState,
    weight: float,
    eps: float,
    n_res: int,
    iter_cap: int = FLOW_ITER_CAP,
    callback: Optional[Callable[[int, float, float], None]] = None,
) -> tuple[FlowField, FlowDualState, LevelInfo]:
    """Run the primal-dual scheme for one linearization until the residual drops below eps.

    The iterate is the full flow field (the linearization constant ut
    already absorbs the -vtilde part), initialized from ``flow`` with the
    duals continued from ``dual``. The data-term dual is frozen at zero on
    out-of-domain warp pixels.
    """
    if weight <= 0:
        raise ValueError("TV weight must be positive")
    steps = flow_step_sizes(lin)
    # the kernel mutates the state in place, so start from fresh copies
    v1 = flow.v1.copy()
    v2 = flow.v2.copy()
    y1 = dual.y1.copy()
    y2 = dual.y2.copy()
    y3 = np.where(lin.valid, dual.y3, 0.0)
    vb1 = dual.vbar.v1.copy()
    vb2 = dual.vbar.v2.copy()
    gx = np.ascontiguousarray(lin.gx)
    gy = np.ascontiguousarray(lin.gy)
    ut = np.ascontiguousarray(lin.ut)

    def run(n_iters):
        _pd_block(v1, v2, y1[0], y1[1], y2[0], y2[1], y3, vb1, vb2,
                  gx, gy, ut, steps.sigma3, steps.tau1, steps.tau2, weight, n_iters)

    residual = np.inf
    converged = False
    it = 0
    while it < iter_cap:
        block = min(n_res, iter_cap - it)
        if block > 1:
            run(block - 1)
            it += block - 1
        snap_flow = FlowField(v1.copy(), v2.copy())
        snap_dual = FlowDualState(y1.copy(), y2.copy(), y3.copy(), vbar=snap_flow)
        run(1)
        it += 1

        if not (np.isfinite(v1).all() and np.isfinite(v2).all()):
            raise RuntimeError(f"flow iterate became non-finite at iteration {it}")
        curr_flow = FlowField(v1.copy(), v2.copy())
        curr_dual = FlowDualState(y1, y2, y3, vbar=curr_flow)
        residual = flow_residual(snap_flow, snap_dual, curr_flow, curr_dual, lin, steps)
        if callback is not None:
            callback(it, residual, flow_energy(lin, curr_flow, weight))
        if residual <= eps:
            converged = True
            break

    if not converged:
        _log.warning("flow level hit the %d-iteration cap (residual %.3e)", iter_cap, residual)
    out_flow = FlowField(v1, v2)
    out_dual = FlowDualState(y1, y2, y3, vbar=FlowField(v1.copy(), v2.copy()))
    return out_flow, out_dual, LevelInfo(iterations=it, residual=float(residual), converged=converged)


def _upscale_state(
    flow: FlowField, dual: FlowDualState, new_shape, scale: float, weight: float
) -> tuple[FlowField, FlowDualState]:
    """Bicubic upscaling of flow and duals: flow values scale by 1/eta, duals do not."""
    height, width = new_shape

    def up(a):
        return resample_bicubic(a, width, height)

    v1 = up(flow.v1) * scale
    v2 = up(flow.v2) * scale
    y1 = np.stack([up(dual.y1[0]), up(dual.y1[1])])
    y2 = np.stack([up(dual.y2[0]), up(dual.y2[1])])
    y3 = np.clip(up(dual.y3), -1.0, 1.0)
    # restore the structural zeros of the gradient duals, then re-project
    for y in (y1, y2):
        y[0][:, -1] = 0.0
        y[1][-1, :] = 0.0
    y1 = _project_ball(y1, weight)
    y2 = _project_ball(y2, weight)
    new_flow = FlowField(v1, v2)
    return new_flow, FlowDualState(y1, y2, y3, vbar=FlowField(v1.copy(), v2.copy()))


def solve_flow_pyramid(
    u1,
    u2,
    cfg: SolveConfig,
    callback: Optional[Callable[[int, float, float], None]] = None,
    level_callback: Optional[Callable[[int, int, LevelInfo], None]] = None,
) -> FlowField:
    """Estimate the flow from u1 to u2 with the coarse-to-fine warping scheme.

    In time-continuous mode the pyramid and warping steps are skipped and a
    single classical linearization around zero flow is solved at full
    resolution.

    callback, when given, receives (iteration, residual, energy) at every
    residual check of the inner solver; level_callback receives
    (level, warp, LevelInfo) after each warp cycle.
    """
    u1 = np.asarray(u1, dtype=np.float64)
    u2 = np.asarray(u2, dtype=np.float64)
    if u1.shape != u2.shape or u1.ndim != 2:
        raise ValueError(f"frames must share a 2D shape, got {u1.shape} and {u2.shape}")
    height, width = u1.shape
    weight = cfg.flow_tv_weight()

    if cfg.time_continuous:
        lin = linearize(u1, u2, zero_flow(u1.shape))
        flow, _, info = solve_flow_level(
            lin, zero_flow(u1.shape), zero_flow_dual(u1.shape),
            weight, cfg.eps_v, cfg.n_res, callback=callback,
        )
        if level_callback is not None:
            level_callback(0, 0, info)
        return flow

    sizes = build_pyramid_sizes(width, height, cfg.eta, cfg.min_scale_dim)
    sigma_d = cfg.pyramid_sigma()
    pyr1 = [u1]
    pyr2 = [u2]
    for w_s, h_s in sizes[1:]:
        pyr1.append(resample_bicubic(gaussian_smooth(pyr1[-1], sigma_d), w_s, h_s))
        pyr2.append(resample_bicubic(gaussian_smooth(pyr2[-1], sigma_d), w_s, h_s))

    coarsest = len(sizes) - 1
    shape_c = (sizes[coarsest][1], sizes[coarsest][0])
    flow = zero_flow(shape_c)
    dual = zero_flow_dual(shape_c)

    for level in range(coarsest, -1, -1):
        shape_l = (sizes[level][1], sizes[level][0])
        if level != coarsest:
            flow, dual = _upscale_state(flow, dual, shape_l, 1.0 / cfg.eta, weight)
        for w in range(cfg.n_warps):
            lin = linearize(pyr1[level], pyr2[level], flow)
            flow, dual, info = solve_flow_level(
                lin, flow, dual, weight, cfg.eps_v, cfg.n_res, callback=callback
            )
            flow = FlowField(
                median_filter(flow.v1, cfg.size_med), median_filter(flow.v2, cfg.size_med)
            )
            dual.vbar = FlowField(flow.v1.copy(), flow.v2.copy())
            if level_callback is not None:
                level_callback(level, w, info)
    return flow
