"""Alternating outer loop: flow estimation and image reconstruction in turn.

Starting from a per-frame initialization, each outer iteration estimates
the flow between every consecutive frame pair of the current
reconstruction, rebuilds the coupling operator from those flows, and
re-solves the image subproblem warm-started from the previous iterate.
The loop stops when the mean-absolute change of all unknowns drops below
eps_main or after iter_main_max iterations.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .flow_solver import solve_flow_pyramid
from .image_solver import init_rof, init_smooth_time, solve_images
from .model import FlowField, SolveConfig, joint_energy, zero_flow
from .operators import SparseOperator, build_forward_operator
from .warp import build_block_time_continuous, build_block_warp

SCHEMA_VERSION = 1


@dataclass
class JointDiagnostics:
    """Per-run bookkeeping, JSON-serializable through to_dict()."""

    energies: list = field(default_factory=list)
    r_main: list = field(default_factory=list)
    init_iterations: int = 0
    flow_iterations: list = field(default_factory=list)
    image_iterations: list = field(default_factory=list)
    flow_residuals: list = field(default_factory=list)
    image_residuals: list = field(default_factory=list)
    timings: dict = field(default_factory=lambda: {"init": 0.0, "flow": [], "image": [], "total": 0.0})
    outer_iterations: int = 0
    converged: bool = False

    def to_dict(self) -> dict:
        return {
            "schemaVersion": SCHEMA_VERSION,
            "energies": [float(e) for e in self.energies],
            "rMain": [float(r) for r in self.r_main],
            "initIterations": int(self.init_iterations),
            "flowIterations": [[int(i) for i in row] for row in self.flow_iterations],
            "imageIterations": [int(i) for i in self.image_iterations],
            "flowResiduals": [[float(r) for r in row] for row in self.flow_residuals],
            "imageResiduals": [float(r) for r in self.image_residuals],
            "outerIterations": int(self.outer_iterations),
            "converged": bool(self.converged),
            "timings": {
                "init": float(self.timings["init"]),
                "flow": [float(t) for t in self.timings["flow"]],
                "image": [float(t) for t in self.timings["image"]],
                "total": float(self.timings["total"]),
            },
        }


def _default_forward_op(cfg: SolveConfig, f: np.ndarray, shape):
    if cfg.operator_kind == "identity":
        return build_forward_operator("identity", shape)
    if cfg.operator_kind == "blur":
        return build_forward_operator("blur", shape, sigma=cfg.blur_sigma)
    if cfg.operator_kind == "subsample":
        return build_forward_operator("subsample", shape, factor=cfg.subsample_factor)
    raise ValueError("mask operators carry a bitmap; pass forward_op explicitly")


def _resolve_recon_shape(cfg: SolveConfig, f: np.ndarray, forward_op, shape):
    if shape is not None:
        return tuple(shape)
    if forward_op is not None and f.ndim == 3 and forward_op.cols == f.shape[1] * f.shape[2]:
        return f.shape[1:]
    if f.ndim == 3 and cfg.operator_kind in ("identity", "blur"):
        return f.shape[1:]
    if f.ndim == 3 and cfg.operator_kind == "subsample":
        return (f.shape[1] * cfg.subsample_factor, f.shape[2] * cfg.subsample_factor)
    raise ValueError("cannot infer the reconstruction shape; pass shape=(H, W)")


def solve_joint(
    f,
    cfg: SolveConfig,
    *,
    forward_op: Optional[SparseOperator] = None,
    shape=None,
) -> tuple[np.ndarray, list[FlowField], JointDiagnostics]:
    """Run the alternating minimization on a measured sequence.

    f holds one measurement vector or frame per image (n >= 2). Returns the
    reconstructed sequence, the n-1 flow fields, and diagnostics with the
    joint energy recorded after initialization and after every outer
    iteration.
    """
    t_start = time.perf_counter()
    f = np.asarray(f, dtype=np.float64)
    if f.ndim < 2 or f.shape[0] < 2:
        raise ValueError("need a sequence of at least two frames")
    n = f.shape[0]

    recon_shape = _resolve_recon_shape(cfg, f, forward_op, shape)
    if forward_op is None:
        forward_op = _default_forward_op(cfg, f, recon_shape)

    diag = JointDiagnostics()
    flows = [zero_flow(recon_shape) for _ in range(n - 1)]

    t0 = time.perf_counter()
    try:
        if cfg.init_method == "smooth":
            u, info = init_smooth_time(f, forward_op, cfg.alpha, cfg.epsilon_t,
                                       cfg.eps_u, cfg.n_res, shape=recon_shape)
        else:
            u, info = init_rof(f, forward_op, cfg.alpha, cfg.eps_u, cfg.n_res,
                               shape=recon_shape)
    except Exception as exc:
        raise RuntimeError(f"initialization failed: {exc}") from exc
    diag.init_iterations = info.iterations
    diag.timings["init"] = time.perf_counter() - t0
    diag.energies.append(joint_energy(u, flows, f, forward_op, cfg))

    for outer in range(cfg.iter_main_max):
        u_old = u
        flows_old = flows

        t0 = time.perf_counter()
        flow_iters = []
        flow_res = []
        new_flows = []
        for i in range(n - 1):
            counters = {"iters": 0, "residual": float("inf")}

            def on_level(level, warp, info, counters=counters):
                counters["iters"] += info.iterations
                counters["residual"] = info.residual

            try:
                flow = solve_flow_pyramid(u[i], u[i + 1], cfg, level_callback=on_level)
            except Exception as exc:
                raise RuntimeError(
                    f"flow subproblem failed at outer iteration {outer + 1}, pair {i}: {exc}"
                ) from exc
            new_flows.append(flow)
            flow_iters.append(counters["iters"])
            flow_res.append(counters["residual"])
        flows = new_flows
        diag.flow_iterations.append(flow_iters)
        diag.flow_residuals.append(flow_res)
        diag.timings["flow"].append(time.perf_counter() - t0)

        t0 = time.perf_counter()
        if cfg.gamma > 0:
            if cfg.time_continuous:
                coupling = build_block_time_continuous(flows, recon_shape)
            else:
                coupling = build_block_warp(flows, recon_shape)
        else:
            coupling = None
        try:
            u, info = solve_images(
                f, flows, forward_op, cfg.alpha, cfg.gamma, cfg.eps_u, cfg.n_res,
                shape=recon_shape, coupling=coupling,
                time_continuous=cfg.time_continuous, init_u=u_old,
            )
        except Exception as exc:
            raise RuntimeError(
                f"image subproblem failed at outer iteration {outer + 1}: {exc}"
            ) from exc
        diag.image_iterations.append(info.iterations)
        diag.image_residuals.append(info.residual)
        diag.timings["image"].append(time.perf_counter() - t0)

        du = float(np.abs(u - u_old).mean())
        dv = float(
            np.mean([
                np.abs(np.concatenate([(a.v1 - b.v1).ravel(), (a.v2 - b.v2).ravel()])).mean()
                for a, b in zip(flows, flows_old)
            ])
        )
        r_main = du + dv
        diag.r_main.append(r_main)
        diag.energies.append(joint_energy(u, flows, f, forward_op, cfg))
        diag.outer_iterations = outer + 1
        if r_main <= cfg.eps_main:
            diag.converged = True
            break

    diag.timings["total"] = time.perf_counter() - t_start
    return u, flows, diag
