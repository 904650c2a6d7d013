"""Domain types, solver configuration, and evaluation of the joint energy.

Images are plain float64 arrays of shape (H, W) with intensities nominally
in [0, 1] after ingest normalization; sequences are arrays of shape
(n, H, W). All types are value objects: construct once, never mutate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .operators import SparseOperator, gradient


def as_image(a) -> np.ndarray:
    """Validate and return a single frame as a float64 (H, W) array."""
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2 or arr.size == 0:
        raise ValueError(f"expected a nonempty 2D image, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError("image contains non-finite values")
    return arr


def as_sequence(frames) -> np.ndarray:
    """Validate and return an image sequence as a float64 (n, H, W) array."""
    if isinstance(frames, np.ndarray) and frames.ndim == 3:
        seq = frames.astype(np.float64, copy=False)
    else:
        seq = np.stack([as_image(fr) for fr in frames])
    if seq.ndim != 3 or seq.size == 0:
        raise ValueError(f"expected a sequence of 2D frames, got shape {np.shape(frames)}")
    if not np.isfinite(seq).all():
        raise ValueError("sequence contains non-finite values")
    return seq


@dataclass(frozen=True)
class FlowField:
    """Dense displacement field: v1 horizontal, v2 vertical, both in pixels."""

    v1: np.ndarray
    v2: np.ndarray

    def __post_init__(self):
        v1 = np.asarray(self.v1, dtype=np.float64)
        v2 = np.asarray(self.v2, dtype=np.float64)
        if v1.ndim != 2 or v1.shape != v2.shape:
            raise ValueError(f"flow components must share a 2D shape, got {v1.shape} and {v2.shape}")
        if not (np.isfinite(v1).all() and np.isfinite(v2).all()):
            raise ValueError("flow field contains non-finite values")
        object.__setattr__(self, "v1", v1)
        object.__setattr__(self, "v2", v2)

    @property
    def shape(self) -> tuple[int, int]:
        return self.v1.shape

    def magnitude(self) -> np.ndarray:
        return np.sqrt(self.v1 ** 2 + self.v2 ** 2)


def zero_flow(shape) -> FlowField:
    return FlowField(np.zeros(shape), np.zeros(shape))


_OPERATOR_KINDS = ("identity", "mask", "subsample", "blur")
_INIT_METHODS = ("rof", "smooth")


@dataclass(frozen=True)
class SolveConfig:
    """All solver parameters with their default values.

    alpha        TV weight on the image sequence
    beta         TV weight on each flow component
    gamma        coupling weight between images and flow
    eta          pyramid downsampling factor in (0, 1)
    n_warps      warping (re-linearization) cycles per pyramid level
    size_med     odd median-filter window applied to the flow
    eps_u/v/main stopping tolerances (normalized residuals)
    n_res        residual check interval in iterations
    iter_main_max  cap on outer alternating iterations
    min_scale_dim  minimum image dimension on the coarsest pyramid level
    sigma_d      pyramid presmoothing std-dev; None picks the anti-aliasing
                 default 0.5*sqrt(1/eta^2 - 1)
    operator_kind  measurement model: identity, mask, subsample or blur
    time_continuous  replace the warping operator with the small-displacement
                 coupling operator and solve the flow single-scale
    init_method  image initialization: "rof" (per-frame) or "smooth"
                 (quadratic temporal smoothing with weight epsilon_t)
    """

    alpha: float = 0.02
    beta: float = 0.02
    gamma: float = 1.0
    eta: float = 0.8
    n_warps: int = 3
    size_med: int = 5
    eps_u: float = 1e-6
    eps_v: float = 1e-6
    eps_main: float = 1e-5
    n_res: int = 100
    iter_main_max: int = 10
    min_scale_dim: int = 10
    sigma_d: float | None = None
    operator_kind: str = "identity"
    subsample_factor: int = 2
    blur_sigma: float = 1.0
    time_continuous: bool = False
    init_method: str = "rof"
    epsilon_t: float = 0.01

    def __post_init__(self):
        if self.alpha <= 0 or self.beta <= 0 or self.gamma < 0:
            raise ValueError("alpha and beta must be positive, gamma nonnegative")
        if not 0 < self.eta < 1:
            raise ValueError(f"eta must lie in (0, 1), got {self.eta}")
        if self.n_warps < 1:
            raise ValueError("n_warps must be at least 1")
        if self.size_med < 1 or self.size_med % 2 != 1:
            raise ValueError("size_med must be odd and positive")
        if min(self.eps_u, self.eps_v, self.eps_main) <= 0:
            raise ValueError("tolerances must be positive")
        if self.n_res < 1 or self.iter_main_max < 1 or self.min_scale_dim < 1:
            raise ValueError("n_res, iter_main_max and min_scale_dim must be positive")
        if self.sigma_d is not None and self.sigma_d < 0:
            raise ValueError("sigma_d must be nonnegative")
        if self.operator_kind not in _OPERATOR_KINDS:
            raise ValueError(f"operator_kind must be one of {_OPERATOR_KINDS}")
        if self.init_method not in _INIT_METHODS:
            raise ValueError(f"init_method must be one of {_INIT_METHODS}")
        if self.epsilon_t <= 0:
            raise ValueError("epsilon_t must be positive")

    def pyramid_sigma(self) -> float:
        if self.sigma_d is not None:
            return self.sigma_d
        return 0.5 * math.sqrt(1.0 / self.eta ** 2 - 1.0)

    def flow_tv_weight(self) -> float:
        """TV-ball radius of the flow subproblem; beta/gamma, or beta when gamma=0."""
        return self.beta / self.gamma if self.gamma > 0 else self.beta


def normalize_sequence(frames):
    """Affinely map a sequence onto [0, 1] using its global min and max.

    Returns (normalized, scale, offset) with original = normalized * scale
    + offset. A constant sequence maps to all zeros with scale 1 so that
    synthetic edge cases do not abort pipelines.
    """
    seq = as_sequence(frames)
    lo = float(seq.min())
    hi = float(seq.max())
    if hi == lo:
        return np.zeros_like(seq), 1.0, lo
    scale = hi - lo
    return (seq - lo) / scale, scale, lo


def denormalize_sequence(frames, scale: float, offset: float) -> np.ndarray:
    return np.asarray(frames, dtype=np.float64) * scale + offset


def total_variation(u) -> float:
    """Isotropic TV: sum over pixels of the Euclidean norm of the forward gradient."""
    g = gradient(u)
    return float(np.sqrt(g.gx ** 2 + g.gy ** 2).sum())


def _forward_op_list(forward_ops, n: int):
    if forward_ops is None:
        return None
    if isinstance(forward_ops, SparseOperator):
        return [forward_ops] * n
    ops = list(forward_ops)
    if len(ops) != n:
        raise ValueError(f"expected {n} forward operators, got {len(ops)}")
    return ops


def joint_energy(u, flows, f, forward_ops, cfg: SolveConfig) -> float:
    """Evaluate the full joint model energy at (u, flows).

    The flow-coupling term is the warped residual |W(v) u_next - u|summed
    over in-domain pixels, i.e. the linearization evaluated at the current
    flow itself, which is exactly what both subproblem solvers minimize at
    convergence. forward_ops is a single SparseOperator shared by all
    frames, a list with one per frame, or None for the identity.
    """
    from .warp import build_block_time_continuous, build_block_warp

    u = as_sequence(u)
    f = np.asarray(f, dtype=np.float64)
    if f.ndim < 2:
        raise ValueError("data must hold one vector or frame per image")
    if not np.isfinite(f).all():
        raise ValueError("data contains non-finite values")
    n = u.shape[0]
    shape = u.shape[1:]
    if f.shape[0] != n:
        raise ValueError(f"sequence has {n} frames but data has {f.shape[0]}")
    flows = list(flows)
    if len(flows) != n - 1:
        raise ValueError(f"expected {n - 1} flow fields, got {len(flows)}")
    for fl in flows:
        if fl.shape != shape:
            raise ValueError(f"flow shape {fl.shape} does not match frames {shape}")
    ops = _forward_op_list(forward_ops, n)

    energy = 0.0
    for i in range(n):
        fi = f[i].ravel()
        if ops is None:
            if fi.size != u[i].size:
                raise ValueError(f"frame {i}: data length {fi.size} does not match image size {u[i].size}")
            residual = u[i].ravel() - fi
        else:
            if fi.size != ops[i].rows:
                raise ValueError(
                    f"frame {i}: data length {fi.size} does not match operator rows {ops[i].rows}"
                )
            residual = ops[i].apply(u[i]) - fi
        energy += 0.5 * float(residual @ residual)
        energy += cfg.alpha * total_variation(u[i])

    if n >= 2 and cfg.gamma > 0:
        if cfg.time_continuous:
            coupling = build_block_time_continuous(flows, shape)
        else:
            coupling = build_block_warp(flows, shape)
        energy += cfg.gamma * float(np.abs(coupling.apply(u.ravel())).sum())

    for fl in flows:
        energy += cfg.beta * (total_variation(fl.v1) + total_variation(fl.v2))

    if not math.isfinite(energy):
        raise ValueError("joint energy is non-finite")
    return energy
