"""Joint large-displacement motion estimation and image reconstruction.

Alternating primal-dual minimization of a TV-regularized data-fidelity
model coupled to a warped optical-flow term, with a coarse-to-fine warping
pyramid, exact sparse warping operators, and an evaluation harness.
"""

from .model import (
    FlowField,
    SolveConfig,
    as_image,
    as_sequence,
    denormalize_sequence,
    joint_energy,
    normalize_sequence,
    total_variation,
    zero_flow,
)
from .operators import (
    GradientField,
    SparseOperator,
    build_forward_operator,
    build_gradient_matrix,
    col_abs_sums,
    divergence,
    gradient,
    gradient_transpose,
    row_abs_sums,
)
from .interpolation import (
    bicubic_sample,
    bicubic_sample_grid,
    build_pyramid_sizes,
    cubic1d,
    gaussian_smooth,
    median_filter,
    resample_bicubic,
)
from .warp import (
    WarpMatrix,
    build_block_time_continuous,
    build_block_warp,
    build_time_continuous_k,
    build_warp_matrix,
)
from .flow_solver import (
    FlowDualState,
    WarpLinearization,
    flow_energy,
    flow_residual,
    flow_step_sizes,
    linearize,
    solve_flow_level,
    solve_flow_pyramid,
    zero_flow_dual,
)
from .image_solver import (
    ImageDualState,
    image_residual,
    image_step_sizes,
    init_rof,
    init_smooth_time,
    solve_images,
    temporal_difference_operator,
)
from .joint import JointDiagnostics, solve_joint
from . import fileio, metrics, synth

__version__ = "0.1.0"

__all__ = [
    "FlowField",
    "SolveConfig",
    "SparseOperator",
    "GradientField",
    "WarpMatrix",
    "FlowDualState",
    "ImageDualState",
    "WarpLinearization",
    "JointDiagnostics",
    "as_image",
    "as_sequence",
    "bicubic_sample",
    "bicubic_sample_grid",
    "build_block_time_continuous",
    "build_block_warp",
    "build_forward_operator",
    "build_gradient_matrix",
    "build_pyramid_sizes",
    "build_time_continuous_k",
    "build_warp_matrix",
    "col_abs_sums",
    "cubic1d",
    "denormalize_sequence",
    "divergence",
    "fileio",
    "flow_energy",
    "flow_residual",
    "flow_step_sizes",
    "gaussian_smooth",
    "gradient",
    "gradient_transpose",
    "image_residual",
    "image_step_sizes",
    "init_rof",
    "init_smooth_time",
    "joint_energy",
    "linearize",
    "median_filter",
    "metrics",
    "normalize_sequence",
    "resample_bicubic",
    "row_abs_sums",
    "solve_flow_level",
    "solve_flow_pyramid",
    "solve_images",
    "solve_joint",
    "synth",
    "temporal_difference_operator",
    "total_variation",
    "zero_flow",
    "zero_flow_dual",
]
