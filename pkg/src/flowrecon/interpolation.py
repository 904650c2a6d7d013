"""Cubic interpolation kernels, resampling, smoothing, and median filtering.

These are the numerical kernels behind the warping operators and the
coarse-to-fine pyramid. Coordinates follow the grid convention of
:mod:`flowrecon.operators`: x is horizontal, y vertical, so a sample at
real position (x, y) reads from ``u[y, x]`` after interpolation.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.ndimage import convolve1d


def cubic1d(p0, p1, p2, p3, x):
    """Four-point cubic convolution polynomial evaluated at x in [0, 1].

    Interpolates between p1 (x=0) and p2 (x=1); reproduces constant,
    linear and quadratic node data exactly. Accepts arrays and broadcasts.
    """
    return (
        (-0.5 * p0 + 1.5 * p1 - 1.5 * p2 + 0.5 * p3) * x ** 3
        + (p0 - 2.5 * p1 + 2.0 * p2 - 0.5 * p3) * x ** 2
        + (-0.5 * p0 + 0.5 * p2) * x
        + p1
    )


def cubic_weights(t):
    """Per-node weights of cubic1d as functions of the fractional offset t.

    The four weights sum to 1 for every t (partition of unity).
    """
    t = np.asarray(t, dtype=np.float64)
    w0 = ((-0.5 * t + 1.0) * t - 0.5) * t
    w1 = (1.5 * t - 2.5) * t * t + 1.0
    w2 = ((-1.5 * t + 2.0) * t + 0.5) * t
    w3 = (0.5 * t - 0.5) * t * t
    return w0, w1, w2, w3


def bicubic_sample(u, x: float, y: float):
    """Bicubic sample of u at real position (x, y); None outside the valid domain.

    Uses the 16-point neighborhood i0..i3 = floor(x)-1 .. floor(x)+2 (same
    in y). The sample is out of domain as soon as one stencil point leaves
    the grid, i.e. when i0 < 0, j0 < 0, i3 > n_x or j3 > n_y.
    """
    if not (math.isfinite(x) and math.isfinite(y)):
        raise ValueError(f"non-finite sample position ({x}, {y})")
    u = np.asarray(u, dtype=np.float64)
    height, width = u.shape
    ix = math.floor(x)
    iy = math.floor(y)
    if ix - 1 < 0 or iy - 1 < 0 or ix + 2 > width - 1 or iy + 2 > height - 1:
        return None
    fx = x - ix
    fy = y - iy
    rows = [
        cubic1d(u[iy - 1, ic], u[iy, ic], u[iy + 1, ic], u[iy + 2, ic], fy)
        for ic in range(ix - 1, ix + 3)
    ]
    return float(cubic1d(rows[0], rows[1], rows[2], rows[3], fx))


def bicubic_sample_grid(u, xs, ys):
    """Vectorized bicubic sampling; returns (values, valid) with 0 outside the domain."""
    u = np.asarray(u, dtype=np.float64)
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if not (np.isfinite(xs).all() and np.isfinite(ys).all()):
        raise ValueError("non-finite sample positions")
    height, width = u.shape
    ix = np.floor(xs).astype(np.int64)
    iy = np.floor(ys).astype(np.int64)
    valid = (ix >= 1) & (iy >= 1) & (ix <= width - 3) & (iy <= height - 3)
    ixs = np.where(valid, ix, 1)
    iys = np.where(valid, iy, 1)
    wx = cubic_weights(xs - ix)
    wy = cubic_weights(ys - iy)
    vals = np.zeros_like(xs)
    for k in range(4):
        col = np.zeros_like(xs)
        for l in range(4):
            col += wy[l] * u[iys - 1 + l, ixs - 1 + k]
        vals += wx[k] * col
    return np.where(valid, vals, 0.0), valid


def _bicubic_sample_clamped(u, xs, ys):
    """Bicubic sampling with stencil indices clamped to the grid (edge replication)."""
    u = np.asarray(u, dtype=np.float64)
    height, width = u.shape
    ix = np.floor(xs).astype(np.int64)
    iy = np.floor(ys).astype(np.int64)
    wx = cubic_weights(xs - ix)
    wy = cubic_weights(ys - iy)
    vals = np.zeros_like(np.asarray(xs, dtype=np.float64))
    for k in range(4):
        ic = np.clip(ix - 1 + k, 0, width - 1)
        col = np.zeros_like(vals)
        for l in range(4):
            jc = np.clip(iy - 1 + l, 0, height - 1)
            col += wy[l] * u[jc, ic]
        vals += wx[k] * col
    return vals


def resample_bicubic(u, new_width: int, new_height: int) -> np.ndarray:
    """Resample u to (new_height, new_width), mapping grid corners to corners.

    Target points whose 16-point stencil leaves the source grid fall back to
    edge-replicated indices, so constants are preserved at every size.
    """
    if new_width < 1 or new_height < 1:
        raise ValueError("target size must be at least 1x1")
    u = np.asarray(u, dtype=np.float64)
    height, width = u.shape
    sx = (width - 1) / (new_width - 1) if new_width > 1 else 0.0
    sy = (height - 1) / (new_height - 1) if new_height > 1 else 0.0
    xs = np.arange(new_width, dtype=np.float64) * sx
    ys = np.arange(new_height, dtype=np.float64) * sy
    gx, gy = np.meshgrid(xs, ys)
    return _bicubic_sample_clamped(u, gx, gy)


def gaussian_kernel1d(sigma: float) -> np.ndarray:
    """Normalized 1D Gaussian, truncated at +-ceil(3*sigma). sigma=0 gives [1]."""
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    if sigma == 0:
        return np.array([1.0])
    radius = int(math.ceil(3 * sigma))
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    w = np.exp(-(t ** 2) / (2.0 * sigma ** 2))
    return w / w.sum()


def gaussian_smooth(u, sigma: float) -> np.ndarray:
    """Separable Gaussian smoothing with replicate boundary; sigma=0 is the identity."""
    u = np.asarray(u, dtype=np.float64)
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    if sigma == 0:
        return u.copy()
    kernel = gaussian_kernel1d(sigma)
    out = convolve1d(u, kernel, axis=-1, mode="nearest")
    return convolve1d(out, kernel, axis=-2, mode="nearest")


def median_filter(u, size: int) -> np.ndarray:
    """Per-pixel median over a size x size window, clipped at the image border.

    Border pixels take the median of the in-bounds subset of their window;
    no padding values are invented.
    """
    if size % 2 != 1 or size < 1:
        raise ValueError(f"median window size must be odd and positive, got {size}")
    u = np.asarray(u, dtype=np.float64)
    if size == 1:
        return u.copy()
    radius = size // 2
    padded = np.pad(u, radius, mode="constant", constant_values=np.nan)
    windows = np.lib.stride_tricks.sliding_window_view(padded, (size, size))
    return np.nanmedian(windows.reshape(u.shape + (size * size,)), axis=-1)


def _round_half_up(v: float) -> int:
    return int(math.floor(v + 0.5))


def build_pyramid_sizes(width: int, height: int, eta: float, min_dim: int) -> list[tuple[int, int]]:
    """Pyramid level sizes (w_s, h_s) = round(dim * eta^s), finest level first.

    Levels are added while both raw scaled dimensions stay at or above
    min_dim; an image already smaller than min_dim yields a single level.
    Rounded sizes are kept strictly decreasing.
    """
    if not 0 < eta < 1:
        raise ValueError(f"eta must lie in (0, 1), got {eta}")
    if width < 1 or height < 1 or min_dim < 1:
        raise ValueError("dimensions and min_dim must be positive")
    if min(width, height) < min_dim:
        return [(width, height)]
    sizes = [(width, height)]
    s = 1
    while True:
        fw = width * eta ** s
        fh = height * eta ** s
        if min(fw, fh) < min_dim:
            break
        prev_w, prev_h = sizes[-1]
        w_s = min(_round_half_up(fw), prev_w - 1)
        h_s = min(_round_half_up(fh), prev_h - 1)
        if min(w_s, h_s) < min_dim:
            break
        sizes.append((w_s, h_s))
        s += 1
    return sizes
