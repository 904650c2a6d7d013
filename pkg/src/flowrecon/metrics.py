"""Reconstruction and flow error metrics plus the noise-injection protocol."""

from __future__ import annotations

import math

import numpy as np
from scipy.signal import convolve2d

from .interpolation import gaussian_kernel1d
from .model import FlowField

# ground-truth flow values above this magnitude mark unknown pixels
FLOW_INVALID_THRESHOLD = 1e9


def _check_same_shape(u, ref):
    u = np.asarray(u, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if u.shape != ref.shape:
        raise ValueError(f"shape mismatch: {u.shape} vs {ref.shape}")
    return u, ref


def l2_error(u, ref) -> float:
    """Mean squared error per pixel."""
    u, ref = _check_same_shape(u, ref)
    d = u - ref
    return float((d * d).mean())


def psnr(u, ref, peak: float = 1.0) -> float:
    """10 log10(peak^2 / MSE); +inf when the images are identical."""
    mse = l2_error(u, ref)
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def ssim(u, ref, *, dynamic_range: float = 1.0) -> float:
    """Structural similarity with the standard 11x11 Gaussian window, sigma 1.5.

    K1 = 0.01, K2 = 0.03; the mean is taken over the valid (fully
    overlapping) window positions, so images must be at least 11x11.
    """
    u, ref = _check_same_shape(u, ref)
    k = gaussian_kernel1d(1.5)  # 11 taps
    window = np.outer(k, k)
    if u.shape[0] < window.shape[0] or u.shape[1] < window.shape[1]:
        raise ValueError(f"image {u.shape} is smaller than the 11x11 SSIM window")
    c1 = (0.01 * dynamic_range) ** 2
    c2 = (0.03 * dynamic_range) ** 2

    def filt(img):
        return convolve2d(img, window, mode="valid")

    mu1 = filt(u)
    mu2 = filt(ref)
    mu1_sq = mu1 * mu1
    mu2_sq = mu2 * mu2
    mu12 = mu1 * mu2
    var1 = filt(u * u) - mu1_sq
    var2 = filt(ref * ref) - mu2_sq
    cov = filt(u * ref) - mu12
    ssim_map = ((2 * mu12 + c1) * (2 * cov + c2)) / ((mu1_sq + mu2_sq + c1) * (var1 + var2 + c2))
    return float(ssim_map.mean())


def _flow_pair(v: FlowField, vref: FlowField, mask):
    if v.shape != vref.shape:
        raise ValueError(f"flow shape mismatch: {v.shape} vs {vref.shape}")
    if mask is None:
        mask = np.ones(v.shape, dtype=bool)
    else:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != v.shape:
            raise ValueError(f"mask shape {mask.shape} does not match flow {v.shape}")
    return mask


def flow_valid_mask(vref: FlowField) -> np.ndarray:
    """Pixels whose ground-truth flow is known (magnitude below the .flo sentinel)."""
    return (np.abs(vref.v1) <= FLOW_INVALID_THRESHOLD) & (np.abs(vref.v2) <= FLOW_INVALID_THRESHOLD)


def endpoint_error(v: FlowField, vref: FlowField, mask=None) -> float:
    """Mean Euclidean distance between flow vectors over the masked pixels."""
    mask = _flow_pair(v, vref, mask)
    d = np.sqrt((v.v1 - vref.v1) ** 2 + (v.v2 - vref.v2) ** 2)
    return float(d[mask].mean())


def angular_error(v: FlowField, vref: FlowField, mask=None) -> float:
    """Mean angle (radians) between the space-time extended vectors (v1, v2, 1)."""
    mask = _flow_pair(v, vref, mask)
    num = v.v1 * vref.v1 + v.v2 * vref.v2 + 1.0
    den = np.sqrt(v.v1 ** 2 + v.v2 ** 2 + 1.0) * np.sqrt(vref.v1 ** 2 + vref.v2 ** 2 + 1.0)
    cos = np.clip(num / den, -1.0, 1.0)
    return float(np.arccos(cos)[mask].mean())


def add_gaussian_noise(frames, mean: float, variance: float, seed: int) -> np.ndarray:
    """Add i.i.d. Gaussian noise from a seeded generator; values are not clipped."""
    if variance < 0:
        raise ValueError("variance must be nonnegative")
    frames = np.asarray(frames, dtype=np.float64)
    if variance == 0:
        return frames + mean
    rng = np.random.default_rng(seed)
    return frames + mean + math.sqrt(variance) * rng.standard_normal(frames.shape)
