"""Seeded synthetic sequences with exact ground-truth flow.

Frames are evaluated analytically (no resampling), so brightness constancy
holds exactly in the continuous domain and every run is reproducible
without external downloads.
"""

from __future__ import annotations

import math

import numpy as np

from .model import FlowField


def gaussian_blob(shape, center, sigma: float, amplitude: float = 0.9,
                  background: float = 0.05) -> np.ndarray:
    """Isotropic Gaussian bump on a flat background; center is (cx, cy) in pixels."""
    height, width = shape
    cx, cy = center
    jj, ii = np.meshgrid(np.arange(height, dtype=np.float64),
                         np.arange(width, dtype=np.float64), indexing="ij")
    return background + amplitude * np.exp(-(((ii - cx) ** 2) + ((jj - cy) ** 2)) / (2.0 * sigma ** 2))


def blob_support_mask(shape, center, sigma: float, radius_sigmas: float = 2.5) -> np.ndarray:
    """Pixels within radius_sigmas standard deviations of the blob center."""
    height, width = shape
    cx, cy = center
    jj, ii = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
    return ((ii - cx) ** 2 + (jj - cy) ** 2) <= (radius_sigmas * sigma) ** 2


def translating_blob(shape, n_frames: int, shift, *, sigma: float = 6.0,
                     amplitude: float = 0.9, background: float = 0.05,
                     start_center=None):
    """Blob moving by a constant per-frame shift (dx, dy).

    Returns (frames, flows); every ground-truth flow field is the constant
    shift, since frame i+1 evaluated at x + shift equals frame i.
    """
    if n_frames < 2:
        raise ValueError("need at least two frames")
    height, width = shape
    dx, dy = shift
    if start_center is None:
        total = (n_frames - 1)
        start_center = ((width - 1 - total * dx) / 2.0, (height - 1 - total * dy) / 2.0)
    frames = np.stack([
        gaussian_blob(shape, (start_center[0] + t * dx, start_center[1] + t * dy),
                      sigma, amplitude, background)
        for t in range(n_frames)
    ])
    flows = [
        FlowField(np.full(shape, float(dx)), np.full(shape, float(dy)))
        for _ in range(n_frames - 1)
    ]
    return frames, flows


def textured_blob(shape, n_frames: int, shift, *, seed: int = 42, n_waves: int = 40,
                  blob_center=None, blob_sigma: float = 8.0, blob_amplitude: float = 0.5):
    """Blob on a rigidly co-translating random texture, normalized to [0, 1].

    The texture is a seeded sum of sinusoids with wavelengths between 5 and
    32 pixels, so the flow is observable everywhere; a flat background plus
    noise would leave the flow underdetermined off the blob. Frames are
    evaluated analytically at shifted coordinates, and the normalization
    constants are shared across frames, so brightness constancy is exact.

    Returns (frames, flows) like :func:`translating_blob`.
    """
    if n_frames < 2:
        raise ValueError("need at least two frames")
    height, width = shape
    dx, dy = shift
    rng = np.random.default_rng(seed)
    mags = np.exp(rng.uniform(math.log(2 * math.pi / 32), math.log(2 * math.pi / 5), n_waves))
    angles = rng.uniform(0, 2 * math.pi, n_waves)
    kx = mags * np.cos(angles)
    ky = mags * np.sin(angles)
    phases = rng.uniform(0, 2 * math.pi, n_waves)
    amps = 1.0 / mags
    if blob_center is None:
        total = n_frames - 1
        blob_center = ((width - 1 - total * dx) / 2.0, (height - 1 - total * dy) / 2.0)

    jj, ii = np.meshgrid(np.arange(height, dtype=np.float64),
                         np.arange(width, dtype=np.float64), indexing="ij")

    def field(offset_x, offset_y):
        x = ii - offset_x
        y = jj - offset_y
        f = np.zeros(shape)
        for k in range(n_waves):
            f += amps[k] * np.sin(kx[k] * x + ky[k] * y + phases[k])
        f *= 0.5
        f += blob_amplitude * np.exp(
            -(((x - blob_center[0]) ** 2) + ((y - blob_center[1]) ** 2)) / (2.0 * blob_sigma ** 2)
        )
        return f

    raw = [field(t * dx, t * dy) for t in range(n_frames)]
    lo = min(float(r.min()) for r in raw)
    hi = max(float(r.max()) for r in raw)
    span = hi - lo if hi > lo else 1.0
    frames = np.stack([(r - lo) / span for r in raw])
    flows = [
        FlowField(np.full(shape, float(dx)), np.full(shape, float(dy)))
        for _ in range(n_frames - 1)
    ]
    return frames, flows


def rotating_blob(shape, n_frames: int, angle: float, *, offset: float = 10.0,
                  sigma: float = 5.0, amplitude: float = 0.9, background: float = 0.05):
    """Blob orbiting the image center by ``angle`` radians per frame.

    The ground-truth flow maps frame i positions to frame i+1 positions:
    v(x) = R(x - c) - (x - c) with R the per-frame rotation.
    """
    if n_frames < 2:
        raise ValueError("need at least two frames")
    height, width = shape
    cx, cy = (width - 1) / 2.0, (height - 1) / 2.0
    frames = []
    for t in range(n_frames):
        a = t * angle
        center = (cx + offset * math.cos(a), cy + offset * math.sin(a))
        frames.append(gaussian_blob(shape, center, sigma, amplitude, background))
    jj, ii = np.meshgrid(np.arange(height, dtype=np.float64),
                         np.arange(width, dtype=np.float64), indexing="ij")
    rx = ii - cx
    ry = jj - cy
    ca, sa = math.cos(angle), math.sin(angle)
    v1 = ca * rx - sa * ry - rx
    v2 = sa * rx + ca * ry - ry
    flows = [FlowField(v1.copy(), v2.copy()) for _ in range(n_frames - 1)]
    return np.stack(frames), flows
