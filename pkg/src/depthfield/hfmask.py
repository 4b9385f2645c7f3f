"""High-frequency mask construction: multi-scale Laplacian energy,
percentile normalization, temperature sharpening, and multinomial pixel
selection without replacement.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter1d

from .errors import ShapeError, ZeroMassError
from .metrics import DepthMap

DEFAULT_SCALES = (0.0, 1.0, 2.0, 4.0)
DEFAULT_TAU = 0.5
NORM_QUANTILE = 0.98


@dataclass(frozen=True)
class HFMask:
    """Binary mask over high-frequency pixels plus the settings that built it."""

    mask: np.ndarray  # (h, w) bool
    n: int
    tau: float
    scales: tuple

    @property
    def height(self):
        return self.mask.shape[0]

    @property
    def width(self):
        return self.mask.shape[1]


def gaussian_blur(values, sigma):
    """Separable Gaussian blur, kernel radius ceil(3*sigma), replicate borders."""
    if sigma == 0:
        return values
    radius = math.ceil(3 * sigma)
    out = gaussian_filter1d(values, sigma, axis=0, mode="nearest", radius=radius)
    return gaussian_filter1d(out, sigma, axis=1, mode="nearest", radius=radius)


def laplacian(values):
    """4-neighborhood Laplacian with replicate padding at the borders."""
    p = np.pad(values, 1, mode="edge")
    return p[:-2, 1:-1] + p[2:, 1:-1] + p[1:-1, :-2] + p[1:-1, 2:] - 4.0 * values


def multiscale_energy(depth_map, scales=DEFAULT_SCALES):
    """Per-pixel max over scales of |Laplacian(blur(D, sigma))|.

    Scale 0 means no blur. Constant and affine depth produce zero interior
    energy (the stencil annihilates them).
    """
    if isinstance(depth_map, DepthMap):
        if not np.all(depth_map.validity):
            raise ShapeError("energy map needs a dense, fully valid depth map")
        vals = depth_map.values
    else:
        vals = np.asarray(depth_map, dtype=np.float64)
    if not np.all(np.isfinite(vals)):
        raise ShapeError("depth values must be finite")
    if len(scales) == 0 or any(s < 0 for s in scales):
        raise ShapeError("scales must be nonempty and nonnegative")
    energy = np.zeros_like(vals)
    for s in scales:
        np.maximum(energy, np.abs(laplacian(gaussian_blur(vals, s))), out=energy)
    return energy


def normalize_sharpen(energy, tau=DEFAULT_TAU):
    """Percentile-normalize, clip to 1, sharpen by 1/tau, renormalize to sum 1.

    Low tau concentrates probability on the strongest responses. When the
    98th percentile is zero (sparse energy) the maximum is used instead.
    """
    if tau <= 0:
        raise ShapeError("tau must be positive")
    e = np.asarray(energy, dtype=np.float64)
    if not np.any(e > 0):
        raise ZeroMassError("energy map is all zero; nothing to sample")
    q = float(np.quantile(e, NORM_QUANTILE))
    if q <= 0:
        q = float(e.max())
    e_hat = np.minimum(e / q, 1.0)
    e_sharp = e_hat ** (1.0 / tau)
    return e_sharp / e_sharp.sum()


def sample_mask(p, n, seed):
    """Draw n distinct pixels multinomially from p; returns a boolean mask."""
    p = np.asarray(p, dtype=np.float64)
    if n < 1:
        raise ShapeError("mask sample count must be >= 1")
    support = int(np.count_nonzero(p > 0))
    if n > support:
        raise ZeroMassError(f"requested {n} pixels but only {support} have mass")
    rng = np.random.default_rng(seed)
    flat = p.ravel()
    chosen = rng.choice(flat.size, size=n, replace=False, p=flat / flat.sum())
    mask = np.zeros(flat.size, dtype=bool)
    mask[chosen] = True
    return mask.reshape(p.shape)


def build_hf_mask(depth_map, n, seed, scales=DEFAULT_SCALES, tau=DEFAULT_TAU):
    """End-to-end: energy -> probabilities -> sampled binary mask."""
    energy = multiscale_energy(depth_map, scales)
    p = normalize_sharpen(energy, tau)
    mask = sample_mask(p, n, seed)
    return HFMask(mask, n, tau, tuple(scales))
