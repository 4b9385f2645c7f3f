"""Adaptive surface sampling: per-pixel area weights become a discrete
distribution, a deterministic stratified allocation picks pixels, and
seeded sub-pixel jitter turns them into continuous query coordinates.
The result is a point cloud with approximately uniform surface coverage.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError, ZeroMassError
from .field import decode_batch, differentiable_mask, pixel_centers
from .geometry import PointCloud, area_weight_batch, backproject_batch


@dataclass(frozen=True)
class WeightMap:
    """Nonnegative per-pixel sampling weights on a grid."""

    weights: np.ndarray  # (h, w) float64

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 2:
            raise ShapeError("weight map must be 2-D")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise ShapeError("weights must be finite and nonnegative")
        object.__setattr__(self, "weights", w)

    @property
    def height(self):
        return self.weights.shape[0]

    @property
    def width(self):
        return self.weights.shape[1]


@dataclass(frozen=True)
class QuerySet:
    """Continuous query coordinates plus the seed that produced them."""

    xs: np.ndarray
    ys: np.ndarray
    seed: int


def build_weight_map(field, intrinsics, grid_w, grid_h, eps=1e-4):
    """Area weight at every pixel center of a grid_w x grid_h grid.

    Pixels where the normal is degenerate or the field is non-differentiable
    (the ring near clamp seams) get weight 0 so they are never sampled.
    """
    if grid_w < 2 or grid_h < 2:
        raise ShapeError("weight grid must be at least 2x2")
    xs, ys = pixel_centers(grid_w, grid_h, field.width, field.height)
    gx, gy = np.meshgrid(xs, ys)
    gx = gx.ravel()
    gy = gy.ravel()
    ok = differentiable_mask(field, gx, gy)
    w = np.zeros(gx.size, dtype=np.float64)
    if np.any(ok):
        w[ok] = area_weight_batch(field, gx[ok], gy[ok], intrinsics, eps=eps)
    wm = WeightMap(w.reshape(grid_h, grid_w))
    if not np.any(wm.weights > 0):
        warnings.warn("weight map has no positive mass; sampling will fail", stacklevel=2)
    return wm


def normalize_probs(wm):
    """Flatten weights into a probability vector (row-major pixel order)."""
    w = wm.weights.ravel() if isinstance(wm, WeightMap) else np.asarray(wm, dtype=np.float64)
    total = w.sum()
    if not total > 0:
        raise ZeroMassError("cannot normalize a zero-mass weight map")
    return w / total


def stratified_indices(p, n):
    """Deterministic stratified inverse-transform allocation.

    Targets (j + 0.5) / n intersect the CDF; each target takes the smallest
    index whose cumulative mass reaches it. Per-pixel counts differ from
    n * p_i by at most one.
    """
    if n < 1:
        raise ShapeError("sample count must be >= 1")
    p = np.asarray(p, dtype=np.float64)
    cdf = np.cumsum(p)
    cdf[-1] = max(cdf[-1], 1.0)  # guard rounding so the last target always lands
    targets = (np.arange(n, dtype=np.float64) + 0.5) / n
    return np.searchsorted(cdf, targets, side="left")


def jitter_coords(indices, grid_w, grid_h, seed):
    """Sub-pixel jitter in [-0.5, 0.5) around the center of each chosen pixel."""
    indices = np.asarray(indices)
    if np.any(indices < 0) or np.any(indices >= grid_w * grid_h):
        raise ShapeError("pixel index outside grid")
    rows, cols = np.divmod(indices, grid_w)
    rng = np.random.default_rng(seed)
    du = rng.random(indices.size) - 0.5
    dv = rng.random(indices.size) - 0.5
    return QuerySet(cols + 0.5 + du, rows + 0.5 + dv, seed)


def _grid_to_image(qs, grid_w, grid_h, image_w, image_h):
    return qs.xs * (image_w / grid_w), qs.ys * (image_h / grid_h)


def sample_surface(field, intrinsics, n, seed, grid_w=None, grid_h=None, eps=1e-4):
    """Adaptively sample n surface points (weights -> strata -> jitter -> lift)."""
    if n < 1:
        raise ShapeError("sample count must be >= 1")
    grid_w = grid_w or field.width
    grid_h = grid_h or field.height
    wm = build_weight_map(field, intrinsics, grid_w, grid_h, eps=eps)
    p = normalize_probs(wm)
    idx = stratified_indices(p, n)
    qs = jitter_coords(idx, grid_w, grid_h, seed)
    xs, ys = _grid_to_image(qs, grid_w, grid_h, field.width, field.height)
    d = decode_batch(field, xs, ys)
    return PointCloud(backproject_batch(xs, ys, d, intrinsics))


def sample_per_pixel(field, intrinsics, grid_w, grid_h):
    """Baseline: one point per pixel center, no adaptivity (n = grid_w*grid_h)."""
    xs, ys = pixel_centers(grid_w, grid_h, field.width, field.height)
    gx, gy = np.meshgrid(xs, ys)
    gx = gx.ravel()
    gy = gy.ravel()
    d = decode_batch(field, gx, gy)
    return PointCloud(backproject_batch(gx, gy, d, intrinsics))


def density_cv(pc, grid=(16, 16), extent=None):
    """Coefficient of variation of per-cell point counts on the best-fit plane.

    Points are projected onto the two principal in-plane axes and binned
    into a grid of equal-area cells over ``extent`` (default: the projected
    bounding box). Lower is more uniform.
    """
    pts = pc.points if isinstance(pc, PointCloud) else np.asarray(pc, dtype=np.float64)
    if pts.shape[0] < 100:
        raise ShapeError("density_cv needs at least 100 points")
    center = pts.mean(axis=0)
    _, _, vt = np.linalg.svd(pts - center, full_matrices=False)
    uv = (pts - center) @ vt[:2].T
    if extent is None:
        lo = uv.min(axis=0)
        hi = uv.max(axis=0)
        if np.any(hi - lo <= 0):
            raise ShapeError("degenerate planar extent")
    else:
        (lo, hi) = (np.asarray(extent[0], dtype=np.float64), np.asarray(extent[1], dtype=np.float64))
    gw, gh = grid
    iu = np.clip(((uv[:, 0] - lo[0]) / (hi[0] - lo[0]) * gw).astype(int), 0, gw - 1)
    iv = np.clip(((uv[:, 1] - lo[1]) / (hi[1] - lo[1]) * gh).astype(int), 0, gh - 1)
    counts = np.bincount(iv * gw + iu, minlength=gw * gh).astype(np.float64)
    mean = counts.mean()
    if mean == 0:
        raise ShapeError("no points landed in the binning extent")
    return float(counts.std() / mean)
