"""Pinhole back-projection, field-derived surface normals, and the
depth^2 / |n.v| area weight that drives adaptive sampling.

Camera frame is right-handed with +Z forward; no distortion model.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import jacobian_batch
from .errors import DegenerateSurfaceError, InvalidDepthError, ShapeError

DEFAULT_EPS = 1e-4
_CROSS_TOL = 1e-12


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ShapeError("focal lengths must be positive")


@dataclass(frozen=True)
class PointCloud:
    """Camera-frame points with optional unit normals and 8-bit colors."""

    points: np.ndarray              # (N, 3) float
    normals: np.ndarray = None      # (N, 3) unit vectors, optional
    colors: np.ndarray = None       # (N, 3) uint8, optional

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if pts.size and np.any(pts[:, 2] <= 0):
            raise InvalidDepthError("point cloud contains non-positive Z")
        object.__setattr__(self, "points", pts)
        if self.normals is not None:
            nr = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
            if nr.shape != pts.shape:
                raise ShapeError("normals must match points")
            norms = np.linalg.norm(nr, axis=1)
            if nr.size and np.any(np.abs(norms - 1.0) > 1e-6):
                raise ShapeError("normals must be unit length")
            object.__setattr__(self, "normals", nr)
        if self.colors is not None:
            col = np.asarray(self.colors, dtype=np.uint8).reshape(-1, 3)
            if col.shape != pts.shape:
                raise ShapeError("colors must match points")
            object.__setattr__(self, "colors", col)

    def __len__(self):
        return self.points.shape[0]


def backproject(q, d, intrinsics):
    """Lift image coordinate + depth to a camera-frame 3D point."""
    if d <= 0:
        raise InvalidDepthError(f"depth must be positive, got {d}")
    k = intrinsics
    return (d * (q.x - k.cx) / k.fx, d * (q.y - k.cy) / k.fy, d)


def backproject_batch(xs, ys, ds, intrinsics):
    """(N, 3) back-projection of batched coordinates and depths."""
    ds = np.asarray(ds, dtype=np.float64)
    if np.any(ds <= 0):
        raise InvalidDepthError("depth must be positive")
    k = intrinsics
    return np.stack(
        [ds * (np.asarray(xs) - k.cx) / k.fx, ds * (np.asarray(ys) - k.cy) / k.fy, ds],
        axis=1,
    )


def _surface_frame_batch(field, xs, ys, intrinsics):
    """Points, tangent vectors, raw cross products for batched queries."""
    k = intrinsics
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    d, ddx, ddy = jacobian_batch(field, xs, ys)
    u = (xs - k.cx) / k.fx
    v = (ys - k.cy) / k.fy
    # X = (d*u, d*v, d): chain rule through the pinhole map
    tx = np.stack([ddx * u + d / k.fx, ddx * v, ddx], axis=1)
    ty = np.stack([ddy * u, ddy * v + d / k.fy, ddy], axis=1)
    cross = np.cross(tx, ty)
    pts = np.stack([d * u, d * v, d], axis=1)
    return pts, cross, d


def normals_batch(field, xs, ys, intrinsics):
    """Camera-facing unit normals for batched interior queries.

    Returns (points, normals, depths, valid); degenerate cross products are
    flagged invalid instead of raising.
    """
    pts, cross, d = _surface_frame_batch(field, xs, ys, intrinsics)
    norm = np.linalg.norm(cross, axis=1)
    valid = norm >= _CROSS_TOL
    safe = np.where(valid, norm, 1.0)
    n = cross / safe[:, None]
    # orient toward the camera: n . X < 0
    flip = np.sum(n * pts, axis=1) > 0
    n[flip] *= -1.0
    return pts, n, d, valid


def surface_normal(field, q, intrinsics):
    """Unit surface normal at one interior query, oriented toward the camera."""
    pts, n, _, valid = normals_batch(field, [q.x], [q.y], intrinsics)
    if not valid[0]:
        raise DegenerateSurfaceError(f"degenerate surface tangents at ({q.x}, {q.y})")
    return n[0]


def area_weight_batch(field, xs, ys, intrinsics, eps=DEFAULT_EPS):
    """Adaptive weights d^2 / (|n.v| + eps); invalid normals yield weight 0."""
    if eps <= 0:
        raise ShapeError("eps must be positive")
    pts, n, d, valid = normals_batch(field, xs, ys, intrinsics)
    view = pts / np.linalg.norm(pts, axis=1, keepdims=True)
    ndotv = np.abs(np.sum(n * view, axis=1))
    w = d * d / (ndotv + eps)
    return np.where(valid, w, 0.0)


def area_weight(field, q, intrinsics, eps=DEFAULT_EPS):
    """Estimated 3D surface area subtended at one query pixel."""
    pts, n, d, valid = normals_batch(field, [q.x], [q.y], intrinsics)
    if not valid[0]:
        raise DegenerateSurfaceError(f"degenerate surface tangents at ({q.x}, {q.y})")
    if eps <= 0:
        raise ShapeError("eps must be positive")
    view = pts[0] / np.linalg.norm(pts[0])
    return float(d[0] ** 2 / (abs(float(n[0] @ view)) + eps))
