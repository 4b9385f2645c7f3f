"""Continuous-coordinate depth field: feature pyramid storage, bilinear
feature queries, gated fusion decoding, and grid rendering.

The field is a pure function: a pyramid of feature grids plus decoder
weights define depth at any continuous coordinate (x, y) in
[0, W] x [0, H]. Feature grids use the corner convention: the vector
stored at ``data[j][i]`` lives at continuous level coordinate (i, j), and
mapped coordinates are clamped to [0, w_k - 1] x [0, h_k - 1] so queries at
the image edge interpolate against the last row/column.

Arrays are stored float32 (the interchange precision); all evaluation runs
in float64.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .dual import Dual2, clamp, colvec, elu, gelu, matvec, relu, value_of
from .errors import InvalidCoordinateError, ShapeError

WORKERS_ENV = "DEPTHFIELD_WORKERS"


def _as_f32(a, name):
    arr = np.asarray(a, dtype=np.float32)
    if not np.all(np.isfinite(arr)):
        raise ShapeError(f"{name} contains non-finite values")
    return arr


@dataclass(frozen=True)
class FeatureLevel:
    """One pyramid level: an (h, w, C) grid of feature vectors."""

    data: np.ndarray

    def __post_init__(self):
        arr = _as_f32(self.data, "level data")
        if arr.ndim != 3:
            raise ShapeError(f"level data must be (h, w, C), got shape {arr.shape}")
        h, w, c = arr.shape
        if h < 2 or w < 2 or c < 1:
            raise ShapeError(f"level needs h >= 2, w >= 2, C >= 1, got {arr.shape}")
        object.__setattr__(self, "data", arr)

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]

    @property
    def channels(self):
        return self.data.shape[2]


@dataclass(frozen=True)
class FeaturePyramid:
    """Ordered levels, shallow (high resolution) first, plus image dims."""

    levels: tuple
    image_width: int
    image_height: int

    def __post_init__(self):
        levels = tuple(self.levels)
        if not levels:
            raise ShapeError("pyramid needs at least one level")
        for lv in levels:
            if not isinstance(lv, FeatureLevel):
                raise ShapeError("pyramid levels must be FeatureLevel instances")
        for a, b in zip(levels, levels[1:]):
            if b.height > a.height or b.width > a.width:
                raise ShapeError("level resolution must be non-increasing with depth")
        if self.image_width <= 0 or self.image_height <= 0:
            raise ShapeError("image dimensions must be positive")
        object.__setattr__(self, "levels", levels)

    @property
    def channel_dims(self):
        return tuple(lv.channels for lv in self.levels)


@dataclass(frozen=True)
class QueryCoord:
    x: float
    y: float


@dataclass(frozen=True)
class FusionStage:
    """Parameters of one residual gated fusion step C_k -> C_{k+1}."""

    gate_raw: np.ndarray   # (C_next,)
    proj_w: np.ndarray     # (C_next, C_prev)
    proj_b: np.ndarray     # (C_next,)
    ffn_w1: np.ndarray     # (4*C_next, C_next)
    ffn_b1: np.ndarray     # (4*C_next,)
    ffn_w2: np.ndarray     # (C_next, 4*C_next)
    ffn_b2: np.ndarray     # (C_next,)

    def __post_init__(self):
        for name in self.__dataclass_fields__:
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if not np.all(np.isfinite(arr)):
                raise ShapeError(f"fusion stage {name} contains non-finite values")
            object.__setattr__(self, name, arr)
        c_next, c_prev = _shape2(self.proj_w, "proj_w")
        if self.gate_raw.shape != (c_next,):
            raise ShapeError("gate length must match proj rows")
        if self.proj_b.shape != (c_next,):
            raise ShapeError("proj bias length must match proj rows")
        if self.ffn_w1.shape != (4 * c_next, c_next):
            raise ShapeError("ffn_w1 must expand C_next by a factor of four")
        if self.ffn_b1.shape != (4 * c_next,):
            raise ShapeError("ffn_b1 shape mismatch")
        if self.ffn_w2.shape != (c_next, 4 * c_next):
            raise ShapeError("ffn_w2 must compress back to C_next")
        if self.ffn_b2.shape != (c_next,):
            raise ShapeError("ffn_b2 shape mismatch")

    @property
    def in_dim(self):
        return self.proj_w.shape[1]

    @property
    def out_dim(self):
        return self.proj_w.shape[0]

    def gate(self):
        """Channel-wise gate in (0, 1); numerically stable for large |raw|."""
        raw = self.gate_raw
        ez = np.exp(-np.abs(raw))
        return np.where(raw >= 0, 1.0 / (1.0 + ez), ez / (1.0 + ez))


@dataclass(frozen=True)
class MlpHead:
    """Three-layer head with ReLU between layers; ELU+1 applied outside."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray

    def __post_init__(self):
        for name in self.__dataclass_fields__:
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if not np.all(np.isfinite(arr)):
                raise ShapeError(f"head {name} contains non-finite values")
            object.__setattr__(self, name, arr)
        d1, _ = _shape2(self.w1, "w1")
        d2, d1b = _shape2(self.w2, "w2")
        d3, d2b = _shape2(self.w3, "w3")
        if d1b != d1 or d2b != d2:
            raise ShapeError("head layer widths do not chain")
        if d3 != 1:
            raise ShapeError("head must end in a single output")
        if self.b1.shape != (d1,) or self.b2.shape != (d2,) or self.b3.shape != (1,):
            raise ShapeError("head bias shapes do not match weights")

    @property
    def in_dim(self):
        return self.w1.shape[1]


def _shape2(arr, name):
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be a matrix, got shape {arr.shape}")
    return arr.shape


@dataclass(frozen=True)
class DecoderParams:
    """All learnable decoder state: fusion stages plus the MLP head."""

    stages: tuple
    head: MlpHead

    def __post_init__(self):
        stages = tuple(self.stages)
        for a, b in zip(stages, stages[1:]):
            if b.in_dim != a.out_dim:
                raise ShapeError("fusion stage channel chain is inconsistent")
        last = stages[-1].out_dim if stages else None
        if last is not None and self.head.in_dim != last:
            raise ShapeError("head input dim must equal the last stage output dim")
        object.__setattr__(self, "stages", stages)

    @property
    def channel_dims(self):
        """Expected pyramid channel dims (C_1, ..., C_L)."""
        if not self.stages:
            return (self.head.in_dim,)
        return (self.stages[0].in_dim,) + tuple(s.out_dim for s in self.stages)

    def named_arrays(self):
        """Yield (key, array) for every parameter tensor, in canonical order."""
        for k, s in enumerate(self.stages):
            for name in ("gate_raw", "proj_w", "proj_b", "ffn_w1", "ffn_b1", "ffn_w2", "ffn_b2"):
                yield f"stage{k}.{name}", getattr(s, name)
        for name in ("w1", "b1", "w2", "b2", "w3", "b3"):
            yield f"head.{name}", getattr(self.head, name)

    def to_flat(self):
        return dict(self.named_arrays())

    @classmethod
    def from_flat(cls, flat):
        n_stages = 0
        while f"stage{n_stages}.gate_raw" in flat:
            n_stages += 1
        stages = tuple(
            FusionStage(*(flat[f"stage{k}.{n}"] for n in (
                "gate_raw", "proj_w", "proj_b", "ffn_w1", "ffn_b1", "ffn_w2", "ffn_b2")))
            for k in range(n_stages)
        )
        head = MlpHead(*(flat[f"head.{n}"] for n in ("w1", "b1", "w2", "b2", "w3", "b3")))
        return cls(stages, head)


@dataclass(frozen=True)
class DepthField:
    """Immutable pyramid + decoder pair; safe for concurrent readers."""

    pyramid: FeaturePyramid
    params: DecoderParams

    def __post_init__(self):
        if self.params.channel_dims != self.pyramid.channel_dims:
            raise ShapeError(
                f"decoder expects channels {self.params.channel_dims}, "
                f"pyramid has {self.pyramid.channel_dims}"
            )

    @property
    def width(self):
        return self.pyramid.image_width

    @property
    def height(self):
        return self.pyramid.image_height


# ---------------------------------------------------------------------------
# queries


def _check_coord(x, y, w, h):
    if not (math.isfinite(x) and math.isfinite(y)):
        raise InvalidCoordinateError(f"non-finite query coordinate ({x}, {y})")
    if not (0.0 <= x <= w and 0.0 <= y <= h):
        raise InvalidCoordinateError(
            f"query ({x}, {y}) outside image domain [0, {w}] x [0, {h}]"
        )


def map_coord(q, level, image_width, image_height):
    """Map an image coordinate to (clamped) level coordinates."""
    if image_width <= 0 or image_height <= 0:
        raise InvalidCoordinateError("image dimensions must be positive")
    _check_coord(q.x, q.y, image_width, image_height)
    # same operation order as the batched engine: scale factor first
    xk = min(max(q.x * (level.width / image_width), 0.0), level.width - 1.0)
    yk = min(max(q.y * (level.height / image_height), 0.0), level.height - 1.0)
    return xk, yk


def _gather_corners(level, xv, yv):
    """Corner features and integer anchors for batched level coords."""
    w, h = level.width, level.height
    i0 = np.floor(xv).astype(np.intp)
    j0 = np.floor(yv).astype(np.intp)
    np.clip(i0, 0, w - 1, out=i0)
    np.clip(j0, 0, h - 1, out=j0)
    i1 = np.minimum(i0 + 1, w - 1)
    j1 = np.minimum(j0 + 1, h - 1)
    dat = level.data
    f00 = dat[j0, i0].astype(np.float64)
    f01 = dat[j0, i1].astype(np.float64)
    f10 = dat[j1, i0].astype(np.float64)
    f11 = dat[j1, i1].astype(np.float64)
    return i0, j0, f00, f01, f10, f11


def _bilinear_batch(level, xk, yk):
    """Bilinear blend at (possibly dual) level coordinates; returns (B, C)."""
    i0, j0, f00, f01, f10, f11 = _gather_corners(level, value_of(xk), value_of(yk))
    tx = colvec(xk - i0.astype(np.float64))
    ty = colvec(yk - j0.astype(np.float64))
    top = (1.0 - tx) * f00 + tx * f01
    bot = (1.0 - tx) * f10 + tx * f11
    return (1.0 - ty) * top + ty * bot


def _level_feats(pyramid, x, y):
    """Per-level interpolated features for batched image coords (B,)."""
    feats = []
    for lv in pyramid.levels:
        xk = clamp(x * (lv.width / pyramid.image_width), 0.0, lv.width - 1.0)
        yk = clamp(y * (lv.height / pyramid.image_height), 0.0, lv.height - 1.0)
        feats.append(_bilinear_batch(lv, xk, yk))
    return feats


def _decode_feats(params, feats, cache=None):
    """Fusion chain + head over batched per-level features.

    With ``cache`` a list, forward intermediates are appended for the
    reverse-mode pass (plain arrays only).
    """
    h = feats[0]
    for k, stage in enumerate(params.stages):
        f_next = feats[k + 1]
        g = stage.gate()
        lin = matvec(stage.proj_w, h, stage.proj_b)
        u = f_next + g * lin
        t = matvec(stage.ffn_w1, u, stage.ffn_b1)
        a = gelu(t)
        h_next = matvec(stage.ffn_w2, a, stage.ffn_b2)
        if cache is not None:
            cache.append({"h": h, "lin": lin, "u": u, "t": t, "a": a, "g": g})
        h = h_next
    hd = params.head
    z1 = matvec(hd.w1, h, hd.b1)
    r1 = relu(z1)
    z2 = matvec(hd.w2, r1, hd.b2)
    r2 = relu(z2)
    z = matvec(hd.w3, r2, hd.b3)
    d = elu(z) + 1.0
    if cache is not None:
        cache.append({"hL": h, "z1": z1, "r1": r1, "z2": z2, "r2": r2, "z": z})
    if isinstance(d, Dual2):
        return Dual2(d.value[:, 0], d.dx[:, 0], d.dy[:, 0])
    return d[:, 0]


def _eval(field, x, y, cache=None):
    feats = _level_feats(field.pyramid, x, y)
    return _decode_feats(field.params, feats, cache)


# ---------------------------------------------------------------------------
# public operations


def bilinear_query(level, xk, yk):
    """Feature vector at clamped level coordinates (standard bilinear blend)."""
    if not (math.isfinite(xk) and math.isfinite(yk)):
        raise InvalidCoordinateError("non-finite level coordinate")
    if not (0.0 <= xk <= level.width - 1 and 0.0 <= yk <= level.height - 1):
        raise InvalidCoordinateError(
            f"level coordinate ({xk}, {yk}) outside clamped range"
        )
    out = _bilinear_batch(level, np.array([xk]), np.array([yk]))
    return out[0]


def query_pyramid(pyramid, q):
    """One interpolated feature vector per level for a single query."""
    _check_coord(q.x, q.y, pyramid.image_width, pyramid.image_height)
    feats = _level_feats(pyramid, np.array([float(q.x)]), np.array([float(q.y)]))
    return [f[0] for f in feats]


def fuse_step(h_k, f_next, stage):
    """One gated fusion step on single vectors: FFN(f_next + g * Linear(h))."""
    h_k = np.asarray(h_k, dtype=np.float64)
    f_next = np.asarray(f_next, dtype=np.float64)
    if h_k.shape != (stage.in_dim,):
        raise ShapeError(f"h_k must have shape ({stage.in_dim},), got {h_k.shape}")
    if f_next.shape != (stage.out_dim,):
        raise ShapeError(f"f_next must have shape ({stage.out_dim},), got {f_next.shape}")
    g = stage.gate()
    u = f_next + g * (matvec(stage.proj_w, h_k[None, :], stage.proj_b)[0])
    a = gelu(matvec(stage.ffn_w1, u[None, :], stage.ffn_b1))
    return matvec(stage.ffn_w2, a, stage.ffn_b2)[0]


def decode_batch(field, xs, ys):
    """Depth at many continuous coordinates; returns float64 (B,)."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.shape != ys.shape or xs.ndim != 1:
        raise ShapeError("xs and ys must be matching 1-D arrays")
    if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(ys))):
        raise InvalidCoordinateError("non-finite query coordinate in batch")
    w, h = field.width, field.height
    if np.any(xs < 0) or np.any(xs > w) or np.any(ys < 0) or np.any(ys > h):
        raise InvalidCoordinateError("batch query outside image domain")
    return _eval(field, xs, ys)


def decode_depth(field, q):
    """Depth at a single continuous coordinate (> 0 by construction)."""
    _check_coord(q.x, q.y, field.width, field.height)
    return float(_eval(field, np.array([float(q.x)]), np.array([float(q.y)]))[0])


def _num_workers():
    env = os.environ.get(WORKERS_ENV, "")
    if env.strip():
        try:
            n = int(env)
        except ValueError:
            n = 1
        return max(1, n)
    return max(1, os.cpu_count() or 1)


def pixel_centers(out_w, out_h, image_width, image_height):
    """Continuous query coords at pixel centers of an out_w x out_h grid."""
    xs = (np.arange(out_w, dtype=np.float64) + 0.5) * (image_width / out_w)
    ys = (np.arange(out_h, dtype=np.float64) + 0.5) * (image_height / out_h)
    return xs, ys


def decode_grid(field, out_w, out_h):
    """Render the field at pixel centers of an arbitrary output grid.

    Returns a row-major DepthMap (decoded values are positive by
    construction). Rows are sharded over a thread pool sized by the
    DEPTHFIELD_WORKERS env var (default: machine parallelism); sharding
    does not change the per-query results.
    """
    from .metrics import DepthMap

    if out_w < 1 or out_h < 1:
        raise ShapeError("output grid dims must be >= 1")
    xs, ys = pixel_centers(out_w, out_h, field.width, field.height)
    out = np.empty((out_h, out_w), dtype=np.float64)
    xrow = xs  # shared across rows

    def run_rows(j0, j1):
        for j in range(j0, j1):
            out[j] = _eval(field, xrow, np.full(out_w, ys[j]))

    workers = min(_num_workers(), out_h)
    if workers <= 1 or out_h < 4:
        run_rows(0, out_h)
    else:
        step = (out_h + workers - 1) // workers
        bounds = [(j, min(j + step, out_h)) for j in range(0, out_h, step)]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(lambda b: run_rows(*b), bounds))
    return DepthMap(out)


def differentiable_mask(field, xs, ys):
    """Vectorized interior test: one cell of margin from every clamp seam.

    The field is non-differentiable on the clamp seams (level coordinate
    w_k - 1 / h_k - 1) and at the image boundary; interior interpolation-cell
    edges are excluded from the differentiability contract but not policed.
    """
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    w, h = field.width, field.height
    ok = (xs > 0.0) & (xs < w) & (ys > 0.0) & (ys < h)
    for lv in field.pyramid.levels:
        ok &= (xs * (lv.width / w) <= lv.width - 2) & (ys * (lv.height / h) <= lv.height - 2)
    return ok


def differentiable_at(field, x, y):
    """Scalar version of :func:`differentiable_mask`."""
    return bool(differentiable_mask(field, np.array([x]), np.array([y]))[0])
