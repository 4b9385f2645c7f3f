"""Synthetic scenes with analytically known depth.

A fixture stores pre-activation depth values in channel 0 of the finest
pyramid level and pairs them with a decoder that routes channel 0 through
wide-open gates and exactly identity-configured FFN/head blocks (using
gelu(x) - gelu(-x) = x and relu(x) - relu(-x) = x), so the decoded field
equals bilinear interpolation of the stored values followed by the output
activation. The returned ground truth is computed by an independent
float64 interpolation oracle, not by the decode pipeline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from .errors import FixtureError
from .field import DecoderParams, DepthField, FeatureLevel, FeaturePyramid, FusionStage, MlpHead
from .geometry import CameraIntrinsics
from .metrics import DepthMap

FIXTURE_KINDS = ("constant", "ramp", "slanted", "two-plane", "step")


@dataclass(frozen=True)
class Fixture:
    pyramid: FeaturePyramid
    params: DecoderParams
    gt: DepthMap
    intrinsics: CameraIntrinsics
    meta: dict = dc_field(default_factory=dict)

    @property
    def field(self):
        return DepthField(self.pyramid, self.params)


def output_activation(z):
    """The decoder's final activation: elu(z) + 1 (always positive)."""
    z = np.asarray(z, dtype=np.float64)
    return np.where(z > 0.0, z + 1.0, np.exp(np.minimum(z, 0.0)))


def inverse_activation(d):
    """Pre-activation value whose decoded output is d."""
    d = np.asarray(d, dtype=np.float64)
    if np.any(d <= 0):
        raise FixtureError("fixture depths must be positive")
    return np.where(d >= 1.0, d - 1.0, np.log(np.where(d >= 1.0, 1.0, d)))


def interp_nodes(grid, xs, ys, scale_x, scale_y):
    """Float64 bilinear oracle over node-convention grid values.

    ``grid[j, i]`` sits at image coordinate (i * scale_x, j * scale_y);
    coordinates are clamped to the node range like the decode path.
    """
    h, w = grid.shape
    u = np.clip(np.asarray(xs, dtype=np.float64) / scale_x, 0.0, w - 1.0)
    v = np.clip(np.asarray(ys, dtype=np.float64) / scale_y, 0.0, h - 1.0)
    i0 = np.clip(np.floor(u).astype(int), 0, w - 1)
    j0 = np.clip(np.floor(v).astype(int), 0, h - 1)
    i1 = np.minimum(i0 + 1, w - 1)
    j1 = np.minimum(j0 + 1, h - 1)
    tx = u - i0
    ty = v - j0
    return ((1 - ty) * ((1 - tx) * grid[j0, i0] + tx * grid[j0, i1])
            + ty * ((1 - tx) * grid[j1, i0] + tx * grid[j1, i1]))


def _identity_stage(c_in, c_out):
    """Fusion stage that outputs (input channel 0, 0, ..., 0) exactly."""
    gate_raw = np.full(c_out, 30.0)
    proj_w = np.zeros((c_out, c_in))
    proj_w[0, 0] = 1.0
    ffn_w1 = np.zeros((4 * c_out, c_out))
    ffn_w1[0, 0] = 1.0
    ffn_w1[1, 0] = -1.0
    ffn_w2 = np.zeros((c_out, 4 * c_out))
    ffn_w2[0, 0] = 1.0
    ffn_w2[0, 1] = -1.0
    return FusionStage(gate_raw, proj_w, np.zeros(c_out),
                       ffn_w1, np.zeros(4 * c_out), ffn_w2, np.zeros(c_out))


def _identity_head(c_in):
    """Head that returns channel 0 of its input exactly."""
    w1 = np.zeros((2, c_in))
    w1[0, 0] = 1.0
    w1[1, 0] = -1.0
    w2 = np.array([[1.0, -1.0], [-1.0, 1.0]])
    w3 = np.array([[1.0, -1.0]])
    return MlpHead(w1, np.zeros(2), w2, np.zeros(2), w3, np.zeros(1))


def routing_params(channel_dims):
    """Identity-routing decoder for the given pyramid channel dims."""
    stages = tuple(_identity_stage(a, b) for a, b in zip(channel_dims, channel_dims[1:]))
    return DecoderParams(stages, _identity_head(channel_dims[-1]))


def _position_ramps(h, w):
    jj, ii = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64),
                         indexing="ij")
    return ii / max(w - 1, 1), jj / max(h - 1, 1)


def _smooth_pattern(h, w, rng, k):
    px, py = _position_ramps(h, w)
    amp = rng.uniform(0.05, 0.2)
    return amp * np.sin(2 * np.pi * (k + 1) * px) * np.cos(2 * np.pi * (k + 1) * py)


def _build_pyramid(z_nodes, image_w, image_h, seed):
    """Three levels: signal + position ramps on top, filler below."""
    rng = np.random.default_rng(seed)
    h1, w1 = z_nodes.shape
    px, py = _position_ramps(h1, w1)
    lv1 = FeatureLevel(np.stack([z_nodes, px, py], axis=-1).astype(np.float32))
    levels = [lv1]
    for k, div in enumerate((2, 4)):
        h = max(2, h1 // div)
        w = max(2, w1 // div)
        px, py = _position_ramps(h, w)
        chans = [np.zeros((h, w)), px, py]
        for j in range(k + 1):
            chans.append(_smooth_pattern(h, w, rng, j))
        levels.append(FeatureLevel(np.stack(chans, axis=-1).astype(np.float32)))
    return FeaturePyramid(tuple(levels), image_w, image_h)


def slant_intrinsics(width, height, theta_deg):
    """Focal length keeping the slanted plane in front of the camera."""
    f = max(width, height) * max(1.0, 1.25 * math.tan(math.radians(theta_deg)))
    return CameraIntrinsics(f, f, width / 2.0, height / 2.0)


def _depth_function(kind, width, height, intrinsics, opts):
    cx, cy = intrinsics.cx, intrinsics.cy
    if kind == "constant":
        d0 = opts.get("value", 2.0)
        return lambda x, y: np.full_like(np.asarray(x, dtype=np.float64), d0), {"value": d0}
    if kind == "ramp":
        lo = opts.get("lo", 1.0)
        hi = opts.get("hi", 3.0)
        slope = (hi - lo) / width

        def ramp(x, y):
            return lo + slope * np.asarray(x, dtype=np.float64)

        return ramp, {"lo": lo, "hi": hi, "slope_x": slope}
    if kind == "slanted":
        theta = math.radians(opts.get("theta_deg", 45.0))
        d0 = opts.get("d0", 1.8)
        t = math.tan(theta)

        def slant(x, y):
            return d0 / (1.0 + t * (np.asarray(y, dtype=np.float64) - cy) / intrinsics.fy)

        normal = np.array([0.0, -math.sin(theta), -math.cos(theta)])
        return slant, {"theta_deg": opts.get("theta_deg", 45.0), "d0": d0, "normal": normal}
    if kind == "two-plane":
        d_near = opts.get("near", 1.2)

        def two_plane(x, y):
            x = np.asarray(x, dtype=np.float64)
            far = 2.0 + 1.2 * (x - width / 2.0) / (width / 2.0)
            return np.where(x < width / 2.0, d_near, far)

        return two_plane, {"near": d_near, "split_x": width / 2.0}
    if kind == "step":
        lo = opts.get("lo", 1.5)
        hi = opts.get("hi", 2.5)
        edge = opts.get("edge_x", width / 2.0)

        def step(x, y):
            x = np.asarray(x, dtype=np.float64)
            return np.where(x < edge, lo, hi)

        return step, {"lo": lo, "hi": hi, "edge_x": edge}
    raise FixtureError(f"unknown fixture kind {kind!r}; expected one of {FIXTURE_KINDS}")


def make_fixture(kind, dims=(64, 64), seed=0, gt_scale=1, **opts):
    """Build (pyramid, identity decoder, analytic ground truth) for a scene.

    ``dims`` is (width, height) of both the image domain and the finest
    level grid; ``gt_scale`` renders the ground truth at a multiple of the
    image resolution (sub-pixel supervision). Kind-specific options ride in
    ``opts`` (constant: value; ramp: lo/hi; slanted: theta_deg/d0;
    step: lo/hi/edge_x).
    """
    width, height = dims
    if width < 4 or height < 4:
        raise FixtureError("fixture dims must be at least 4x4")
    if kind == "slanted":
        intr = slant_intrinsics(width, height, opts.get("theta_deg", 45.0))
    else:
        f = float(max(width, height))
        intr = CameraIntrinsics(f, f, width / 2.0, height / 2.0)
    depth_fn, meta = _depth_function(kind, width, height, intr, opts)

    # node j,i of the finest grid sits at image coordinate (i * W/w1, j * H/h1);
    # grid dims equal image dims here, so the node spacing is one pixel
    jj, ii = np.meshgrid(np.arange(height, dtype=np.float64),
                         np.arange(width, dtype=np.float64), indexing="ij")
    d_nodes = depth_fn(ii, jj)
    z_nodes = inverse_activation(d_nodes)
    pyramid = _build_pyramid(z_nodes, width, height, seed)
    params = routing_params(pyramid.channel_dims)

    gw, gh = int(width * gt_scale), int(height * gt_scale)
    gxs = (np.arange(gw, dtype=np.float64) + 0.5) * (width / gw)
    gys = (np.arange(gh, dtype=np.float64) + 0.5) * (height / gh)
    gx, gy = np.meshgrid(gxs, gys)
    z32 = pyramid.levels[0].data[:, :, 0].astype(np.float64)  # what decode interpolates
    gt_vals = output_activation(interp_nodes(z32, gx.ravel(), gy.ravel(), 1.0, 1.0))
    gt = DepthMap(gt_vals.reshape(gh, gw))
    meta = dict(meta)
    meta["kind"] = kind
    meta["depth_fn"] = depth_fn
    return Fixture(pyramid, params, gt, intr, meta)
