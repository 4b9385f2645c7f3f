"""Desk-scale training of the decoder on sparse continuous-coordinate
supervision: seeded coordinate/target draws, fan-in initialization, and an
AdamW loop over the reverse-mode gradients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import loss_gradients_arrays
from .errors import ShapeError, TrainingDivergedError
from .field import DecoderParams, DepthField, FusionStage, MlpHead
from .metrics import DepthMap, log_normalize


@dataclass(frozen=True)
class SupervisionSet:
    """Continuous coordinates (in the ground-truth domain) with targets."""

    xs: np.ndarray
    ys: np.ndarray
    targets: np.ndarray     # normalized depths in [0, 1]
    gt_width: int
    gt_height: int
    seed: int

    def __len__(self):
        return self.xs.size


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 5000
    batch_size: int = 256
    lr: float = 1e-3
    seed: int = 0
    init_scale: float = 1.0
    weight_decay: float = 1e-4

    def __post_init__(self):
        if min(self.steps, self.batch_size) < 1 or self.lr < 0 or self.init_scale <= 0:
            raise ShapeError("train config fields must be positive")


def sample_bilinear_centers(values, xs, ys):
    """Bilinear interpolation with knots at pixel centers (i+0.5, j+0.5)."""
    h, w = values.shape
    u = np.clip(np.asarray(xs, dtype=np.float64) - 0.5, 0.0, w - 1.0)
    v = np.clip(np.asarray(ys, dtype=np.float64) - 0.5, 0.0, h - 1.0)
    i0 = np.clip(np.floor(u).astype(int), 0, w - 1)
    j0 = np.clip(np.floor(v).astype(int), 0, h - 1)
    i1 = np.minimum(i0 + 1, w - 1)
    j1 = np.minimum(j0 + 1, h - 1)
    tx = u - i0
    ty = v - j0
    return ((1 - ty) * ((1 - tx) * values[j0, i0] + tx * values[j0, i1])
            + ty * ((1 - tx) * values[j1, i0] + tx * values[j1, i1]))


def draw_supervision(gt: DepthMap, n, seed):
    """Draw n coordinate/target pairs uniformly over the continuous gt domain.

    Targets are sub-pixel bilinear samples of the log-normalized ground
    truth, so the gt may be higher resolution than the field it supervises.
    Draws landing on invalid gt neighborhoods are rejected and redrawn.
    """
    if n < 1:
        raise ShapeError("need at least one supervision pair")
    if not np.any(gt.validity):
        raise ShapeError("ground truth has no valid pixels")
    normed = log_normalize(gt)
    rng = np.random.default_rng(seed)
    xs = np.empty(0)
    ys = np.empty(0)
    ts = np.empty(0)
    while ts.size < n:
        m = n - ts.size
        cx = rng.random(m) * gt.width
        cy = rng.random(m) * gt.height
        t = sample_bilinear_centers(normed, cx, cy)
        ok = np.isfinite(t)
        xs = np.concatenate([xs, cx[ok]])
        ys = np.concatenate([ys, cy[ok]])
        ts = np.concatenate([ts, t[ok]])
    return SupervisionSet(xs[:n], ys[:n], ts[:n], gt.width, gt.height, seed)


def init_params(channel_dims, seed, scale=1.0, head_hidden=256):
    """Seeded fan-in-scaled decoder init; gates start at 0.5, biases at 0."""
    if any(c < 1 for c in channel_dims):
        raise ShapeError("channel dims must be positive")
    rng = np.random.default_rng(seed)

    def w(rows, cols):
        return rng.normal(0.0, scale / math.sqrt(cols), size=(rows, cols))

    stages = []
    for c_in, c_out in zip(channel_dims, channel_dims[1:]):
        stages.append(FusionStage(
            np.zeros(c_out),
            w(c_out, c_in), np.zeros(c_out),
            w(4 * c_out, c_out), np.zeros(4 * c_out),
            w(c_out, 4 * c_out), np.zeros(c_out),
        ))
    c_last = channel_dims[-1]
    head = MlpHead(
        w(head_hidden, c_last), np.zeros(head_hidden),
        w(head_hidden, head_hidden), np.zeros(head_hidden),
        w(1, head_hidden), np.zeros(1),
    )
    return DecoderParams(tuple(stages), head)


_DECAYED = ("proj_w", "ffn_w1", "ffn_w2", "w1", "w2", "w3")


def _decayed(key):
    return key.rsplit(".", 1)[1] in _DECAYED


def train_toy(field: DepthField, supervision: SupervisionSet, cfg: TrainConfig):
    """Overfit the decoder to the supervision set with AdamW.

    Coordinates are rescaled from the gt domain to the field's image domain.
    The learning rate follows a cosine decay to zero so the L1 objective
    settles instead of oscillating at the terminal step size. Returns
    (trained DecoderParams, per-step loss array). Deterministic under
    cfg.seed. Aborts if the loss exceeds 1000x its initial value.
    """
    if len(supervision) == 0:
        raise ShapeError("empty supervision set")
    xs = supervision.xs * (field.width / supervision.gt_width)
    ys = supervision.ys * (field.height / supervision.gt_height)
    ts = supervision.targets

    params = {k: np.array(v, dtype=np.float64) for k, v in field.params.named_arrays()}
    m = {k: np.zeros_like(v) for k, v in params.items()}
    v = {k: np.zeros_like(v) for k, v in params.items()}
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    rng = np.random.default_rng(cfg.seed)
    losses = np.empty(cfg.steps)
    limit = None

    pyramid = field.pyramid
    n = len(supervision)
    full = np.arange(n)
    for step in range(cfg.steps):
        idx = full if cfg.batch_size >= n else rng.integers(0, n, size=cfg.batch_size)
        fld = DepthField(pyramid, DecoderParams.from_flat(params))
        loss, grads = loss_gradients_arrays(fld, xs[idx], ys[idx], ts[idx])
        losses[step] = loss
        if limit is None:
            limit = 1000.0 * max(loss, 1e-8)
        if loss > limit:
            raise TrainingDivergedError(
                f"loss {loss:.3g} exceeded 1000x initial at step {step}")
        lr = cfg.lr * 0.5 * (1.0 + math.cos(math.pi * step / cfg.steps))
        t = step + 1
        bc1 = 1.0 - beta1 ** t
        bc2 = 1.0 - beta2 ** t
        for key, g in grads.buffers.items():
            m[key] = beta1 * m[key] + (1 - beta1) * g
            v[key] = beta2 * v[key] + (1 - beta2) * g * g
            update = (m[key] / bc1) / (np.sqrt(v[key] / bc2) + eps)
            if cfg.weight_decay and _decayed(key):
                update = update + cfg.weight_decay * params[key]
            params[key] = params[key] - lr * update
    return DecoderParams.from_flat(params), losses
