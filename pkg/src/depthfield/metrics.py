"""Depth normalization, scale-shift alignment, threshold (delta) accuracy,
and the mean-L1 supervision loss.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field as dc_field

import numpy as np

from .errors import DegenerateRangeError, ShapeError, SingularAlignmentError

LOW_QUANTILE = 0.02
HIGH_QUANTILE = 0.98


@dataclass(frozen=True)
class DepthMap:
    """Dense positive depths with a validity mask (invalid = missing data)."""

    values: np.ndarray           # (h, w) float
    validity: np.ndarray = None  # (h, w) bool; default: finite and > 0

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 2:
            raise ShapeError("depth map must be 2-D")
        if self.validity is None:
            mask = np.isfinite(vals) & (vals > 0)
        else:
            mask = np.asarray(self.validity, dtype=bool)
            if mask.shape != vals.shape:
                raise ShapeError("validity mask shape mismatch")
            if np.any(~np.isfinite(vals[mask])) or np.any(vals[mask] <= 0):
                raise ShapeError("valid depths must be finite and positive")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "validity", mask)

    @property
    def height(self):
        return self.values.shape[0]

    @property
    def width(self):
        return self.values.shape[1]

    def valid_values(self):
        return self.values[self.validity]


def log_quantiles(depth_map, low=LOW_QUANTILE, high=HIGH_QUANTILE):
    """(lo, hi) quantiles of log-depth over valid pixels (linear interpolation)."""
    vals = depth_map.valid_values()
    if vals.size < 2:
        raise DegenerateRangeError("not enough valid pixels for quantiles")
    logs = np.log(vals)
    lo = float(np.quantile(logs, low))
    hi = float(np.quantile(logs, high))
    if not hi > lo:
        raise DegenerateRangeError("log-depth quantile range is degenerate")
    return lo, hi


def log_normalize(depth_map, low=LOW_QUANTILE, high=HIGH_QUANTILE):
    """Log depth rescaled by its 2%/98% quantiles into [0, 1], clipped.

    Invalid pixels are preserved as NaN in the returned array. The result is
    invariant to a global depth scale (the log shift cancels).
    """
    lo, hi = log_quantiles(depth_map, low, high)
    out = np.full(depth_map.values.shape, np.nan)
    m = depth_map.validity
    out[m] = np.clip((np.log(depth_map.values[m]) - lo) / (hi - lo), 0.0, 1.0)
    return out


def denormalize(normed, lo, hi):
    """Invert log normalization: exp(lo + t * (hi - lo)). Always positive."""
    return np.exp(lo + np.asarray(normed, dtype=np.float64) * (hi - lo))


@dataclass(frozen=True)
class AlignedMap:
    """Prediction after affine alignment. Unlike DepthMap, values at valid
    pixels may be nonpositive; delta counts those as failures."""

    values: np.ndarray
    validity: np.ndarray


def _joint_valid(pred, gt):
    if pred.values.shape != gt.values.shape:
        raise ShapeError(
            f"prediction {pred.values.shape} and ground truth {gt.values.shape} "
            "shapes differ"
        )
    return pred.validity & gt.validity


def fit_scale_shift(pred_vals, gt_vals):
    """Least-squares (a, b) minimizing sum (a*pred + b - gt)^2."""
    pred_vals = np.asarray(pred_vals, dtype=np.float64)
    gt_vals = np.asarray(gt_vals, dtype=np.float64)
    if pred_vals.size < 2:
        raise SingularAlignmentError("need at least 2 overlapping valid pixels")
    pm = pred_vals.mean()
    gm = gt_vals.mean()
    var = np.mean((pred_vals - pm) ** 2)
    if var <= 1e-30 * max(1.0, pm * pm):
        raise SingularAlignmentError("prediction is constant; normal equations singular")
    a = np.mean((pred_vals - pm) * (gt_vals - gm)) / var
    b = gm - a * pm
    return float(a), float(b)


def align_scale_shift(pred, gt, space="depth"):
    """Affine-align prediction to ground truth over jointly valid pixels.

    ``space='depth'`` fits in linear depth; ``space='disparity'`` fits in
    inverse depth and maps back (nonpositive aligned disparities become
    invalid pixels). Returns (AlignedMap, (scale, shift)); aligned values
    may be nonpositive, and delta counts those as failures.
    """
    m = _joint_valid(pred, gt)
    if space == "depth":
        a, b = fit_scale_shift(pred.values[m], gt.values[m])
        aligned = a * pred.values + b
        return AlignedMap(aligned, pred.validity & np.isfinite(aligned)), (a, b)
    if space == "disparity":
        with np.errstate(divide="ignore"):
            a, b = fit_scale_shift(1.0 / pred.values[m], 1.0 / gt.values[m])
            disp = a / np.where(pred.validity, pred.values, 1.0) + b
        ok = pred.validity & (disp > 0)
        vals = np.where(ok, 1.0 / np.where(disp > 0, disp, 1.0), -1.0)
        return AlignedMap(vals, ok), (a, b)
    raise ShapeError(f"unknown alignment space {space!r}")


def delta_accuracy(pred, gt, threshold, mask=None):
    """Percentage of pixels with max(d/d*, d*/d) below the threshold.

    Evaluated over jointly valid pixels (optionally restricted by ``mask``);
    nonpositive predictions count as failures. Symmetric in (pred, gt).
    """
    if threshold <= 1:
        raise ShapeError("delta threshold must exceed 1")
    m = _joint_valid(pred, gt)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != m.shape:
            raise ShapeError("mask shape mismatch")
        m = m & mask
    count = int(m.sum())
    if count == 0:
        raise ShapeError("no valid pixels to evaluate")
    p = pred.values[m]
    g = gt.values[m]
    pos = p > 0
    ratio = np.full(p.shape, np.inf)
    ratio[pos] = np.maximum(p[pos] / g[pos], g[pos] / p[pos])
    return float(100.0 * np.count_nonzero(ratio < threshold) / count)


def l1_loss(preds, targets):
    """Mean absolute error between equal-length vectors."""
    preds = np.asarray(preds, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if preds.shape != targets.shape or preds.size == 0:
        raise ShapeError("predictions and targets must be equal nonzero length")
    return float(np.mean(np.abs(preds - targets)))


@dataclass
class EvalReport:
    """Delta accuracies at several thresholds, overall and under a mask."""

    thresholds: tuple
    deltas: tuple
    n_pixels: int
    align: str = "none"
    masked_deltas: tuple = None
    n_masked: int = None
    extras: dict = dc_field(default_factory=dict)

    def rows(self):
        out = [("align", self.align), ("pixels", self.n_pixels)]
        for t, d in zip(self.thresholds, self.deltas):
            out.append((f"delta_{t:.6g}", f"{d:.4f}"))
        if self.masked_deltas is not None:
            out.append(("masked_pixels", self.n_masked))
            for t, d in zip(self.thresholds, self.masked_deltas):
                out.append((f"masked_delta_{t:.6g}", f"{d:.4f}"))
        for k, v in self.extras.items():
            out.append((k, v))
        return out

    def to_text(self):
        return "\n".join(f"{k}\t{v}" for k, v in self.rows()) + "\n"

    def to_json(self):
        payload = {
            "align": self.align,
            "pixels": self.n_pixels,
            "thresholds": list(self.thresholds),
            "deltas": list(self.deltas),
        }
        if self.masked_deltas is not None:
            payload["masked_pixels"] = self.n_masked
            payload["masked_deltas"] = list(self.masked_deltas)
        payload.update(self.extras)
        return json.dumps(payload, indent=2) + "\n"


def evaluate(pred, gt, thresholds, align="none", mask=None):
    """Full evaluation: optional alignment, then delta at each threshold."""
    extras = {}
    if align in ("depth", "disparity"):
        pred, (a, b) = align_scale_shift(pred, gt, space=align)
        extras["scale"] = a
        extras["shift"] = b
    elif align != "none":
        raise ShapeError(f"unknown alignment mode {align!r}")
    m = _joint_valid(pred, gt)
    deltas = tuple(delta_accuracy(pred, gt, t) for t in thresholds)
    rep = EvalReport(tuple(thresholds), deltas, int(m.sum()), align=align, extras=extras)
    if mask is not None:
        rep.masked_deltas = tuple(delta_accuracy(pred, gt, t, mask=mask) for t in thresholds)
        rep.n_masked = int((m & np.asarray(mask, dtype=bool)).sum())
    return rep, pred
