"""Exact derivatives of the depth field.

Forward mode (dual numbers) differentiates a query in its two image
coordinates; reverse mode differentiates the mean-L1 supervision loss in
every decoder parameter, treating interpolated pyramid features as
constants. Central finite differences for both directions live here too,
as the independent oracle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dual import Dual2, elu_grad, gelu_grad
from .errors import NonDifferentiableError, ShapeError
from .field import DecoderParams, QueryCoord, _eval, decode_depth, differentiable_mask

COORD_FD_STEP = 1e-3
PARAM_FD_STEP = 1e-4


@dataclass
class ParamGradients:
    """One float64 gradient buffer per decoder tensor, same shapes."""

    buffers: dict

    @classmethod
    def zeros_like(cls, params: DecoderParams):
        return cls({k: np.zeros_like(np.asarray(v, dtype=np.float64))
                    for k, v in params.named_arrays()})

    def __add__(self, other):
        return ParamGradients({k: v + other.buffers[k] for k, v in self.buffers.items()})

    def scaled(self, s):
        return ParamGradients({k: v * s for k, v in self.buffers.items()})

    def max_abs(self):
        return max(float(np.max(np.abs(v))) if v.size else 0.0 for v in self.buffers.values())


def jacobian_batch(field, xs, ys):
    """Depth and its coordinate partials for a batch of interior queries.

    Returns (d, ddx, ddy) float64 arrays. The value slot is computed by the
    same operation sequence as ``decode_batch``.
    """
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    ok = differentiable_mask(field, xs, ys)
    if not np.all(ok):
        bad = int(np.argmin(ok))
        raise NonDifferentiableError(
            f"query ({xs[bad]}, {ys[bad]}) is within one cell of a clamp seam "
            "or the image edge"
        )
    one = np.ones_like(xs)
    zero = np.zeros_like(xs)
    out = _eval(field, Dual2(xs, one, zero), Dual2(ys, zero, one))
    return out.value, out.dx, out.dy


def depth_jacobian(field, q):
    """(depth, dd/dx, dd/dy) at a single interior query coordinate."""
    d, ddx, ddy = jacobian_batch(field, [float(q.x)], [float(q.y)])
    return float(d[0]), float(ddx[0]), float(ddy[0])


def fd_jacobian(field, q, h=COORD_FD_STEP):
    """Central-difference coordinate partials; the oracle for depth_jacobian."""
    x, y = float(q.x), float(q.y)
    dx = (decode_depth(field, QueryCoord(x + h, y)) - decode_depth(field, QueryCoord(x - h, y))) / (2 * h)
    dy = (decode_depth(field, QueryCoord(x, y + h)) - decode_depth(field, QueryCoord(x, y - h))) / (2 * h)
    return dx, dy


# ---------------------------------------------------------------------------
# reverse mode


def _forward_cache(field, xs, ys):
    cache = []
    d = _eval(field, xs, ys, cache=cache)
    return d, cache


def _backward(params, cache, grad_d):
    """Backprop grad wrt the scalar outputs through the cached forward pass."""
    grads = {}
    head = params.head
    hc = cache[-1]
    # d = elu(z) + 1, z: (B, 1)
    dz = (grad_d[:, None]) * elu_grad(hc["z"])
    grads["head.w3"] = dz.T @ hc["r2"]
    grads["head.b3"] = dz.sum(axis=0)
    dr2 = dz @ head.w3
    dz2 = dr2 * (hc["z2"] > 0.0)
    grads["head.w2"] = dz2.T @ hc["r1"]
    grads["head.b2"] = dz2.sum(axis=0)
    dr1 = dz2 @ head.w2
    dz1 = dr1 * (hc["z1"] > 0.0)
    grads["head.w1"] = dz1.T @ hc["hL"]
    grads["head.b1"] = dz1.sum(axis=0)
    dh = dz1 @ head.w1

    for k in range(len(params.stages) - 1, -1, -1):
        st = params.stages[k]
        sc = cache[k]
        # h_next = ffn_w2 @ gelu(ffn_w1 @ u + b1) + b2, u = f_next + g * lin
        da = dh @ st.ffn_w2
        grads[f"stage{k}.ffn_w2"] = dh.T @ sc["a"]
        grads[f"stage{k}.ffn_b2"] = dh.sum(axis=0)
        dt = da * gelu_grad(sc["t"])
        grads[f"stage{k}.ffn_w1"] = dt.T @ sc["u"]
        grads[f"stage{k}.ffn_b1"] = dt.sum(axis=0)
        du = dt @ st.ffn_w1
        g = sc["g"]
        grads[f"stage{k}.gate_raw"] = ((du * sc["lin"]).sum(axis=0)) * g * (1.0 - g)
        dlin = du * g
        grads[f"stage{k}.proj_w"] = dlin.T @ sc["h"]
        grads[f"stage{k}.proj_b"] = dlin.sum(axis=0)
        dh = dlin @ st.proj_w

    return ParamGradients(grads)


def loss_gradients_arrays(field, xs, ys, targets):
    """Mean-L1 loss and parameter gradients over batched coordinate targets."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if xs.size == 0:
        raise ShapeError("empty supervision batch")
    if not (xs.shape == ys.shape == targets.shape):
        raise ShapeError("coords and targets must have matching shapes")
    d, cache = _forward_cache(field, xs, ys)
    resid = d - targets
    loss = float(np.mean(np.abs(resid)))
    # L1 subgradient at zero is zero
    grad_d = np.sign(resid) / xs.size
    return loss, _backward(field.params, cache, grad_d)


def loss_gradients(field, batch):
    """Loss and gradients for a list of (QueryCoord, target depth) pairs."""
    if not batch:
        raise ShapeError("empty supervision batch")
    xs = np.array([q.x for q, _ in batch], dtype=np.float64)
    ys = np.array([q.y for q, _ in batch], dtype=np.float64)
    ts = np.array([t for _, t in batch], dtype=np.float64)
    return loss_gradients_arrays(field, xs, ys, ts)


def fd_param_gradient(field_builder, params, key, indices, batch, h=PARAM_FD_STEP):
    """Central finite differences of the loss in selected entries of a tensor.

    ``field_builder(params)`` must return a field using the given decoder
    parameters. Returns the FD gradient values at the flat ``indices``.
    """
    xs, ys, ts = batch
    flat = {k: v.copy() for k, v in params.to_flat().items()}
    out = []
    for idx in indices:
        for sign in (+1.0, -1.0):
            flat[key].flat[idx] += sign * h
            fld = field_builder(DecoderParams.from_flat(flat))
            d = _eval(fld, xs, ys)
            loss = float(np.mean(np.abs(d - ts)))
            flat[key].flat[idx] -= sign * h
            if sign > 0:
                lp = loss
            else:
                lm = loss
        out.append((lp - lm) / (2 * h))
    return np.array(out)


def check_gradients(field_builder, params, batch, entries_per_tensor=16, h=PARAM_FD_STEP, seed=0):
    """Max relative error between reverse-mode and FD gradients, per tensor.

    Entries are subsampled for large tensors; small tensors are checked
    exhaustively. Returns {tensor key: max relative error}.
    """
    xs, ys, ts = batch
    fld = field_builder(params)
    _, grads = loss_gradients_arrays(fld, xs, ys, ts)
    rng = np.random.default_rng(seed)
    report = {}
    for key, g in grads.buffers.items():
        n = g.size
        if n <= entries_per_tensor:
            idx = np.arange(n)
        else:
            idx = rng.choice(n, size=entries_per_tensor, replace=False)
        fd = fd_param_gradient(field_builder, params, key, idx, batch, h=h)
        an = g.flat[idx]
        denom = np.maximum(np.maximum(np.abs(an), np.abs(fd)), 1e-6)
        report[key] = float(np.max(np.abs(an - fd) / denom))
    return report
