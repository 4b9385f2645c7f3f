import numpy as np
import pytest

from depthfield.field import DepthField, FeatureLevel, FeaturePyramid, _eval
from depthfield.training import init_params


def random_pyramid(seed, image=(32, 32), shapes=((16, 16, 3), (8, 8, 4), (4, 4, 5)), amp=1.0):
    rng = np.random.default_rng(seed)
    levels = tuple(FeatureLevel((amp * rng.normal(size=s)).astype(np.float32)) for s in shapes)
    return FeaturePyramid(levels, *image)


def random_field(seed, head_hidden=16, **kw):
    pyr = random_pyramid(seed, **kw)
    params = init_params(pyr.channel_dims, seed=seed + 1, head_hidden=head_hidden)
    return DepthField(pyr, params)


def activation_pattern(fld, x, y):
    """ReLU sign pattern and per-level cell indices at a query point."""
    cache = []
    _eval(fld, np.array([float(x)]), np.array([float(y)]), cache=cache)
    hc = cache[-1]
    pat = [tuple((hc["z1"][0] > 0).tolist()), tuple((hc["z2"][0] > 0).tolist())]
    for lv in fld.pyramid.levels:
        xk = np.clip(x * lv.width / fld.width, 0, lv.width - 1)
        yk = np.clip(y * lv.height / fld.height, 0, lv.height - 1)
        pat.append((int(np.floor(xk)), int(np.floor(yk))))
    return tuple(pat)


def fd_safe(fld, x, y, h):
    """True when central differences at step h stay on one smooth piece.

    The field is only piecewise-C1 (cell edges, head ReLUs); finite
    differences are a valid oracle only away from those kinks.
    """
    pts = [(x, y)]
    for s in (1.0, 2.0):
        pts += [(x + s * h, y), (x - s * h, y), (x, y + s * h), (x, y - s * h)]
    return len({activation_pattern(fld, *p) for p in pts}) == 1


def draw_fd_queries(fld, rng, n, h, lo=1.0):
    from depthfield.field import differentiable_at

    xs, ys = [], []
    while len(xs) < n:
        x = rng.uniform(lo, fld.width - lo)
        y = rng.uniform(lo, fld.height - lo)
        if differentiable_at(fld, x, y) and fd_safe(fld, x, y, h):
            xs.append(x)
            ys.append(y)
    return np.array(xs), np.array(ys)


def draw_param_fd_batch(fld, rng, n, resid_margin=1e-2, relu_margin=1e-3):
    """Supervision batch on which the loss is smooth in the parameters.

    Parameter finite differences are only a valid oracle if no L1 residual
    and no head ReLU pre-activation sits within the perturbation's reach of
    its kink; redraw until the margins hold.
    """
    while True:
        xs = rng.uniform(2, fld.width - 2, n)
        ys = rng.uniform(2, fld.height - 2, n)
        cache = []
        d = _eval(fld, xs, ys, cache=cache)
        hc = cache[-1]
        if min(np.abs(hc["z1"]).min(), np.abs(hc["z2"]).min()) < relu_margin:
            continue
        ts = rng.uniform(0.3, 2.0, n)
        if np.abs(d - ts).min() < resid_margin:
            continue
        return xs, ys, ts


@pytest.fixture
def rng():
    return np.random.default_rng(0)
