import numpy as np
import pytest

from depthfield.autodiff import (
    check_gradients,
    depth_jacobian,
    fd_jacobian,
    jacobian_batch,
    loss_gradients,
    loss_gradients_arrays,
)
from depthfield.errors import NonDifferentiableError, ShapeError
from depthfield.field import DepthField, QueryCoord, decode_depth
from depthfield.fixtures import make_fixture
from depthfield.training import init_params

from conftest import draw_fd_queries, draw_param_fd_batch, random_field, random_pyramid

def fd_close(a, b, rtol=1e-4, atol=5e-7):
    # atol covers the FD oracle's own O(h^2) truncation on tiny components
    return abs(a - b) <= rtol * max(abs(a), abs(b)) + atol


class TestDepthJacobian:
    def test_constant_field(self):
        fld = make_fixture("constant", dims=(16, 16), value=1.0).field
        d, dx, dy = depth_jacobian(fld, QueryCoord(5.3, 6.7))
        assert d == pytest.approx(1.0, abs=1e-6)
        assert dx == 0.0 and dy == 0.0

    def test_ramp_slope_with_map_coord_scale(self):
        fx = make_fixture("ramp", dims=(16, 16))
        _, dx, dy = depth_jacobian(fx.field, QueryCoord(4.4, 7.3))
        assert dx == pytest.approx(fx.meta["slope_x"], rel=1e-5)
        assert dy == pytest.approx(0.0, abs=1e-9)

    def test_matches_fd_on_random_fields(self):
        h = 1e-3
        for seed in range(2):
            fld = random_field(seed + 50)
            rng = np.random.default_rng(seed)
            xs, ys = draw_fd_queries(fld, rng, 40, h)
            _, ddx, ddy = jacobian_batch(fld, xs, ys)
            for i in range(xs.size):
                fdx, fdy = fd_jacobian(fld, QueryCoord(xs[i], ys[i]), h)
                assert fd_close(ddx[i], fdx)
                assert fd_close(ddy[i], fdy)

    def test_value_slot_equals_decode(self):
        fld = random_field(60)
        rng = np.random.default_rng(1)
        # stay clear of every level's clamp seam (coarsest is 4x4 on a 32px image)
        xs = rng.uniform(2, 15, 50)
        ys = rng.uniform(2, 15, 50)
        for i in range(50):
            # identical operation order (single-query path on both sides)
            d, _, _ = depth_jacobian(fld, QueryCoord(xs[i], ys[i]))
            assert d == decode_depth(fld, QueryCoord(xs[i], ys[i]))
        # batched evaluation agrees with single queries to float64 noise
        db, _, _ = jacobian_batch(fld, xs, ys)
        singles = np.array([decode_depth(fld, QueryCoord(x, y)) for x, y in zip(xs, ys)])
        np.testing.assert_allclose(db, singles, rtol=1e-12)

    def test_boundary_rejected(self):
        fld = random_field(61)
        with pytest.raises(NonDifferentiableError):
            depth_jacobian(fld, QueryCoord(31.9, 16.0))


class TestFdJacobian:
    def test_constant_zero(self):
        fld = make_fixture("constant", dims=(16, 16)).field
        dx, dy = fd_jacobian(fld, QueryCoord(8.3, 7.7))
        assert dx == pytest.approx(0.0, abs=1e-9)
        assert dy == pytest.approx(0.0, abs=1e-9)

    def test_linear_fixture_taylor_bound(self):
        fx = make_fixture("ramp", dims=(16, 16))
        # the field is exactly linear inside a cell, so the FD error is
        # dominated by float64 rounding, far below the O(h^2) Taylor bound
        for h in (1e-2, 1e-3):
            dx, _ = fd_jacobian(fx.field, QueryCoord(4.4, 7.3), h)
            assert abs(dx - fx.meta["slope_x"]) <= h * h + 1e-9


class TestLossGradients:
    def test_perfect_predictions_zero_loss_zero_grads(self):
        fld = make_fixture("ramp", dims=(16, 16)).field
        qs = [QueryCoord(3.3, 4.4), QueryCoord(10.1, 2.2)]
        batch = [(q, decode_depth(fld, q)) for q in qs]
        loss, grads = loss_gradients(fld, batch)
        assert loss == 0.0
        assert grads.max_abs() == 0.0

    def test_single_point_zero_head_hand_chain_rule(self):
        # with an all-zero head, d = elu(0)+1 = 1; only the head output bias
        # receives gradient: dL/db3 = sign(1 - gt) * elu'(0) = sign * 1
        pyr = random_pyramid(3)
        params = init_params(pyr.channel_dims, seed=3, head_hidden=8)
        flat = params.to_flat()
        for k in ("head.w1", "head.w2", "head.w3", "head.b1", "head.b2", "head.b3"):
            flat[k] = np.zeros_like(flat[k])
        fld = DepthField(pyr, type(params).from_flat(flat))
        loss, grads = loss_gradients(fld, [(QueryCoord(5.0, 5.0), 0.25)])
        assert loss == pytest.approx(0.75)
        assert grads.buffers["head.b3"][0] == pytest.approx(1.0)
        # all other tensors see zero gradient through the zero weights
        for key, g in grads.buffers.items():
            if key != "head.b3":
                assert np.all(g == 0.0)

    def test_matches_param_finite_differences(self):
        pyr = random_pyramid(8)
        params = init_params(pyr.channel_dims, seed=9, head_hidden=12)
        rng = np.random.default_rng(4)
        batch = draw_param_fd_batch(DepthField(pyr, params), rng, 8)
        report = check_gradients(lambda p: DepthField(pyr, p), params, batch,
                                 entries_per_tensor=10)
        assert max(report.values()) <= 1e-3

    def test_batch_linearity(self):
        fld = random_field(70)
        rng = np.random.default_rng(5)
        xs = rng.uniform(2, 30, 6)
        ys = rng.uniform(2, 30, 6)
        ts = rng.uniform(0.5, 2.0, 6)
        _, g_all = loss_gradients_arrays(fld, xs, ys, ts)
        singles = [loss_gradients_arrays(fld, xs[i:i+1], ys[i:i+1], ts[i:i+1])[1]
                   for i in range(6)]
        for key in g_all.buffers:
            mean = np.mean([s.buffers[key] for s in singles], axis=0)
            np.testing.assert_allclose(g_all.buffers[key], mean, atol=1e-12)

    def test_empty_batch_rejected(self):
        fld = random_field(71)
        with pytest.raises(ShapeError):
            loss_gradients(fld, [])
