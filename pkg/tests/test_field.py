import numpy as np
import pytest

from depthfield.errors import InvalidCoordinateError, ShapeError
from depthfield.field import (
    DepthField,
    FeatureLevel,
    FeaturePyramid,
    QueryCoord,
    bilinear_query,
    decode_batch,
    decode_depth,
    decode_grid,
    fuse_step,
    map_coord,
    query_pyramid,
)
from depthfield.fixtures import make_fixture, routing_params
from depthfield.training import init_params

from conftest import random_pyramid


def level_of(values):
    arr = np.asarray(values, dtype=np.float32)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return FeatureLevel(arr)


class TestMapCoord:
    def test_midpoint_maps_to_midpoint(self):
        lv = level_of(np.zeros((36, 64)))
        assert map_coord(QueryCoord(448, 252), lv, 896, 504) == (32.0, 18.0)

    def test_origin_fixed_point(self):
        lv = level_of(np.zeros((7, 13)))
        assert map_coord(QueryCoord(0, 0), lv, 640, 480) == (0.0, 0.0)

    def test_boundary_clamps_to_last_node(self):
        lv = level_of(np.zeros((36, 64)))
        assert map_coord(QueryCoord(896, 504), lv, 896, 504) == (63.0, 35.0)

    def test_non_finite_rejected(self):
        lv = level_of(np.zeros((4, 4)))
        with pytest.raises(InvalidCoordinateError):
            map_coord(QueryCoord(float("nan"), 1.0), lv, 8, 8)

    def test_out_of_domain_rejected(self):
        lv = level_of(np.zeros((4, 4)))
        with pytest.raises(InvalidCoordinateError):
            map_coord(QueryCoord(9.0, 1.0), lv, 8, 8)


class TestBilinearQuery:
    def test_grid_point_identity(self):
        rng = np.random.default_rng(1)
        lv = FeatureLevel(rng.normal(size=(5, 7, 3)).astype(np.float32))
        got = bilinear_query(lv, 2, 3)
        np.testing.assert_array_equal(got, lv.data[3, 2].astype(np.float64))

    def test_center_is_mean_of_corners(self):
        lv = level_of([[0.0, 1.0], [2.0, 3.0]])
        assert bilinear_query(lv, 0.5, 0.5)[0] == pytest.approx(1.5, abs=1e-12)

    def test_off_center_matches_weight_expansion_oracle(self):
        # independent brute-force expansion of the four corner weights
        lv = level_of([[0.0, 1.0], [2.0, 3.0]])
        tx, ty = 0.25, 0.75
        expected = sum(
            w * v
            for w, v in [
                ((1 - tx) * (1 - ty), 0.0),
                (tx * (1 - ty), 1.0),
                ((1 - tx) * ty, 2.0),
                (tx * ty, 3.0),
            ]
        )
        assert expected == pytest.approx(1.75)
        assert bilinear_query(lv, tx, ty)[0] == pytest.approx(expected, abs=1e-12)

    def test_partition_of_unity_and_bounds(self):
        rng = np.random.default_rng(7)
        lv = FeatureLevel(rng.normal(size=(9, 11, 2)).astype(np.float32))
        ones = level_of(np.ones((9, 11)))
        for _ in range(200):
            x = rng.uniform(0, 10)
            y = rng.uniform(0, 8)
            tx, ty = x - np.floor(x), y - np.floor(y)
            wsum = (1 - tx) * (1 - ty) + tx * (1 - ty) + (1 - tx) * ty + tx * ty
            assert abs(wsum - 1.0) <= 1e-12
            assert abs(bilinear_query(ones, x, y)[0] - 1.0) <= 1e-12
            v = bilinear_query(lv, x, y)
            i0, j0 = int(np.floor(x)), int(np.floor(y))
            i1, j1 = min(i0 + 1, 10), min(j0 + 1, 8)
            corners = lv.data[[j0, j0, j1, j1], [i0, i1, i0, i1]].astype(np.float64)
            assert np.all(v >= corners.min(axis=0) - 1e-12)
            assert np.all(v <= corners.max(axis=0) + 1e-12)

    def test_out_of_range_rejected(self):
        lv = level_of(np.zeros((4, 4)))
        with pytest.raises(InvalidCoordinateError):
            bilinear_query(lv, 3.5, 0.0)


class TestQueryPyramid:
    def test_constant_pyramid_returns_constants(self):
        levels = tuple(
            level_of(np.full((s, s), 0.7)) for s in (8, 4, 2)
        )
        pyr = FeaturePyramid(levels, 16, 16)
        feats = query_pyramid(pyr, QueryCoord(5.3, 9.1))
        assert len(feats) == 3
        for f in feats:
            assert f[0] == pytest.approx(0.7, abs=1e-6)

    def test_single_level_equals_bilinear(self):
        rng = np.random.default_rng(3)
        lv = FeatureLevel(rng.normal(size=(6, 6, 2)).astype(np.float32))
        pyr = FeaturePyramid((lv,), 12, 12)
        q = QueryCoord(7.7, 3.2)
        xk, yk = map_coord(q, lv, 12, 12)
        np.testing.assert_array_equal(query_pyramid(pyr, q)[0], bilinear_query(lv, xk, yk))

    def test_three_level_fixture_matches_manual_oracle(self):
        pyr = random_pyramid(11, image=(896, 504), shapes=((36, 64, 2), (18, 32, 3), (9, 16, 4)))
        q = QueryCoord(448, 252)
        feats = query_pyramid(pyr, q)
        for lv, f in zip(pyr.levels, feats):
            # manual bilinear in float64
            xk = min(q.x * lv.width / 896, lv.width - 1)
            yk = min(q.y * lv.height / 504, lv.height - 1)
            i0, j0 = int(np.floor(xk)), int(np.floor(yk))
            i1, j1 = min(i0 + 1, lv.width - 1), min(j0 + 1, lv.height - 1)
            tx, ty = xk - i0, yk - j0
            dat = lv.data.astype(np.float64)
            expect = ((1 - ty) * ((1 - tx) * dat[j0, i0] + tx * dat[j0, i1])
                      + ty * ((1 - tx) * dat[j1, i0] + tx * dat[j1, i1]))
            np.testing.assert_allclose(f, expect, atol=1e-12)


class TestFuseStep:
    def test_zero_ffn_is_zero_map(self):
        params = init_params((3, 4), seed=0)
        st = params.stages[0]
        zeroed = type(st)(st.gate_raw, st.proj_w, st.proj_b,
                          np.zeros_like(st.ffn_w1), np.zeros_like(st.ffn_b1),
                          np.zeros_like(st.ffn_w2), np.zeros_like(st.ffn_b2))
        out = fuse_step(np.ones(3), np.ones(4), zeroed)
        np.testing.assert_array_equal(out, np.zeros(4))

    def test_closed_gate_suppresses_h(self):
        params = routing_params((3, 4))
        st = params.stages[0]
        closed = type(st)(np.full(4, -40.0), st.proj_w, st.proj_b,
                          st.ffn_w1, st.ffn_b1, st.ffn_w2, st.ffn_b2)
        f_next = np.array([0.3, 0.1, -0.2, 0.5])
        a = fuse_step(np.array([5.0, -2.0, 7.0]), f_next, closed)
        b = fuse_step(np.zeros(3), f_next, closed)
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_matches_straight_line_arithmetic_oracle(self, rng):
        params = init_params((4, 4), seed=9)
        st = params.stages[0]
        h = rng.normal(size=4)
        f = rng.normal(size=4)
        # independent step-by-step evaluation
        from scipy.special import erf

        g = 1 / (1 + np.exp(-st.gate_raw))
        u = f + g * (st.proj_w @ h + st.proj_b)
        t = st.ffn_w1 @ u + st.ffn_b1
        a = 0.5 * t * (1 + erf(t / np.sqrt(2)))
        expect = st.ffn_w2 @ a + st.ffn_b2
        np.testing.assert_allclose(fuse_step(h, f, st), expect, atol=1e-10)

    def test_dimension_mismatch(self):
        params = init_params((3, 4), seed=0)
        with pytest.raises(ShapeError):
            fuse_step(np.ones(4), np.ones(4), params.stages[0])


class TestDecode:
    def test_zero_head_gives_constant_one(self):
        pyr = random_pyramid(5)
        params = init_params(pyr.channel_dims, seed=5, head_hidden=8)
        flat = params.to_flat()
        for k in ("head.w1", "head.w2", "head.w3"):
            flat[k] = np.zeros_like(flat[k])
        fld = DepthField(pyr, type(params).from_flat(flat))
        for q in (QueryCoord(3.3, 4.4), QueryCoord(20.0, 11.5)):
            assert decode_depth(fld, q) == pytest.approx(1.0, abs=0)

    def test_fixture_ramp_equals_interpolated_ramp(self):
        fx = make_fixture("ramp", dims=(16, 16))
        fld = fx.field
        for x in (0.0, 3.25, 9.5, 14.9):
            d = decode_depth(fld, QueryCoord(x, 7.3))
            assert d == pytest.approx(1.0 + fx.meta["slope_x"] * x, abs=1e-5)

    def test_determinism_bit_identical(self):
        fld = make_fixture("slanted", dims=(16, 16)).field
        q = QueryCoord(7.123456, 9.87654)
        assert decode_depth(fld, q) == decode_depth(fld, q)
        a = decode_batch(fld, np.array([1.5, 2.5]), np.array([3.5, 4.5]))
        b = decode_batch(fld, np.array([1.5, 2.5]), np.array([3.5, 4.5]))
        np.testing.assert_array_equal(a, b)

    def test_single_level_pyramid_decodes(self):
        # L = 1: no fusion stages, the head consumes the only level directly
        rng = np.random.default_rng(12)
        lv = FeatureLevel(rng.normal(size=(6, 6, 5)).astype(np.float32))
        pyr = FeaturePyramid((lv,), 12, 12)
        params = init_params(pyr.channel_dims, seed=12, head_hidden=8)
        assert params.stages == ()
        fld = DepthField(pyr, params)
        d = decode_depth(fld, QueryCoord(5.5, 3.25))
        assert np.isfinite(d) and d > 0

    def test_gate_range(self):
        for seed in range(3):
            params = init_params((3, 4, 5), seed=seed)
            for st in params.stages:
                g = st.gate()
                assert np.all(g > 0) and np.all(g < 1)
        for st in make_fixture("ramp", dims=(8, 8)).params.stages:
            g = st.gate()
            assert np.all(g > 0) and np.all(g < 1)


class TestDecodeGrid:
    def test_constant_field_constant_map(self):
        fld = make_fixture("constant", dims=(8, 8), value=2.0).field
        for shape in ((4, 4), (13, 7)):
            grid = decode_grid(fld, *shape)
            assert (grid.width, grid.height) == shape
            assert grid.validity.all()
            np.testing.assert_allclose(grid.values, 2.0, atol=1e-6)

    def test_single_pixel_is_image_center(self):
        fld = make_fixture("ramp", dims=(8, 8)).field
        grid = decode_grid(fld, 1, 1)
        assert grid.values.shape == (1, 1)
        assert grid.values[0, 0] == decode_depth(fld, QueryCoord(4.0, 4.0))

    def test_grid_matches_point_queries_at_centers(self):
        fld = make_fixture("slanted", dims=(8, 8)).field
        out_w, out_h = 32, 32
        grid = decode_grid(fld, out_w, out_h).values
        for j in (0, 7, 19, 31):
            for i in (0, 11, 31):
                q = QueryCoord((i + 0.5) * 8 / out_w, (j + 0.5) * 8 / out_h)
                assert grid[j, i] == pytest.approx(decode_depth(fld, q), abs=1e-9)

    def test_upsampled_blocks_bracket_coarse_values(self):
        # on a continuous monotone fixture, the 1x value at a pixel lies
        # within [min, max] of the 4x4 block of fine values covering it
        fld = make_fixture("ramp", dims=(8, 8)).field
        coarse = decode_grid(fld, 8, 8).values
        fine = decode_grid(fld, 32, 32).values
        for j in range(8):
            for i in range(8):
                block = fine[4 * j:4 * j + 4, 4 * i:4 * i + 4]
                assert block.min() - 1e-9 <= coarse[j, i] <= block.max() + 1e-9

    def test_bad_dims_rejected(self):
        fld = make_fixture("constant", dims=(8, 8)).field
        with pytest.raises(ShapeError):
            decode_grid(fld, 0, 4)


class TestLipschitz:
    def test_no_jumps_across_cell_boundaries(self):
        fx = make_fixture("slanted", dims=(16, 16))
        fld = fx.field
        # estimate the Lipschitz constant once on a dense probe grid
        probe = decode_grid(fld, 256, 256).values
        dx = np.abs(np.diff(probe, axis=1)).max() / (16 / 256)
        dy = np.abs(np.diff(probe, axis=0)).max() / (16 / 256)
        l_est = 1.05 * max(dx, dy)
        rng = np.random.default_rng(2)
        h = 1e-4
        for _ in range(300):
            x = rng.uniform(0.5, 15.5)
            y = rng.uniform(0.5, 15.5)
            d0 = decode_depth(fld, QueryCoord(x, y))
            d1 = decode_depth(fld, QueryCoord(x + h, y))
            assert abs(d1 - d0) <= l_est * h + 1e-12


class TestValidation:
    def test_level_too_small(self):
        with pytest.raises(ShapeError):
            FeatureLevel(np.zeros((1, 4, 1), dtype=np.float32))

    def test_non_finite_level(self):
        dat = np.zeros((4, 4, 1), dtype=np.float32)
        dat[0, 0, 0] = np.nan
        with pytest.raises(ShapeError):
            FeatureLevel(dat)

    def test_increasing_resolution_rejected(self):
        small = FeatureLevel(np.zeros((4, 4, 1), dtype=np.float32))
        big = FeatureLevel(np.zeros((8, 8, 1), dtype=np.float32))
        with pytest.raises(ShapeError):
            FeaturePyramid((small, big), 8, 8)

    def test_params_pyramid_mismatch(self):
        pyr = random_pyramid(0)
        with pytest.raises(ShapeError):
            DepthField(pyr, init_params((2, 3, 4), seed=0))
