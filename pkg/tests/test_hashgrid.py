"""Tests for the multiresolution hash-grid encoder."""

import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from src.config import TrainConfig
from src.encoders import create_encoder
from src.encoders.base import SurfaceQuery
from src.encoders.hashgrid import (
    INIT_SCALE,
    HashGridEncoder,
    dilated_bounds,
    init_hashgrid,
    spatial_hash,
)
from src.errors import ConfigError

UNIT_BOX = (np.zeros(3), np.ones(3))


def small_grid(**kwargs):
    options = {"levels": 2, "base_resolution": 2, "features_per_level": 2, "table_size_log2": 10}
    options.update(kwargs)
    return HashGridEncoder(UNIT_BOX, **options)


class TestInit:
    def test_default_parameter_count(self):
        grid = HashGridEncoder(UNIT_BOX, table_size_log2=17, dtype=np.float32)
        assert grid.param_count() == 4_194_304
        assert grid.tables.shape == (8, 1 << 17, 4)
        assert grid.output_width == 32
        assert grid.gathers_per_query == 64

    def test_largest_sweep_size(self):
        grid = HashGridEncoder(UNIT_BOX, table_size_log2=19, dtype=np.float32)
        assert grid.param_count() == 16_777_216

    def test_initial_values_small(self):
        grid = small_grid()
        assert np.all(np.abs(grid.tables) <= INIT_SCALE)

    def test_same_seed_identical(self):
        a = small_grid(seed=3)
        b = small_grid(seed=3)
        np.testing.assert_array_equal(a.tables, b.tables)
        assert not np.array_equal(a.tables, small_grid(seed=4).tables)

    def test_resolutions_grow_geometrically(self):
        grid = HashGridEncoder(UNIT_BOX, levels=4, base_resolution=4, per_level_scale=2.0,
                               table_size_log2=10)
        assert grid.resolutions == [4, 8, 16, 32]
        # 5^3 and 9^3 vertices fit in 1024 rows, 17^3 do not
        assert grid.dense == [True, True, False, False]

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"levels": 0},
            {"base_resolution": 0},
            {"features_per_level": 0},
            {"per_level_scale": 0.5},
            {"table_size_log2": 9},
            {"table_size_log2": 25},
        ],
    )
    def test_invalid_config_rejected(self, kwargs):
        with pytest.raises(ConfigError):
            small_grid(**kwargs)

    def test_empty_box_rejected(self):
        with pytest.raises(ConfigError):
            HashGridEncoder((np.zeros(3), np.array([1.0, 0.0, 1.0])), table_size_log2=10)

    def test_dilated_bounds(self, cube_mesh):
        lo, hi = dilated_bounds(cube_mesh)
        np.testing.assert_allclose(lo, [-0.01] * 3)
        np.testing.assert_allclose(hi, [1.01] * 3)

    def test_from_config(self, cube_mesh):
        config = TrainConfig.from_mapping(
            {"encoder": "hashgrid", "hash_table_size_log2": 10, "hash_levels": 3}
        )
        grid = create_encoder(cube_mesh, config)
        assert isinstance(grid, HashGridEncoder)
        assert grid.tables.shape == (3, 1024, 4)
        np.testing.assert_allclose(grid.lo, [-0.01] * 3)
        same = init_hashgrid(config, config.seed, dilated_bounds(cube_mesh))
        np.testing.assert_array_equal(grid.tables, same.tables)


class TestIndexing:
    def test_dense_rows_are_unique(self):
        grid = small_grid(levels=1, base_resolution=4)
        r = grid.resolutions[0]
        corners = np.stack(np.meshgrid(*[np.arange(r + 1)] * 3, indexing="ij"), -1).reshape(-1, 3)
        rows = grid.corner_rows(0, corners)
        assert len(np.unique(rows)) == (r + 1) ** 3
        assert rows.max() < grid.table_size

    def test_spatial_hash_matches_integer_arithmetic(self, rng):
        coords = rng.integers(0, 5000, (50, 3))
        size = 1 << 12
        rows = spatial_hash(coords, size)
        for (x, y, z), row in zip(coords.tolist(), rows, strict=True):
            h = (x * 1) ^ (y * 2654435761) ^ (z * 805459861)
            assert row == (h & 0xFFFFFFFF) % size

    def test_coarse_level_uses_hash(self):
        grid = small_grid(levels=1, base_resolution=64)
        assert grid.dense == [False]
        corners = np.array([[1, 2, 3], [64, 64, 64]])
        np.testing.assert_array_equal(
            grid.corner_rows(0, corners), spatial_hash(corners, grid.table_size)
        )


class TestHashEncode:
    def test_grid_corner_returns_stored_feature(self):
        grid = small_grid(levels=1, base_resolution=4)
        grid.tables[:] = np.random.default_rng(0).standard_normal(grid.tables.shape)
        row = grid.corner_rows(0, np.array([1, 2, 3]))
        out = grid.hash_encode(np.array([0.25, 0.5, 0.75]))
        assert out.shape == (2,)
        np.testing.assert_allclose(out, grid.tables[0, row])

    def test_constant_tables_give_constant_output(self, rng):
        grid = small_grid(levels=3, base_resolution=3, per_level_scale=3.0)
        grid.tables[:] = 0.7
        out = grid.hash_encode(rng.random((100, 3)))
        np.testing.assert_allclose(out, 0.7)

    def test_reproduces_linear_field_on_dense_level(self, rng):
        grid = small_grid(levels=1, base_resolution=5)
        r = grid.resolutions[0]
        corners = np.stack(np.meshgrid(*[np.arange(r + 1)] * 3, indexing="ij"), -1).reshape(-1, 3)
        coefficients = np.array([[1.0, -2.0], [0.5, 3.0], [-1.5, 0.25]])
        grid.tables[0, grid.corner_rows(0, corners)] = (corners / r) @ coefficients
        x = rng.random((200, 3))
        np.testing.assert_allclose(grid.hash_encode(x), x @ coefficients, atol=1e-12)

    def test_positions_outside_box_clamped(self):
        grid = small_grid()
        grid.tables[:] = np.random.default_rng(1).standard_normal(grid.tables.shape)
        np.testing.assert_array_equal(
            grid.hash_encode(np.array([2.0, -1.0, 0.5])),
            grid.hash_encode(np.array([1.0, 0.0, 0.5])),
        )

    def test_forward_reads_positions(self, rng):
        grid = small_grid()
        positions = rng.random((10, 3))
        query = SurfaceQuery(
            faces=np.zeros(10, dtype=int), u=np.zeros(10), v=np.zeros(10), positions=positions
        )
        out, _ = grid.forward(query)
        np.testing.assert_array_equal(out, grid.hash_encode(positions))


class TestHashEncodeBackward:
    def test_corner_query_hits_one_row_per_level(self):
        grid = small_grid(levels=1, base_resolution=4)
        g = np.array([1.0, -2.0])
        grid.hash_encode_backward(np.array([0.25, 0.5, 0.75]), g)
        row = grid.corner_rows(0, np.array([1, 2, 3]))
        np.testing.assert_allclose(grid.table_grad[0, row], g)
        assert np.count_nonzero(np.abs(grid.table_grad).sum(axis=-1)) == 1

    def test_accumulates_across_calls(self, rng):
        grid = small_grid()
        x = rng.random((5, 3))
        g = rng.standard_normal((5, grid.output_width))
        grid.hash_encode_backward(x, g)
        once = grid.table_grad.copy()
        grid.hash_encode_backward(x, g)
        np.testing.assert_allclose(grid.table_grad, 2 * once)

    def test_matches_finite_differences(self, rng):
        grid = small_grid()
        grid.tables[:] = rng.standard_normal(grid.tables.shape)
        x = rng.random((3, 3))
        upstream = rng.standard_normal((3, grid.output_width))
        grid.hash_encode_backward(x, upstream)

        def loss():
            return float(np.sum(grid.hash_encode(x) * upstream))

        h = 1e-4
        numeric = np.zeros_like(grid.tables)
        touched = np.flatnonzero(np.abs(grid.table_grad).sum(axis=(0, 2)))
        for row in touched:
            for level in range(grid.levels):
                for f in range(grid.features_per_level):
                    saved = grid.tables[level, row, f]
                    grid.tables[level, row, f] = saved + h
                    up = loss()
                    grid.tables[level, row, f] = saved - h
                    down = loss()
                    grid.tables[level, row, f] = saved
                    numeric[level, row, f] = (up - down) / (2 * h)
        np.testing.assert_allclose(grid.table_grad, numeric, rtol=1e-6, atol=1e-9)


class TestStateDict:
    def test_round_trip(self, rng):
        grid = small_grid(seed=2)
        other = HashGridEncoder((np.full(3, -5.0), np.full(3, 5.0)), levels=2, base_resolution=2,
                                features_per_level=2, table_size_log2=10, seed=7)
        other.load_state_dict({k: np.array(v) for k, v in grid.state_dict().items()})
        x = rng.random((20, 3))
        np.testing.assert_array_equal(other.hash_encode(x), grid.hash_encode(x))

    def test_shape_mismatch_rejected(self):
        grid = small_grid()
        with pytest.raises(ConfigError):
            small_grid(levels=3).load_state_dict(grid.state_dict())
