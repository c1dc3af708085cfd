"""Tests for vertex features, sub-triangle lookup and per-face LOD."""

import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from src.config import TrainConfig
from src.encoders import create_encoder, discover_encoders
from src.encoders.base import SurfaceQuery
from src.encoders.hashgrid import HashGridEncoder
from src.encoders.vertex import (
    INIT_SCALE,
    VertexFeatureEncoder,
    grid_index,
    grid_points,
    init_store,
    locate,
    locate_batch,
    sites,
)
from src.errors import ConfigError, GeometryError, ValidationError
from src.geometry import TriangleMesh


def quad_mesh():
    return TriangleMesh([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], [[0, 1, 2], [0, 2, 3]])


def random_barycentrics(rng, n):
    r = rng.random((n, 2))
    s = np.sqrt(r[:, 0])
    return 1.0 - s, r[:, 1] * s


def affine(u, v):
    """A 4-wide affine function of the barycentrics."""
    u = np.asarray(u, dtype=np.float64)[..., None]
    v = np.asarray(v, dtype=np.float64)[..., None]
    return np.array([0.5, -1.0, 2.0, 0.0]) + u * np.array([1.0, 3.0, -2.0, 0.5]) + v * np.array(
        [-4.0, 0.25, 1.0, 7.0]
    )


class TestGrid:
    def test_sites(self):
        assert sites(1) == 3
        assert sites(2) == 6
        assert sites(3) == 10
        assert sites(4) == 15

    @pytest.mark.parametrize("k", [1, 2, 3, 5, 8])
    def test_grid_index_enumerates_block(self, k):
        a, b = grid_points(k)
        assert len(a) == sites(k)
        np.testing.assert_array_equal(grid_index(a, b, k), np.arange(sites(k)))

    def test_grid_index_corners(self):
        assert grid_index(0, 0, 4) == 0
        assert grid_index(0, 4, 4) == 4
        assert grid_index(4, 0, 4) == sites(4) - 1


class TestLocate:
    def test_level_one_is_identity(self):
        ref = locate(0.3, 0.3, 1)
        assert ref.cell == (0, 0)
        assert not ref.upper
        assert ref.local == pytest.approx((0.3, 0.3))

    def test_diagonal_belongs_to_lower(self):
        ref = locate(0.25, 0.25, 2)
        assert ref.cell == (0, 0)
        assert not ref.upper
        assert ref.local == pytest.approx((0.5, 0.5))

    def test_upper_sub_triangle(self):
        ref = locate(0.4, 0.4, 2)
        assert ref.cell == (0, 0)
        assert ref.upper
        assert ref.local == pytest.approx((0.2, 0.2))
        assert ref.corners == ((1, 1), (0, 1), (1, 0))

    def test_boundary_clamps_to_last_cell(self):
        ref = locate(1.0, 0.0, 3)
        assert ref.cell == (2, 0)
        assert not ref.upper
        assert ref.local == pytest.approx((1.0, 0.0))
        # all weight on grid vertex (3, 0)
        assert ref.weights[1] == pytest.approx(1.0)
        assert ref.corners[1] == (3, 0)

    def test_hypotenuse_node(self):
        ref = locate(0.5, 0.5, 2)
        assert ref.cell[0] + ref.cell[1] <= 1
        weights = dict(zip(ref.corners, ref.weights, strict=True))
        assert weights[(1, 1)] == pytest.approx(1.0)

    @pytest.mark.parametrize(("u", "v"), [(-0.1, 0.2), (0.7, 0.7), (0.2, -1e-6), (np.nan, 0.0)])
    def test_outside_triangle_rejected(self, u, v):
        with pytest.raises(ValidationError):
            locate(u, v, 2)

    def test_tiny_excursions_tolerated(self):
        ref = locate(1.0 + 5e-10, 0.0, 2)
        assert ref.cell == (1, 0)

    def test_level_zero_rejected(self):
        with pytest.raises(ValidationError):
            locate(0.2, 0.2, 0)

    @pytest.mark.parametrize("k", range(1, 9))
    def test_partition_and_convexity(self, rng, k):
        u, v = random_barycentrics(rng, 5000)
        # include the corners and edges
        u = np.concatenate([u, [0.0, 1.0, 0.0, 0.5, 0.0, 1.0 / k]])
        v = np.concatenate([v, [0.0, 0.0, 1.0, 0.5, 0.5, 1.0 - 1.0 / k]])
        located = locate_batch(u, v, k)

        cell_sum = located.cell_u + located.cell_v
        assert np.all(located.cell_u >= 0)
        assert np.all(located.cell_v >= 0)
        assert np.all(cell_sum <= k - 1)
        assert np.all(cell_sum[located.upper] <= k - 2)

        w = located.weights
        assert np.all(w >= -1e-9)
        np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-9)
        assert np.all(located.corners.sum(axis=2) <= k)

        gu, gv = located.to_global(k)
        np.testing.assert_allclose(gu, u, atol=1e-9)
        np.testing.assert_allclose(gv, v, atol=1e-9)

        # corners weighted by the local coordinates land on the query point
        point = np.einsum("nc,ncd->nd", w, located.corners) / k
        np.testing.assert_allclose(point[:, 0], u, atol=1e-9)
        np.testing.assert_allclose(point[:, 1], v, atol=1e-9)


class TestInitStore:
    def test_cube_parameters(self, cube_mesh):
        store = init_store(cube_mesh, d=4, seed=3)
        assert store.param_count() == 32
        assert store.base_features.shape == (8, 4)
        assert np.all(np.abs(store.base_features) <= INIT_SCALE)
        assert np.all(store.face_lod == 1)
        assert store.virtual_vertex_count() == 0

    def test_same_seed_is_bit_identical(self, cube_mesh):
        a = init_store(cube_mesh, d=4, seed=11)
        b = init_store(cube_mesh, d=4, seed=11)
        np.testing.assert_array_equal(a.base_features, b.base_features)
        c = init_store(cube_mesh, d=4, seed=12)
        assert not np.array_equal(a.base_features, c.base_features)

    def test_zero_width_rejected(self, cube_mesh):
        with pytest.raises(ValidationError):
            init_store(cube_mesh, d=0)

    def test_output_width_and_gathers(self, cube_mesh):
        store = init_store(cube_mesh, d=6)
        assert store.output_width == 6
        assert store.gathers_per_query == 3


class TestEncode:
    def setup_method(self):
        self.mesh = quad_mesh()
        self.store = VertexFeatureEncoder(self.mesh, feature_dim=4, seed=0)

    def test_vertex_query_returns_feature(self):
        i = self.mesh.faces[0, 0]
        np.testing.assert_array_equal(self.store.encode(0, 0.0, 0.0), self.store.base_features[i])

    def test_barycentric_combination(self):
        i, j, k = self.mesh.faces[0]
        self.store.base_features[i] = [1, 0, 0, 0]
        self.store.base_features[j] = [0, 1, 0, 0]
        self.store.base_features[k] = [0, 0, 1, 0]
        np.testing.assert_allclose(self.store.encode(0, 0.2, 0.3), [0.5, 0.2, 0.3, 0.0])

    def test_batched_matches_scalar(self, rng):
        u, v = random_barycentrics(rng, 20)
        faces = rng.integers(0, 2, 20)
        batch = self.store.encode(faces, u, v)
        assert batch.shape == (20, 4)
        for n in range(20):
            single = self.store.encode(int(faces[n]), u[n], v[n])
            np.testing.assert_allclose(batch[n], single, rtol=1e-12)

    def test_refined_block_reproduces_affine_function(self, rng):
        self.store.refine_face(0, 4)
        a, b = grid_points(4)
        self.store.block(0)[:] = affine(a / 4, b / 4)
        u, v = random_barycentrics(rng, 100)
        out = self.store.encode(np.zeros(100, dtype=int), u, v)
        np.testing.assert_allclose(out, affine(u, v), atol=1e-6)

    def test_face_out_of_range(self):
        with pytest.raises(GeometryError):
            self.store.encode(2, 0.1, 0.1)
        with pytest.raises(GeometryError):
            self.store.encode(-1, 0.1, 0.1)

    def test_outside_triangle_rejected(self):
        with pytest.raises(ValidationError):
            self.store.encode(0, 0.8, 0.8)

    def test_forward_takes_surface_query(self, rng):
        u, v = random_barycentrics(rng, 10)
        faces = rng.integers(0, 2, 10)
        query = SurfaceQuery.on_mesh(self.mesh, faces, u, v)
        out, _ = self.store.forward(query)
        np.testing.assert_array_equal(out, self.store.encode(faces, u, v))


class TestContinuity:
    def test_field_continuous_across_sub_triangle_edges(self, cube_mesh, rng):
        k = 4
        store = VertexFeatureEncoder(cube_mesh, feature_dim=4, seed=0)
        store.refine_face(0, k)
        store.block(0)[:] = rng.standard_normal((sites(k), 4))

        points = []
        for s in range(1, k):  # diagonals u + v = s / k
            t = rng.uniform(0.01, 0.99, 150)
            points.append(np.stack([t * s / k, (1 - t) * s / k], axis=1))
        for a in range(1, k):  # lines u = a / k
            v = rng.uniform(0.001, 1.0 - a / k - 0.001, 150)
            points.append(np.stack([np.full(150, a / k), v], axis=1))
        p = np.concatenate(points)
        assert len(p) >= 900

        delta = 1e-12
        faces = np.zeros(len(p), dtype=int)
        left = store.encode(faces, p[:, 0] - delta, p[:, 1])
        right = store.encode(faces, p[:, 0] + delta, p[:, 1])
        assert np.max(np.abs(left - right)) < 1e-9


class TestEncodeBackward:
    def setup_method(self):
        self.mesh = quad_mesh()
        self.store = VertexFeatureEncoder(self.mesh, feature_dim=4, seed=5)

    def test_vertex_query(self):
        e1 = np.array([1.0, 0.0, 0.0, 0.0])
        self.store.encode_backward(0, 0.0, 0.0, e1)
        i, j, k = self.mesh.faces[0]
        np.testing.assert_array_equal(self.store.base_grad[i], e1)
        np.testing.assert_array_equal(self.store.base_grad[j], np.zeros(4))
        np.testing.assert_array_equal(self.store.base_grad[k], np.zeros(4))
        assert self.store.base_grad.sum() == 1.0

    def test_accumulates_across_calls(self):
        g = np.array([0.5, -1.0, 2.0, 3.0])
        self.store.encode_backward(1, 0.2, 0.3, g)
        once = self.store.base_grad.copy()
        self.store.encode_backward(1, 0.2, 0.3, g)
        np.testing.assert_allclose(self.store.base_grad, 2 * once)
        i, j, k = self.mesh.faces[1]
        np.testing.assert_allclose(once[i], 0.5 * g)
        np.testing.assert_allclose(once[j], 0.2 * g)
        np.testing.assert_allclose(once[k], 0.3 * g)

    def test_zero_grad(self):
        self.store.encode_backward(0, 0.1, 0.1, np.ones(4))
        self.store.zero_grad()
        assert not self.store.base_grad.any()

    @pytest.mark.parametrize("k", [1, 3])
    def test_matches_finite_differences(self, rng, k):
        if k > 1:
            self.store.refine_face(0, k)
            self.store.block(0)[:] = rng.standard_normal((sites(k), 4))
        faces = np.array([0, 0, 1])
        u = np.array([0.1, 0.45, 0.3])
        v = np.array([0.2, 0.35, 0.6])
        upstream = rng.standard_normal((3, 4))

        self.store.zero_grad()
        self.store.encode_backward(faces, u, v, upstream)

        def loss():
            return float(np.sum(self.store.encode(faces, u, v) * upstream))

        h = 1e-4
        for table, grad in zip(self.store.params(), self.store.grads(), strict=True):
            numeric = np.zeros_like(table)
            for idx in np.ndindex(*table.shape):
                saved = table[idx]
                table[idx] = saved + h
                up = loss()
                table[idx] = saved - h
                down = loss()
                table[idx] = saved
                numeric[idx] = (up - down) / (2 * h)
            np.testing.assert_allclose(grad, numeric, rtol=1e-6, atol=1e-9)


class TestRefineFace:
    def setup_method(self):
        self.mesh = quad_mesh()
        self.store = VertexFeatureEncoder(self.mesh, feature_dim=4, seed=9)

    def test_affine_base_features_sampled_at_grid(self):
        i, j, k = self.mesh.faces[0]
        self.store.base_features[i] = affine(0.0, 0.0)
        self.store.base_features[j] = affine(1.0, 0.0)
        self.store.base_features[k] = affine(0.0, 1.0)
        self.store.refine_face(0, 2)
        a, b = grid_points(2)
        block = self.store.block(0)
        assert block.shape == (6, 4)
        np.testing.assert_allclose(block, affine(a / 2, b / 2), atol=1e-12)

    def test_block_size(self):
        assert self.store.block(0) is None
        self.store.refine_face(0, 3)
        assert self.store.block(0).shape == (10, 4)
        assert self.store.face_lod[0] == 3

    def test_value_preserving(self, rng):
        self.store.base_features[:] = rng.standard_normal(self.store.base_features.shape)
        u, v = random_barycentrics(rng, 100)
        faces = np.zeros(100, dtype=int)
        before = self.store.encode(faces, u, v)
        self.store.refine_face(0, 2)
        after_first = self.store.encode(faces, u, v)
        self.store.refine_face(0, 5)
        after_second = self.store.encode(faces, u, v)
        np.testing.assert_allclose(after_first, before, atol=1e-6)
        np.testing.assert_allclose(after_second, before, atol=1e-6)

    def test_superseded_blocks_stay_in_pool(self):
        self.store.refine_face(0, 2)
        self.store.refine_face(0, 4)
        assert len(self.store.virtual_features) == sites(2) + sites(4)
        assert self.store.block_offset[0] == sites(2)
        assert self.store.virtual_vertex_count() == sites(4)

    def test_neighbour_unaffected(self, rng):
        u, v = random_barycentrics(rng, 50)
        faces = np.ones(50, dtype=int)
        before = self.store.encode(faces, u, v)
        self.store.refine_face(0, 3)
        self.store.block(0)[:] = 7.0
        np.testing.assert_array_equal(self.store.encode(faces, u, v), before)

    def test_not_increasing_rejected(self):
        self.store.refine_face(0, 3)
        with pytest.raises(ValidationError):
            self.store.refine_face(0, 3)
        with pytest.raises(ValidationError):
            self.store.refine_face(0, 2)

    def test_out_of_range_face(self):
        with pytest.raises(GeometryError):
            self.store.refine_face(5, 2)


class TestParamCount:
    def test_one_face_refined(self, cube_mesh):
        store = init_store(cube_mesh, d=4)
        store.refine_face(0, 2)
        assert store.param_count() == 32 + 6 * 4

    def test_all_faces_refined(self, cube_mesh):
        store = init_store(cube_mesh, d=4)
        for face in range(cube_mesh.n_faces):
            store.refine_face(face, 2)
        assert store.n_base_used() == 0
        assert store.param_count() == 12 * 6 * 4

    def test_dead_rows_not_counted(self, cube_mesh):
        store = init_store(cube_mesh, d=4)
        store.refine_face(0, 2)
        store.refine_face(0, 3)
        assert store.param_count() == 32 + 10 * 4


class TestStateDict:
    def test_round_trip_is_exact(self, cube_mesh, rng):
        store = init_store(cube_mesh, d=4, seed=1)
        store.refine_face(3, 2)
        store.refine_face(7, 4)
        store.block(7)[:] = rng.standard_normal((sites(4), 4))

        other = init_store(cube_mesh, d=4, seed=99)
        other.load_state_dict({k: np.array(v) for k, v in store.state_dict().items()})
        np.testing.assert_array_equal(other.face_lod, store.face_lod)
        np.testing.assert_array_equal(other.virtual_features, store.virtual_features)

        u, v = random_barycentrics(rng, 64)
        faces = rng.integers(0, cube_mesh.n_faces, 64)
        np.testing.assert_array_equal(other.encode(faces, u, v), store.encode(faces, u, v))
        assert other.virtual_grad.shape == other.virtual_features.shape

    def test_wrong_mesh_rejected(self, cube_mesh):
        store = init_store(cube_mesh, d=4)
        other = VertexFeatureEncoder(quad_mesh(), feature_dim=4)
        with pytest.raises(ValidationError):
            other.load_state_dict(store.state_dict())


class TestRegistry:
    def test_discovers_both_encoders(self):
        registry = discover_encoders()
        assert registry["vertex"] is VertexFeatureEncoder
        assert registry["hashgrid"] is HashGridEncoder

    def test_create_from_config(self, cube_mesh):
        config = TrainConfig.from_mapping({"feature_dim": 2, "seed": 4})
        encoder = create_encoder(cube_mesh, config)
        assert isinstance(encoder, VertexFeatureEncoder)
        assert encoder.feature_dim == 2
        np.testing.assert_array_equal(
            encoder.base_features, init_store(cube_mesh, d=2, seed=4).base_features
        )

    def test_unknown_encoder_rejected(self, cube_mesh):
        config = TrainConfig.from_mapping()
        config.encoder = "octree"
        with pytest.raises(ConfigError, match="unknown encoder"):
            create_encoder(cube_mesh, config)

