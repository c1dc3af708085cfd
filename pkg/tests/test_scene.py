"""Tests for scene files, OBJ meshes, the camera and the scene generators."""

import json
import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from src.errors import GeometryError, SceneFormatError, ValidationError
from src.scene import Camera, load_obj, load_scene, save_scene
from src.scenes import GENERATORS, MeshBuilder, generate
from tests.conftest import box_scene

CAMERA = {"position": [0.5, 0.5, 2.0], "look_at": [0.5, 0.5, 0.0], "width": 4, "height": 3}


def write_json(path, data):
    path.write_text(json.dumps(data))
    return str(path)


def inline_scene(**overrides):
    data = {
        "mesh": {
            "vertices": [[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]],
            "faces": [[0, 1, 2], [0, 2, 3]],
        },
        "materials": [{"albedo": [0.5, 0.5, 0.5]}, {"emission": [1, 1, 1]}],
        "face_materials": [0, 1],
        "camera": CAMERA,
    }
    data.update(overrides)
    return data


class TestLoadScene:
    def test_inline_mesh(self, tmp_path):
        scene = load_scene(write_json(tmp_path / "s.json", inline_scene()))
        assert scene.mesh.n_faces == 2
        assert scene.mesh.total_area == pytest.approx(1.0)
        assert list(scene.lights) == [1]
        np.testing.assert_array_equal(scene.face_albedo[1], [0.0, 0.0, 0.0])
        assert scene.environment == (0.0, 0.0, 0.0)
        assert (scene.camera.width, scene.camera.height) == (4, 3)
        assert scene.camera.fov_degrees == 60.0

    def test_obj_mesh(self, tmp_path):
        (tmp_path / "quad.obj").write_text(
            "# quad\nv 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvn 0 0 1\n"
            "f 1//1 2//1 3//1\nf -4 -2 -1\n"
        )
        data = inline_scene(mesh="quad.obj", materials=[{"albedo": [0.2, 0.2, 0.2]}])
        del data["face_materials"]
        scene = load_scene(write_json(tmp_path / "s.json", data))
        np.testing.assert_array_equal(scene.mesh.faces, [[0, 1, 2], [0, 2, 3]])

    def test_environment(self, tmp_path):
        scene = load_scene(write_json(tmp_path / "s.json", inline_scene(environment=[1, 2, 3])))
        assert scene.environment == (1.0, 2.0, 3.0)

    def test_json_error_has_line(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{\n  "mesh": [1, 2,\n')
        with pytest.raises(SceneFormatError) as exc:
            load_scene(str(path))
        assert exc.value.path == str(path)
        assert exc.value.line is not None
        assert str(exc.value).startswith(f"{path}:")

    def test_missing_key(self, tmp_path):
        data = inline_scene()
        del data["camera"]
        with pytest.raises(SceneFormatError, match="camera"):
            load_scene(write_json(tmp_path / "s.json", data))

    def test_face_materials_required_with_several_materials(self, tmp_path):
        data = inline_scene()
        del data["face_materials"]
        with pytest.raises(SceneFormatError, match="face_materials"):
            load_scene(write_json(tmp_path / "s.json", data))

    def test_wrong_face_material_count(self, tmp_path):
        with pytest.raises(SceneFormatError):
            load_scene(write_json(tmp_path / "s.json", inline_scene(face_materials=[0])))

    def test_unknown_material_index(self, tmp_path):
        with pytest.raises(GeometryError) as exc:
            load_scene(write_json(tmp_path / "s.json", inline_scene(face_materials=[0, 2])))
        assert exc.value.face == 1

    def test_out_of_range_vertex(self, tmp_path):
        mesh = {"vertices": [[0, 0, 0], [1, 0, 0], [0, 1, 0]], "faces": [[0, 1, 3]]}
        data = inline_scene(mesh=mesh, face_materials=[0])
        with pytest.raises(GeometryError):
            load_scene(write_json(tmp_path / "s.json", data))

    @pytest.mark.parametrize(
        "camera_fields",
        [{"width": "wide"}, {"height": 2.5}, {"width": True}, {"fov_degrees": [45]}],
    )
    def test_malformed_camera_field(self, tmp_path, camera_fields):
        data = inline_scene(camera={**CAMERA, **camera_fields})
        with pytest.raises(SceneFormatError, match="camera"):
            load_scene(write_json(tmp_path / "s.json", data))

    @pytest.mark.parametrize("entry", ["x", 1.0, None, True])
    def test_face_material_must_be_integer(self, tmp_path, entry):
        data = inline_scene(face_materials=[0, entry])
        with pytest.raises(SceneFormatError, match=r"face_materials\[1\]"):
            load_scene(write_json(tmp_path / "s.json", data))

    def test_bad_albedo(self, tmp_path):
        data = inline_scene(materials=[{"albedo": [2, 0, 0]}, {}])
        with pytest.raises(ValidationError, match="albedo"):
            load_scene(write_json(tmp_path / "s.json", data))

    def test_missing_file(self, tmp_path):
        with pytest.raises(SceneFormatError):
            load_scene(str(tmp_path / "absent.json"))


class TestLoadObj:
    def test_line_context(self, tmp_path):
        path = tmp_path / "m.obj"
        path.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nv 1 1 0\nf 1 2 3 4\n")
        with pytest.raises(SceneFormatError) as exc:
            load_obj(str(path))
        assert exc.value.line == 5
        assert "only triangles" in str(exc.value)

    def test_zero_index(self, tmp_path):
        path = tmp_path / "m.obj"
        path.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 0 1 2\n")
        with pytest.raises(SceneFormatError, match="start at 1"):
            load_obj(str(path))

    def test_bad_vertex(self, tmp_path):
        path = tmp_path / "m.obj"
        path.write_text("v 0 zero 0\n")
        with pytest.raises(SceneFormatError) as exc:
            load_obj(str(path))
        assert exc.value.line == 1

    def test_no_faces(self, tmp_path):
        path = tmp_path / "m.obj"
        path.write_text("v 0 0 0\n")
        with pytest.raises(SceneFormatError, match="no faces"):
            load_obj(str(path))


class TestSaveScene:
    @pytest.mark.parametrize("obj_name", [None, "mesh.obj"])
    def test_round_trip(self, tmp_path, obj_name):
        scene = generate("cornell", subdivisions=2)
        path = str(tmp_path / "scene.json")
        save_scene(scene, path, obj_name=obj_name)
        loaded = load_scene(path)
        assert loaded.geometry_hash() == scene.geometry_hash()
        np.testing.assert_array_equal(loaded.mesh.face_material, scene.mesh.face_material)
        assert loaded.materials == scene.materials
        assert loaded.camera == scene.camera
        if obj_name:
            assert (tmp_path / obj_name).exists()


class TestCamera:
    def test_center_ray_points_at_target(self):
        camera = Camera(position=(0, 0, 2), look_at=(0, 0, 0), width=4, height=4)
        origins, directions = camera.rays(np.array([2.0]), np.array([2.0]))
        np.testing.assert_allclose(origins, [[0, 0, 2]])
        np.testing.assert_allclose(directions, [[0, 0, -1]], atol=1e-12)

    def test_top_left_pixel_looks_up_and_left(self):
        camera = Camera(position=(0, 0, 2), look_at=(0, 0, 0), width=4, height=4)
        _, directions = camera.rays(np.array([0.0]), np.array([0.0]))
        assert directions[0, 0] < 0.0
        assert directions[0, 1] > 0.0
        np.testing.assert_allclose(np.linalg.norm(directions, axis=1), 1.0)

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"width": 0},
            {"fov_degrees": 180.0},
            {"look_at": (0, 0, 2)},
            {"up": (0, 0, 1)},
        ],
    )
    def test_invalid(self, kwargs):
        options = {"position": (0, 0, 2), "look_at": (0, 0, 0)}
        options.update(kwargs)
        with pytest.raises(ValidationError):
            Camera(**options)


class TestGenerators:
    def test_furnace(self):
        scene = generate("furnace")
        assert scene.mesh.n_vertices == 8
        assert scene.mesh.n_faces == 12
        assert len(scene.lights) == 12

    def test_furnace_normals_face_inward(self):
        scene = generate("furnace")
        centroids = scene.mesh.vertices[scene.mesh.faces].mean(axis=1)
        inward = np.sum(scene.mesh.face_normal * (0.5 - centroids), axis=1)
        assert np.all(inward > 0.0)

    def test_cornell_has_one_light(self):
        scene = generate("cornell")
        emissive = [m for m in scene.materials if m.is_emissive]
        assert len(emissive) == 1
        assert len(scene.lights) == 2

    def test_quadwall_wall_is_two_faces(self):
        scene = generate("quadwall", subdivisions=4)
        wall = np.flatnonzero(scene.mesh.face_material == 0)
        assert list(wall) == [0, 1]
        np.testing.assert_allclose(scene.mesh.face_area[wall], [2.0, 2.0])
        np.testing.assert_allclose(scene.mesh.face_normal[wall], [[0, 0, 1], [0, 0, 1]])
        floor = np.flatnonzero(scene.mesh.face_material == 1)
        assert len(floor) == 2 * 4 * 4

    def test_subdivisions_scale_face_count(self):
        assert generate("furnace", subdivisions=3).mesh.n_faces == 6 * 2 * 9

    def test_every_generator_builds(self):
        for kind in GENERATORS:
            scene = generate(kind)
            assert scene.mesh.n_faces > 0
            assert len(scene.lights) > 0

    def test_unknown_kind(self):
        with pytest.raises(ValidationError, match="unknown scene kind"):
            generate("teapot")


class TestMeshBuilder:
    def test_vertices_are_welded(self):
        builder = MeshBuilder()
        m = builder.material((0.5, 0.5, 0.5))
        builder.quad((0, 0, 0), (1, 0, 0), (0, 1, 0), m)
        builder.quad((1, 0, 0), (1, 0, 0), (0, 1, 0), m)
        assert len(builder.vertices) == 6
        assert len(builder.faces) == 4

    def test_quad_winding_follows_edges(self):
        scene = box_scene(albedo=0.5, emission=0.0)
        builder = MeshBuilder()
        m = builder.material((0.5, 0.5, 0.5))
        builder.quad((0, 0, 0), (1, 0, 0), (0, 1, 0), m, subdivisions=2)
        quad = builder.build(scene.camera)
        np.testing.assert_allclose(quad.mesh.face_normal, np.tile([0, 0, 1], (8, 1)))
