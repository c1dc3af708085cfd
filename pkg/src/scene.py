"""Scene description: JSON scene files with inline or OBJ-referenced meshes.

Scene file layout::

    {
      "mesh": "room.obj" | {"vertices": [[x, y, z], ...], "faces": [[i, j, k], ...]},
      "materials": [{"albedo": [r, g, b], "emission": [r, g, b]}, ...],
      "face_materials": [m0, m1, ...],
      "camera": {"position": [...], "look_at": [...], "up": [...],
                 "fov_degrees": 60, "width": 64, "height": 64},
      "environment": [r, g, b]            (optional, radiance of escaping rays)
    }

Inline face indices are 0-based; OBJ indices follow the OBJ convention
(1-based, negative values count back from the last vertex).
"""

from __future__ import annotations

import dataclasses
import functools
import json
import math
import os
from typing import Any

import numpy as np

from .errors import GeometryError, SceneFormatError, ValidationError
from .geometry import BVH, Material, TriangleMesh, build_bvh
from .log import get_logger

_log = get_logger("scene")


@dataclasses.dataclass(frozen=True)
class Camera:
    position: tuple[float, float, float]
    look_at: tuple[float, float, float]
    up: tuple[float, float, float] = (0.0, 1.0, 0.0)
    fov_degrees: float = 60.0
    width: int = 64
    height: int = 64

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise ValidationError(f"camera resolution must be >= 1, got {self.width}x{self.height}")
        if not 0.0 < self.fov_degrees < 180.0:
            raise ValidationError(f"fov_degrees must lie in (0, 180), got {self.fov_degrees}")
        forward = np.subtract(self.look_at, self.position)
        if np.linalg.norm(forward) == 0.0:
            raise ValidationError("camera position and look_at coincide")
        if np.linalg.norm(np.cross(forward, self.up)) == 0.0:
            raise ValidationError("camera up vector is parallel to the view direction")

    def _frame(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        forward = np.subtract(self.look_at, self.position).astype(np.float64)
        forward /= np.linalg.norm(forward)
        right = np.cross(forward, self.up)
        right /= np.linalg.norm(right)
        up = np.cross(right, forward)
        return forward, right, up

    def rays(self, px, py) -> tuple[np.ndarray, np.ndarray]:
        """Rays through continuous pixel coordinates; (0, 0) is the top-left corner."""
        forward, right, up = self._frame()
        half = math.tan(math.radians(self.fov_degrees) / 2.0)
        aspect = self.width / self.height
        sx = (2.0 * np.asarray(px, dtype=np.float64) / self.width - 1.0) * half * aspect
        sy = (1.0 - 2.0 * np.asarray(py, dtype=np.float64) / self.height) * half
        directions = forward + sx[:, None] * right + sy[:, None] * up
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
        origins = np.broadcast_to(np.asarray(self.position, dtype=np.float64), directions.shape)
        return np.array(origins), directions

    def to_dict(self) -> dict[str, Any]:
        return {
            "position": list(self.position),
            "look_at": list(self.look_at),
            "up": list(self.up),
            "fov_degrees": self.fov_degrees,
            "width": self.width,
            "height": self.height,
        }


@dataclasses.dataclass
class Scene:
    mesh: TriangleMesh
    materials: list[Material]
    camera: Camera
    environment: tuple[float, float, float] = (0.0, 0.0, 0.0)
    path: str | None = None

    def __post_init__(self) -> None:
        if not self.materials:
            raise ValidationError("scene has no materials")
        bad = np.flatnonzero(
            (self.mesh.face_material < 0) | (self.mesh.face_material >= len(self.materials))
        )
        if bad.size:
            i = int(bad[0])
            raise GeometryError(
                f"face {i} uses material {int(self.mesh.face_material[i])} "
                f"but the scene has {len(self.materials)} materials",
                face=i,
            )
        albedo = np.array([m.albedo for m in self.materials])
        emission = np.array([m.emission for m in self.materials])
        self.face_albedo = albedo[self.mesh.face_material]
        self.face_emission = emission[self.mesh.face_material]
        self.environment = tuple(float(c) for c in self.environment)  # type: ignore[assignment]

    @property
    def lights(self) -> np.ndarray:
        """Indices of emissive faces."""
        return np.flatnonzero(np.any(self.face_emission > 0.0, axis=1))

    @functools.cached_property
    def bvh(self) -> BVH:
        _log.debug("building BVH over %d faces", self.mesh.n_faces)
        return build_bvh(self.mesh)

    def geometry_hash(self) -> str:
        return self.mesh.geometry_hash()


def _require(data: dict, key: str, path: str) -> Any:
    if key not in data:
        raise SceneFormatError(f"missing required key {key!r}", path=path)
    return data[key]


def _triple(value: Any, what: str, path: str) -> tuple[float, float, float]:
    if not isinstance(value, (list, tuple)) or len(value) != 3:
        raise SceneFormatError(f"{what} must be a list of 3 numbers, got {value!r}", path=path)
    try:
        return (float(value[0]), float(value[1]), float(value[2]))
    except (TypeError, ValueError) as e:
        raise SceneFormatError(f"{what} must be numeric, got {value!r}", path=path) from e


def _integer(value: Any) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or value != int(value):
        raise ValueError(f"expected an integer, got {value!r}")
    return int(value)


def load_obj(path: str) -> tuple[np.ndarray, np.ndarray]:
    """Read vertex positions and triangles from an OBJ file."""
    vertices: list[tuple[float, float, float]] = []
    faces: list[tuple[int, int, int]] = []
    try:
        with open(path) as f:
            lines = f.readlines()
    except OSError as e:
        raise SceneFormatError(f"cannot read OBJ file: {e}", path=path) from e

    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        tag, args = parts[0], parts[1:]
        if tag == "v":
            if len(args) < 3:
                raise SceneFormatError("vertex needs 3 coordinates", path=path, line=lineno)
            try:
                vertices.append((float(args[0]), float(args[1]), float(args[2])))
            except ValueError as e:
                raise SceneFormatError(f"bad vertex: {line}", path=path, line=lineno) from e
        elif tag == "f":
            if len(args) != 3:
                raise SceneFormatError(
                    f"only triangles are supported, face has {len(args)} vertices",
                    path=path,
                    line=lineno,
                )
            idx = []
            for token in args:
                try:
                    i = int(token.split("/", 1)[0])
                except ValueError as e:
                    raise SceneFormatError(
                        f"bad face index {token!r}", path=path, line=lineno
                    ) from e
                if i == 0:
                    raise SceneFormatError("OBJ indices start at 1", path=path, line=lineno)
                idx.append(i - 1 if i > 0 else len(vertices) + i)
            faces.append((idx[0], idx[1], idx[2]))
        # normals, texture coordinates, groups and materials are ignored

    if not faces:
        raise SceneFormatError("OBJ file contains no faces", path=path)
    return np.array(vertices, dtype=np.float64).reshape(-1, 3), np.array(faces, dtype=np.int64)


def load_scene(path: str) -> Scene:
    """Load and validate a JSON scene file."""
    try:
        with open(path) as f:
            text = f.read()
    except OSError as e:
        raise SceneFormatError(f"cannot read scene file: {e}", path=path) from e
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise SceneFormatError(f"{e.msg} (column {e.colno})", path=path, line=e.lineno) from e
    if not isinstance(data, dict):
        raise SceneFormatError("scene file must contain a JSON object", path=path)

    mesh_spec = _require(data, "mesh", path)
    if isinstance(mesh_spec, str):
        obj_path = os.path.join(os.path.dirname(os.path.abspath(path)), mesh_spec)
        vertices, faces = load_obj(obj_path)
    elif isinstance(mesh_spec, dict):
        try:
            vertices = np.asarray(_require(mesh_spec, "vertices", path), dtype=np.float64)
            faces = np.asarray(_require(mesh_spec, "faces", path), dtype=np.int64)
        except (TypeError, ValueError) as e:
            raise SceneFormatError(f"inline mesh arrays are malformed: {e}", path=path) from e
    else:
        raise SceneFormatError("mesh must be an OBJ path or an inline object", path=path)

    raw_materials = _require(data, "materials", path)
    if not isinstance(raw_materials, list) or not raw_materials:
        raise SceneFormatError("materials must be a non-empty list", path=path)
    materials = []
    for i, m in enumerate(raw_materials):
        if not isinstance(m, dict):
            raise SceneFormatError(f"material {i} must be an object", path=path)
        materials.append(
            Material(
                albedo=_triple(m.get("albedo", [0.0, 0.0, 0.0]), f"material {i} albedo", path),
                emission=_triple(
                    m.get("emission", [0.0, 0.0, 0.0]), f"material {i} emission", path
                ),
            )
        )

    n_faces = len(faces) if faces.ndim == 2 else 0
    face_materials = data.get("face_materials")
    if face_materials is None:
        if len(materials) != 1:
            raise SceneFormatError("face_materials is required with several materials", path=path)
        face_materials = [0] * n_faces
    if not isinstance(face_materials, list) or len(face_materials) != n_faces:
        raise SceneFormatError(
            f"face_materials must list one material per face ({n_faces} faces)", path=path
        )
    for i, m in enumerate(face_materials):
        if isinstance(m, bool) or not isinstance(m, int):
            raise SceneFormatError(f"face_materials[{i}] must be an integer, got {m!r}", path=path)

    cam = _require(data, "camera", path)
    if not isinstance(cam, dict):
        raise SceneFormatError("camera must be an object", path=path)
    try:
        fov_degrees = float(cam.get("fov_degrees", 60.0))
        width = _integer(cam.get("width", 64))
        height = _integer(cam.get("height", 64))
    except (TypeError, ValueError, OverflowError) as e:
        raise SceneFormatError(f"camera fields are malformed: {e}", path=path) from e
    camera = Camera(
        position=_triple(_require(cam, "position", path), "camera position", path),
        look_at=_triple(_require(cam, "look_at", path), "camera look_at", path),
        up=_triple(cam.get("up", [0.0, 1.0, 0.0]), "camera up", path),
        fov_degrees=fov_degrees,
        width=width,
        height=height,
    )
    environment = _triple(data.get("environment", [0.0, 0.0, 0.0]), "environment", path)

    mesh = TriangleMesh(vertices, faces, face_materials)
    scene = Scene(mesh=mesh, materials=materials, camera=camera, environment=environment, path=path)
    _log.info(
        "loaded %s: %d vertices, %d faces, %d emissive faces, area %.4g",
        path,
        mesh.n_vertices,
        mesh.n_faces,
        len(scene.lights),
        mesh.total_area,
    )
    return scene


def save_obj(mesh: TriangleMesh, path: str) -> None:
    with open(path, "w") as f:
        f.write(f"# {mesh.n_vertices} vertices, {mesh.n_faces} faces\n")
        for x, y, z in mesh.vertices.tolist():
            f.write(f"v {x!r} {y!r} {z!r}\n")
        for i, j, k in mesh.faces.tolist():
            f.write(f"f {i + 1} {j + 1} {k + 1}\n")


def save_scene(scene: Scene, path: str, obj_name: str | None = None) -> None:
    """Write ``scene`` as JSON; with ``obj_name`` the mesh goes to a sibling OBJ file."""
    mesh = scene.mesh
    if obj_name is not None:
        save_obj(mesh, os.path.join(os.path.dirname(os.path.abspath(path)), obj_name))
        mesh_spec: Any = obj_name
    else:
        mesh_spec = {"vertices": mesh.vertices.tolist(), "faces": mesh.faces.tolist()}
    data = {
        "mesh": mesh_spec,
        "materials": [
            {"albedo": list(m.albedo), "emission": list(m.emission)} for m in scene.materials
        ],
        "face_materials": mesh.face_material.tolist(),
        "camera": scene.camera.to_dict(),
        "environment": list(scene.environment),
    }
    with open(path, "w") as f:
        json.dump(data, f, indent=1)
        f.write("\n")
