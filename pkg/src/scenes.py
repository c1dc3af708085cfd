"""Procedural desk-scale test scenes.

* ``furnace``  closed cube, every face emissive and reflective; the analytic
  equilibrium radiance is emission / (1 - albedo).
* ``cornell``  open-front box with colored side walls, one ceiling light and
  a blocker box.
* ``quadwall`` a large wall made of exactly two triangles lit by a small,
  close, bright emitter with an occluder in between, standing on a finely
  tessellated floor. The wall's four vertices cannot represent the light
  falloff and shadow, which is what per-face LOD is for.
"""

from __future__ import annotations

from collections.abc import Callable

import numpy as np

from .geometry import Material, TriangleMesh
from .scene import Camera, Scene

WHITE = (0.725, 0.71, 0.68)
RED = (0.63, 0.065, 0.05)
GREEN = (0.14, 0.45, 0.091)


class MeshBuilder:
    """Accumulates welded vertices, triangles and materials."""

    def __init__(self) -> None:
        self.vertices: list[tuple[float, float, float]] = []
        self.faces: list[tuple[int, int, int]] = []
        self.face_material: list[int] = []
        self.materials: list[Material] = []
        self._index: dict[tuple[float, float, float], int] = {}

    def material(self, albedo, emission=(0.0, 0.0, 0.0)) -> int:
        self.materials.append(Material(albedo=tuple(albedo), emission=tuple(emission)))
        return len(self.materials) - 1

    def vertex(self, p) -> int:
        key = (round(float(p[0]), 9), round(float(p[1]), 9), round(float(p[2]), 9))
        index = self._index.get(key)
        if index is None:
            index = len(self.vertices)
            self._index[key] = index
            self.vertices.append(key)
        return index

    def quad(self, origin, edge_u, edge_v, material: int, subdivisions: int = 1) -> None:
        """Planar quad split into a grid of triangle pairs.

        Triangles are wound so their normal points along edge_u x edge_v.
        """
        origin, edge_u, edge_v = (np.asarray(a, dtype=np.float64) for a in (origin, edge_u, edge_v))
        n = subdivisions
        ids = [
            [self.vertex(origin + (i / n) * edge_u + (j / n) * edge_v) for j in range(n + 1)]
            for i in range(n + 1)
        ]
        for i in range(n):
            for j in range(n):
                a, b, c, d = ids[i][j], ids[i + 1][j], ids[i + 1][j + 1], ids[i][j + 1]
                self.faces.extend([(a, b, c), (a, c, d)])
                self.face_material.extend([material, material])

    def box(self, lo, hi, material: int, *, inward: bool = False, subdivisions: int = 1,
            skip: tuple[str, ...] = ()) -> None:
        """Axis-aligned box; ``skip`` names faces to leave out ("-x", "+y", ...)."""
        lo = np.asarray(lo, dtype=np.float64)
        hi = np.asarray(hi, dtype=np.float64)
        dx, dy, dz = hi - lo
        ex, ey, ez = np.array([dx, 0, 0]), np.array([0, dy, 0]), np.array([0, 0, dz])
        # (origin, edge_u, edge_v) with edge_u x edge_v pointing outward
        sides = {
            "-x": (lo, ez, ey),
            "+x": (np.array([hi[0], lo[1], lo[2]]), ey, ez),
            "-y": (lo, ex, ez),
            "+y": (np.array([lo[0], hi[1], lo[2]]), ez, ex),
            "-z": (lo, ey, ex),
            "+z": (np.array([lo[0], lo[1], hi[2]]), ex, ey),
        }
        for name, (origin, eu, ev) in sides.items():
            if name in skip:
                continue
            if inward:
                eu, ev = ev, eu
            self.quad(origin, eu, ev, material, subdivisions)

    def build(self, camera: Camera) -> Scene:
        mesh = TriangleMesh(self.vertices, self.faces, self.face_material)
        return Scene(mesh=mesh, materials=list(self.materials), camera=camera)


def furnace_scene(emission: float = 0.5, albedo: float = 0.5, subdivisions: int = 1,
                  resolution: int = 32) -> Scene:
    builder = MeshBuilder()
    m = builder.material((albedo,) * 3, (emission,) * 3)
    builder.box((0, 0, 0), (1, 1, 1), m, inward=True, subdivisions=subdivisions)
    camera = Camera(
        position=(0.5, 0.5, 0.5),
        look_at=(0.5, 0.5, 0.0),
        fov_degrees=60.0,
        width=resolution,
        height=resolution,
    )
    return builder.build(camera)


def cornell_scene(subdivisions: int = 4, light_emission: float = 12.0,
                  resolution: int = 48) -> Scene:
    builder = MeshBuilder()
    white = builder.material(WHITE)
    red = builder.material(RED)
    green = builder.material(GREEN)
    light = builder.material((0.0, 0.0, 0.0), (light_emission,) * 3)

    # Walls of the unit box, open towards the camera at z = 0.
    n = subdivisions
    builder.quad((0, 0, 0), (0, 1, 0), (0, 0, 1), red, n)  # x = 0, normal +x
    builder.quad((1, 0, 0), (0, 0, 1), (0, 1, 0), green, n)  # x = 1, normal -x
    builder.quad((0, 0, 0), (0, 0, 1), (1, 0, 0), white, n)  # floor, normal +y
    builder.quad((0, 1, 0), (1, 0, 0), (0, 0, 1), white, n)  # ceiling, normal -y
    builder.quad((0, 0, 1), (0, 1, 0), (1, 0, 0), white, n)  # back, normal -z

    builder.quad((0.4, 0.999, 0.4), (0.2, 0, 0), (0, 0, 0.2), light)  # facing down
    builder.box((0.25, 0.0, 0.45), (0.5, 0.45, 0.7), white, skip=("-y",))

    camera = Camera(
        position=(0.5, 0.5, -1.3),
        look_at=(0.5, 0.5, 0.5),
        fov_degrees=40.0,
        width=resolution,
        height=resolution,
    )
    return builder.build(camera)


def quadwall_scene(floor_subdivisions: int = 16, light_emission: float = 40.0,
                   resolution: int = 48) -> Scene:
    builder = MeshBuilder()
    wall = builder.material((0.8, 0.8, 0.8))
    floor = builder.material((0.5, 0.5, 0.5))
    blocker = builder.material((0.4, 0.4, 0.4))
    light = builder.material((0.0, 0.0, 0.0), (light_emission,) * 3)

    builder.quad((-1, -1, 0), (2, 0, 0), (0, 2, 0), wall)  # the two-triangle wall, normal +z
    builder.quad((-1, -1, 0), (0, 0, 2), (2, 0, 0), floor, floor_subdivisions)  # normal +y
    builder.quad((-0.05, 0.25, 0.3), (0, 0.1, 0), (0.1, 0, 0), light)  # facing the wall
    builder.box((-0.1, 0.0, 0.12), (0.1, 0.2, 0.18), blocker)

    camera = Camera(
        position=(0.0, 0.0, 2.5),
        look_at=(0.0, 0.0, 0.0),
        fov_degrees=50.0,
        width=resolution,
        height=resolution,
    )
    return builder.build(camera)


GENERATORS: dict[str, Callable[..., Scene]] = {
    "furnace": furnace_scene,
    "cornell": cornell_scene,
    "quadwall": quadwall_scene,
}


def generate(kind: str, subdivisions: int | None = None) -> Scene:
    """Build a named scene; ``subdivisions`` tunes its tessellation."""
    if kind not in GENERATORS:
        from .errors import ValidationError  # noqa: PLC0415

        raise ValidationError(f"unknown scene kind {kind!r}, expected one of {sorted(GENERATORS)}")
    if subdivisions is None:
        return GENERATORS[kind]()
    keyword = "floor_subdivisions" if kind == "quadwall" else "subdivisions"
    return GENERATORS[kind](**{keyword: subdivisions})
