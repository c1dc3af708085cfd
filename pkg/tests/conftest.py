"""Shared fixtures and the --runslow switch for long acceptance runs."""

import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from src.geometry import Material, TriangleMesh
from src.scene import Camera, Scene
from src.scenes import MeshBuilder


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(autouse=True)
def _isolated_config(monkeypatch, tmp_path):
    """Keep user config files and VERTEX_RADIOSITY_* variables out of tests."""
    from src import config

    for key in list(os.environ):
        if key.startswith("VERTEX_RADIOSITY_"):
            monkeypatch.delenv(key)
    monkeypatch.setenv("HOME", str(tmp_path / "home"))
    monkeypatch.chdir(tmp_path)
    config.reload()
    yield
    config.reload()


def unit_cube_mesh():
    """Closed unit cube, 8 vertices, 12 inward-facing faces."""
    builder = MeshBuilder()
    m = builder.material((0.5, 0.5, 0.5))
    builder.box((0, 0, 0), (1, 1, 1), m, inward=True)
    return TriangleMesh(builder.vertices, builder.faces)


def box_scene(albedo, emission, camera=None, subdivisions=1):
    """Closed unit cube with one material everywhere, camera at the center."""
    builder = MeshBuilder()
    m = builder.material((albedo,) * 3, (emission,) * 3)
    builder.box((0, 0, 0), (1, 1, 1), m, inward=True, subdivisions=subdivisions)
    camera = camera or Camera(position=(0.5, 0.5, 0.5), look_at=(0.5, 0.5, 0.0), width=8, height=8)
    return builder.build(camera)


def quad_scene(albedo=0.5, emission=0.0):
    """A single unit quad in the z=0 plane (two faces, areas 0.5 each)."""
    mesh = TriangleMesh([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], [[0, 1, 2], [0, 2, 3]])
    camera = Camera(position=(0.5, 0.5, 2.0), look_at=(0.5, 0.5, 0.0), width=4, height=4)
    return Scene(mesh=mesh, materials=[Material((albedo,) * 3, (emission,) * 3)], camera=camera)


@pytest.fixture
def cube_mesh():
    return unit_cube_mesh()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
