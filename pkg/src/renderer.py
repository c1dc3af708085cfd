"""Reference path tracer, neural-cache renderer, image metrics and image files.

Images are float32 arrays of shape (height, width, 3), row 0 at the top,
holding linear radiance.
"""

from __future__ import annotations

import dataclasses
import re
from collections.abc import Callable
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .errors import CheckpointMismatchError, ImageFormatError, ValidationError
from .geometry import cosine_sample_hemisphere, intersect_batch, offset_origins
from .log import get_logger
from .model import RadianceField
from .scene import Camera, Scene

_log = get_logger("renderer")

# Rays traced together per tile pass.
MAX_RAYS_PER_PASS = 1 << 16
DEFAULT_TILE_SIZE = 32

Shader = Callable[[np.ndarray, np.ndarray, np.random.Generator], np.ndarray]


@dataclasses.dataclass(frozen=True)
class Tile:
    index: int
    x0: int
    y0: int
    x1: int
    y1: int


def tiles(width: int, height: int, size: int = DEFAULT_TILE_SIZE) -> list[Tile]:
    out = []
    for y0 in range(0, height, size):
        for x0 in range(0, width, size):
            out.append(Tile(len(out), x0, y0, min(x0 + size, width), min(y0 + size, height)))
    return out


def _render_tile(camera: Camera, tile: Tile, spp: int, seed: int, shade: Shader) -> np.ndarray:
    # One stream per tile keeps images identical for any worker count.
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(tile.index,)))
    ys, xs = np.mgrid[tile.y0:tile.y1, tile.x0:tile.x1]
    xs, ys = xs.ravel(), ys.ravel()
    n = len(xs)
    total = np.zeros((n, 3))
    per_pass = max(1, MAX_RAYS_PER_PASS // n)
    done = 0
    while done < spp:
        count = min(per_pass, spp - done)
        px = np.repeat(xs, count) + rng.random(n * count)
        py = np.repeat(ys, count) + rng.random(n * count)
        origins, directions = camera.rays(px, py)
        radiance = shade(origins, directions, rng)
        total += radiance.reshape(n, count, 3).sum(axis=1)
        done += count
    return (total / spp).reshape(tile.y1 - tile.y0, tile.x1 - tile.x0, 3)


def render_image(camera: Camera, spp: int, seed: int, shade: Shader, workers: int = 1,
                 tile_size: int = DEFAULT_TILE_SIZE) -> np.ndarray:
    """Average ``spp`` jittered samples per pixel of ``shade``; tiles may run in threads."""
    if spp < 1:
        raise ValidationError(f"spp must be >= 1, got {spp}")
    if workers < 1:
        raise ValidationError(f"workers must be >= 1, got {workers}")
    image = np.zeros((camera.height, camera.width, 3), dtype=np.float32)
    work = tiles(camera.width, camera.height, tile_size)

    def run(tile: Tile) -> np.ndarray:
        return _render_tile(camera, tile, spp, seed, shade)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, work))
    else:
        results = [run(tile) for tile in work]
    for tile, block in zip(work, results, strict=True):
        image[tile.y0:tile.y1, tile.x0:tile.x1] = block
    return image


def trace_paths(scene: Scene, origins: np.ndarray, directions: np.ndarray,
                rng: np.random.Generator, max_depth: int) -> np.ndarray:
    """Radiance along rays: emission collected at up to ``max_depth`` hits.

    Lambertian bounces are importance sampled by the cosine, so throughput
    is simply multiplied by the albedo. There is no Russian roulette.
    """
    n = len(origins)
    radiance = np.zeros((n, 3))
    throughput = np.ones((n, 3))
    environment = np.asarray(scene.environment, dtype=np.float64)
    mesh = scene.mesh
    active = np.arange(n)
    o, d = origins, directions
    for depth in range(max_depth):
        hits = intersect_batch(scene.bvh, o, d)
        valid = hits.valid
        escaped = active[~valid]
        radiance[escaped] += throughput[escaped] * environment

        active = active[valid]
        faces = hits.face[valid]
        radiance[active] += throughput[active] * scene.face_emission[faces]
        throughput[active] *= scene.face_albedo[faces]
        if depth == max_depth - 1:
            break

        alive = np.any(throughput[active] > 0.0, axis=1)
        active = active[alive]
        if active.size == 0:
            break
        faces = faces[alive]
        normals = hits.normal[valid][alive]
        points = mesh.point_at(faces, hits.u[valid][alive], hits.v[valid][alive])
        d = cosine_sample_hemisphere(rng, normals)
        o = offset_origins(points, normals, d)
    return radiance


def path_trace(scene: Scene, spp: int, max_depth: int = 16, seed: int = 0,
               camera: Camera | None = None, workers: int = 1,
               tile_size: int = DEFAULT_TILE_SIZE) -> np.ndarray:
    camera = camera or scene.camera
    if max_depth < 1:
        raise ValidationError(f"max_depth must be >= 1, got {max_depth}")

    def shade(origins, directions, rng):
        return trace_paths(scene, origins, directions, rng, max_depth)

    _log.debug("path tracing %dx%d at %d spp, depth %d", camera.width, camera.height, spp,
               max_depth)
    return render_image(camera, spp, seed, shade, workers, tile_size)


def neural_render(scene: Scene, model: RadianceField, spp: int, seed: int = 0,
                  camera: Camera | None = None, workers: int = 1,
                  tile_size: int = DEFAULT_TILE_SIZE) -> np.ndarray:
    """Query the radiance field once at the primary hit of every camera ray."""
    expected = getattr(model, "geometry_hash", None)
    if expected is not None and expected != scene.geometry_hash():
        raise CheckpointMismatchError("model was trained on different geometry than this scene")
    camera = camera or scene.camera
    environment = np.asarray(scene.environment, dtype=np.float64)

    def shade(origins, directions, rng):
        hits = intersect_batch(scene.bvh, origins, directions)
        out = np.tile(environment, (len(origins), 1))
        valid = hits.valid
        if np.any(valid):
            out[valid] = model.radiance(
                hits.face[valid], hits.u[valid], hits.v[valid], -directions[valid]
            )
        return out

    return render_image(camera, spp, seed, shade, workers, tile_size)


def _check_pair(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValidationError(f"image sizes differ: {a.shape} vs {b.shape}")
    return a, b


def mse(a: np.ndarray, b: np.ndarray) -> float:
    a, b = _check_pair(a, b)
    return float(np.mean((a - b) ** 2))


def relmse(a: np.ndarray, b: np.ndarray, eps: float = 1e-2) -> float:
    """MSE with every pixel scaled by 1 / (|b_pixel|^2 + eps)."""
    a, b = _check_pair(a, b)
    scale = (b * b).sum(axis=-1, keepdims=True) + eps
    return float(np.mean((a - b) ** 2 / scale))


def _check_image(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3 or image.shape[0] < 1 or image.shape[1] < 1:
        raise ImageFormatError(f"expected an RGB image of shape (h, w, 3), got {image.shape}")
    if not np.all(np.isfinite(image)):
        raise ImageFormatError("image contains non-finite values")
    return image


def write_pfm(path: str, image: np.ndarray) -> None:
    """Portable Float Map: little-endian float32, bottom scanline first."""
    image = _check_image(image)
    h, w = image.shape[:2]
    with open(path, "wb") as f:
        f.write(f"PF\n{w} {h}\n-1.0\n".encode("ascii"))
        f.write(np.ascontiguousarray(image[::-1], dtype="<f4").tobytes())


_PFM_HEADER = re.compile(rb"(P[Ff])\s+(\d+)\s+(\d+)\s+(\S+)\s")


def read_pfm(path: str) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    m = _PFM_HEADER.match(data)
    if m is None:
        raise ImageFormatError(f"{path}: not a PFM file (bad header)")
    if m.group(1) != b"PF":
        raise ImageFormatError(f"{path}: only RGB PFM files are supported")
    w, h = int(m.group(2)), int(m.group(3))
    try:
        scale = float(m.group(4))
    except ValueError as e:
        raise ImageFormatError(f"{path}: bad PFM scale {m.group(4)!r}") from e
    if w < 1 or h < 1 or scale == 0.0:
        raise ImageFormatError(f"{path}: bad PFM header")
    expected = w * h * 3 * 4
    payload = data[m.end():]
    if len(payload) < expected:
        raise ImageFormatError(f"{path}: truncated PFM, {len(payload)} of {expected} data bytes")
    dtype = "<f4" if scale < 0 else ">f4"
    pixels = np.frombuffer(payload[:expected], dtype=dtype).reshape(h, w, 3)
    return pixels[::-1].astype(np.float32)


def tonemap(image: np.ndarray, gamma: float = 2.2) -> np.ndarray:
    """Clamp to [0, 1], gamma encode, quantize to 8 bits."""
    encoded = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0) ** (1.0 / gamma)
    return np.round(encoded * 255.0).astype(np.uint8)


def write_ppm(path: str, image: np.ndarray, gamma: float = 2.2) -> None:
    image = _check_image(image)
    h, w = image.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(tonemap(image, gamma).tobytes())
