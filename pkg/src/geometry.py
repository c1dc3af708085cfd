"""Triangle meshes, rays, BVH nearest-hit queries and surface/direction sampling.

Barycentric convention used everywhere: a point on face (i, j, k) with
coordinates (u, v) is ``(1 - u - v) * v_i + u * v_j + v * v_k``.
"""

from __future__ import annotations

import dataclasses
import hashlib
import math

import numpy as np

from .errors import GeometryError, ValidationError

RAY_EPSILON = 1e-4
LEAF_SIZE = 4

_DET_EPSILON = 1e-12
_DEGENERATE_AREA = 1e-12
# Rays x faces pairs tested per chunk by the brute-force intersector.
_BRUTE_FORCE_CHUNK = 1 << 21


@dataclasses.dataclass(frozen=True)
class Material:
    """Two-sided Lambertian reflector (BRDF albedo/pi) with constant emission."""

    albedo: tuple[float, float, float] = (0.0, 0.0, 0.0)
    emission: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self) -> None:
        albedo = tuple(float(c) for c in self.albedo)
        emission = tuple(float(c) for c in self.emission)
        if len(albedo) != 3 or len(emission) != 3:
            raise ValidationError("albedo and emission must be RGB triples")
        if not all(math.isfinite(c) and 0.0 <= c <= 1.0 for c in albedo):
            raise ValidationError(f"albedo components must lie in [0, 1], got {albedo}")
        if not all(math.isfinite(c) and c >= 0.0 for c in emission):
            raise ValidationError(f"emission components must be finite and >= 0, got {emission}")
        object.__setattr__(self, "albedo", albedo)
        object.__setattr__(self, "emission", emission)

    @property
    def is_emissive(self) -> bool:
        return any(c > 0.0 for c in self.emission)


class TriangleMesh:
    """Indexed triangle geometry with per-face material indices.

    Arrays are read-only after construction so the mesh can be shared by
    concurrent readers.
    """

    vertices: np.ndarray
    faces: np.ndarray
    face_material: np.ndarray
    face_area: np.ndarray
    face_normal: np.ndarray
    total_area: float

    def __init__(self, vertices, faces, face_material=None) -> None:
        vertices = np.asarray(vertices, dtype=np.float64)
        faces = np.asarray(faces, dtype=np.int64)
        if vertices.ndim != 2 or vertices.shape[1] != 3:
            raise GeometryError(f"vertices must have shape (n, 3), got {vertices.shape}")
        if faces.ndim != 2 or faces.shape[1] != 3:
            raise GeometryError(f"faces must have shape (m, 3), got {faces.shape}")
        if len(faces) == 0:
            raise GeometryError("mesh has no faces")
        if not np.all(np.isfinite(vertices)):
            raise GeometryError("vertex coordinates must be finite")

        n = len(vertices)
        bad = np.flatnonzero(np.any((faces < 0) | (faces >= n), axis=1))
        if bad.size:
            i = int(bad[0])
            raise GeometryError(
                f"face {i} references vertex index out of range {faces[i].tolist()} "
                f"(mesh has {n} vertices)",
                face=i,
            )

        if face_material is None:
            face_material = np.zeros(len(faces), dtype=np.int64)
        face_material = np.asarray(face_material, dtype=np.int64)
        if face_material.shape != (len(faces),):
            raise GeometryError(
                f"expected {len(faces)} face material indices, got {face_material.size}"
            )

        v0, v1, v2 = vertices[faces[:, 0]], vertices[faces[:, 1]], vertices[faces[:, 2]]
        cross = np.cross(v1 - v0, v2 - v0)
        doubled = np.linalg.norm(cross, axis=1)
        area = 0.5 * doubled
        degenerate = np.flatnonzero(area <= _DEGENERATE_AREA)
        if degenerate.size:
            i = int(degenerate[0])
            raise GeometryError(f"face {i} is degenerate (zero area)", face=i)

        self.vertices = vertices
        self.faces = faces
        self.face_material = face_material
        self.face_area = area
        self.face_normal = cross / doubled[:, None]
        self.total_area = float(area.sum())
        for array in (self.vertices, self.faces, self.face_material, self.face_area,
                      self.face_normal):
            array.setflags(write=False)
        self._hash: str | None = None

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def corners(self, faces) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        tri = self.faces[faces]
        return self.vertices[tri[..., 0]], self.vertices[tri[..., 1]], self.vertices[tri[..., 2]]

    def point_at(self, faces, u, v) -> np.ndarray:
        """World positions for barycentric coordinates on the given faces."""
        v0, v1, v2 = self.corners(faces)
        u = np.asarray(u, dtype=np.float64)[..., None]
        v = np.asarray(v, dtype=np.float64)[..., None]
        return (1.0 - u - v) * v0 + u * v1 + v * v2

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def geometry_hash(self) -> str:
        """Content hash of vertex positions and connectivity."""
        if self._hash is None:
            digest = hashlib.sha256()
            digest.update(np.ascontiguousarray(self.vertices).tobytes())
            digest.update(np.ascontiguousarray(self.faces).tobytes())
            self._hash = digest.hexdigest()
        return self._hash


@dataclasses.dataclass(frozen=True)
class Ray:
    origin: tuple[float, float, float]
    direction: tuple[float, float, float]

    def __post_init__(self) -> None:
        norm = math.sqrt(sum(c * c for c in self.direction))
        if abs(norm - 1.0) > 1e-6:
            raise ValidationError(f"ray direction must be normalized, |d| = {norm}")


@dataclasses.dataclass(frozen=True)
class Hit:
    face: int
    u: float
    v: float
    t: float
    normal: tuple[float, float, float]
    material: int


@dataclasses.dataclass
class HitBatch:
    """Nearest hits for a batch of rays; ``face`` is -1 where the ray missed.

    ``normal`` is the geometric normal flipped to face the ray origin.
    """

    face: np.ndarray
    t: np.ndarray
    u: np.ndarray
    v: np.ndarray
    normal: np.ndarray

    @property
    def valid(self) -> np.ndarray:
        return self.face >= 0

    def __len__(self) -> int:
        return len(self.face)


def _dot(a, b) -> np.ndarray:
    return a[:, 0] * b[:, 0] + a[:, 1] * b[:, 1] + a[:, 2] * b[:, 2]


def _moller_trumbore(origins, directions, v0, e1, e2, t_min=RAY_EPSILON):
    """Pairwise ray/triangle test. Returns (t, u, v, hit_mask)."""
    p = np.cross(directions, e2)
    det = _dot(e1, p)
    ok = np.abs(det) > _DET_EPSILON
    inv = np.zeros_like(det)
    np.divide(1.0, det, out=inv, where=ok)
    s = origins - v0
    u = _dot(s, p) * inv
    q = np.cross(s, e1)
    v = _dot(directions, q) * inv
    t = _dot(e2, q) * inv
    ok &= (u >= 0.0) & (v >= 0.0) & (u + v <= 1.0) & (t > t_min)
    return t, u, v, ok


def _finish_hits(mesh, face, t, u, v, directions) -> HitBatch:
    normal = np.zeros((len(face), 3))
    valid = face >= 0
    if np.any(valid):
        n = mesh.face_normal[face[valid]]
        facing = _dot(n, directions[valid]) > 0.0
        n = np.where(facing[:, None], -n, n)
        normal[valid] = n
    t = np.where(valid, t, np.inf)
    u = np.where(valid, u, 0.0)
    v = np.where(valid, v, 0.0)
    return HitBatch(face=face, t=t, u=u, v=v, normal=normal)


def _as_rays(origins, directions) -> tuple[np.ndarray, np.ndarray]:
    origins = np.atleast_2d(np.asarray(origins, dtype=np.float64))
    directions = np.atleast_2d(np.asarray(directions, dtype=np.float64))
    if origins.shape != directions.shape or origins.shape[-1] != 3:
        raise ValidationError("origins and directions must both have shape (n, 3)")
    return origins, directions


def intersect_brute_force(mesh: TriangleMesh, origins, directions) -> HitBatch:
    """Nearest hit by testing every face; ties go to the lowest face index."""
    origins, directions = _as_rays(origins, directions)
    n_rays, n_faces = len(origins), mesh.n_faces
    v0, v1, v2 = mesh.corners(np.arange(n_faces))
    e1, e2 = v1 - v0, v2 - v0

    face = np.full(n_rays, -1, dtype=np.int64)
    best_t = np.full(n_rays, np.inf)
    best_u = np.zeros(n_rays)
    best_v = np.zeros(n_rays)
    chunk = max(1, _BRUTE_FORCE_CHUNK // n_faces)
    for lo in range(0, n_rays, chunk):
        hi = min(n_rays, lo + chunk)
        b = hi - lo
        o = np.repeat(origins[lo:hi], n_faces, axis=0)
        d = np.repeat(directions[lo:hi], n_faces, axis=0)
        t, u, v, ok = _moller_trumbore(
            o, d, np.tile(v0, (b, 1)), np.tile(e1, (b, 1)), np.tile(e2, (b, 1))
        )
        t = np.where(ok, t, np.inf).reshape(b, n_faces)
        idx = np.argmin(t, axis=1)
        rows = np.arange(b)
        hit_t = t[rows, idx]
        hit = np.isfinite(hit_t)
        face[lo:hi] = np.where(hit, idx, -1)
        best_t[lo:hi] = hit_t
        best_u[lo:hi] = u.reshape(b, n_faces)[rows, idx]
        best_v[lo:hi] = v.reshape(b, n_faces)[rows, idx]
    return _finish_hits(mesh, face, best_t, best_u, best_v, directions)


@dataclasses.dataclass(frozen=True)
class BVH:
    """Flattened bounding-volume hierarchy over a mesh's faces.

    Interior nodes have ``count == 0`` and two children; leaves cover
    ``order[start:start + count]``. Node boxes are padded slightly so
    rounding never culls a hit the brute-force test would report.
    """

    mesh: TriangleMesh
    node_lo: np.ndarray
    node_hi: np.ndarray
    left: np.ndarray
    right: np.ndarray
    start: np.ndarray
    count: np.ndarray
    order: np.ndarray
    v0: np.ndarray
    e1: np.ndarray
    e2: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.node_lo)

    def intersect(self, origins, directions) -> HitBatch:
        return intersect_batch(self, origins, directions)


def build_bvh(mesh: TriangleMesh, leaf_size: int = LEAF_SIZE) -> BVH:
    """Median-split BVH along the longest centroid axis."""
    tri = mesh.vertices[mesh.faces]
    tri_lo = tri.min(axis=1)
    tri_hi = tri.max(axis=1)
    centroid = tri.mean(axis=1)

    lo: list[np.ndarray] = []
    hi: list[np.ndarray] = []
    left: list[int] = []
    right: list[int] = []
    start: list[int] = []
    count: list[int] = []
    order: list[int] = []

    def new_node(idx: np.ndarray) -> int:
        lo.append(tri_lo[idx].min(axis=0))
        hi.append(tri_hi[idx].max(axis=0))
        left.append(-1)
        right.append(-1)
        start.append(0)
        count.append(0)
        return len(lo) - 1

    everything = np.arange(mesh.n_faces)
    stack = [(new_node(everything), everything)]
    while stack:
        node, idx = stack.pop()
        c = centroid[idx]
        extent = c.max(axis=0) - c.min(axis=0)
        axis = int(np.argmax(extent))
        if len(idx) <= leaf_size or extent[axis] <= 0.0:
            start[node] = len(order)
            count[node] = len(idx)
            order.extend(idx.tolist())
            continue
        idx = idx[np.argsort(c[:, axis], kind="stable")]
        mid = len(idx) // 2
        left_id = new_node(idx[:mid])
        right_id = new_node(idx[mid:])
        left[node], right[node] = left_id, right_id
        stack.append((right_id, idx[mid:]))
        stack.append((left_id, idx[:mid]))

    node_lo = np.array(lo)
    node_hi = np.array(hi)
    pad = 1e-7 * (1.0 + float(np.abs(mesh.vertices).max()))
    v0, v1, v2 = mesh.corners(np.arange(mesh.n_faces))
    return BVH(
        mesh=mesh,
        node_lo=node_lo - pad,
        node_hi=node_hi + pad,
        left=np.array(left, dtype=np.int64),
        right=np.array(right, dtype=np.int64),
        start=np.array(start, dtype=np.int64),
        count=np.array(count, dtype=np.int64),
        order=np.array(order, dtype=np.int64),
        v0=v0,
        e1=v1 - v0,
        e2=v2 - v0,
    )


def intersect_batch(bvh: BVH, origins, directions) -> HitBatch:
    """Nearest hits for many rays, traversing the BVH breadth-first.

    All (ray, node) pairs of one tree level are tested together, so the
    work per level is a handful of array operations.
    """
    origins, directions = _as_rays(origins, directions)
    n_rays = len(origins)
    with np.errstate(divide="ignore"):
        inv = np.where(np.abs(directions) > 1e-15, 1.0 / directions, np.copysign(1e30, directions))

    face = np.full(n_rays, -1, dtype=np.int64)
    best_t = np.full(n_rays, np.inf)
    best_u = np.zeros(n_rays)
    best_v = np.zeros(n_rays)

    rays = np.arange(n_rays)
    nodes = np.zeros(n_rays, dtype=np.int64)
    while rays.size:
        o, d_inv = origins[rays], inv[rays]
        t0 = (bvh.node_lo[nodes] - o) * d_inv
        t1 = (bvh.node_hi[nodes] - o) * d_inv
        t_enter = np.maximum(np.minimum(t0, t1).max(axis=1), 0.0)
        t_exit = np.maximum(t0, t1).min(axis=1)
        keep = (t_exit >= t_enter) & (t_enter <= best_t[rays])
        rays, nodes = rays[keep], nodes[keep]

        leaf = bvh.count[nodes] > 0
        leaf_rays, leaf_nodes = rays[leaf], nodes[leaf]
        if leaf_rays.size:
            counts = bvh.count[leaf_nodes]
            pair_ray = np.repeat(leaf_rays, counts)
            first = np.repeat(np.cumsum(counts) - counts, counts)
            pos = np.repeat(bvh.start[leaf_nodes], counts) + (np.arange(counts.sum()) - first)
            pair_face = bvh.order[pos]
            t, u, v, ok = _moller_trumbore(
                origins[pair_ray],
                directions[pair_ray],
                bvh.v0[pair_face],
                bvh.e1[pair_face],
                bvh.e2[pair_face],
            )
            if np.any(ok):
                r, f, t, u, v = pair_ray[ok], pair_face[ok], t[ok], u[ok], v[ok]
                # nearest candidate per ray, lowest face index on equal t
                sort = np.lexsort((f, t, r))
                r, f, t, u, v = r[sort], f[sort], t[sort], u[sort], v[sort]
                _, first_of_ray = np.unique(r, return_index=True)
                r, f, t = r[first_of_ray], f[first_of_ray], t[first_of_ray]
                u, v = u[first_of_ray], v[first_of_ray]
                better = (t < best_t[r]) | ((t == best_t[r]) & (f < face[r]))
                r = r[better]
                face[r], best_t[r] = f[better], t[better]
                best_u[r], best_v[r] = u[better], v[better]

        inner_rays, inner_nodes = rays[~leaf], nodes[~leaf]
        rays = np.concatenate([inner_rays, inner_rays])
        nodes = np.concatenate([bvh.left[inner_nodes], bvh.right[inner_nodes]])

    return _finish_hits(bvh.mesh, face, best_t, best_u, best_v, directions)


def intersect(bvh: BVH, ray: Ray) -> Hit | None:
    """Nearest hit along a single ray, or None on a miss."""
    hits = intersect_batch(bvh, [ray.origin], [ray.direction])
    if not hits.valid[0]:
        return None
    f = int(hits.face[0])
    return Hit(
        face=f,
        u=float(hits.u[0]),
        v=float(hits.v[0]),
        t=float(hits.t[0]),
        normal=tuple(float(c) for c in hits.normal[0]),  # type: ignore[arg-type]
        material=int(bvh.mesh.face_material[f]),
    )


def offset_origins(points, normals, directions) -> np.ndarray:
    """Push ray origins off the surface along the normal, on the side rays leave."""
    side = np.sign(_dot(normals, directions))
    side[side == 0.0] = 1.0
    return points + (RAY_EPSILON * side)[:, None] * normals


def warp_to_triangle(r1, r2):
    """Square-root warp of the unit square onto the unit triangle."""
    s = np.sqrt(r1)
    return 1.0 - s, r2 * s


def sample_point_in_triangle(rng: np.random.Generator) -> tuple[float, float]:
    u, v = warp_to_triangle(rng.random(), rng.random())
    return float(u), float(v)


def sample_points_in_triangle(rng: np.random.Generator, n: int) -> tuple[np.ndarray, np.ndarray]:
    r = rng.random((n, 2))
    return warp_to_triangle(r[:, 0], r[:, 1])


def orthonormal_basis(normals) -> tuple[np.ndarray, np.ndarray]:
    """Tangent frames for unit normals (branchless construction)."""
    nx, ny, nz = normals[:, 0], normals[:, 1], normals[:, 2]
    sign = np.where(nz >= 0.0, 1.0, -1.0)
    a = -1.0 / (sign + nz)
    b = nx * ny * a
    tangent = np.stack([1.0 + sign * nx * nx * a, sign * b, -sign * nx], axis=1)
    bitangent = np.stack([b, sign + ny * ny * a, -ny], axis=1)
    return tangent, bitangent


def _to_world(local, normals) -> np.ndarray:
    tangent, bitangent = orthonormal_basis(normals)
    return local[:, :1] * tangent + local[:, 1:2] * bitangent + local[:, 2:3] * normals


def cosine_sample_hemisphere(rng: np.random.Generator, normals) -> np.ndarray:
    """Directions with density cos(theta)/pi about each normal."""
    normals = np.atleast_2d(normals)
    r = rng.random((len(normals), 2))
    radius = np.sqrt(r[:, 0])
    phi = 2.0 * np.pi * r[:, 1]
    local = np.stack(
        [radius * np.cos(phi), radius * np.sin(phi), np.sqrt(np.maximum(0.0, 1.0 - r[:, 0]))],
        axis=1,
    )
    return _to_world(local, normals)


UNIFORM_HEMISPHERE_PDF = 1.0 / (2.0 * np.pi)


def uniform_sample_hemisphere(rng: np.random.Generator, normals) -> np.ndarray:
    """Directions with constant density 1/(2 pi) about each normal."""
    normals = np.atleast_2d(normals)
    r = rng.random((len(normals), 2))
    z = r[:, 0]
    radius = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    phi = 2.0 * np.pi * r[:, 1]
    local = np.stack([radius * np.cos(phi), radius * np.sin(phi), z], axis=1)
    return _to_world(local, normals)
