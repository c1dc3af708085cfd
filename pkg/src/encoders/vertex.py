"""Learnable features at mesh vertices with per-face virtual LOD.

Every vertex owns a d-vector. A query on face (i, j, k) at barycentrics
(u, v) returns ``(1 - u - v) g_i + u g_j + v g_k``.

A face refined to level k splits each edge into k segments. Its
(k+1)(k+2)/2 grid points (a, b), a + b <= k, get their own feature vectors,
stored contiguously in a shared pool at ``block_offset[face]``. Grid point
(a, b) sits at barycentrics (a/k, b/k) and is stored at row
``a(k+1) - a(a-1)/2 + b`` of the block. Once refined a face reads only its
own block; base features stay with the unrefined faces around them.

Sub-triangle lookup: cell (ub, vb) = (floor(ku), floor(kv)), fractional
parts (fu, fv). Lower sub-triangles (fu + fv <= 1) interpolate corners
(ub, vb), (ub+1, vb), (ub, vb+1) with weights (1 - u' - v', u', v') for
local (u', v') = (fu, fv). Upper ones use local (1 - fu, 1 - fv) and
corners (ub+1, vb+1), (ub, vb+1), (ub+1, vb), which keeps the field
continuous across every shared sub-triangle edge.
"""

from __future__ import annotations

import dataclasses
from typing import TYPE_CHECKING, Any

import numpy as np

from ..errors import GeometryError, ValidationError
from ..log import get_logger
from .base import Encoder, SurfaceQuery

if TYPE_CHECKING:
    from ..config import TrainConfig
    from ..geometry import TriangleMesh

INIT_SCALE = 1e-4
BARYCENTRIC_TOLERANCE = 1e-9

_log = get_logger("encoders.vertex")


def sites(k) -> Any:
    """Feature sites of a face at LOD k, real and virtual: (k+1)(k+2)/2."""
    return (k + 1) * (k + 2) // 2


def grid_index(a, b, k):
    return a * (k + 1) - a * (a - 1) // 2 + b


def grid_points(k: int) -> tuple[np.ndarray, np.ndarray]:
    """All (a, b) with a + b <= k, in block storage order."""
    a, b = np.meshgrid(np.arange(k + 1), np.arange(k + 1), indexing="ij")
    keep = (a + b) <= k
    return a[keep], b[keep]


@dataclasses.dataclass(frozen=True)
class SubTriangleRef:
    cell: tuple[int, int]
    upper: bool
    local: tuple[float, float]
    corners: tuple[tuple[int, int], tuple[int, int], tuple[int, int]]

    @property
    def weights(self) -> tuple[float, float, float]:
        u, v = self.local
        return (1.0 - u - v, u, v)


@dataclasses.dataclass
class LocatedBatch:
    """Vectorized ``locate`` result; corners has shape (n, 3, 2)."""

    cell_u: np.ndarray
    cell_v: np.ndarray
    upper: np.ndarray
    local_u: np.ndarray
    local_v: np.ndarray
    corners: np.ndarray

    @property
    def weights(self) -> np.ndarray:
        return np.stack([1.0 - self.local_u - self.local_v, self.local_u, self.local_v], axis=1)

    def to_global(self, k) -> tuple[np.ndarray, np.ndarray]:
        """Map local coordinates back to face barycentrics."""
        k = np.asarray(k, dtype=np.float64)
        u = np.where(self.upper, self.cell_u + 1 - self.local_u, self.cell_u + self.local_u)
        v = np.where(self.upper, self.cell_v + 1 - self.local_v, self.cell_v + self.local_v)
        return u / k, v / k


def _check_barycentric(u: np.ndarray, v: np.ndarray) -> None:
    tol = BARYCENTRIC_TOLERANCE
    bad = (u < -tol) | (v < -tol) | (u + v > 1.0 + tol) | ~np.isfinite(u) | ~np.isfinite(v)
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise ValidationError(
            f"barycentric coordinates ({u[i]!r}, {v[i]!r}) lie outside the unit triangle"
        )


def locate_batch(u, v, k) -> LocatedBatch:
    u = np.atleast_1d(np.asarray(u, dtype=np.float64))
    v = np.atleast_1d(np.asarray(v, dtype=np.float64))
    k = np.broadcast_to(np.asarray(k, dtype=np.int64), u.shape)
    if np.any(k < 1):
        raise ValidationError("LOD factor must be >= 1")
    _check_barycentric(u, v)
    u = np.clip(u, 0.0, 1.0)
    v = np.clip(v, 0.0, 1.0)

    ku = k * u
    kv = k * v
    ub = np.clip(np.floor(ku), 0, k - 1).astype(np.int64)
    vb = np.clip(np.floor(kv), 0, k - 1).astype(np.int64)
    # A point exactly on a hypotenuse grid node lands in cell (ub, vb) with
    # ub + vb == k, which has no sub-triangles; use the left neighbour's
    # lower triangle instead. ub >= 1 here since vb <= k - 1.
    on_node = (ub + vb) >= k
    ub = np.where(on_node, ub - 1, ub)
    fu = ku - ub
    fv = kv - vb

    upper = ((fu + fv) > 1.0) & ((ub + vb) < (k - 1))
    lu = np.where(upper, 1.0 - fu, fu)
    lv = np.where(upper, 1.0 - fv, fv)
    # rounding can leave lower-triangle coordinates a hair outside the simplex
    lu = np.maximum(lu, 0.0)
    lv = np.maximum(lv, 0.0)
    total = lu + lv
    over = total > 1.0
    lu = np.where(over, lu / np.where(over, total, 1.0), lu)
    lv = np.where(over, lv / np.where(over, total, 1.0), lv)

    lower_corners = np.stack(
        [np.stack([ub, vb], -1), np.stack([ub + 1, vb], -1), np.stack([ub, vb + 1], -1)], axis=1
    )
    upper_corners = np.stack(
        [np.stack([ub + 1, vb + 1], -1), np.stack([ub, vb + 1], -1), np.stack([ub + 1, vb], -1)],
        axis=1,
    )
    corners = np.where(upper[:, None, None], upper_corners, lower_corners)
    return LocatedBatch(cell_u=ub, cell_v=vb, upper=upper, local_u=lu, local_v=lv, corners=corners)


def locate(u: float, v: float, k: int) -> SubTriangleRef:
    """Find the sub-triangle of a level-k face containing (u, v)."""
    r = locate_batch([u], [v], k)
    c = r.corners[0]
    return SubTriangleRef(
        cell=(int(r.cell_u[0]), int(r.cell_v[0])),
        upper=bool(r.upper[0]),
        local=(float(r.local_u[0]), float(r.local_v[0])),
        corners=((int(c[0, 0]), int(c[0, 1])), (int(c[1, 0]), int(c[1, 1])),
                 (int(c[2, 0]), int(c[2, 1]))),
    )


@dataclasses.dataclass
class _Gather:
    coarse: np.ndarray  # bool per query: reads base features
    rows: np.ndarray  # (n, 3) rows in base_features or virtual_features
    weights: np.ndarray  # (n, 3)


class VertexFeatureEncoder(Encoder):
    """Vertex feature store with per-face virtual blocks."""

    name = "vertex"

    def __init__(self, mesh: TriangleMesh, feature_dim: int = 4, seed: int = 0,
                 dtype=np.float64) -> None:
        if feature_dim < 1:
            raise ValidationError(f"feature width must be >= 1, got {feature_dim}")
        self.mesh = mesh
        self.feature_dim = feature_dim
        rng = np.random.default_rng(seed)
        self.base_features = rng.uniform(
            -INIT_SCALE, INIT_SCALE, (mesh.n_vertices, feature_dim)
        ).astype(dtype)
        self.face_lod = np.ones(mesh.n_faces, dtype=np.int64)
        self.block_offset = np.full(mesh.n_faces, -1, dtype=np.int64)
        self.virtual_features = np.zeros((0, feature_dim), dtype=dtype)
        self.base_grad = np.zeros_like(self.base_features)
        self.virtual_grad = np.zeros_like(self.virtual_features)

    @classmethod
    def from_config(cls, mesh: TriangleMesh, config: TrainConfig,
                    seed: int) -> VertexFeatureEncoder:
        return cls(mesh, feature_dim=config.feature_dim, seed=seed)

    @property
    def output_width(self) -> int:
        return self.feature_dim

    @property
    def gathers_per_query(self) -> int:
        return 3

    # -- accounting ---------------------------------------------------------

    def virtual_vertex_count(self) -> int:
        refined = self.face_lod > 1
        return int(sites(self.face_lod[refined]).sum())

    def n_base_used(self) -> int:
        """Base vertices still read by at least one unrefined face."""
        coarse = self.mesh.faces[self.face_lod == 1]
        return int(np.unique(coarse).size)

    def param_count(self) -> int:
        return self.feature_dim * (self.n_base_used() + self.virtual_vertex_count())

    # -- evaluation ---------------------------------------------------------

    def _check_faces(self, faces: np.ndarray) -> None:
        bad = (faces < 0) | (faces >= self.mesh.n_faces)
        if np.any(bad):
            f = int(faces[np.flatnonzero(bad)[0]])
            raise GeometryError(f"face index {f} out of range ({self.mesh.n_faces} faces)", face=f)

    def _gather(self, faces, u, v) -> _Gather:
        faces = np.atleast_1d(np.asarray(faces, dtype=np.int64))
        u = np.atleast_1d(np.asarray(u, dtype=np.float64))
        v = np.atleast_1d(np.asarray(v, dtype=np.float64))
        self._check_faces(faces)
        _check_barycentric(u, v)

        k = self.face_lod[faces]
        coarse = k == 1
        rows = np.empty((len(faces), 3), dtype=np.int64)
        weights = np.empty((len(faces), 3), dtype=np.float64)

        rows[coarse] = self.mesh.faces[faces[coarse]]
        uc, vc = u[coarse], v[coarse]
        weights[coarse] = np.stack([1.0 - uc - vc, uc, vc], axis=1)

        fine = ~coarse
        if np.any(fine):
            kf = k[fine]
            located = locate_batch(u[fine], v[fine], kf)
            a, b = located.corners[..., 0], located.corners[..., 1]
            rows[fine] = self.block_offset[faces[fine]][:, None] + grid_index(a, b, kf[:, None])
            weights[fine] = located.weights
        return _Gather(coarse=coarse, rows=rows, weights=weights)

    def _interpolate(self, g: _Gather) -> np.ndarray:
        out = np.empty((len(g.rows), self.feature_dim), dtype=self.base_features.dtype)
        for mask, table in ((g.coarse, self.base_features), (~g.coarse, self.virtual_features)):
            if np.any(mask):
                out[mask] = np.einsum("nc,ncd->nd", g.weights[mask], table[g.rows[mask]])
        return out

    def forward(self, query: SurfaceQuery) -> tuple[np.ndarray, _Gather]:
        g = self._gather(query.faces, query.u, query.v)
        return self._interpolate(g), g

    def backward(self, cache: _Gather, upstream: np.ndarray) -> None:
        upstream = np.asarray(upstream).reshape(len(cache.rows), self.feature_dim)
        for mask, grad in ((cache.coarse, self.base_grad), (~cache.coarse, self.virtual_grad)):
            if np.any(mask):
                contrib = cache.weights[mask][:, :, None] * upstream[mask][:, None, :]
                np.add.at(grad, cache.rows[mask].ravel(), contrib.reshape(-1, self.feature_dim))

    def encode(self, faces, u, v) -> np.ndarray:
        """Interpolated features at (faces, u, v); scalars give a single vector."""
        scalar = np.ndim(faces) == 0
        out = self._interpolate(self._gather(faces, u, v))
        return out[0] if scalar else out

    def encode_backward(self, faces, u, v, upstream) -> None:
        g = self._gather(faces, u, v)
        self.backward(g, np.atleast_2d(upstream))

    # -- LOD ----------------------------------------------------------------

    def refine_face(self, face: int, new_k: int) -> None:
        """Give ``face`` its own level-``new_k`` block, initialized from the current field."""
        face = int(face)
        self._check_faces(np.array([face]))
        new_k = int(new_k)
        old_k = int(self.face_lod[face])
        if new_k <= old_k:
            raise ValidationError(
                f"face {face} is already at LOD {old_k}, cannot refine to {new_k}"
            )

        a, b = grid_points(new_k)
        block = self.encode(np.full(len(a), face), a / new_k, b / new_k)

        # Superseded blocks stay in the pool as dead rows so optimizer
        # moments keep lining up with the parameter rows.
        offset = len(self.virtual_features)
        self.virtual_features = np.concatenate([self.virtual_features, block])
        self.virtual_grad = np.concatenate([self.virtual_grad, np.zeros_like(block)])
        self.block_offset[face] = offset
        self.face_lod[face] = new_k
        _log.debug("face %d refined %d -> %d (%d sites)", face, old_k, new_k, len(a))

    def block(self, face: int) -> np.ndarray | None:
        """The virtual block of ``face`` (a view), or None when unrefined."""
        k = int(self.face_lod[face])
        if k == 1:
            return None
        start = int(self.block_offset[face])
        return self.virtual_features[start:start + sites(k)]

    # -- optimizer / checkpoint ---------------------------------------------

    def params(self) -> list[np.ndarray]:
        return [self.base_features, self.virtual_features]

    def grads(self) -> list[np.ndarray]:
        return [self.base_grad, self.virtual_grad]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {
            "base_features": self.base_features,
            "face_lod": self.face_lod,
            "block_offset": self.block_offset,
            "virtual_features": self.virtual_features,
        }

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        base = np.asarray(state["base_features"])
        if base.shape != self.base_features.shape:
            raise ValidationError(
                f"base feature shape {base.shape} does not match {self.base_features.shape}"
            )
        face_lod = np.asarray(state["face_lod"], dtype=np.int64)
        if face_lod.shape != (self.mesh.n_faces,):
            raise ValidationError("face_lod does not match the mesh face count")
        self.base_features = base.copy()
        self.face_lod = face_lod.copy()
        self.block_offset = np.asarray(state["block_offset"], dtype=np.int64).copy()
        virtual = np.asarray(state["virtual_features"])
        self.virtual_features = virtual.reshape(-1, self.feature_dim).copy()
        self.base_grad = np.zeros_like(self.base_features)
        self.virtual_grad = np.zeros_like(self.virtual_features)


def init_store(mesh: TriangleMesh, d: int = 4, seed: int = 0) -> VertexFeatureEncoder:
    return VertexFeatureEncoder(mesh, feature_dim=d, seed=seed)
