"""Multiresolution hashed voxel grid, the baseline positional encoder.

Level l has resolution r = floor(base * scale**l) cells per axis over the
scene box. A query trilinearly interpolates the 8 corner features of its
cell on every level and concatenates the results. Corners are indexed
densely while the level's (r+1)**3 vertices fit in the table, otherwise by
the XOR spatial hash below; collisions are left to training.
"""

from __future__ import annotations

import dataclasses
import math
from typing import TYPE_CHECKING

import numpy as np

from ..errors import ConfigError
from .base import Encoder, SurfaceQuery

if TYPE_CHECKING:
    from ..config import TrainConfig
    from ..geometry import TriangleMesh

PRIMES = np.array([1, 2654435761, 805459861], dtype=np.uint64)
INIT_SCALE = 1e-4
BOUNDS_DILATION = 0.01

# (8, 3) corner offsets, bit d of the corner number selects the +1 side on axis d
_CORNERS = np.array([[(c >> d) & 1 for d in range(3)] for c in range(8)], dtype=np.int64)


def dilated_bounds(mesh: TriangleMesh,
                   dilation: float = BOUNDS_DILATION) -> tuple[np.ndarray, np.ndarray]:
    """Mesh AABB grown by ``dilation`` times its largest extent on every side."""
    lo, hi = mesh.bounds()
    pad = dilation * float(np.max(hi - lo))
    return lo - pad, hi + pad


def spatial_hash(coords: np.ndarray, table_size: int) -> np.ndarray:
    c = coords.astype(np.uint64)
    h = (c[..., 0] * PRIMES[0]) ^ (c[..., 1] * PRIMES[1]) ^ (c[..., 2] * PRIMES[2])
    return ((h & np.uint64(0xFFFFFFFF)) % np.uint64(table_size)).astype(np.int64)


@dataclasses.dataclass
class _Lookup:
    rows: list[np.ndarray]  # per level (n, 8)
    weights: list[np.ndarray]  # per level (n, 8)


class HashGridEncoder(Encoder):
    name = "hashgrid"

    def __init__(
        self,
        bounds: tuple[np.ndarray, np.ndarray],
        levels: int = 8,
        base_resolution: int = 4,
        per_level_scale: float = 2.0,
        features_per_level: int = 4,
        table_size_log2: int = 17,
        seed: int = 0,
        dtype=np.float64,
    ) -> None:
        if levels < 1 or base_resolution < 1 or features_per_level < 1:
            raise ConfigError("hash grid levels, base resolution and features must be >= 1")
        if per_level_scale < 1.0:
            raise ConfigError(f"per_level_scale must be >= 1, got {per_level_scale}")
        if not 10 <= table_size_log2 <= 24:
            raise ConfigError(f"table_size_log2 must lie in [10, 24], got {table_size_log2}")
        lo, hi = (np.asarray(b, dtype=np.float64) for b in bounds)
        if lo.shape != (3,) or hi.shape != (3,) or np.any(hi <= lo):
            raise ConfigError("hash grid bounds must be a non-empty 3D box")

        self.lo = lo
        self.hi = hi
        self.levels = levels
        self.base_resolution = base_resolution
        self.per_level_scale = per_level_scale
        self.features_per_level = features_per_level
        self.table_size_log2 = table_size_log2
        self.table_size = 1 << table_size_log2
        self.resolutions = [
            math.floor(base_resolution * per_level_scale**level) for level in range(levels)
        ]
        self.dense = [(r + 1) ** 3 <= self.table_size for r in self.resolutions]

        rng = np.random.default_rng(seed)
        self.tables = rng.uniform(
            -INIT_SCALE, INIT_SCALE, (levels, self.table_size, features_per_level)
        ).astype(dtype)
        self.table_grad = np.zeros_like(self.tables)

    @classmethod
    def from_config(cls, mesh: TriangleMesh, config: TrainConfig, seed: int) -> HashGridEncoder:
        return init_hashgrid(config, seed, dilated_bounds(mesh))

    @property
    def output_width(self) -> int:
        return self.levels * self.features_per_level

    @property
    def gathers_per_query(self) -> int:
        return 8 * self.levels

    def param_count(self) -> int:
        return self.levels * self.table_size * self.features_per_level

    def normalize(self, positions) -> np.ndarray:
        """World positions to [0, 1]^3 over the grid box, clamped."""
        x = (np.atleast_2d(np.asarray(positions, dtype=np.float64)) - self.lo) / (self.hi - self.lo)
        return np.clip(x, 0.0, 1.0)

    def corner_rows(self, level: int, corners: np.ndarray) -> np.ndarray:
        """Table rows of integer grid vertices ``corners`` (..., 3) on ``level``."""
        r = self.resolutions[level]
        if self.dense[level]:
            n = r + 1
            return corners[..., 0] + n * (corners[..., 1] + n * corners[..., 2])
        return spatial_hash(corners, self.table_size)

    def _lookup(self, positions) -> _Lookup:
        x = self.normalize(positions)
        rows, weights = [], []
        for level, r in enumerate(self.resolutions):
            p = x * r
            cell = np.minimum(np.floor(p), r - 1).astype(np.int64)
            frac = p - cell
            corners = cell[:, None, :] + _CORNERS[None, :, :]
            w = np.where(_CORNERS[None, :, :] == 1, frac[:, None, :], 1.0 - frac[:, None, :])
            rows.append(self.corner_rows(level, corners))
            weights.append(np.prod(w, axis=2))
        return _Lookup(rows=rows, weights=weights)

    def _interpolate(self, lookup: _Lookup) -> np.ndarray:
        n = len(lookup.rows[0])
        out = np.empty((n, self.output_width), dtype=self.tables.dtype)
        f = self.features_per_level
        for level in range(self.levels):
            table = self.tables[level]
            out[:, level * f:(level + 1) * f] = np.einsum(
                "nc,ncd->nd", lookup.weights[level], table[lookup.rows[level]]
            )
        return out

    def forward(self, query: SurfaceQuery) -> tuple[np.ndarray, _Lookup]:
        lookup = self._lookup(query.positions)
        return self._interpolate(lookup), lookup

    def backward(self, cache: _Lookup, upstream: np.ndarray) -> None:
        f = self.features_per_level
        upstream = np.asarray(upstream).reshape(len(cache.rows[0]), self.output_width)
        for level in range(self.levels):
            g = upstream[:, level * f:(level + 1) * f]
            contrib = cache.weights[level][:, :, None] * g[:, None, :]
            np.add.at(self.table_grad[level], cache.rows[level].ravel(), contrib.reshape(-1, f))

    def hash_encode(self, positions) -> np.ndarray:
        """Features at world ``positions``; a single point gives a single vector."""
        scalar = np.ndim(positions) == 1
        out = self._interpolate(self._lookup(positions))
        return out[0] if scalar else out

    def hash_encode_backward(self, positions, upstream) -> None:
        self.backward(self._lookup(positions), np.atleast_2d(upstream))

    def params(self) -> list[np.ndarray]:
        return [self.tables]

    def grads(self) -> list[np.ndarray]:
        return [self.table_grad]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {"tables": self.tables, "bounds": np.stack([self.lo, self.hi])}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        tables = np.asarray(state["tables"])
        if tables.shape != self.tables.shape:
            raise ConfigError(f"hash table shape {tables.shape} does not match {self.tables.shape}")
        bounds = np.asarray(state["bounds"], dtype=np.float64)
        self.tables = tables.copy()
        self.lo, self.hi = bounds[0].copy(), bounds[1].copy()
        self.table_grad = np.zeros_like(self.tables)


def init_hashgrid(config: TrainConfig, seed: int, bounds: tuple[np.ndarray, np.ndarray],
                  dtype=np.float64) -> HashGridEncoder:
    return HashGridEncoder(
        bounds,
        levels=config.hash_levels,
        base_resolution=config.hash_base_resolution,
        per_level_scale=config.hash_per_level_scale,
        features_per_level=config.hash_features_per_level,
        table_size_log2=config.hash_table_size_log2,
        seed=seed,
        dtype=dtype,
    )
