"""Abstract base class for positional feature encoders."""

from __future__ import annotations

import dataclasses
from abc import ABC, abstractmethod
from typing import TYPE_CHECKING, Any

import numpy as np

if TYPE_CHECKING:
    from ..config import TrainConfig
    from ..geometry import TriangleMesh


@dataclasses.dataclass(frozen=True)
class SurfaceQuery:
    """A batch of surface points, addressed both by face/barycentrics and position.

    Vertex features read (faces, u, v); the hash grid reads positions.
    """

    faces: np.ndarray
    u: np.ndarray
    v: np.ndarray
    positions: np.ndarray

    @classmethod
    def on_mesh(cls, mesh: TriangleMesh, faces, u, v) -> SurfaceQuery:
        faces = np.asarray(faces, dtype=np.int64)
        u = np.asarray(u, dtype=np.float64)
        v = np.asarray(v, dtype=np.float64)
        return cls(faces=faces, u=u, v=v, positions=mesh.point_at(faces, u, v))

    def __len__(self) -> int:
        return len(self.faces)

    def concat(self, other: SurfaceQuery) -> SurfaceQuery:
        return SurfaceQuery(
            faces=np.concatenate([self.faces, other.faces]),
            u=np.concatenate([self.u, other.u]),
            v=np.concatenate([self.v, other.v]),
            positions=np.concatenate([self.positions, other.positions]),
        )


class Encoder(ABC):
    """Base class for trainable positional encoders.

    Subclasses set ``name`` as a class attribute so the registry can find
    them, and keep their trainable arrays and matching gradient buffers in
    the same order in ``params()`` and ``grads()``. ``backward`` adds into
    the gradient buffers; callers reset them with ``zero_grad``.

    Arrays returned by ``params()`` may be replaced when the encoder grows,
    so optimizers must ask for them on every step.
    """

    name: str = ""

    @property
    @abstractmethod
    def output_width(self) -> int:
        """Width of the feature vector produced per query."""

    @property
    @abstractmethod
    def gathers_per_query(self) -> int:
        """Feature vectors read from memory to answer one query."""

    @abstractmethod
    def forward(self, query: SurfaceQuery) -> tuple[np.ndarray, Any]:
        """Return (features of shape (n, output_width), cache for backward)."""

    @abstractmethod
    def backward(self, cache: Any, upstream: np.ndarray) -> None:
        """Accumulate d(loss)/d(params) given d(loss)/d(features)."""

    @abstractmethod
    def params(self) -> list[np.ndarray]:
        """Trainable arrays, updated in place by the optimizer."""

    @abstractmethod
    def grads(self) -> list[np.ndarray]:
        """Gradient buffers matching ``params()``."""

    @abstractmethod
    def param_count(self) -> int:
        """Learnable parameters the encoder actually uses."""

    @abstractmethod
    def state_dict(self) -> dict[str, np.ndarray]:
        """Arrays that restore the encoder exactly."""

    @abstractmethod
    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        """Restore from ``state_dict`` output."""

    @classmethod
    @abstractmethod
    def from_config(cls, mesh: TriangleMesh, config: TrainConfig, seed: int) -> Encoder:
        """Build a freshly initialized encoder for ``mesh``."""

    def zero_grad(self) -> None:
        for g in self.grads():
            g.fill(0.0)
