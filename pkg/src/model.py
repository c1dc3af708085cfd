"""Neural radiance model: positional encoder + MLP with reflectance factored out.

Outgoing radiance at a surface point is ``L_e + albedo * net(x, omega_o)``.
The network input concatenates the encoder features, SH(omega_o),
SH(face normal) and OneBlob(albedo).
"""

from __future__ import annotations

import dataclasses
from typing import TYPE_CHECKING, Any, Protocol

import numpy as np

from .encoders import Encoder, SurfaceQuery, create_encoder
from .errors import ValidationError
from .neural import MLP, ForwardCache, oneblob_encode, sh_encode, sh_width

if TYPE_CHECKING:
    from .config import TrainConfig
    from .scene import Scene


class RadianceField(Protocol):
    """Anything that answers outgoing radiance at surface points.

    ``directions`` are unit outgoing directions (pointing away from the
    surface). Oracles used in tests implement this too.
    """

    def radiance(self, faces: np.ndarray, u: np.ndarray, v: np.ndarray,
                 directions: np.ndarray) -> np.ndarray: ...


@dataclasses.dataclass
class ModelCache:
    encoder: Any
    mlp: ForwardCache


class RadianceModel:
    def __init__(self, scene: Scene, encoder: Encoder, mlp: MLP, sh_degree: int = 3,
                 oneblob_bins: int = 4) -> None:
        self.scene = scene
        self.encoder = encoder
        self.mlp = mlp
        self.sh_degree = sh_degree
        self.oneblob_bins = oneblob_bins
        self.geometry_hash = scene.geometry_hash()
        if mlp.n_inputs != self.input_width:
            raise ValidationError(
                f"MLP takes {mlp.n_inputs} inputs, model produces {self.input_width}"
            )

    @classmethod
    def from_config(cls, scene: Scene, config: TrainConfig) -> RadianceModel:
        encoder = create_encoder(scene.mesh, config)
        width = (encoder.output_width + 2 * sh_width(config.sh_degree)
                 + 3 * config.oneblob_bins)
        mlp = MLP(width, config.hidden_layers, config.hidden_width, seed=config.seed + 1)
        return cls(scene, encoder, mlp, config.sh_degree, config.oneblob_bins)

    @property
    def input_width(self) -> int:
        return (self.encoder.output_width + 2 * sh_width(self.sh_degree)
                + 3 * self.oneblob_bins)

    def query(self, faces, u, v) -> SurfaceQuery:
        return SurfaceQuery.on_mesh(self.scene.mesh, faces, u, v)

    def evaluate(self, query: SurfaceQuery,
                 directions: np.ndarray) -> tuple[np.ndarray, ModelCache]:
        """Raw network output (the albedo-factored radiance) and a backward cache."""
        features, enc_cache = self.encoder.forward(query)
        albedo = self.scene.face_albedo[query.faces]
        inputs = np.concatenate(
            [
                features,
                sh_encode(directions, self.sh_degree),
                sh_encode(self.scene.mesh.face_normal[query.faces], self.sh_degree),
                oneblob_encode(albedo, self.oneblob_bins).reshape(len(query), -1),
            ],
            axis=1,
        )
        out, mlp_cache = self.mlp.forward(inputs)
        return out, ModelCache(encoder=enc_cache, mlp=mlp_cache)

    def backward(self, cache: ModelCache, upstream: np.ndarray) -> None:
        """Accumulate gradients of both the MLP and the encoder."""
        grad_inputs = self.mlp.backward(cache.mlp, upstream)
        self.encoder.backward(cache.encoder, grad_inputs[:, : self.encoder.output_width])

    def radiance(self, faces, u, v, directions) -> np.ndarray:
        faces = np.asarray(faces, dtype=np.int64)
        net, _ = self.evaluate(self.query(faces, u, v), np.asarray(directions, dtype=np.float64))
        return factored_radiance(self.scene, faces, net)

    def params(self) -> list[np.ndarray]:
        return self.mlp.params() + self.encoder.params()

    def grads(self) -> list[np.ndarray]:
        return self.mlp.grads() + self.encoder.grads()

    def zero_grad(self) -> None:
        self.mlp.zero_grad()
        self.encoder.zero_grad()

    def param_count(self) -> int:
        return self.mlp.param_count() + self.encoder.param_count()


def factored_radiance(scene: Scene, faces: np.ndarray, net: np.ndarray) -> np.ndarray:
    """Emission plus albedo times the network output."""
    return scene.face_emission[faces] + scene.face_albedo[faces] * net


def predict_radiance(scene: Scene, model: RadianceModel, hit, omega_o) -> np.ndarray:
    """Radiance leaving a single ``Hit`` towards ``omega_o``."""
    faces = np.array([hit.face])
    net, _ = model.evaluate(model.query(faces, [hit.u], [hit.v]), np.atleast_2d(omega_o))
    return factored_radiance(scene, faces, net)[0]
