"""Encoder auto-discovery registry.

Scans all .py modules in this package and maps each non-abstract Encoder
subclass to its ``name``. ``create_encoder`` builds one from a training
config.
"""

from __future__ import annotations

import importlib
import inspect
import pkgutil
from typing import TYPE_CHECKING

from ..errors import ConfigError
from .base import Encoder, SurfaceQuery

if TYPE_CHECKING:
    from ..config import TrainConfig
    from ..geometry import TriangleMesh

__all__ = ["Encoder", "SurfaceQuery", "create_encoder", "discover_encoders"]


def discover_encoders() -> dict[str, type[Encoder]]:
    """Return every concrete Encoder subclass in this package, keyed by name."""
    for _finder, module_name, _is_pkg in pkgutil.iter_modules(__path__):
        if module_name == "base":
            continue
        importlib.import_module(f".{module_name}", __name__)

    def _all_subclasses(cls):
        result = set()
        for sub in cls.__subclasses__():
            if not inspect.isabstract(sub):
                result.add(sub)
            result.update(_all_subclasses(sub))
        return result

    registry: dict[str, type[Encoder]] = {}
    for cls in _all_subclasses(Encoder):
        if not cls.name:
            raise RuntimeError(f"encoder class {cls.__qualname__} does not set a name")
        if cls.name in registry and registry[cls.name] is not cls:
            raise RuntimeError(f"duplicate encoder name {cls.name!r}")
        registry[cls.name] = cls
    return registry


def create_encoder(mesh: TriangleMesh, config: TrainConfig, seed: int | None = None) -> Encoder:
    registry = discover_encoders()
    if config.encoder not in registry:
        raise ConfigError(f"unknown encoder {config.encoder!r}, expected one of {sorted(registry)}")
    return registry[config.encoder].from_config(mesh, config, config.seed if seed is None else seed)
