"""Configuration system for vertex-radiosity.

Every default can be overridden via environment variables, a global JSON
config file at ~/.vertex-radiosity/config.json, or a project file
``.vertex-radiosity.json`` found by walking up from the working directory.

Training runs additionally read a JSON training config (see ``TrainConfig``)
whose keys override these layered defaults.
"""

from __future__ import annotations

import contextlib
import dataclasses
import json
import os
from typing import Any

from .errors import ConfigError

_DEFAULTS = {
    # training
    "total_steps": 5000,
    "batch_size": 1024,
    "m0": 32,
    "lod_updates": 3,
    "lod_cap_ratio": 0.5,
    "alpha": 0.5,
    "seed": 0,
    "adaptive_lod": True,
    "detach_rhs": False,
    "relative_loss": False,
    "relative_loss_eps": 1e-2,
    "learning_rate": 1e-3,
    "lr_decay": 0.33,
    "log_interval": 100,
    # model
    "encoder": "vertex",
    "feature_dim": 4,
    "mlp_preset": "desk",
    "hidden_layers": 3,
    "hidden_width": 64,
    "sh_degree": 3,
    "oneblob_bins": 4,
    # hash grid baseline
    "hash_levels": 8,
    "hash_base_resolution": 4,
    "hash_per_level_scale": 2.0,
    "hash_features_per_level": 4,
    "hash_table_size_log2": 17,
    # rendering
    "spp": 32,
    "max_depth": 16,
    "reference_spp": 1024,
    "relmse_eps": 1e-2,
    # runtime
    "workers": 1,
    "deterministic": False,
    "tile_size": 32,
    "bytes_per_param": 4,
    "debug": False,
}

ENV_PREFIX = "VERTEX_RADIOSITY_"

_config: dict[str, Any] | None = None


PROJECT_CONFIG_FILE = ".vertex-radiosity.json"


def _find_project_config() -> str | None:
    """Walk up from cwd to find a .vertex-radiosity.json file.

    Stops at filesystem root or user home directory.
    """
    home = os.path.expanduser("~")
    current = os.getcwd()

    while True:
        candidate = os.path.join(current, PROJECT_CONFIG_FILE)
        if os.path.isfile(candidate):
            return candidate

        parent = os.path.dirname(current)
        if current in (parent, home):
            break
        current = parent

    return None


def _load_config() -> dict[str, Any]:
    """Load config: defaults -> global file -> project file -> env vars."""
    config: dict[str, Any] = dict(_DEFAULTS)
    config["_config_source"] = dict.fromkeys(_DEFAULTS, "default")

    from src import data_dir  # noqa: PLC0415

    config_path = os.path.join(data_dir(), "config.json")
    if os.path.exists(config_path):
        try:
            with open(config_path) as f:
                user_config = json.load(f)
            config.update(user_config)
            for k in user_config:
                config.setdefault("_config_source", {})[k] = f"global:{config_path}"
        except (json.JSONDecodeError, OSError):
            pass

    project_config_path = _find_project_config()
    if project_config_path is not None:
        try:
            with open(project_config_path) as f:
                project_config = json.load(f)
            config.update(project_config)
            for k in project_config:
                config.setdefault("_config_source", {})[k] = f"project:{project_config_path}"
        except (json.JSONDecodeError, OSError):
            # Invalid project config is silently ignored
            pass

    for key, default_val in _DEFAULTS.items():
        env_key = ENV_PREFIX + key.upper()
        env_val = os.environ.get(env_key)
        if env_val is not None:
            if isinstance(default_val, bool):
                config[key] = env_val.lower() in ("1", "true", "yes")
            elif isinstance(default_val, int):
                with contextlib.suppress(ValueError):
                    config[key] = int(env_val)
            elif isinstance(default_val, float):
                with contextlib.suppress(ValueError):
                    config[key] = float(env_val)
            elif isinstance(default_val, list):
                config[key] = [s.strip() for s in env_val.split(",") if s.strip()]
            else:
                config[key] = env_val
            config.setdefault("_config_source", {})[key] = f"env:{env_key}"

    return config


def get(key: str) -> Any:
    """Get a config value."""
    global _config  # noqa: PLW0603
    if _config is None:
        _config = _load_config()
    return _config.get(key, _DEFAULTS.get(key))


def reload() -> None:
    """Force reload of configuration."""
    global _config  # noqa: PLW0603
    _config = None


MLP_PRESETS = {
    "desk": (3, 64),
    "large": (4, 256),
}

ENCODERS = ("vertex", "hashgrid")


@dataclasses.dataclass
class TrainConfig:
    """Everything a training run needs, snapshot into the run manifest."""

    total_steps: int
    batch_size: int
    m0: int
    lod_updates: int
    lod_cap_ratio: float
    alpha: float
    seed: int
    adaptive_lod: bool
    detach_rhs: bool
    relative_loss: bool
    relative_loss_eps: float
    learning_rate: float
    lr_decay: float
    log_interval: int
    encoder: str
    feature_dim: int
    mlp_preset: str
    hidden_layers: int
    hidden_width: int
    sh_degree: int
    oneblob_bins: int
    hash_levels: int
    hash_base_resolution: int
    hash_per_level_scale: float
    hash_features_per_level: int
    hash_table_size_log2: int
    workers: int
    deterministic: bool

    @classmethod
    def from_mapping(cls, overrides: dict[str, Any] | None = None) -> TrainConfig:
        """Build from layered defaults plus ``overrides`` and validate.

        Unknown keys and wrongly typed values raise ConfigError.
        """
        overrides = dict(overrides or {})
        fields = {f.name: f for f in dataclasses.fields(cls)}
        unknown = sorted(k for k in overrides if k not in fields)
        if unknown:
            raise ConfigError(f"unknown training config keys: {', '.join(unknown)}")

        values: dict[str, Any] = {}
        for name in fields:
            raw = overrides[name] if name in overrides else get(name)
            values[name] = _coerce(name, raw, _DEFAULTS[name])

        # The preset only fills in the shape when the caller did not set it.
        preset = values["mlp_preset"]
        if preset not in MLP_PRESETS:
            raise ConfigError(f"mlp_preset must be one of {sorted(MLP_PRESETS)}, got {preset!r}")
        if preset != "desk":
            layers, width = MLP_PRESETS[preset]
            if "hidden_layers" not in overrides:
                values["hidden_layers"] = layers
            if "hidden_width" not in overrides:
                values["hidden_width"] = width

        train_config = cls(**values)
        train_config.validate()
        return train_config

    @classmethod
    def from_file(cls, path: str, overrides: dict[str, Any] | None = None) -> TrainConfig:
        """Read a JSON training config; ``overrides`` (CLI flags) win over the file."""
        try:
            with open(path) as f:
                data = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}:{e.lineno}: {e.msg}") from e
        except OSError as e:
            raise ConfigError(f"cannot read training config {path}: {e}") from e
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: training config must be a JSON object")
        data.update(overrides or {})
        return cls.from_mapping(data)

    def validate(self) -> None:
        checks = [
            (self.total_steps >= 1, "total_steps must be >= 1"),
            (self.batch_size >= 1, "batch_size must be >= 1"),
            (self.m0 >= 1, "m0 must be >= 1"),
            (0 <= self.lod_updates <= 4, "lod_updates must lie in [0, 4]"),
            (self.lod_cap_ratio >= 0.0, "lod_cap_ratio must be >= 0"),
            (0.0 <= self.alpha <= 1.0, "alpha must lie in [0, 1]"),
            (self.learning_rate > 0.0, "learning_rate must be > 0"),
            (0.0 < self.lr_decay <= 1.0, "lr_decay must lie in (0, 1]"),
            (self.log_interval >= 1, "log_interval must be >= 1"),
            (self.encoder in ENCODERS, f"encoder must be one of {list(ENCODERS)}"),
            (self.feature_dim >= 1, "feature_dim must be >= 1"),
            (self.hidden_layers >= 1, "hidden_layers must be >= 1"),
            (self.hidden_width >= 1, "hidden_width must be >= 1"),
            (0 <= self.sh_degree <= 4, "sh_degree must lie in [0, 4]"),
            (self.oneblob_bins >= 1, "oneblob_bins must be >= 1"),
            (self.hash_levels >= 1, "hash_levels must be >= 1"),
            (self.hash_base_resolution >= 1, "hash_base_resolution must be >= 1"),
            (self.hash_per_level_scale >= 1.0, "hash_per_level_scale must be >= 1"),
            (self.hash_features_per_level >= 1, "hash_features_per_level must be >= 1"),
            (10 <= self.hash_table_size_log2 <= 24, "hash_table_size_log2 must lie in [10, 24]"),
            (self.workers >= 1, "workers must be >= 1"),
        ]
        for ok, message in checks:
            if not ok:
                raise ConfigError(message)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


def _coerce(name: str, value: Any, default: Any) -> Any:
    """Check ``value`` against the type of its default, widening int to float."""
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{name} must be a boolean, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{name} must be an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{name} must be a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{name} must be a string, got {value!r}")
        return value
    return value
