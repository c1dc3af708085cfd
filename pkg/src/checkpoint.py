"""Checkpoints: geometry hash + encoder, MLP and optimizer segments in one .npz.

Array keys are ``encoder/<name>``, ``mlp/<name>`` and ``adam/<name>``;
``meta`` holds a JSON record with the format version, encoder name, step,
geometry hash, manifest id and the full training config.
"""

from __future__ import annotations

import dataclasses
import json
import zipfile
from typing import Any

import numpy as np

from .config import TrainConfig
from .errors import CheckpointError, CheckpointMismatchError
from .log import get_logger
from .model import RadianceModel
from .optim import Adam
from .scene import Scene

FORMAT_VERSION = 1

_log = get_logger("checkpoint")


@dataclasses.dataclass
class Checkpoint:
    model: RadianceModel
    optimizer: Adam
    step: int
    config: TrainConfig
    manifest_id: str | None = None


def save_checkpoint(path: str, model: RadianceModel, optimizer: Adam, step: int,
                    config: TrainConfig, manifest_id: str | None = None) -> None:
    meta = {
        "format": FORMAT_VERSION,
        "encoder": model.encoder.name,
        "step": step,
        "geometry_hash": model.geometry_hash,
        "manifest_id": manifest_id,
        "config": config.to_dict(),
    }
    arrays: dict[str, Any] = {"meta": np.array(json.dumps(meta, sort_keys=True))}
    for prefix, state in (
        ("encoder", model.encoder.state_dict()),
        ("mlp", model.mlp.state_dict()),
        ("adam", optimizer.state_dict()),
    ):
        for key, value in state.items():
            arrays[f"{prefix}/{key}"] = value
    with open(path, "wb") as f:
        np.savez(f, **arrays)
    _log.info("saved checkpoint %s (step %d, %d parameters)", path, step, model.param_count())


def _segment(data: dict[str, np.ndarray], prefix: str) -> dict[str, np.ndarray]:
    head = prefix + "/"
    return {key[len(head):]: value for key, value in data.items() if key.startswith(head)}


def read_meta(path: str) -> dict[str, Any]:
    """The JSON record of a checkpoint, without building the model."""
    try:
        with np.load(path, allow_pickle=False) as npz:
            return json.loads(str(npz["meta"]))
    except (OSError, ValueError, KeyError, zipfile.BadZipFile) as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e


def load_checkpoint(path: str, scene: Scene) -> Checkpoint:
    """Rebuild model and optimizer; the scene must hash to the trained geometry."""
    try:
        with np.load(path, allow_pickle=False) as npz:
            data = {key: npz[key] for key in npz.files}
    except (OSError, ValueError, zipfile.BadZipFile) as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    if "meta" not in data:
        raise CheckpointError(f"{path} is not a checkpoint (no meta record)")
    meta = json.loads(str(data["meta"]))
    if meta.get("format") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint format {meta.get('format')!r}")

    geometry_hash = scene.geometry_hash()
    if meta["geometry_hash"] != geometry_hash:
        raise CheckpointMismatchError(
            f"{path} was trained on geometry {meta['geometry_hash'][:12]}, "
            f"scene has {geometry_hash[:12]}"
        )

    config = TrainConfig.from_mapping(meta["config"])
    model = RadianceModel.from_config(scene, config)
    model.encoder.load_state_dict(_segment(data, "encoder"))
    model.mlp.load_state_dict(_segment(data, "mlp"))
    optimizer = Adam(config.total_steps, config.learning_rate, config.lr_decay)
    optimizer.load_state_dict(_segment(data, "adam"))
    _log.info("loaded checkpoint %s (step %d)", path, meta["step"])
    return Checkpoint(model=model, optimizer=optimizer, step=int(meta["step"]), config=config,
                      manifest_id=meta.get("manifest_id"))
