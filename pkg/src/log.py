"""Logger setup shared by the library and the CLI.

Library modules only call ``get_logger``. Handlers are attached once by
``configure``: a debug file log under data_dir() when debug is on, and a
stderr handler when running from the command line.
"""

from __future__ import annotations

import logging
import os
import sys

ROOT_LOGGER = "vertex-radiosity"
LOG_FORMAT = "%(asctime)s [%(name)s] %(levelname)s: %(message)s"

_root = logging.getLogger(ROOT_LOGGER)
_root.addHandler(logging.NullHandler())


def get_logger(name: str) -> logging.Logger:
    """Return the ``vertex-radiosity.<name>`` logger."""
    return logging.getLogger(f"{ROOT_LOGGER}.{name}")


def configure(*, debug: bool | None = None, stderr: bool = False, verbose: bool = False) -> None:
    """Attach handlers to the package root logger.

    ``debug`` defaults to the ``debug`` config key (VERTEX_RADIOSITY_DEBUG).
    Calling twice does not duplicate handlers.
    """
    from . import config  # noqa: PLC0415

    if debug is None:
        debug = bool(config.get("debug"))

    _root.setLevel(logging.DEBUG)
    formatter = logging.Formatter(LOG_FORMAT)

    if debug and not any(isinstance(h, logging.FileHandler) for h in _root.handlers):
        from src import data_dir  # noqa: PLC0415

        log_dir = data_dir()
        os.makedirs(log_dir, exist_ok=True)
        handler = logging.FileHandler(os.path.join(log_dir, "run.log"))
        handler.setFormatter(formatter)
        handler.setLevel(logging.DEBUG)
        _root.addHandler(handler)

    if stderr and not any(getattr(h, "_cli_stderr", False) for h in _root.handlers):
        stream = logging.StreamHandler(sys.stderr)
        stream.setFormatter(formatter)
        stream.setLevel(logging.DEBUG if verbose or debug else logging.INFO)
        stream._cli_stderr = True  # type: ignore[attr-defined]
        _root.addHandler(stream)
