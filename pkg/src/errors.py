"""Exception hierarchy. The CLI maps these onto exit codes."""

from __future__ import annotations


class VertexRadiosityError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(VertexRadiosityError, ValueError):
    """Bad input: violated precondition, malformed file, invalid config."""


class ConfigError(ValidationError):
    pass


class GeometryError(ValidationError):
    """Invalid mesh data. ``face`` is set when a specific face is at fault."""

    def __init__(self, message: str, face: int | None = None) -> None:
        super().__init__(message)
        self.face = face


class SceneFormatError(ValidationError):
    """Unparseable scene or OBJ file, with file and line context."""

    def __init__(self, message: str, path: str | None = None, line: int | None = None) -> None:
        location = ""
        if path is not None:
            location = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(f"{location}{message}")
        self.path = path
        self.line = line


class ImageFormatError(ValidationError):
    pass


class CheckpointError(VertexRadiosityError):
    pass


class CheckpointMismatchError(CheckpointError, ValidationError):
    """Checkpoint was trained on different geometry than the scene given."""
