"""Run manifests: what produced an artifact, with per-phase timing and memory."""

from __future__ import annotations

import contextlib
import dataclasses
import json
import os
import subprocess
import sys
import time
import uuid
from collections.abc import Callable, Iterator
from datetime import datetime, timezone
from typing import Any

from src import __version__

_REPO_DIR = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def _run_git_describe() -> str:
    result = subprocess.run(
        ["git", "describe", "--tags", "--always", "--dirty"],  # noqa: S607
        capture_output=True,
        text=True,
        cwd=_REPO_DIR,
        timeout=5,
        check=True,
    )
    return result.stdout.strip()


def version_string(describe_fn: Callable[[], str] | None = None) -> str:
    """git-describe output when available, else ``v<package version>``.

    Fail-open: any error falls back to the package version.

    Args:
        describe_fn: Override for the git call (for testing).
    """
    try:
        described = (describe_fn or _run_git_describe)()
    except Exception:
        return f"v{__version__}"
    return described or f"v{__version__}"


def peak_memory_mb() -> float | None:
    """Peak resident set size of this process, None where unavailable."""
    try:
        import resource  # noqa: PLC0415
    except ImportError:
        return None
    peak = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss
    # kilobytes on Linux, bytes on macOS
    return peak / (1024 * 1024) if sys.platform == "darwin" else peak / 1024


@dataclasses.dataclass
class PhaseRecord:
    name: str
    seconds: float
    peak_memory_mb: float | None


@dataclasses.dataclass
class RunManifest:
    command: str
    seed: int
    config: dict[str, Any]
    run_id: str = dataclasses.field(default_factory=lambda: str(uuid.uuid4())[:12])
    version: str = dataclasses.field(default_factory=version_string)
    created: str = dataclasses.field(
        default_factory=lambda: datetime.now(timezone.utc).isoformat(timespec="seconds")
    )
    phases: list[PhaseRecord] = dataclasses.field(default_factory=list)
    artifacts: list[str] = dataclasses.field(default_factory=list)

    @contextlib.contextmanager
    def phase(self, name: str) -> Iterator[None]:
        start = time.perf_counter()
        try:
            yield
        finally:
            self.phases.append(PhaseRecord(name, time.perf_counter() - start, peak_memory_mb()))

    def add_artifact(self, path: str) -> None:
        self.artifacts.append(os.path.basename(path))

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def write(self, path: str) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2)
            f.write("\n")
