"""Per-run manifest written once into every command's output root."""
from __future__ import annotations

import logging
import os
import tempfile
from contextlib import contextmanager
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, Iterator, Optional

from pydantic import BaseModel, Field

from .. import __version__
from ..errors import IoFailure

LOGGER = logging.getLogger(__name__)

MANIFEST_NAME = "run_manifest.json"


class RunManifest(BaseModel):
    """What ran, on which inputs, and when."""

    command: str
    config_path: Optional[str] = None
    input_roots: Dict[str, str] = Field(default_factory=dict)
    output_root: str
    seed: Optional[int] = None
    tool_version: str = __version__
    started_at: datetime = Field(default_factory=lambda: datetime.now(timezone.utc))
    finished_at: Optional[datetime] = None
    status: str = "running"


def write_manifest(manifest: RunManifest, out_root: Path) -> Path:
    """Atomically (temp file + rename) write ``run_manifest.json`` into ``out_root``."""

    out_root = Path(out_root)
    target = out_root / MANIFEST_NAME
    try:
        out_root.mkdir(parents=True, exist_ok=True)
        with tempfile.NamedTemporaryFile(
            "w", encoding="utf-8", dir=out_root, prefix=".manifest-", suffix=".tmp", delete=False
        ) as handle:
            handle.write(manifest.model_dump_json(indent=2))
            handle.write("\n")
            temp_name = handle.name
        os.replace(temp_name, target)
    except OSError as exc:
        raise IoFailure(f"Cannot write manifest {target}: {exc}") from exc
    return target


@contextmanager
def recorded_run(manifest: RunManifest) -> Iterator[RunManifest]:
    """Write the manifest when the wrapped command finishes, successfully or not."""

    try:
        yield manifest
        manifest.status = "succeeded"
    except BaseException:
        manifest.status = "failed"
        raise
    finally:
        manifest.finished_at = datetime.now(timezone.utc)
        try:
            write_manifest(manifest, Path(manifest.output_root))
        except IoFailure:
            LOGGER.exception("Failed to write run manifest", extra={"path": manifest.output_root})


__all__ = ["RunManifest", "write_manifest", "recorded_run", "MANIFEST_NAME"]
