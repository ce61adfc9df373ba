"""
Run manifests for the Loewner laboratory.
Records what a command wrote, with digests, so that a run can be replayed and checked.
"""

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional

from utils.csv_io import sha256_file, write_json

logger = logging.getLogger(__name__)

TOOL_VERSION = "1.0"
MANIFEST_NAME = "manifest.json"


@dataclass
class RunManifest:
    """Container for everything needed to reproduce a run."""
    command: str
    flags: Dict[str, Any]
    seed: Optional[int]
    started_at: float
    finished_at: float
    digests: Dict[str, str] = field(default_factory=dict)
    tool_version: str = TOOL_VERSION

    @property
    def formatted_start(self) -> str:
        return datetime.fromtimestamp(self.started_at).strftime("%Y-%m-%d %H:%M:%S")


class RunManager:
    """
    Manages the output directory of one command: data files, digests and the manifest.
    """

    def __init__(self, output_dir: Path):
        """Initialize the manager for an output directory."""
        self.output_dir = Path(output_dir)
        self.started_at = time.time()
        self.files: List[Path] = []
        self.ensure_output_directory()

    def ensure_output_directory(self) -> None:
        """Create the output directory if it doesn't exist."""
        self.output_dir.mkdir(parents=True, exist_ok=True)

    def path(self, name: str) -> Path:
        """Path of a data file inside the output directory (registered for digests)."""
        target = self.output_dir / name
        if target not in self.files:
            self.files.append(target)
        return target

    def finish(self, command: str, flags: Dict[str, Any], seed: Optional[int] = None) -> RunManifest:
        """
        Digest every registered file that exists and write the manifest.

        Args:
            command: Sub-command name
            flags: Complete flag set the command ran with
            seed: Brownian seed, if the command used one

        Returns:
            The written RunManifest
        """
        digests = {
            p.name: sha256_file(p) for p in sorted(self.files) if p.exists()
        }
        manifest = RunManifest(
            command=command,
            flags=dict(flags),
            seed=seed,
            started_at=self.started_at,
            finished_at=time.time(),
            digests=digests,
        )
        write_json(self.output_dir / MANIFEST_NAME, asdict(manifest))
        logger.info("wrote manifest with %d digests to %s", len(digests), self.output_dir)
        return manifest


def load_manifest(path: Path) -> Optional[RunManifest]:
    """
    Load a manifest from a file or from an output directory.

    Returns:
        RunManifest if found and well formed, None otherwise
    """
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    if not path.exists():
        return None
    try:
        with open(path, "r") as f:
            data = json.load(f)
        return RunManifest(**data)
    except (OSError, ValueError, TypeError) as e:
        logger.error("cannot read manifest %s: %s", path, e)
        return None


def compare_digests(expected: RunManifest, actual: RunManifest) -> List[str]:
    """Names of files whose digests differ or are missing on either side."""
    names = sorted(set(expected.digests) | set(actual.digests))
    return [n for n in names if expected.digests.get(n) != actual.digests.get(n)]
