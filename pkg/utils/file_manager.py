# File: utils/file_manager.py
import hashlib
import json
import os
from pathlib import Path
from typing import Any, Dict, List, Optional
import logging

import pandas as pd

from core.bias import BiasPotential
from models.core_models import ManifestEntry, RunManifest
from models.errors import InvalidArgumentError

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"
MANIFEST_NAME = "manifest.json"
LOCK_NAME = ".lock"


def file_sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def read_table(path: Path) -> pd.DataFrame:
    """Read a CSV written by RunFileManager (schema line skipped, floats exact)"""
    path = Path(path)
    with open(path, "r", encoding="utf-8") as f:
        first = f.readline()
    skip = 1 if first.startswith("# schema:") else 0
    return pd.read_csv(path, skiprows=skip, float_precision="round_trip")


class RunFileManager:
    """Output directory of one run: CSV/JSON emission, bias snapshots, manifest"""

    def __init__(self, base_dir: str, command: str = "adapt"):
        self.base_dir = Path(base_dir)
        self.command = command
        self.biases_dir = self.base_dir / "biases"
        self.fes_dir = self.base_dir / "fes"
        self.lock_path = self.base_dir / LOCK_NAME
        self._entries: Dict[str, ManifestEntry] = {}
        self._manifest_meta: Dict[str, Any] = {}

        # Create directories if they don't exist
        self._ensure_directories()
        self._load_manifest()

    def _ensure_directories(self):
        """Create necessary directories"""
        for directory in [self.base_dir, self.biases_dir, self.fes_dir]:
            directory.mkdir(parents=True, exist_ok=True)
            logger.debug(f"Ensured directory exists: {directory}")

    def path(self, relpath: str) -> Path:
        return self.base_dir / relpath

    # Locking
    def acquire_lock(self):
        """Refuse a second writer on the same output directory"""
        try:
            fd = os.open(self.lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise InvalidArgumentError(f"output directory {self.base_dir} is locked by another run "
                                       f"(remove {self.lock_path} if stale)")
        with os.fdopen(fd, "w") as f:
            f.write(str(os.getpid()))

    def release_lock(self):
        try:
            self.lock_path.unlink()
        except FileNotFoundError:
            logger.warning(f"Lock file already gone: {self.lock_path}")

    def __enter__(self) -> "RunFileManager":
        self.acquire_lock()
        return self

    def __exit__(self, exc_type, exc, tb):
        self.release_lock()
        return False

    # Tables
    def write_csv(self, relpath: str, frame: pd.DataFrame, schema: str) -> Path:
        """Write a table with a one-line schema header and register it"""
        file_path = self.path(relpath)
        try:
            file_path.parent.mkdir(parents=True, exist_ok=True)
            with open(file_path, "w", encoding="utf-8", newline="") as f:
                f.write(f"# schema: {schema}\n")
                frame.to_csv(f, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
        except OSError as e:
            logger.error(f"Error writing {file_path}: {e}")
            raise
        self.register(relpath)
        logger.info(f"Wrote {len(frame)} rows to {file_path}")
        return file_path

    def append_csv(self, relpath: str, frame: pd.DataFrame, schema: str) -> Path:
        """Append rows, creating the file with its header on first use"""
        file_path = self.path(relpath)
        if not file_path.exists():
            return self.write_csv(relpath, frame, schema)
        try:
            with open(file_path, "a", encoding="utf-8", newline="") as f:
                frame.to_csv(f, index=False, header=False, float_format=FLOAT_FORMAT, lineterminator="\n")
        except OSError as e:
            logger.error(f"Error appending to {file_path}: {e}")
            raise
        self.register(relpath)
        return file_path

    def truncate_csv(self, relpath: str, column: str, max_value: int, schema: str) -> None:
        """Drop rows whose column exceeds max_value (used when resuming)"""
        file_path = self.path(relpath)
        if not file_path.exists():
            return
        frame = read_table(file_path)
        kept = frame[frame[column] <= max_value]
        if len(kept) != len(frame):
            logger.info(f"Discarding {len(frame) - len(kept)} rows past {column}={max_value} in {file_path}")
            self.write_csv(relpath, kept, schema)

    def discard(self, relpath: str) -> None:
        """Remove a file left by an earlier run and forget its manifest entry"""
        self._entries.pop(relpath, None)
        file_path = self.path(relpath)
        if file_path.exists():
            file_path.unlink()
            logger.info(f"Removed stale output {file_path}")

    def read_csv(self, relpath: str) -> pd.DataFrame:
        return read_table(self.path(relpath))

    # JSON documents
    def write_json(self, relpath: str, data: Dict[str, Any], register: bool = True) -> Path:
        file_path = self.path(relpath)
        try:
            file_path.parent.mkdir(parents=True, exist_ok=True)
            with open(file_path, "w", encoding="utf-8") as f:
                json.dump(data, f, indent=2, sort_keys=True)
                f.write("\n")
        except (OSError, TypeError) as e:
            logger.error(f"Error writing {file_path}: {e}")
            raise
        if register:
            self.register(relpath)
        return file_path

    def read_json(self, relpath: str) -> Dict[str, Any]:
        with open(self.path(relpath), "r", encoding="utf-8") as f:
            return json.load(f)

    # Bias snapshots
    def bias_relpath(self, iteration: int) -> str:
        return f"biases/bias_{iteration:04d}.json"

    def save_bias(self, bias: BiasPotential) -> Path:
        file_path = self.write_json(self.bias_relpath(bias.iteration), bias.to_dict())
        logger.info(f"Bias snapshot saved: {file_path}")
        return file_path

    def list_biases(self) -> List[str]:
        return sorted(p.name for p in self.biases_dir.glob("bias_*.json"))

    # Manifest
    def register(self, relpath: str, command: Optional[str] = None) -> ManifestEntry:
        entry = ManifestEntry(path=relpath, sha256=file_sha256(self.path(relpath)),
                              command=command or self.command)
        self._entries[relpath] = entry
        return entry

    def _load_manifest(self):
        manifest_path = self.path(MANIFEST_NAME)
        if not manifest_path.exists():
            return
        try:
            with open(manifest_path, "r", encoding="utf-8") as f:
                manifest = RunManifest(**json.load(f))
        except (OSError, ValueError) as e:
            logger.error(f"Error loading manifest {manifest_path}: {e}")
            raise
        self._entries = {entry.path: entry for entry in manifest.entries}
        self._manifest_meta = {"experiment": manifest.experiment, "config_hash": manifest.config_hash,
                               "seeds": manifest.seeds}

    def write_manifest(self, experiment: str, config_hash: str, seeds: Dict[str, int]) -> Path:
        """Index every registered file; no timestamps so reruns are byte-identical"""
        seeds = {**self._manifest_meta.get("seeds", {}), **seeds}
        entries = [self._entries[key] for key in sorted(self._entries)]
        manifest = RunManifest(experiment=experiment, config_hash=config_hash, seeds=seeds, entries=entries)
        file_path = self.write_json(MANIFEST_NAME, manifest.model_dump(mode="json"), register=False)
        logger.info(f"Manifest lists {len(entries)} files: {file_path}")
        return file_path

    def manifest_hash(self) -> str:
        return file_sha256(self.path(MANIFEST_NAME))


def load_bias(path: str) -> BiasPotential:
    """Read a bias snapshot written by save_bias"""
    file_path = Path(path)
    if not file_path.exists():
        raise FileNotFoundError(f"bias snapshot not found: {file_path}")
    with open(file_path, "r", encoding="utf-8") as f:
        return BiasPotential.from_dict(json.load(f))
