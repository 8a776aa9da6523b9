"""
Stage directories, stage manifests and lineage checks.

Layout under ``<stage_dir>/<config hash prefix>/``:

    simulate/runs/run_XXXX.{manifest.json,eqfr}
    manifold/   rom/   evaluate/   export/
    <stage>/stage_manifest.json
    timings.json        wall-clock only, outside the determinism contract
"""

import hashlib
import json
import logging
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Union

from .enums import StageName
from .exceptions import ArtifactNotFoundError, LineageError

logger = logging.getLogger(__name__)

STAGE_MANIFEST = "stage_manifest.json"
TIMINGS_FILE = "timings.json"


def file_sha256(path: Union[str, Path]) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def combine_hashes(*parts: str) -> str:
    digest = hashlib.sha256()
    for part in parts:
        digest.update(part.encode("utf-8"))
        digest.update(b"\0")
    return digest.hexdigest()


def _dump_json(data: Dict[str, Any], path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
    return path


class ArtifactStore(ABC):
    """Abstract interface for stage outputs"""

    @abstractmethod
    def stage_path(self, stage: StageName) -> Path:
        """Directory holding a stage's outputs"""
        pass

    @abstractmethod
    def write_stage_manifest(
        self,
        stage: StageName,
        inputs_hash: str,
        outputs: Iterable[Path],
        extra: Optional[Dict[str, Any]] = None,
    ) -> Path:
        """Record a finished stage with the hash of every output file"""
        pass

    @abstractmethod
    def read_stage_manifest(self, stage: StageName) -> Optional[Dict[str, Any]]:
        pass

    @abstractmethod
    def is_up_to_date(self, stage: StageName, inputs_hash: str) -> bool:
        pass

    @abstractmethod
    def list_artifacts(self, kind: str) -> List[str]:
        """Ids of persisted artifacts of one kind (``runs`` or ``models``)"""
        pass

    @abstractmethod
    def record_timings(self, stage: StageName, timings: Dict[str, Any]) -> Path:
        pass


class LocalArtifactStore(ArtifactStore):
    """Filesystem store rooted at ``<stage_dir>/<hash prefix>``"""

    def __init__(self, stage_dir: Union[str, Path], config_hash: str, prefix_len: int = 12):
        self.config_hash = config_hash
        self.prefix = config_hash[:prefix_len]
        self.root = Path(stage_dir) / self.prefix
        self.root.mkdir(parents=True, exist_ok=True)

    def stage_path(self, stage: StageName) -> Path:
        path = self.root / stage.directory
        path.mkdir(parents=True, exist_ok=True)
        return path

    def runs_path(self) -> Path:
        path = self.stage_path(StageName.SIMULATE) / "runs"
        path.mkdir(parents=True, exist_ok=True)
        return path

    def run_base(self, run_id: int) -> Path:
        return self.runs_path() / f"run_{run_id:04d}"

    def write_stage_manifest(
        self,
        stage: StageName,
        inputs_hash: str,
        outputs: Iterable[Path],
        extra: Optional[Dict[str, Any]] = None,
    ) -> Path:
        stage_dir = self.stage_path(stage)
        files = {}
        for output in sorted(set(Path(p) for p in outputs)):
            files[output.relative_to(self.root).as_posix()] = file_sha256(output)
        manifest = {
            "stage": stage.value,
            "config_hash": self.config_hash,
            "inputs_hash": inputs_hash,
            "outputs": files,
            "outputs_hash": combine_hashes(*(f"{k}={v}" for k, v in sorted(files.items()))),
        }
        if extra:
            manifest["extra"] = extra
        path = _dump_json(manifest, stage_dir / STAGE_MANIFEST)
        logger.debug(f"Wrote {stage.value} manifest with {len(files)} outputs")
        return path

    def read_stage_manifest(self, stage: StageName) -> Optional[Dict[str, Any]]:
        path = self.root / stage.directory / STAGE_MANIFEST
        if not path.exists():
            return None
        return json.loads(path.read_text())

    def outputs_hash(self, stage: StageName) -> str:
        """Lineage token of a finished stage, for downstream input hashes"""
        manifest = self.read_stage_manifest(stage)
        if manifest is None:
            raise LineageError(f"Stage {stage.value} has not been run for config {self.prefix}")
        return manifest["outputs_hash"]

    def is_up_to_date(self, stage: StageName, inputs_hash: str) -> bool:
        manifest = self.read_stage_manifest(stage)
        if manifest is None or manifest.get("inputs_hash") != inputs_hash:
            return False
        for rel, digest in manifest.get("outputs", {}).items():
            path = self.root / rel
            if not path.exists() or file_sha256(path) != digest:
                logger.info(f"{stage.value}: output {rel} changed, recomputing")
                return False
        return True

    def list_artifacts(self, kind: str) -> List[str]:
        if kind == "runs":
            directory = self.root / StageName.SIMULATE.directory / "runs"
        elif kind == "models":
            directory = self.root / StageName.TRAIN_ROM.directory
        elif kind == "encoders":
            directory = self.root / StageName.BUILD_MANIFOLD.directory
        else:
            raise ArtifactNotFoundError("artifact kind", kind, ["runs", "models", "encoders"])
        if not directory.exists():
            return []
        return sorted(
            p.name[: -len(".manifest.json")]
            for p in directory.glob("*.manifest.json")
        )

    def record_timings(self, stage: StageName, timings: Dict[str, Any]) -> Path:
        path = self.root / TIMINGS_FILE
        current = json.loads(path.read_text()) if path.exists() else {}
        current[stage.value] = timings
        return _dump_json(current, path)
