"""
Snapshot matrices, split sampling, manifold subsampling and on-disk formats.

EQFR payload layout (little-endian):

    magic      4 bytes   b"EQFR"
    version    u32
    N, M       u64, u64
    data       N*M float64, column-major
    n_aux      u32
    aux arrays name_len u16, name utf-8, dtype u8 (0=f64, 1=i64),
               ndim u32, dims u64*ndim, values (C order)

Each payload sits next to a JSON manifest carrying the schema version, the
section mode, the SHA-256 of the payload and free-form metadata.
"""

import hashlib
import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field as PydanticField

from .enums import ArtifactMode, Normalization, Split
from .exceptions import (
    ChecksumError,
    ConfigError,
    FormatError,
    FormatVersionError,
    SamplingError,
    TruncatedFileError,
    ZeroMassError,
)
from .grid_domain import Field, Grid
from .hughes_solver import GaussianIc, HughesParams, SimulationRun
from .settings import CSV_FLOAT_FORMAT

logger = logging.getLogger(__name__)

MAGIC = b"EQFR"
PAYLOAD_VERSION = 1
SCHEMA_VERSION = "1.0"
UNIT_MASS_TOLERANCE = 1e-12

_DTYPE_CODES = {0: np.dtype("<f8"), 1: np.dtype("<i8")}
_IC_COLUMNS = ("x0", "y0", "sigma_x", "sigma_y", "target_mass")


# ---------------------------------------------------------------------------
# Snapshot matrix
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SnapshotMatrix:
    """Column-stacked density snapshots with per-column provenance.

    ``masses`` holds the column sums the data had before unit-mass
    normalization (equal to the current column sums for RAW data).
    """
    data: np.ndarray = field(repr=False)  # (N, M)
    run_ids: np.ndarray = field(repr=False)  # (M,)
    times: np.ndarray = field(repr=False)  # (M,)
    ic_params: np.ndarray = field(repr=False)  # (M, 5)
    masses: np.ndarray = field(repr=False)  # (M,)
    normalization: Normalization = Normalization.RAW
    cell_area: float = 1.0
    grid: Optional[Grid] = None

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64, order="F")
        if data.ndim != 2:
            raise FormatError(f"Snapshot data must be 2-D, got shape {data.shape}")
        n_cols = data.shape[1]
        arrays = {
            "run_ids": np.array(self.run_ids, dtype=np.int64).reshape(n_cols),
            "times": np.array(self.times, dtype=np.float64).reshape(n_cols),
            "ic_params": np.array(self.ic_params, dtype=np.float64).reshape(
                n_cols, len(_IC_COLUMNS)
            ),
            "masses": np.array(self.masses, dtype=np.float64).reshape(n_cols),
        }
        if self.grid is not None and data.shape[0] != self.grid.n_cells:
            raise FormatError(
                f"Snapshot length {data.shape[0]} does not match grid ({self.grid.n_cells} cells)"
            )
        if self.normalization is Normalization.UNIT_MASS and n_cols:
            deviation = float(np.max(np.abs(data.sum(axis=0) - 1.0)))
            if deviation > UNIT_MASS_TOLERANCE:
                raise ZeroMassError(f"Unit-mass columns deviate from 1 by {deviation:.3e}")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        for name, arr in arrays.items():
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_rows(self) -> int:
        return self.data.shape[0]

    @property
    def n_cols(self) -> int:
        return self.data.shape[1]

    def column(self, m: int) -> np.ndarray:
        return self.data[:, m]

    def select(self, indices: Sequence[int]) -> "SnapshotMatrix":
        idx = np.asarray(indices, dtype=np.int64)
        return SnapshotMatrix(
            self.data[:, idx],
            self.run_ids[idx],
            self.times[idx],
            self.ic_params[idx],
            self.masses[idx],
            self.normalization,
            self.cell_area,
            self.grid,
        )

    def normalized(self) -> "SnapshotMatrix":
        """Unit column sums; original sums kept in ``masses``"""
        if self.normalization is Normalization.UNIT_MASS:
            return self
        sums = self.data.sum(axis=0)
        if np.any(sums <= 0.0):
            bad = int(np.flatnonzero(sums <= 0.0)[0])
            raise ZeroMassError(f"Column {bad} has no mass and cannot be normalized")
        return SnapshotMatrix(
            self.data / sums,
            self.run_ids,
            self.times,
            self.ic_params,
            sums,
            Normalization.UNIT_MASS,
            self.cell_area,
            self.grid,
        )

    def denormalized(self) -> "SnapshotMatrix":
        if self.normalization is Normalization.RAW:
            return self
        return SnapshotMatrix(
            self.data * self.masses,
            self.run_ids,
            self.times,
            self.ic_params,
            self.masses,
            Normalization.RAW,
            self.cell_area,
            self.grid,
        )

    def physical_masses(self) -> np.ndarray:
        return self.masses * self.cell_area

    def content_hash(self) -> str:
        digest = hashlib.sha256()
        digest.update(np.asarray(self.data, order="F").astype("<f8").tobytes(order="F"))
        digest.update(self.run_ids.astype("<i8").tobytes())
        digest.update(self.times.astype("<f8").tobytes())
        digest.update(self.normalization.value.encode())
        return digest.hexdigest()


def unit_mass_columns(values: np.ndarray) -> np.ndarray:
    """Divide every column by its sum"""
    sums = values.sum(axis=0)
    if np.any(sums <= 0.0):
        raise ZeroMassError("Cannot normalize a column without mass")
    return values / sums


def from_runs(runs: Sequence[SimulationRun]) -> SnapshotMatrix:
    """RAW matrix holding every snapshot of every run, runs in the given order"""
    if not runs:
        raise SamplingError("No runs to assemble")
    grid = runs[0].grid
    blocks, run_ids, times, ics = [], [], [], []
    for run in runs:
        blocks.append(run.values.T)
        run_ids.append(np.full(run.n_snapshots, run.run_id))
        times.append(run.times)
        ics.append(np.tile(_ic_vector(run.ic), (run.n_snapshots, 1)))
    data = np.hstack(blocks)
    return SnapshotMatrix(
        data,
        np.concatenate(run_ids),
        np.concatenate(times),
        np.vstack(ics),
        data.sum(axis=0),
        Normalization.RAW,
        grid.cell_area,
        grid,
    )


def _ic_vector(ic: GaussianIc) -> np.ndarray:
    return np.array([getattr(ic, name) for name in _IC_COLUMNS], dtype=np.float64)


# ---------------------------------------------------------------------------
# Split sampling
# ---------------------------------------------------------------------------

class IcRanges(BaseModel):
    """Uniform sampling intervals of the Gaussian parameters (meters)"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    x0: Tuple[float, float] = (1.5, 3.5)
    y0: Tuple[float, float] = (1.5, 3.5)
    sigma_x: Tuple[float, float] = (1.6, 2.0)
    sigma_y: Tuple[float, float] = (1.6, 2.0)


class ExtraRule(BaseModel):
    """Out-of-range widths for the extra split: lower*below, upper*above"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    below: float = PydanticField(0.75, gt=0.0, lt=1.0)
    above: float = PydanticField(1.25, gt=1.0)


class SplitPlan(BaseModel):
    """Run counts per split and the sampling rule"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    seed: int = 0
    n_train: int = PydanticField(40, ge=1)
    n_val: int = PydanticField(20, ge=0)
    n_test: int = PydanticField(40, ge=0)
    n_extra: int = PydanticField(10, ge=0)
    ic_ranges: IcRanges = IcRanges()
    extra_rule: ExtraRule = ExtraRule()
    target_mass: float = PydanticField(10.0, gt=0.0)

    def check_ranges(self) -> None:
        for name in ("x0", "y0", "sigma_x", "sigma_y"):
            low, high = getattr(self.ic_ranges, name)
            if not low <= high:
                raise ConfigError(f"Empty sampling range for {name}: [{low}, {high}]")
        for name in ("sigma_x", "sigma_y"):
            if getattr(self.ic_ranges, name)[0] <= 0:
                raise ConfigError(f"Sampling range for {name} must be positive")

    def counts(self) -> Dict[str, int]:
        return {
            Split.TRAIN.value: self.n_train,
            Split.VAL.value: self.n_val,
            Split.TEST.value: self.n_test,
            Split.EXTRA.value: self.n_extra,
        }


@dataclass(frozen=True)
class RunSpec:
    """One sampled initial condition with its run id and split"""
    run_id: int
    split: str
    ic: GaussianIc


def sample_ics(plan: SplitPlan) -> Dict[str, List[RunSpec]]:
    """Draw initial conditions for every split; run ids are sequential
    across train, val, test and extra."""
    plan.check_ranges()
    rng = np.random.default_rng(plan.seed)
    ranges = plan.ic_ranges
    extra_sigmas = {
        name: (
            round(getattr(ranges, name)[0] * plan.extra_rule.below, 12),
            round(getattr(ranges, name)[1] * plan.extra_rule.above, 12),
        )
        for name in ("sigma_x", "sigma_y")
    }

    result: Dict[str, List[RunSpec]] = {}
    run_id = 0
    for split, count in plan.counts().items():
        specs = []
        for _ in range(count):
            x0 = float(rng.uniform(*ranges.x0))
            y0 = float(rng.uniform(*ranges.y0))
            if split == Split.EXTRA.value:
                sigma_x = float(extra_sigmas["sigma_x"][rng.integers(2)])
                sigma_y = float(extra_sigmas["sigma_y"][rng.integers(2)])
            else:
                sigma_x = float(rng.uniform(*ranges.sigma_x))
                sigma_y = float(rng.uniform(*ranges.sigma_y))
            ic = GaussianIc(
                x0=x0, y0=y0, sigma_x=sigma_x, sigma_y=sigma_y,
                target_mass=plan.target_mass,
            )
            specs.append(RunSpec(run_id, split, ic))
            run_id += 1
        result[split] = specs
    return result


# ---------------------------------------------------------------------------
# Manifold subsampling
# ---------------------------------------------------------------------------

def _quotas(total: int, n_runs: int) -> List[int]:
    base, extra = divmod(total, n_runs)
    return [base + (1 if r < extra else 0) for r in range(n_runs)]


def subsample_for_manifold(
    runs: Sequence[SimulationRun],
    early_window_s: float,
    early_fraction: float,
    total_count: int,
    seed: int,
) -> SnapshotMatrix:
    """Stratified snapshot selection emphasizing the transient.

    ``round(early_fraction * total_count)`` columns come from t < early_window_s,
    the rest from later times; each stratum is split evenly over the runs
    (ordered by run id) and sampled without replacement with a per-run seed.
    The result is unit-mass normalized.
    """
    if not runs:
        raise SamplingError("No runs to subsample")
    if not 0.0 <= early_fraction <= 1.0:
        raise SamplingError(f"early_fraction {early_fraction} outside [0, 1]")
    available = sum(run.n_snapshots for run in runs)
    if total_count > available:
        raise SamplingError(f"Requested {total_count} snapshots, only {available} available")

    ordered = sorted(runs, key=lambda run: run.run_id)
    n_early = int(round(early_fraction * total_count))
    early_quota = _quotas(n_early, len(ordered))
    late_quota = _quotas(total_count - n_early, len(ordered))

    blocks, run_ids, times, ics = [], [], [], []
    for run, q_early, q_late in zip(ordered, early_quota, late_quota):
        run_times = run.times
        is_early = run_times < early_window_s - 1e-9 * run.snapshot_dt
        early_idx = np.flatnonzero(is_early)
        late_idx = np.flatnonzero(~is_early)
        if q_early > early_idx.size or q_late > late_idx.size:
            raise SamplingError(
                f"Run {run.run_id} has {early_idx.size} early / {late_idx.size} late "
                f"snapshots, needs {q_early} / {q_late}"
            )
        rng = np.random.default_rng([seed, run.run_id])
        chosen = np.concatenate(
            [
                rng.choice(early_idx, size=q_early, replace=False),
                rng.choice(late_idx, size=q_late, replace=False),
            ]
        )
        chosen = np.sort(chosen)
        blocks.append(run.values[chosen].T)
        run_ids.append(np.full(chosen.size, run.run_id))
        times.append(run_times[chosen])
        ics.append(np.tile(_ic_vector(run.ic), (chosen.size, 1)))

    data = np.hstack(blocks)
    grid = ordered[0].grid
    raw = SnapshotMatrix(
        data,
        np.concatenate(run_ids),
        np.concatenate(times),
        np.vstack(ics),
        data.sum(axis=0),
        Normalization.RAW,
        grid.cell_area,
        grid,
    )
    logger.info(
        f"Subsampled {total_count} snapshots ({n_early} early, "
        f"{total_count - n_early} late) from {len(ordered)} runs"
    )
    return raw.normalized()


# ---------------------------------------------------------------------------
# EQFR container
# ---------------------------------------------------------------------------

@dataclass
class ArtifactContent:
    """Decoded EQFR artifact"""
    mode: ArtifactMode
    primary: np.ndarray
    aux: Dict[str, np.ndarray]
    metadata: Dict[str, Any]
    sha256: str


def artifact_paths(path: Union[str, Path]) -> Tuple[Path, Path]:
    """(manifest, payload) paths for an artifact base path"""
    path = Path(path)
    name = path.name
    if name.endswith(".manifest.json"):
        name = name[: -len(".manifest.json")]
    elif name.endswith(".eqfr"):
        name = name[: -len(".eqfr")]
    return path.with_name(name + ".manifest.json"), path.with_name(name + ".eqfr")


def encode_payload(primary: np.ndarray, aux: Dict[str, np.ndarray]) -> bytes:
    primary = np.asarray(primary, dtype="<f8")
    if primary.ndim == 1:
        primary = primary.reshape(-1, 1)
    n_rows, n_cols = primary.shape
    parts = [MAGIC, struct.pack("<IQQ", PAYLOAD_VERSION, n_rows, n_cols)]
    parts.append(primary.tobytes(order="F"))
    parts.append(struct.pack("<I", len(aux)))
    for name in sorted(aux):
        arr = np.asarray(aux[name])
        code = 1 if np.issubdtype(arr.dtype, np.integer) else 0
        arr = np.ascontiguousarray(arr, dtype=_DTYPE_CODES[code])
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<BI", code, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes(order="C"))
    return b"".join(parts)


class _Reader:
    def __init__(self, payload: bytes):
        self.payload = payload
        self.offset = 0

    def take(self, size: int) -> bytes:
        end = self.offset + size
        if end > len(self.payload):
            raise TruncatedFileError(
                f"Payload truncated: need {end} bytes, have {len(self.payload)}"
            )
        chunk = self.payload[self.offset:end]
        self.offset = end
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode_payload(payload: bytes) -> Tuple[np.ndarray, Dict[str, np.ndarray]]:
    reader = _Reader(payload)
    if reader.take(4) != MAGIC:
        raise FormatError("Not an EQFR payload (bad magic)")
    version, n_rows, n_cols = reader.unpack("<IQQ")
    if version != PAYLOAD_VERSION:
        raise FormatVersionError(f"Unsupported payload version {version}")
    raw = reader.take(8 * n_rows * n_cols)
    primary = np.frombuffer(raw, dtype="<f8").reshape((n_rows, n_cols), order="F").copy()
    (n_aux,) = reader.unpack("<I")
    aux = {}
    for _ in range(n_aux):
        (name_len,) = reader.unpack("<H")
        name = reader.take(name_len).decode("utf-8")
        code, ndim = reader.unpack("<BI")
        if code not in _DTYPE_CODES:
            raise FormatError(f"Unknown dtype code {code} for array '{name}'")
        shape = reader.unpack(f"<{ndim}Q") if ndim else ()
        dtype = _DTYPE_CODES[code]
        count = int(np.prod(shape)) if ndim else 1
        values = np.frombuffer(reader.take(dtype.itemsize * count), dtype=dtype)
        aux[name] = values.reshape(shape).copy()
    if reader.offset != len(payload):
        raise FormatError(f"{len(payload) - reader.offset} trailing bytes after payload")
    return primary, aux


def write_artifact(
    path: Union[str, Path],
    mode: ArtifactMode,
    primary: np.ndarray,
    aux: Optional[Dict[str, np.ndarray]] = None,
    metadata: Optional[Dict[str, Any]] = None,
) -> Path:
    """Write payload + manifest; returns the manifest path"""
    manifest_path, payload_path = artifact_paths(path)
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    payload = encode_payload(primary, aux or {})
    payload_path.write_bytes(payload)
    primary_arr = np.asarray(primary)
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "mode": mode.value,
        "payload": payload_path.name,
        "sha256": hashlib.sha256(payload).hexdigest(),
        "payload_bytes": len(payload),
        "n_rows": int(primary_arr.shape[0]),
        "n_cols": int(primary_arr.shape[1]) if primary_arr.ndim > 1 else 1,
        "metadata": metadata or {},
    }
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest_path


def read_manifest(path: Union[str, Path]) -> Dict[str, Any]:
    manifest_path, _ = artifact_paths(path)
    manifest = json.loads(manifest_path.read_text())
    version = str(manifest.get("schema_version", ""))
    major = version.split(".")[0]
    if major != SCHEMA_VERSION.split(".")[0]:
        raise FormatVersionError(f"Unsupported manifest schema version '{version}'")
    return manifest


def read_artifact(
    path: Union[str, Path], expected_mode: Optional[ArtifactMode] = None
) -> ArtifactContent:
    manifest_path, _ = artifact_paths(path)
    manifest = read_manifest(manifest_path)
    mode_value = manifest.get("mode")
    if not ArtifactMode.is_valid(mode_value):
        raise FormatError(f"Unknown artifact mode '{mode_value}'")
    mode = ArtifactMode(mode_value)
    if expected_mode is not None and mode is not expected_mode:
        raise FormatError(f"Expected a {expected_mode.value} artifact, found {mode.value}")
    payload = (manifest_path.parent / manifest["payload"]).read_bytes()
    expected_bytes = manifest.get("payload_bytes")
    if expected_bytes is not None and len(payload) < expected_bytes:
        raise TruncatedFileError(
            f"{manifest_path.name}: payload has {len(payload)} of {expected_bytes} bytes"
        )
    digest = hashlib.sha256(payload).hexdigest()
    if digest != manifest["sha256"]:
        raise ChecksumError(f"Checksum mismatch for {manifest_path.name}")
    primary, aux = decode_payload(payload)
    return ArtifactContent(mode, primary, aux, manifest.get("metadata", {}), digest)


# ---------------------------------------------------------------------------
# Dataset persistence
# ---------------------------------------------------------------------------

def save_dataset(
    matrix: SnapshotMatrix,
    path: Union[str, Path],
    extra_metadata: Optional[Dict[str, Any]] = None,
) -> Path:
    metadata = {
        "normalization": matrix.normalization.value,
        "cell_area": matrix.cell_area,
        "grid": matrix.grid.to_dict() if matrix.grid is not None else None,
        "ic_columns": list(_IC_COLUMNS),
        "content_hash": matrix.content_hash(),
    }
    if extra_metadata:
        metadata.update(extra_metadata)
    aux = {
        "run_id": matrix.run_ids,
        "time": matrix.times,
        "ic": matrix.ic_params,
        "mass": matrix.masses,
    }
    return write_artifact(path, ArtifactMode.SNAPSHOTS, matrix.data, aux, metadata)


def load_dataset(path: Union[str, Path]) -> SnapshotMatrix:
    content = read_artifact(path, ArtifactMode.SNAPSHOTS)
    meta = content.metadata
    grid = Grid.from_dict(meta["grid"]) if meta.get("grid") else None
    return SnapshotMatrix(
        content.primary,
        content.aux["run_id"],
        content.aux["time"],
        content.aux["ic"],
        content.aux["mass"],
        Normalization(meta["normalization"]),
        float(meta["cell_area"]),
        grid,
    )


def save_run(run: SimulationRun, path: Union[str, Path], split: str) -> Path:
    """Persist one simulation as a RAW snapshot matrix"""
    metadata = {
        "run_id": run.run_id,
        "split": split,
        "snapshot_dt": run.snapshot_dt,
        "t_final": run.t_final,
        "gamma0": run.gamma0,
        "params": run.params.model_dump(mode="json"),
        "ic": run.ic.model_dump(mode="json"),
    }
    return save_dataset(from_runs([run]), path, metadata)


def load_run(path: Union[str, Path]) -> SimulationRun:
    manifest = read_manifest(path)
    meta = manifest["metadata"]
    matrix = load_dataset(path)
    grid = matrix.grid
    densities = matrix.data.T.reshape((matrix.n_cols,) + grid.shape).copy()
    densities.setflags(write=False)
    return SimulationRun(
        params=HughesParams(**meta["params"]),
        ic=GaussianIc(**meta["ic"]),
        grid=grid,
        snapshot_dt=float(meta["snapshot_dt"]),
        t_final=float(meta["t_final"]),
        densities=densities,
        gamma0=float(meta["gamma0"]),
        run_id=int(meta["run_id"]),
    )


# ---------------------------------------------------------------------------
# CSV export
# ---------------------------------------------------------------------------

def write_csv(frame: pd.DataFrame, path: Union[str, Path]) -> Path:
    """Deterministic CSV with 17 significant digits"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n")
    return path


def field_frame(grid: Grid, values: np.ndarray) -> pd.DataFrame:
    centers = grid.cell_centers()
    return pd.DataFrame(
        {
            "x": centers[:, 0],
            "y": centers[:, 1],
            "value": np.asarray(values, dtype=np.float64).reshape(-1),
        }
    )


def export_field_csv(field_or_values: Union[Field, np.ndarray], path, grid: Optional[Grid] = None) -> Path:
    """Heat-map rows (x, y, value), one per cell in row-major order"""
    if isinstance(field_or_values, Field):
        grid = field_or_values.grid
        values = field_or_values.values
    else:
        if grid is None:
            raise ValueError("A grid is required to export raw values")
        values = field_or_values
    return write_csv(field_frame(grid, values), path)
