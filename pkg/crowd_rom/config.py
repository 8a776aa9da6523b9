"""
Pipeline configuration loaded from a single JSON file
"""

import hashlib
import json
import logging
from pathlib import Path
from typing import List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .dataset import SplitPlan
from .enums import EmbeddingKind, Split
from .exceptions import ConfigError
from .grid_domain import Grid, build_grid
from .hughes_solver import HughesParams, snapshot_count
from .settings import CONFIG_HASH_PREFIX_LEN

logger = logging.getLogger(__name__)


class ObstacleSpec(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    center_x: float = 10.0
    center_y: float = 2.5
    side: float = Field(1.0, gt=0.0)


class GridSpec(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    nx: int = Field(200, ge=4)
    ny: int = Field(50, ge=4)
    length_x: float = Field(20.0, gt=0.0, description="Corridor length L (m)")
    length_y: float = Field(5.0, gt=0.0, description="Corridor height H (m)")
    obstacle: Optional[ObstacleSpec] = ObstacleSpec()

    def build(self) -> Grid:
        return build_grid(self.nx, self.ny, self.length_x, self.length_y, self.obstacle)


class SimulationSpec(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    t_final: float = Field(70.0, gt=0.0, description="Horizon (s)")
    snapshot_dt: float = Field(0.1, gt=0.0, description="Snapshot spacing (s)")
    eikonal_stride: int = Field(1, ge=1, description="Sub-steps between potential updates")

    @property
    def n_snapshots(self) -> int:
        return snapshot_count(self.t_final, self.snapshot_dt)


class SubsamplingSpec(BaseModel):
    """Stratified choice of manifold-learning snapshots from the training runs"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    total_count: int = Field(6000, ge=3)
    early_window_s: float = Field(10.0, ge=0.0)
    early_fraction: float = Field(2.0 / 3.0, ge=0.0, le=1.0)


class EncoderSpec(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: EmbeddingKind
    d: Union[int, Literal["auto"]] = 10
    baseline_dims: List[int] = Field(default_factory=list)
    rom_dims: List[int] = Field(default_factory=list, description="Defaults to [d]")
    variance_threshold: float = Field(0.99, gt=0.0, le=1.0)

    @field_validator("d")
    @classmethod
    def _positive_d(cls, value):
        if value != "auto" and value < 1:
            raise ValueError(f"d must be >= 1, got {value}")
        return value

    @model_validator(mode="after")
    def _check_auto(self):
        if self.d == "auto" and self.kind is not EmbeddingKind.POD:
            raise ValueError("d = 'auto' is only available for POD")
        if any(dim < 1 for dim in self.baseline_dims):
            raise ValueError("baseline_dims must be positive")
        if any(dim < 1 for dim in self.rom_dims):
            raise ValueError("rom_dims must be positive")
        if self.d != "auto":
            too_large = [dim for dim in self.baseline_dims + self.rom_dims if dim > self.d]
            if too_large:
                raise ValueError(f"Dimensions {too_large} exceed d = {self.d}")
        return self

    @property
    def label(self) -> str:
        return self.kind.value


class ManifoldSpec(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    subsample: SubsamplingSpec = SubsamplingSpec()
    encoders: List[EncoderSpec] = Field(
        default_factory=lambda: [
            EncoderSpec(kind=EmbeddingKind.POD, d=20, baseline_dims=[5, 10, 20]),
            EncoderSpec(kind=EmbeddingKind.DMAPS, d=10, baseline_dims=[2, 5, 10]),
        ]
    )

    @model_validator(mode="after")
    def _unique_kinds(self):
        kinds = [spec.kind for spec in self.encoders]
        if not kinds:
            raise ValueError("At least one encoder is required")
        if len(set(kinds)) != len(kinds):
            raise ValueError("Each encoder kind may appear only once")
        return self


class MvarSpec(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    candidate_lags: List[int] = Field(default_factory=lambda: list(range(1, 11)))
    fixed_lag: Optional[int] = Field(None, ge=1, description="Skips BIC when set")

    @field_validator("candidate_lags")
    @classmethod
    def _positive_lags(cls, value):
        if any(lag < 1 for lag in value):
            raise ValueError("Candidate lags must be >= 1")
        return sorted(set(value))

    @property
    def max_lag(self) -> int:
        if self.fixed_lag is not None:
            return self.fixed_lag
        return max(self.candidate_lags) if self.candidate_lags else 0


class LifterSpec(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    k: Optional[int] = Field(None, ge=1, description="Neighbors; defaults to d + 1")
    weight_power: float = Field(2.0, gt=0.0)


class EvaluationSpec(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    compute_w1: bool = True
    splits: List[Split] = Field(default_factory=lambda: [Split.TEST, Split.EXTRA])
    selection_split: Split = Split.VAL
    w1_support_cap: int = Field(4_000_000, ge=1)
    w1_coarsen: int = Field(1, ge=1)
    stability_horizon_factor: int = Field(10, ge=1)
    baseline_split: Split = Split.TEST
    baseline_stride: int = Field(5, ge=1, description="Score every n-th snapshot in baselines")


class PipelineConfig(BaseModel):
    """Everything a pipeline invocation depends on.

    ``seed`` drives split sampling and manifold subsampling and overrides
    ``splits.seed``. ``stage_dir`` is a runtime location and is left out of
    the config hash.
    """
    model_config = ConfigDict(frozen=True, extra="forbid")

    grid: GridSpec = GridSpec()
    hughes: HughesParams = HughesParams()
    splits: SplitPlan = SplitPlan()
    simulation: SimulationSpec = SimulationSpec()
    manifold: ManifoldSpec = ManifoldSpec()
    mvar: MvarSpec = MvarSpec()
    lifter: LifterSpec = LifterSpec()
    evaluation: EvaluationSpec = EvaluationSpec()
    seed: int = 0
    stage_dir: Optional[str] = None

    @model_validator(mode="after")
    def _cross_check(self):
        self.grid.build()
        self.splits.check_ranges()

        n_snapshots = self.simulation.n_snapshots
        subsample = self.manifold.subsample
        available = self.splits.n_train * n_snapshots
        if subsample.total_count > available:
            raise ValueError(
                f"Subsample of {subsample.total_count} exceeds the {available} training snapshots"
            )
        for spec in self.manifold.encoders:
            if spec.d != "auto" and spec.d + 2 > subsample.total_count:
                raise ValueError(
                    f"{spec.kind.value} d = {spec.d} needs at least {spec.d + 2} subsampled snapshots"
                )

        if self.mvar.fixed_lag is None and not self.mvar.candidate_lags:
            raise ValueError("Give candidate_lags or a fixed_lag")
        if self.mvar.max_lag + 1 > n_snapshots:
            raise ValueError(
                f"Lag {self.mvar.max_lag} is infeasible for trajectories of {n_snapshots} snapshots"
            )
        return self

    def split_plan(self) -> SplitPlan:
        return self.splits.model_copy(update={"seed": self.seed})


def canonical_json(config: PipelineConfig) -> str:
    payload = config.model_dump(mode="json", exclude={"stage_dir"})
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def config_hash(config: PipelineConfig) -> str:
    return hashlib.sha256(canonical_json(config).encode("utf-8")).hexdigest()


def short_hash(config: PipelineConfig) -> str:
    return config_hash(config)[:CONFIG_HASH_PREFIX_LEN]


def load_config(path: Union[str, Path]) -> PipelineConfig:
    """Parse and validate a JSON config file.

    Raises ConfigError for unreadable files and pydantic ValidationError
    for invalid contents.
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError as e:
        raise ConfigError(f"Config file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"Config file {path} is not valid JSON: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigError(f"Config file {path} must hold a JSON object")
    config = PipelineConfig.model_validate(raw)
    logger.info(f"Loaded config {path} (hash {short_hash(config)})")
    return config


def desk_profile() -> PipelineConfig:
    """Laptop-scale defaults: 100x25 grid, 12/4/4/2 runs, 30 s horizon"""
    return PipelineConfig(
        grid=GridSpec(nx=100, ny=25),
        splits=SplitPlan(n_train=12, n_val=4, n_test=4, n_extra=2),
        simulation=SimulationSpec(t_final=30.0),
        manifold=ManifoldSpec(
            subsample=SubsamplingSpec(total_count=1200),
            encoders=[
                EncoderSpec(
                    kind=EmbeddingKind.POD, d=20, baseline_dims=[2, 5, 10, 20], rom_dims=[10, 20]
                ),
                EncoderSpec(
                    kind=EmbeddingKind.DMAPS, d=10, baseline_dims=[2, 3, 5, 8, 10], rom_dims=[5, 10]
                ),
            ],
        ),
        evaluation=EvaluationSpec(w1_coarsen=2),
    )


__all__ = [
    "ConfigError",
    "EncoderSpec",
    "EvaluationSpec",
    "GridSpec",
    "LifterSpec",
    "ManifoldSpec",
    "MvarSpec",
    "ObstacleSpec",
    "PipelineConfig",
    "SimulationSpec",
    "SubsamplingSpec",
    "ValidationError",
    "config_hash",
    "desk_profile",
    "load_config",
    "short_hash",
]
