"""
Encoder/decoder pairs for the two reduced-order models and the
encode -> MVAR rollout -> lift chain applied to one simulation.

POD encodes by projection and decodes linearly. DMs encode by Nystrom
extension and decode with the convex k-NN lifter.
"""

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .dataset import SnapshotMatrix
from .dmaps import DmapsModel, dmaps_encode, nystrom_extend_batch
from .enums import EmbeddingKind
from .exceptions import DomainError, ZeroMassError
from .hughes_solver import SimulationRun
from .knn_lift import KnnLifter, build_lifter, lift_batch
from .metrics import ReconstructedRun
from .mvar import LatentTrajectorySet, MvarModel, forecast
from .pod import PodBasis, pod_decode, pod_encode

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class LatentCodec:
    """Encoder and decoder of one (kind, d) reduced-order model"""
    kind: EmbeddingKind
    d: int
    pod: Optional[PodBasis] = field(default=None, repr=False)
    dmaps: Optional[DmapsModel] = field(default=None, repr=False)
    lifter: Optional[KnnLifter] = field(default=None, repr=False)

    @property
    def name(self) -> str:
        return model_name(self.kind, self.d)

    def encode(self, values: np.ndarray) -> np.ndarray:
        """(T, N) unit-mass snapshots -> (T, d) latent states"""
        values = np.atleast_2d(values)
        if self.kind is EmbeddingKind.POD:
            return pod_encode(self.pod, values.T).T
        return nystrom_extend_batch(self.dmaps, values.T)

    def decode(self, latents: np.ndarray) -> np.ndarray:
        """(T, d) latent states -> (T, N) snapshots"""
        latents = np.atleast_2d(latents)
        if self.kind is EmbeddingKind.POD:
            return pod_decode(self.pod, latents.T).T
        return lift_batch(self.lifter, latents).T


def model_name(kind: EmbeddingKind, d: int) -> str:
    return f"{kind.value}_d{d}"


def pod_codec(basis: PodBasis, d: Optional[int] = None) -> LatentCodec:
    basis = basis if d is None or d == basis.d else basis.truncated(d)
    return LatentCodec(EmbeddingKind.POD, basis.d, pod=basis)


def dmaps_codec(
    model: DmapsModel,
    training: SnapshotMatrix,
    d: Optional[int] = None,
    k: Optional[int] = None,
    weight_power: float = 2.0,
) -> LatentCodec:
    model = model if d is None or d == model.d else model.truncated(d)
    lifter = build_lifter(dmaps_encode(model), training, k, weight_power)
    return LatentCodec(EmbeddingKind.DMAPS, model.d, dmaps=model, lifter=lifter)


def unit_mass_rows(values: np.ndarray) -> np.ndarray:
    sums = values.sum(axis=1)
    if np.any(sums <= 0):
        raise ZeroMassError("Snapshot without mass cannot be encoded")
    return values / sums[:, None]


def latent_trajectories(codec: LatentCodec, runs: Sequence[SimulationRun]) -> LatentTrajectorySet:
    """Encode every snapshot of every run at its native spacing"""
    if not runs:
        raise DomainError("No runs to encode")
    trajectories = [(run.run_id, codec.encode(unit_mass_rows(run.values))) for run in runs]
    return LatentTrajectorySet(trajectories, runs[0].snapshot_dt)


def forecast_run(codec: LatentCodec, model: MvarModel, run: SimulationRun) -> ReconstructedRun:
    """Warm up on the first ``lag`` encoded snapshots, roll out freely to the
    end of the run and lift every predicted state."""
    if model.d != codec.d:
        raise DomainError(f"MVAR dimension {model.d} != codec dimension {codec.d}")
    lag = model.lag
    if run.n_snapshots <= lag:
        raise DomainError(f"Run {run.run_id} is too short for lag {lag}")
    warmup = codec.encode(unit_mass_rows(run.values[:lag]))
    states = forecast(model, warmup, run.n_snapshots - lag)
    values = codec.decode(states)
    return ReconstructedRun(run.times[lag:], values, run.grid, run.run_id, codec.name)


@dataclass(frozen=True, eq=False)
class TruthWindow:
    """Ground-truth run restricted to the forecast times"""
    times: np.ndarray
    values: np.ndarray = field(repr=False)
    grid: object = field(repr=False)
    run_id: int = 0


def truth_window(run: SimulationRun, start: int, stride: int = 1) -> TruthWindow:
    index = np.arange(start, run.n_snapshots, stride)
    return TruthWindow(run.times[index], run.values[index], run.grid, run.run_id)
