"""
Convex k-nearest-neighbor lifting from latent space back to snapshots.

The lifted field is a convex combination of training snapshots, so any linear
constraint shared by every training column (unit mass here) carries over.
"""

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from .dataset import SnapshotMatrix
from .dmaps import DmapsModel, LatentEmbedding, nystrom_extend
from .exceptions import DomainError, LineageError

logger = logging.getLogger(__name__)

DEFAULT_WEIGHT_POWER = 2.0
TIE_EPSILON_FACTOR = 1e-12


@dataclass(frozen=True, eq=False)
class KnnLifter:
    embedding: LatentEmbedding = field(repr=False)
    snapshots: SnapshotMatrix = field(repr=False)
    k: int
    weight_power: float
    tie_epsilon: float

    @property
    def d(self) -> int:
        return self.embedding.d


def median_nearest_neighbor_distance(coords: np.ndarray) -> float:
    if coords.shape[0] < 2:
        return 0.0
    distances, _ = cKDTree(coords).query(coords, k=2)
    return float(np.median(distances[:, 1]))


def build_lifter(
    embedding: LatentEmbedding,
    snapshots: SnapshotMatrix,
    k: Optional[int] = None,
    weight_power: float = DEFAULT_WEIGHT_POWER,
) -> KnnLifter:
    """Pair training latent points with their snapshots.

    ``k`` defaults to d + 1. The tie floor is 1e-12 times the median
    latent nearest-neighbor distance.
    """
    n_points = embedding.coords.shape[0]
    if n_points == 0 or snapshots.n_cols == 0:
        raise DomainError("Cannot lift with an empty training set")
    if n_points != snapshots.n_cols:
        raise DomainError(
            f"Embedding has {n_points} points but the snapshot matrix has "
            f"{snapshots.n_cols} columns"
        )
    if embedding.training_hash and embedding.training_hash != snapshots.content_hash():
        raise LineageError("Latent embedding was built from different training snapshots")

    k = embedding.d + 1 if k is None else int(k)
    if not 1 <= k <= n_points:
        raise DomainError(f"k={k} must lie in [1, {n_points}]")
    if weight_power <= 0:
        raise DomainError(f"Weight power must be positive, got {weight_power}")

    median_nn = median_nearest_neighbor_distance(embedding.coords)
    tie_epsilon = max(TIE_EPSILON_FACTOR * median_nn, np.finfo(np.float64).tiny)
    logger.debug(f"kNN lifter: k={k}, p={weight_power}, tie_epsilon={tie_epsilon:.3e}")
    return KnnLifter(embedding, snapshots, k, float(weight_power), float(tie_epsilon))


def _weights(lifter: KnnLifter, distances: np.ndarray) -> np.ndarray:
    # scaled by the nearest distance so an exact hit cannot overflow
    floor = distances[..., :1] + lifter.tie_epsilon
    raw = ((distances + lifter.tie_epsilon) / floor) ** (-lifter.weight_power)
    return raw / raw.sum(axis=-1, keepdims=True)


def neighbors(lifter: KnnLifter, y_star: np.ndarray):
    """Indices and distances of the k nearest training points, nearest first"""
    y_star = np.asarray(y_star, dtype=np.float64)
    if y_star.shape != (lifter.d,):
        raise DomainError(f"Latent point shape {y_star.shape} != ({lifter.d},)")
    distances = np.linalg.norm(lifter.embedding.coords - y_star, axis=1)
    order = np.argsort(distances, kind="stable")[: lifter.k]
    return order, distances[order]


def lift(lifter: KnnLifter, y_star: np.ndarray) -> np.ndarray:
    """x* = sum_j b_j x_S(j) with inverse-distance convex weights b"""
    indices, distances = neighbors(lifter, y_star)
    weights = _weights(lifter, distances)
    return lifter.snapshots.data[:, indices] @ weights


def lift_batch(lifter: KnnLifter, Y_star: np.ndarray) -> np.ndarray:
    """Lift the K rows of Y_star; returns an (N, K) block of snapshots"""
    Y_star = np.atleast_2d(np.asarray(Y_star, dtype=np.float64))
    if Y_star.shape[1] != lifter.d:
        raise DomainError(f"Latent points have {Y_star.shape[1]} coordinates, expected {lifter.d}")
    distances = cdist(Y_star, lifter.embedding.coords)
    order = np.argsort(distances, axis=1, kind="stable")[:, : lifter.k]
    nearest = np.take_along_axis(distances, order, axis=1)
    weights = _weights(lifter, nearest)
    data = lifter.snapshots.data
    out = np.empty((data.shape[0], Y_star.shape[0]))
    for q in range(Y_star.shape[0]):
        out[:, q] = data[:, order[q]] @ weights[q]
    return out


def lift_consistency(lifter: KnnLifter, model: DmapsModel, y_star: np.ndarray) -> float:
    """||Phi(L(y*)) - y*||, the latent round-trip residual of a lift"""
    if model.training_hash and model.training_hash != lifter.snapshots.content_hash():
        raise LineageError("Lifter and diffusion-map model use different training data")
    y_star = np.asarray(y_star, dtype=np.float64)
    extension = nystrom_extend(model, lift(lifter, y_star))
    return float(np.linalg.norm(extension.coords[: y_star.shape[0]] - y_star))
