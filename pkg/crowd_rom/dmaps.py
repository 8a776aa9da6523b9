"""
Diffusion Maps: Gaussian-kernel Markov chain on the snapshots, spectral
embedding, diffusion distances and Nystrom out-of-sample extension.

With M = D^-1 A and v_i the orthonormal eigenvectors of the symmetric
conjugate D^-1/2 A D^-1/2, the right eigenvectors are u_i = D^-1/2 v_i and
the left ones w_i = D^1/2 v_i. The embedding y_m = (lambda_i u_i[m]) then
reproduces t = 1 diffusion distances when all nontrivial pairs are kept.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np
from scipy import linalg
from scipy.spatial.distance import cdist, pdist, squareform
from scipy.special import logsumexp

from .dataset import SnapshotMatrix, read_artifact, write_artifact
from .enums import ArtifactMode, EmbeddingKind, Normalization
from .exceptions import DomainError, LineageError, NumericError
from .pod import PodBasis, pod_encode

logger = logging.getLogger(__name__)

# Nystrom queries whose kernel mass falls below this are flagged out of range
OUT_OF_RANGE_KERNEL_SUM = 1e-300


@dataclass(frozen=True, eq=False)
class DmapsModel:
    """Fitted diffusion map (nontrivial pairs only, descending eigenvalues)"""
    training_points: np.ndarray = field(repr=False)  # (N, M) snapshot columns
    epsilon: float
    eigenvalues: np.ndarray = field(repr=False)  # (d,)
    right_eigenvectors: np.ndarray = field(repr=False)  # (M, d)
    degrees: np.ndarray = field(repr=False)  # (M,)
    trivial_eigenvalue: float = 1.0
    trivial_vector: Optional[np.ndarray] = field(default=None, repr=False)
    training_hash: str = ""

    @property
    def d(self) -> int:
        return self.right_eigenvectors.shape[1]

    @property
    def n_training(self) -> int:
        return self.training_points.shape[1]

    @property
    def left_eigenvectors(self) -> np.ndarray:
        """w_i = D u_i, biorthogonal to the right eigenvectors"""
        return self.degrees[:, None] * self.right_eigenvectors

    def truncated(self, d: int) -> "DmapsModel":
        if not 1 <= d <= self.d:
            raise DomainError(f"Cannot truncate a {self.d}-coordinate model to {d}")
        return DmapsModel(
            self.training_points,
            self.epsilon,
            self.eigenvalues[:d],
            self.right_eigenvectors[:, :d],
            self.degrees,
            self.trivial_eigenvalue,
            self.trivial_vector,
            self.training_hash,
        )


@dataclass(frozen=True, eq=False)
class LatentEmbedding:
    """Training latent coordinates plus the encoder that produced them"""
    coords: np.ndarray = field(repr=False)  # (M, d)
    model: Union[DmapsModel, PodBasis] = field(repr=False)
    kind: EmbeddingKind
    training_hash: str = ""

    @property
    def d(self) -> int:
        return self.coords.shape[1]

    @classmethod
    def from_pod(cls, basis: PodBasis, X: SnapshotMatrix) -> "LatentEmbedding":
        coords = pod_encode(basis, X.data).T
        return cls(coords, basis, EmbeddingKind.POD, X.content_hash())


@dataclass(frozen=True)
class NystromExtension:
    """Out-of-sample coordinates of one snapshot"""
    coords: np.ndarray
    kernel_sum: float
    out_of_range: bool


def _training_array(X: Union[SnapshotMatrix, np.ndarray]):
    if isinstance(X, SnapshotMatrix):
        if X.normalization is not Normalization.UNIT_MASS:
            raise DomainError("Diffusion maps need unit-mass snapshot columns")
        return X.data, X.content_hash()
    return np.asarray(X, dtype=np.float64), ""


def _fix_signs(vectors: np.ndarray) -> np.ndarray:
    pivots = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[pivots, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def kernel_matrix(points: np.ndarray, epsilon: float) -> np.ndarray:
    """A_ij = exp(-d_ij^2 / eps^2) for snapshot columns"""
    distances = squareform(pdist(points.T))
    return np.exp(-((distances / epsilon) ** 2))


def fit_dmaps(X: Union[SnapshotMatrix, np.ndarray], d: int) -> DmapsModel:
    """Fit a diffusion map with median-distance kernel scale and keep ``d``
    nontrivial eigenpairs."""
    points, training_hash = _training_array(X)
    n_snapshots = points.shape[1]
    # the trivial pair plus d nontrivial ones; d = M - 1 is the full embedding
    if d < 1 or n_snapshots < d + 1:
        raise DomainError(f"Need at least d + 1 = {d + 1} snapshots, got {n_snapshots}")

    condensed = pdist(points.T)
    epsilon = float(np.median(condensed))
    if epsilon <= 0:
        raise DomainError("Median pairwise distance is zero; snapshots are degenerate")

    affinity = np.exp(-((squareform(condensed) / epsilon) ** 2))
    degrees = affinity.sum(axis=1)
    scale = 1.0 / np.sqrt(degrees)
    conjugate = scale[:, None] * affinity * scale[None, :]
    conjugate = 0.5 * (conjugate + conjugate.T)

    try:
        eigenvalues, eigenvectors = linalg.eigh(conjugate)
    except linalg.LinAlgError as e:
        raise NumericError(f"Diffusion-map eigen-solve failed: {e}") from e

    order = np.argsort(eigenvalues)[::-1]
    eigenvalues = eigenvalues[order]
    right = _fix_signs(scale[:, None] * eigenvectors[:, order])

    logger.info(
        f"Diffusion map fitted on {n_snapshots} snapshots: eps={epsilon:.4g}, "
        f"lambda_1..{d} = {np.array2string(eigenvalues[1:d + 1], precision=4)}"
    )
    return DmapsModel(
        training_points=points,
        epsilon=epsilon,
        eigenvalues=eigenvalues[1:d + 1].copy(),
        right_eigenvectors=right[:, 1:d + 1].copy(),
        degrees=degrees,
        trivial_eigenvalue=float(eigenvalues[0]),
        trivial_vector=right[:, 0].copy(),
        training_hash=training_hash,
    )


def dmaps_encode(model: DmapsModel) -> LatentEmbedding:
    """Training coordinates y_m = (lambda_1 u_1[m], ..., lambda_d u_d[m])"""
    coords = model.right_eigenvectors * model.eigenvalues[None, :]
    return LatentEmbedding(coords, model, EmbeddingKind.DMAPS, model.training_hash)


def _nystrom_weights(model: DmapsModel, X_new: np.ndarray):
    sq = cdist(X_new.T, model.training_points.T, metric="sqeuclidean")
    log_kernel = -sq / model.epsilon ** 2
    log_sum = logsumexp(log_kernel, axis=1)
    weights = np.exp(log_kernel - log_sum[:, None])
    return weights, log_sum


def nystrom_extend(model: DmapsModel, x_new: np.ndarray) -> NystromExtension:
    """y*_i = sum_j mu_j u_i[j] with mu the normalized kernel row of x_new.

    On a training snapshot this equals lambda_i u_i[m], its embedding.
    """
    x_new = np.asarray(x_new, dtype=np.float64)
    if x_new.shape != (model.training_points.shape[0],):
        raise DomainError(
            f"Snapshot shape {x_new.shape} does not match training length "
            f"{model.training_points.shape[0]}"
        )
    weights, log_sum = _nystrom_weights(model, x_new[:, None])
    coords = weights[0] @ model.right_eigenvectors
    out_of_range = bool(log_sum[0] < np.log(OUT_OF_RANGE_KERNEL_SUM))
    if out_of_range:
        logger.warning("Nystrom query lies outside the training cloud (kernel mass < 1e-300)")
    return NystromExtension(coords, float(np.exp(log_sum[0])), out_of_range)


def nystrom_extend_batch(model: DmapsModel, X_new: np.ndarray) -> np.ndarray:
    """Coordinates (K, d) for the K columns of X_new"""
    X_new = np.asarray(X_new, dtype=np.float64)
    weights, log_sum = _nystrom_weights(model, X_new)
    n_far = int(np.sum(log_sum < np.log(OUT_OF_RANGE_KERNEL_SUM)))
    if n_far:
        logger.warning(f"{n_far} Nystrom queries lie outside the training cloud")
    return weights @ model.right_eigenvectors


def markov_matrix(model: DmapsModel) -> np.ndarray:
    affinity = kernel_matrix(model.training_points, model.epsilon)
    return affinity / affinity.sum(axis=1)[:, None]


def diffusion_distances(model: DmapsModel) -> np.ndarray:
    """Brute-force t = 1 diffusion distances between training snapshots:
    D(i, j)^2 = sum_k (M_ik - M_jk)^2 / deg_k"""
    affinity = kernel_matrix(model.training_points, model.epsilon)
    degrees = affinity.sum(axis=1)
    rows = affinity / degrees[:, None]
    return squareform(pdist(rows / np.sqrt(degrees)[None, :]))


def spectral_gap_ratios(model: DmapsModel) -> np.ndarray:
    """lambda_{i+1} / lambda_i over the retained spectrum"""
    values = model.eigenvalues
    return values[1:] / values[:-1]


def save_model(model: DmapsModel, path: Union[str, Path], metadata=None) -> Path:
    meta = {
        "d": model.d,
        "epsilon": model.epsilon,
        "trivial_eigenvalue": model.trivial_eigenvalue,
        "training_hash": model.training_hash,
    }
    meta.update(metadata or {})
    aux = {
        "eigenvalues": model.eigenvalues,
        "degrees": model.degrees,
        "trivial_vector": model.trivial_vector,
    }
    return write_artifact(path, ArtifactMode.MODE_DMAPS, model.right_eigenvectors, aux, meta)


def load_model(path: Union[str, Path], training: SnapshotMatrix) -> DmapsModel:
    """Load a fitted model and re-attach the training snapshots it references"""
    content = read_artifact(path, ArtifactMode.MODE_DMAPS)
    expected = content.metadata.get("training_hash", "")
    if expected and expected != training.content_hash():
        raise LineageError("Diffusion-map model was fitted on different training data")
    return DmapsModel(
        training_points=training.data,
        epsilon=float(content.metadata["epsilon"]),
        eigenvalues=content.aux["eigenvalues"],
        right_eigenvectors=content.primary,
        degrees=content.aux["degrees"],
        trivial_eigenvalue=float(content.metadata["trivial_eigenvalue"]),
        trivial_vector=content.aux["trivial_vector"],
        training_hash=expected,
    )
