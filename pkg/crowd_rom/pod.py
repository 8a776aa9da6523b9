"""
Proper orthogonal decomposition by the method of snapshots.

Modes come from the M x M Gram matrix of the centered snapshots. For
unit-mass training columns every mode sums to zero, so decoding any latent
vector returns a field of unit total mass.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np
from scipy import linalg

from .dataset import SnapshotMatrix, read_artifact, write_artifact
from .enums import ArtifactMode, Normalization
from .exceptions import DomainError, RankDeficiencyError

logger = logging.getLogger(__name__)

RANK_TOLERANCE = 1e-14


@dataclass(frozen=True, eq=False)
class PodBasis:
    """Orthonormal spatial modes, training mean and the Gram spectrum"""
    modes: np.ndarray = field(repr=False)  # W, (N, d)
    mean: np.ndarray = field(repr=False)  # x_bar, (N,)
    eigenvalues: np.ndarray = field(repr=False)  # retained, descending
    spectrum: np.ndarray = field(repr=False)  # all nonnegative Gram eigenvalues
    training_hash: str = ""

    @property
    def d(self) -> int:
        return self.modes.shape[1]

    @property
    def n_features(self) -> int:
        return self.modes.shape[0]

    @property
    def column_mean_correction(self) -> np.ndarray:
        """(1/M) X 1_M, the mean-replication term of the reconstruction"""
        return self.mean

    def truncated(self, d: int) -> "PodBasis":
        """Leading ``d`` modes; POD bases are nested"""
        if not 1 <= d <= self.d:
            raise DomainError(f"Cannot truncate a {self.d}-mode basis to {d} modes")
        return PodBasis(
            self.modes[:, :d], self.mean, self.eigenvalues[:d], self.spectrum, self.training_hash
        )

    def cumulative_variance(self) -> np.ndarray:
        return cumulative_variance(self.spectrum)


def _as_array(X: Union[SnapshotMatrix, np.ndarray]):
    if isinstance(X, SnapshotMatrix):
        if X.normalization is not Normalization.UNIT_MASS:
            raise DomainError("POD needs unit-mass snapshot columns")
        return X.data, X.content_hash()
    return np.asarray(X, dtype=np.float64), ""


def _fix_signs(vectors: np.ndarray) -> np.ndarray:
    """Make the entry of largest magnitude of every column positive"""
    pivots = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[pivots, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def fit_pod(X: Union[SnapshotMatrix, np.ndarray], d: int) -> PodBasis:
    """Fit ``d`` POD modes to the columns of X."""
    data, training_hash = _as_array(X)
    n_features, n_snapshots = data.shape
    if not 1 <= d <= min(n_features, n_snapshots - 1):
        raise RankDeficiencyError(
            f"d={d} exceeds the rank bound of {n_snapshots} centered snapshots"
        )

    mean = data.mean(axis=1)
    centered = data - mean[:, None]
    gram = centered.T @ centered
    eigenvalues, eigenvectors = linalg.eigh(gram)
    order = np.argsort(eigenvalues)[::-1]
    eigenvalues = eigenvalues[order]
    eigenvectors = eigenvectors[:, order]

    leading = eigenvalues[0]
    if leading <= 0 or eigenvalues[d - 1] < RANK_TOLERANCE * leading:
        raise RankDeficiencyError(
            f"lambda_{d} = {eigenvalues[d - 1]:.3e} is below {RANK_TOLERANCE:g} * lambda_1; "
            f"reduce d"
        )

    retained = eigenvalues[:d]
    modes = centered @ eigenvectors[:, :d] / np.sqrt(retained)
    # centering makes every mode sum to zero; remove the rounding residue
    modes = modes - modes.mean(axis=0)
    modes = _fix_signs(modes)

    logger.info(
        f"POD fitted on {n_snapshots} snapshots: d={d}, "
        f"captured variance {retained.sum() / np.clip(eigenvalues, 0, None).sum():.4f}"
    )
    return PodBasis(
        modes=modes,
        mean=mean,
        eigenvalues=retained,
        spectrum=np.clip(eigenvalues, 0.0, None),
        training_hash=training_hash,
    )


def pod_encode(basis: PodBasis, x: np.ndarray) -> np.ndarray:
    """y = W^T (x - x_bar); accepts one snapshot or an (N, K) block of columns"""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] != basis.n_features:
        raise DomainError(f"Snapshot length {x.shape[0]} != basis length {basis.n_features}")
    if x.ndim == 1:
        return basis.modes.T @ (x - basis.mean)
    return basis.modes.T @ (x - basis.mean[:, None])


def pod_decode(basis: PodBasis, y: np.ndarray) -> np.ndarray:
    """x_hat = W y + x_bar; accepts one latent vector or a (d, K) block"""
    y = np.asarray(y, dtype=np.float64)
    if y.shape[0] != basis.d:
        raise DomainError(f"Latent length {y.shape[0]} != basis dimension {basis.d}")
    if y.ndim == 1:
        return basis.modes @ y + basis.mean
    return basis.modes @ y + basis.mean[:, None]


def cumulative_variance(spectrum: np.ndarray) -> np.ndarray:
    spectrum = np.clip(np.asarray(spectrum, dtype=np.float64), 0.0, None)
    total = spectrum.sum()
    if total <= 0:
        return np.zeros_like(spectrum)
    return np.cumsum(spectrum) / total


def select_rank(spectrum_or_basis, threshold: float = 0.99) -> int:
    """Smallest d whose cumulative variance reaches ``threshold``"""
    spectrum = (
        spectrum_or_basis.spectrum
        if isinstance(spectrum_or_basis, PodBasis)
        else spectrum_or_basis
    )
    curve = cumulative_variance(spectrum)
    hits = np.flatnonzero(curve >= threshold - 1e-15)
    return int(hits[0]) + 1 if hits.size else len(curve)


def save_basis(basis: PodBasis, path: Union[str, Path], metadata=None) -> Path:
    meta = {"d": basis.d, "training_hash": basis.training_hash}
    meta.update(metadata or {})
    aux = {"mean": basis.mean, "eigenvalues": basis.eigenvalues, "spectrum": basis.spectrum}
    return write_artifact(path, ArtifactMode.MODE_POD, basis.modes, aux, meta)


def load_basis(path: Union[str, Path]) -> PodBasis:
    content = read_artifact(path, ArtifactMode.MODE_POD)
    return PodBasis(
        modes=content.primary,
        mean=content.aux["mean"],
        eigenvalues=content.aux["eigenvalues"],
        spectrum=content.aux["spectrum"],
        training_hash=content.metadata.get("training_hash", ""),
    )
